#include <doctest.h>

#include <filesystem>
#include <numeric>

#include "vispec/datagen.hpp"

using namespace vispec;

namespace {

ModelConfig tiny_model_config(const TaskConfig& task) {
    ModelConfig cfg;
    cfg.vocab_size = task.vocab_size();
    cfg.embed_dim = 8;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.max_seq_len = task.max_seq_len;
    cfg.patch_embed_dim = 4;
    cfg.codebook_size = task.codebook_size;
    return cfg;
}

TaskConfig tiny_task() {
    TaskConfig task;
    task.num_patches = 4;
    task.num_unique = 2;
    task.min_response_len = 6;
    task.max_seq_len = 64;
    return task;
}

} // namespace

TEST_CASE("task config validation") {
    TaskConfig t;
    CHECK_NOTHROW(t.validate());
    t.num_unique = t.num_patches;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TaskConfig{};
    t.min_response_len = 200;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TaskConfig{};
    t.num_unique = 10;   // only 9 distinct non-shared codes exist
    t.num_patches = 32;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("generate_image: boundaries, determinism, and the frozen fixture") {
    RngStream rng(3);
    SyntheticImage none = generate_image(6, 0, 10, rng);
    CHECK(none.unique_positions.empty());
    for (std::int32_t c : none.patches) CHECK(c == none.redundant_code);

    SyntheticImage almost = generate_image(6, 5, 10, rng);
    CHECK(almost.unique_positions.size() == 5);
    std::size_t shared = 0;
    for (std::int32_t c : almost.patches) shared += (c == almost.redundant_code) ? 1 : 0;
    CHECK(shared == 1);

    CHECK_THROWS_AS(generate_image(4, 4, 10, rng), std::invalid_argument);
    CHECK_THROWS_AS(generate_image(4, 3, 3, rng), std::invalid_argument);

    // Same stream key, same image.
    RngStream a(99), b(99);
    SyntheticImage ia = generate_image(16, 3, 10, a), ib = generate_image(16, 3, 10, b);
    CHECK(ia.patches == ib.patches);

    // Frozen fixture.
    RngStream fix(42);
    SyntheticImage f = generate_image(64, 4, 10, fix);
    CHECK(f.unique_positions == std::vector<std::size_t>{5, 14, 27, 37});
    CHECK(f.unique_codes == std::vector<std::int32_t>{6, 4, 7, 2});
}

TEST_CASE("ideal response follows the code-ordered, parity-periodic template") {
    TaskConfig task = tiny_task();
    task.min_response_len = 7;

    SyntheticImage img;
    img.num_patches = 4;
    img.patches = {0, 4, 0, 7};
    img.unique_positions = {1, 3};
    img.unique_codes = {4, 7};

    // min code 4 is even: period-3 sentences [fact4, fact7, SEP].
    TokenSeq resp = ideal_response(img, task);
    TokenSeq expect = {10, 13, 2, 10, 13, 2, 10, 13, 2, 3};
    CHECK(resp == expect);

    // Swapped placement does not change the answer (code order, not position order).
    SyntheticImage swapped = img;
    swapped.patches = {0, 7, 0, 4};
    swapped.unique_codes = {7, 4};
    CHECK(ideal_response(swapped, task) == expect);

    // min code 3 is odd: period-4 sentences with the shared-code filler.
    SyntheticImage odd = img;
    odd.patches = {0, 3, 0, 8};
    odd.unique_codes = {3, 8};
    TokenSeq resp_odd = ideal_response(odd, task);
    TokenSeq expect_odd = {9, 14, 6, 2, 9, 14, 6, 2, 3};
    CHECK(resp_odd == expect_odd);
}

TEST_CASE("task corpus: deterministic, serializable, stable fingerprint") {
    TaskConfig task = tiny_task();
    auto corpus = generate_task_corpus(task, 8, 1234);
    auto corpus2 = generate_task_corpus(task, 8, 1234);
    CHECK(corpus_fingerprint(corpus) == corpus_fingerprint(corpus2));
    CHECK(corpus_fingerprint(corpus) != corpus_fingerprint(generate_task_corpus(task, 8, 1235)));

    for (const DatasetRecord& r : corpus) {
        CHECK(r.pre_text == TokenSeq{tok::kBos, tok::kQuery});
        CHECK(r.post_text == TokenSeq{tok::kAnswer});
        CHECK(r.response.size() >= task.min_response_len + 1);
        CHECK(r.response.back() == tok::kEos);
    }

    const auto path = std::filesystem::temp_directory_path() / "vspc_corpus.jsonl";
    write_records(path, corpus, 1234);
    auto loaded = read_records(path);
    REQUIRE(loaded.size() == corpus.size());
    CHECK(corpus_fingerprint(loaded) == corpus_fingerprint(corpus));
    CHECK(loaded[3].image.patches == corpus[3].image.patches);
    CHECK(loaded[3].response == corpus[3].response);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(generate_task_corpus(task, 0, 1), std::invalid_argument);
}

TEST_CASE("long-response sampling from the target") {
    TaskConfig task = tiny_task();
    task.min_response_len = 2;
    ModelConfig cfg = tiny_model_config(task);
    TargetModel target = TargetModel::make_initialized(cfg, 6);
    {
        RngStream r(8);
        for (double& v : target.core().params().get("head").mutable_data())
            v = r.next_normal() * 0.2;
    }

    auto recs = generate_long_responses(target, task, 4, 1.0, 77);
    auto recs2 = generate_long_responses(target, task, 4, 1.0, 77);
    CHECK(corpus_fingerprint(recs) == corpus_fingerprint(recs2));
    for (const DatasetRecord& r : recs) {
        CHECK(r.response.back() == tok::kEos);
        CHECK(r.response.size() >= task.min_response_len + 1);
        CHECK(r.gen_temperature == 1.0);
    }

    // A target that cannot reach the requested length trips the retry cap.
    TaskConfig hard = task;
    hard.min_response_len = 56;   // near the whole budget at max_seq_len 64
    hard.retry_cap = 2;
    CHECK_THROWS_AS(generate_long_responses(target, hard, 1, 1.0, 5), std::runtime_error);

    TaskConfig mism = task;
    mism.codebook_size = 9;
    CHECK_THROWS_AS(generate_long_responses(target, mism, 1, 1.0, 5), std::invalid_argument);
}

TEST_CASE("training traces: shapes, recompute oracle, and decorrelation") {
    TaskConfig task = tiny_task();
    task.min_response_len = 2;
    ModelConfig cfg = tiny_model_config(task);
    TargetModel target = TargetModel::make_initialized(cfg, 16);
    {
        RngStream r(18);
        for (double& v : target.core().params().get("head").mutable_data())
            v = r.next_normal() * 0.4;
    }

    auto recs = generate_long_responses(target, task, 6, 1.0, 3);
    std::vector<TrainingTrace> traces;
    for (const auto& r : recs) traces.push_back(build_training_trace(target, r));

    for (std::size_t i = 0; i < traces.size(); ++i) {
        const TrainingTrace& tr = traces[i];
        const std::size_t n = tr.input.length();
        CHECK(n == recs[i].pre_text.size() + task.num_patches + recs[i].post_text.size() +
                       recs[i].response.size());
        CHECK(tr.f.size() == n);
        CHECK(tr.p.size() == recs[i].response.size());
        CHECK(tr.response_start == 2 + task.num_patches + 1);
        for (const auto& p : tr.p) {
            const double s = std::accumulate(p.begin(), p.end(), 0.0);
            CHECK(std::abs(s - 1.0) <= 1e-9);
        }
    }

    // Stored f matches a fresh forward bit-for-bit.
    {
        NoGradGuard ng;
        TransformerSession s(target.core());
        target.forward(traces[0].input, s);
        for (std::size_t p = 0; p < traces[0].f.size(); ++p) {
            auto h = s.hidden_at(p);
            CHECK(std::equal(h.begin(), h.end(), traces[0].f[p].begin()));
        }
    }

    // Sampled responses are decorrelated from the target argmax.
    CHECK(sampled_argmax_agreement(traces) < 1.0);

    // Prompt-only record: no response positions, empty loss region.
    DatasetRecord prompt_only = recs[0];
    prompt_only.response.clear();
    TrainingTrace tr = build_training_trace(target, prompt_only);
    CHECK(tr.p.empty());
    CHECK(tr.f.size() == prompt_only.pre_text.size() + task.num_patches + 1);

    DatasetRecord bad = recs[0];
    bad.response[0] = 100;
    CHECK_THROWS_AS(build_training_trace(target, bad), std::invalid_argument);
}
