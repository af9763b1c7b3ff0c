#include <doctest.h>

#include <cmath>
#include <functional>

#include "vispec/trainer.hpp"

using namespace vispec;

namespace {

TaskConfig tiny_task() {
    TaskConfig task;
    task.num_patches = 4;
    task.num_unique = 2;
    task.min_response_len = 6;
    task.max_seq_len = 64;
    return task;
}

ModelConfig tiny_model_config(const TaskConfig& task, std::size_t layers) {
    ModelConfig cfg;
    cfg.vocab_size = task.vocab_size();
    cfg.embed_dim = 8;
    cfg.num_layers = layers;
    cfg.num_heads = 2;
    cfg.max_seq_len = task.max_seq_len;
    cfg.patch_embed_dim = 4;
    cfg.codebook_size = task.codebook_size;
    return cfg;
}

std::vector<TrainingTrace> sampled_traces(const TargetModel& target, const TaskConfig& task,
                                          std::size_t count, std::uint64_t seed) {
    auto recs = generate_long_responses(target, task, count, 1.0, seed);
    std::vector<TrainingTrace> traces;
    for (const auto& r : recs) traces.push_back(build_training_trace(target, r));
    return traces;
}

std::vector<double> flat_params(const ParameterStore& params) {
    std::vector<double> out;
    for (const auto& [name, t] : params.all()) out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
}

double finite_diff_max_rel_err(ParameterStore& params,
                               const std::function<Tensor()>& loss_fn, double eps = 1e-5) {
    params.zero_grads();
    Tensor loss = loss_fn();
    backward(loss);
    double max_rel = 0.0;
    for (auto& [name, t] : params.all()) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t.mutable_data()[i];
            t.mutable_data()[i] = saved + eps;
            const double lp = loss_fn().item();
            t.mutable_data()[i] = saved - eps;
            const double lm = loss_fn().item();
            t.mutable_data()[i] = saved;
            const double fd = (lp - lm) / (2.0 * eps);
            const double an = t.grad()[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            max_rel = std::max(max_rel, std::abs(fd - an) / denom);
        }
    }
    return max_rel;
}

} // namespace

TEST_CASE("cross entropy: analytic values and the entropy floor") {
    std::vector<double> onehot = {0.0, 1.0, 0.0, 0.0};
    CHECK(cross_entropy(onehot, onehot) == doctest::Approx(0.0).epsilon(1e-12));

    std::vector<double> u4(4, 0.25);
    CHECK(cross_entropy(u4, u4) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    std::vector<double> p = {0.5, 0.5}, ph = {0.9, 0.1};
    CHECK(cross_entropy(p, ph) ==
          doctest::Approx(-(0.5 * std::log(0.9) + 0.5 * std::log(0.1))).epsilon(1e-12));
    CHECK(cross_entropy(p, ph) == doctest::Approx(1.2039728043259361).epsilon(1e-12));

    // Mismatched model distribution can never beat the entropy of p.
    RngStream rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(8), b(8);
        double sa = 0, sb = 0;
        for (std::size_t i = 0; i < 8; ++i) {
            a[i] = -std::log(rng.next_uniform() + 1e-12);
            b[i] = -std::log(rng.next_uniform() + 1e-12);
            sa += a[i];
            sb += b[i];
        }
        for (std::size_t i = 0; i < 8; ++i) { a[i] /= sa; b[i] /= sb; }
        CHECK(cross_entropy(a, b) >= cross_entropy(a, a) - 1e-12);
    }

    std::vector<double> short_p = {1.0};
    CHECK_THROWS_AS(cross_entropy(short_p, onehot), std::invalid_argument);
}

TEST_CASE("train config validation and regime mapping") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.warmup_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.mtp_horizon = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.variant = "bogus";
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    CHECK(arch_for_regime("vispec") == DraftVariant::Vispec);
    CHECK(arch_for_regime("baseline_b") == DraftVariant::Vispec);
    CHECK(arch_for_regime("vispec_no_g") == DraftVariant::VispecNoGlobal);
    CHECK(arch_for_regime("text_only") == DraftVariant::TextOnly);
    CHECK(arch_for_regime("full_image") == DraftVariant::FullImage);
}

TEST_CASE("zero learning rate leaves the model untouched and the loss flat") {
    TaskConfig task = tiny_task();
    ModelConfig cfg = tiny_model_config(task, 2);
    TargetModel target = TargetModel::make_initialized(cfg, 11);
    auto corpus = generate_task_corpus(task, 3, 21);

    const auto before = flat_params(target.core().params());
    TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.epochs = 3;
    tc.batch_size = 2;
    TrainReport rep = train_target(target, corpus, tc);
    CHECK(flat_params(target.core().params()) == before);
    REQUIRE(rep.epoch_loss.size() == 3);
    CHECK(rep.epoch_loss[0] == rep.epoch_loss[1]);
    CHECK(rep.epoch_loss[1] == rep.epoch_loss[2]);
}

TEST_CASE("target training memorizes a small corpus and is gate-checked") {
    TaskConfig task = tiny_task();
    ModelConfig cfg = tiny_model_config(task, 2);
    cfg.embed_dim = 16;
    TargetModel target = TargetModel::make_initialized(cfg, 1);
    auto corpus = generate_task_corpus(task, 1, 33);

    TrainConfig tc;
    tc.learning_rate = 0.4;
    tc.epochs = 120;
    tc.batch_size = 1;
    tc.seed = 9;
    TrainReport rep = train_target(target, corpus, tc);
    CHECK(rep.epoch_loss.front() > rep.epoch_loss.back());
    CHECK(rep.epoch_loss.back() < 0.05);
    CHECK(rep.holdout_metric == 1.0);
    CHECK(rep.gate_passed);

    CHECK(target_exact_match(target, corpus) == 1.0);
    CHECK_THROWS_AS(train_target(target, {}, tc), std::invalid_argument);
}

TEST_CASE("training is deterministic: identical runs produce identical weights") {
    TaskConfig task = tiny_task();
    ModelConfig cfg = tiny_model_config(task, 2);
    auto corpus = generate_task_corpus(task, 4, 50);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 2;

    auto run = [&] {
        TargetModel t = TargetModel::make_initialized(cfg, 4);
        TrainReport rep = train_target(t, corpus, tc);
        return std::pair{flat_params(t.core().params()), rep.epoch_loss};
    };
    auto [pa, la] = run();
    auto [pb, lb] = run();
    CHECK(pa == pb);
    CHECK(la == lb);
}

TEST_CASE("a non-finite parameter aborts training instead of spreading") {
    TaskConfig task = tiny_task();
    ModelConfig cfg = tiny_model_config(task, 2);
    TargetModel target = TargetModel::make_initialized(cfg, 2);
    target.core().params().get("head").mutable_data()[0] = std::nan("");
    auto corpus = generate_task_corpus(task, 1, 3);
    TrainConfig tc;
    tc.epochs = 1;
    CHECK_THROWS_AS(train_target(target, corpus, tc), std::runtime_error);
}

TEST_CASE("multi-step draft loss: gradients match finite differences") {
    TaskConfig task = tiny_task();
    task.min_response_len = 4;
    ModelConfig tcfg = tiny_model_config(task, 2);
    TargetModel target = TargetModel::make_initialized(tcfg, 6);
    {
        RngStream r(8);
        for (double& v : target.core().params().get("head").mutable_data())
            v = r.next_normal() * 0.3;
    }
    auto traces = sampled_traces(target, task, 1, 12);

    ModelConfig dcfg = tiny_model_config(task, 1);
    DraftModel draft = DraftModel::make_initialized(dcfg, DraftVariant::Vispec, 77);
    auto loss_fn = [&] { return draft_trace_loss(draft, traces[0], 2); };
    CHECK(finite_diff_max_rel_err(draft.params(), loss_fn) < 1e-4);
}

TEST_CASE("draft loss never undercuts the mean entropy of the teacher rows") {
    TaskConfig task = tiny_task();
    ModelConfig tcfg = tiny_model_config(task, 2);
    TargetModel target = TargetModel::make_initialized(tcfg, 16);
    auto traces = sampled_traces(target, task, 2, 9);

    for (const TrainingTrace& tr : traces) {
        double floor = 0.0;
        for (const auto& p : tr.p) floor += cross_entropy(p, p);
        floor /= static_cast<double>(tr.p.size());
        DraftModel draft =
            DraftModel::make_initialized(tiny_model_config(task, 1), DraftVariant::Vispec, 3);
        NoGradGuard ng;
        CHECK(draft_trace_loss(draft, tr, 1).item() >= floor - 1e-9);
    }

    TrainingTrace empty = traces[0];
    empty.p.clear();
    DraftModel draft =
        DraftModel::make_initialized(tiny_model_config(task, 1), DraftVariant::Vispec, 3);
    CHECK_THROWS_AS(draft_trace_loss(draft, empty, 1), std::invalid_argument);
    CHECK_THROWS_AS(draft_trace_loss(draft, traces[0], 0), std::invalid_argument);
}

TEST_CASE("draft training: degraded regime equals a one-step run, mismatches throw") {
    TaskConfig task = tiny_task();
    ModelConfig tcfg = tiny_model_config(task, 2);
    TargetModel target = TargetModel::make_initialized(tcfg, 25);
    auto traces = sampled_traces(target, task, 3, 40);
    ModelConfig dcfg = tiny_model_config(task, 1);

    TrainConfig a;
    a.epochs = 2;
    a.batch_size = 2;
    a.variant = "baseline_b";
    a.mtp_horizon = 2;   // ignored by the degraded regime
    DraftModel da = DraftModel::make_initialized(dcfg, DraftVariant::Vispec, 5);
    TrainReport ra = train_draft(da, traces, a);

    TrainConfig b = a;
    b.variant = "vispec";
    b.mtp_horizon = 1;
    DraftModel db = DraftModel::make_initialized(dcfg, DraftVariant::Vispec, 5);
    TrainReport rb = train_draft(db, traces, b);

    CHECK(flat_params(da.params()) == flat_params(db.params()));
    CHECK(ra.epoch_loss == rb.epoch_loss);
    CHECK(ra.holdout_metric == rb.holdout_metric);

    DraftModel wrong = DraftModel::make_initialized(dcfg, DraftVariant::TextOnly, 5);
    CHECK_THROWS_AS(train_draft(wrong, traces, a), std::invalid_argument);
    CHECK_THROWS_AS(train_draft(da, {}, a), std::invalid_argument);
}

TEST_CASE("draft training reduces the loss and reports teacher agreement") {
    TaskConfig task = tiny_task();
    ModelConfig tcfg = tiny_model_config(task, 2);
    TargetModel target = TargetModel::make_initialized(tcfg, 31);
    {
        RngStream r(4);
        for (double& v : target.core().params().get("head").mutable_data())
            v = r.next_normal() * 0.4;
    }
    auto traces = sampled_traces(target, task, 6, 71);

    DraftModel draft =
        DraftModel::make_initialized(tiny_model_config(task, 1), DraftVariant::Vispec, 13);
    TrainConfig tc;
    tc.epochs = 8;
    tc.batch_size = 2;
    tc.learning_rate = 0.2;
    TrainReport rep = train_draft(draft, traces, tc);
    CHECK(rep.epoch_loss.back() < rep.epoch_loss.front());
    CHECK(rep.holdout_metric >= 0.0);
    CHECK(rep.holdout_metric <= 1.0);
    CHECK(rep.holdout_metric == draft_top1_agreement(draft, {traces.end() - 1, traces.end()}));
}
