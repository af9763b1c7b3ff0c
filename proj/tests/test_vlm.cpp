#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "vispec/vlm.hpp"

using namespace vispec;

namespace {

ModelConfig draft_config() {
    ModelConfig cfg;
    cfg.num_layers = 1;
    return cfg;
}

SyntheticImage uniform_image(std::size_t r, std::int32_t code) {
    SyntheticImage img;
    img.num_patches = r;
    img.patches.assign(r, code);
    img.redundant_code = code;
    return img;
}

SyntheticImage two_unique_image(std::size_t r) {
    SyntheticImage img = uniform_image(r, 0);
    img.unique_positions = {1, r - 2};
    img.unique_codes = {4, 7};
    img.patches[1] = 4;
    img.patches[r - 2] = 7;
    return img;
}

bool rows_bitwise_equal(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

} // namespace

TEST_CASE("config and image validation") {
    ModelConfig cfg;
    CHECK_NOTHROW(cfg.validate(false));
    cfg.num_layers = 1;
    CHECK_NOTHROW(cfg.validate(true));
    CHECK_THROWS_AS(cfg.validate(false), std::invalid_argument);
    cfg.num_layers = 2;
    CHECK_THROWS_AS(cfg.validate(true), std::invalid_argument);
    cfg.embed_dim = 25;   // not a multiple of num_heads == 2
    CHECK_THROWS_AS(cfg.validate(false), std::invalid_argument);

    SyntheticImage img = two_unique_image(8);
    CHECK_NOTHROW(img.validate());
    img.patches[3] = 9;   // non-unique patch must carry the shared code
    CHECK_THROWS_AS(img.validate(), std::invalid_argument);
}

TEST_CASE("vision encoder: deterministic, local, and matching the frozen fixture") {
    ModelConfig cfg;
    VisionEncoder enc(cfg);

    SyntheticImage img = uniform_image(8, 3);
    VisualEmbeddings a = enc.encode_image(img);
    VisualEmbeddings b = enc.encode_image(img);
    CHECK(a.rows.rows() == 8);
    CHECK(a.rows.cols() == cfg.embed_dim);
    CHECK(rows_bitwise_equal(a.rows.data(), b.rows.data()));

    // Frozen fixture for the default encoder seed.
    const double row0[6] = {-1.0213149973018039, -0.88860073885114665, 1.8442377684285378,
                            -0.026009181850295798, 2.2465499697418436, -1.4056575291883548};
    const double row5[6] = {-0.82395098184518323, -0.47145502066411471, 1.4285208335270316,
                            0.00041866186732364419, 1.9466583706596279, -1.1279810233479974};
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(a.rows.at(0, j) == doctest::Approx(row0[j]).epsilon(1e-15));
        CHECK(a.rows.at(5, j) == doctest::Approx(row5[j]).epsilon(1e-15));
    }

    // Locality: changing one patch changes only that row.
    SyntheticImage img2 = uniform_image(8, 3);
    img2.unique_positions = {2};
    img2.unique_codes = {5};
    img2.patches[2] = 5;
    VisualEmbeddings c = enc.encode_image(img2);
    for (std::size_t i = 0; i < 8; ++i) {
        if (i == 2)
            CHECK_FALSE(rows_bitwise_equal(a.rows.row(i), c.rows.row(i)));
        else
            CHECK(rows_bitwise_equal(a.rows.row(i), c.rows.row(i)));
    }

    SyntheticImage bad = uniform_image(4, 12);   // beyond codebook_size
    CHECK_THROWS_AS(enc.encode_image(bad), std::invalid_argument);
}

TEST_CASE("joint input arithmetic") {
    ModelConfig cfg;
    VisionEncoder enc(cfg);
    JointInput in = build_joint_input({1, 4}, enc, uniform_image(4, 2), {5, 6, 7}, cfg.max_seq_len);
    CHECK(in.length() == 9);
    CHECK(in.image_start() == 2);
    CHECK(in.image_len() == 4);
    CHECK(*in.token_at(0) == 1);
    CHECK(*in.token_at(1) == 4);
    for (std::size_t p = 2; p < 6; ++p) CHECK_FALSE(in.token_at(p).has_value());
    CHECK(*in.token_at(6) == 5);
    CHECK(*in.token_at(8) == 7);
    CHECK_THROWS_AS(in.token_at(9), std::out_of_range);

    CHECK_THROWS_AS(build_joint_input({1, 4}, enc, uniform_image(4, 2), {5}, 6),
                    std::invalid_argument);
}

TEST_CASE("untrained target emits the uniform distribution") {
    ModelConfig cfg;
    TargetModel target = TargetModel::make_initialized(cfg, 3);
    JointInput in = make_text_input({1, 2, 3}, cfg.max_seq_len);
    TransformerSession s(target.core());
    NoGradGuard ng;
    target.forward(in, s);
    auto p = softmax(s.logits_at(2));
    for (double v : p) CHECK(v == doctest::Approx(1.0 / cfg.vocab_size).epsilon(1e-12));
}

TEST_CASE("target forward: causal and bit-identical between cached and full evaluation") {
    ModelConfig cfg;
    TargetModel target = TargetModel::make_initialized(cfg, 11);
    // Break the zero head so logits carry signal.
    {
        Tensor& head = target.core().params().get("head");
        RngStream r(5);
        for (double& v : head.mutable_data()) v = r.next_normal() * 0.1;
    }
    VisionEncoder& enc = const_cast<VisionEncoder&>(target.encoder());
    (void)enc;
    NoGradGuard ng;

    JointInput full = build_joint_input({1, 4}, target.encoder(), two_unique_image(6), {5, 8, 9, 2},
                                        cfg.max_seq_len);
    TransformerSession s_full(target.core());
    target.forward(full, s_full);

    // Causality: changing the last token leaves earlier rows untouched.
    JointInput altered = full;
    altered.post_text.back() = 6;
    TransformerSession s_alt(target.core());
    target.forward(altered, s_alt);
    for (std::size_t p = 0; p + 1 < full.length(); ++p) {
        CHECK(rows_bitwise_equal(s_full.hidden_at(p), s_alt.hidden_at(p)));
        CHECK(rows_bitwise_equal(s_full.logits_at(p), s_alt.logits_at(p)));
    }
    CHECK_FALSE(rows_bitwise_equal(s_full.logits_at(full.length() - 1),
                                   s_alt.logits_at(full.length() - 1)));

    // Incremental evaluation through the cache is bit-identical.
    JointInput prefix = full;
    prefix.post_text.resize(2);
    TransformerSession s_inc(target.core());
    target.forward(prefix, s_inc);
    target.forward(full, s_inc);
    for (std::size_t p = 0; p < full.length(); ++p) {
        CHECK(rows_bitwise_equal(s_full.hidden_at(p), s_inc.hidden_at(p)));
        CHECK(rows_bitwise_equal(s_full.logits_at(p), s_inc.logits_at(p)));
    }

    // Cache/prefix mismatch is detected.
    JointInput other = full;
    other.pre_text[0] = 2;
    TransformerSession s_bad(target.core());
    target.forward(prefix, s_bad);
    CHECK_THROWS_AS(target.forward(other, s_bad), std::runtime_error);

    // Truncation rolls the cache back to an equivalent state.
    TransformerSession s_tr(target.core());
    target.forward(full, s_tr);
    s_tr.truncate(prefix.length());
    target.forward(full, s_tr);
    for (std::size_t p = 0; p < full.length(); ++p)
        CHECK(rows_bitwise_equal(s_full.hidden_at(p), s_tr.hidden_at(p)));
}

TEST_CASE("compress_visual: single-row identity, redundancy collapse, and the m cap") {
    ModelConfig cfg = draft_config();
    DraftModel draft = DraftModel::make_initialized(cfg, DraftVariant::Vispec, 21);
    NoGradGuard ng;

    // r = 1: one compressed token, and g equals it.
    VisualEmbeddings one;
    RngStream r(9);
    one.rows = Tensor::randn({1, cfg.embed_dim}, r, 1.0);
    one.span_len = 1;
    CompressedVisual cv1 = draft.compress_visual(one);
    CHECK(cv1.tokens.rows() == 1);
    CHECK(rows_bitwise_equal(cv1.tokens.row(0), cv1.global.row(0)));

    // Fully redundant span: identical rows compress to the same token as the
    // single row alone (attention over identical keys/values is that value).
    VisualEmbeddings rep;
    std::vector<double> flat;
    for (int i = 0; i < 4; ++i)
        flat.insert(flat.end(), one.rows.data().begin(), one.rows.data().end());
    rep.rows = Tensor::from({4, cfg.embed_dim}, std::move(flat));
    rep.span_len = 4;
    CompressedVisual cv4 = draft.compress_visual(rep);
    for (std::size_t j = 0; j < cfg.embed_dim; ++j)
        CHECK(cv4.tokens.at(0, j) == doctest::Approx(cv1.tokens.at(0, j)).epsilon(1e-12));

    // m must stay well below r.
    ModelConfig wide = cfg;
    wide.num_queries = 2;
    DraftModel draft2 = DraftModel::make_initialized(wide, DraftVariant::Vispec, 21);
    VisualEmbeddings small;
    small.rows = Tensor::randn({4, cfg.embed_dim}, r, 1.0);   // r/4 == 1 < m
    small.span_len = 4;
    CHECK_THROWS_AS(draft2.compress_visual(small), std::invalid_argument);
    VisualEmbeddings big;
    big.rows = Tensor::randn({8, cfg.embed_dim}, r, 1.0);
    big.span_len = 8;
    CHECK_NOTHROW(draft2.compress_visual(big));
}

TEST_CASE("inject_global: trivial cases and linearity") {
    const std::size_t d = 4;
    RngStream r(33);
    Tensor wg = Tensor::randn({d, d}, r, 1.0);
    std::vector<double> h = {1, -2, 3, 0.5};
    std::vector<double> zero(d, 0.0);
    CHECK(inject_global(h, zero, wg) == h);
    std::vector<double> g = {0.1, 0.2, -0.3, 0.4};
    CHECK(inject_global(h, g, Tensor::zeros({d, d})) == h);

    std::vector<double> g1 = {1, 0, 2, -1}, g2 = {0.5, -0.5, 0, 3}, g12(d);
    for (std::size_t i = 0; i < d; ++i) g12[i] = g1[i] + g2[i];
    auto lhs = inject_global(h, g12, wg);
    auto rhs = inject_global(inject_global(h, g1, wg), g2, wg);
    for (std::size_t i = 0; i < d; ++i) CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-12));

    CHECK_THROWS_AS(inject_global(h, std::vector<double>{1.0}, wg), std::invalid_argument);
}

TEST_CASE("draft layouts per variant") {
    ModelConfig cfg = draft_config();
    VisionEncoder enc(cfg);
    JointInput in = build_joint_input({1, 4}, enc, two_unique_image(8), {5, 6}, cfg.max_seq_len);
    NoGradGuard ng;

    DraftModel vis = DraftModel::make_initialized(cfg, DraftVariant::Vispec, 1);
    auto lv = vis.layout_for(in);
    CHECK(lv.positions.size() == 2 + cfg.num_queries + 2);
    CHECK(lv.compressed.has_value());
    CHECK(lv.global_active_after_image);
    CHECK(lv.positions[2] == 2);          // compressed token keeps the image anchor position
    CHECK(lv.positions[3] == 10);         // first post-image token keeps its absolute position
    CHECK(lv.joint_index[3] == 10);

    DraftModel nog = DraftModel::make_initialized(cfg, DraftVariant::VispecNoGlobal, 1);
    CHECK_FALSE(nog.layout_for(in).global_active_after_image);

    DraftModel txt = DraftModel::make_initialized(cfg, DraftVariant::TextOnly, 1);
    auto lt = txt.layout_for(in);
    CHECK(lt.positions.size() == 4);
    CHECK_FALSE(lt.compressed.has_value());

    DraftModel img = DraftModel::make_initialized(cfg, DraftVariant::FullImage, 1);
    CHECK(img.layout_for(in).positions.size() == 2 + 8 + 2);
}

TEST_CASE("with no compressed tokens and no global feature the draft is the text-only draft") {
    ModelConfig cfg = draft_config();
    cfg.num_queries = 0;
    VisionEncoder enc(cfg);
    JointInput in = build_joint_input({1, 4}, enc, two_unique_image(8), {5, 6, 9}, cfg.max_seq_len);
    NoGradGuard ng;

    DraftModel vis = DraftModel::make_initialized(cfg, DraftVariant::Vispec, 17);
    DraftModel txt = DraftModel::make_initialized(cfg, DraftVariant::TextOnly, 17);

    RngStream r(2);
    Tensor prev = Tensor::randn({in.length(), cfg.embed_dim}, r, 1.0);
    TransformerSession sv(vis.core()), st(txt.core());
    auto fv = vis.forward_full(in, prev, sv);
    auto ft = txt.forward_full(in, prev, st);
    CHECK(fv.step.logits.rows() == ft.step.logits.rows());
    CHECK(rows_bitwise_equal(fv.step.logits.data(), ft.step.logits.data()));
}

TEST_CASE("checkpoint: save/load is value-faithful and stable") {
    ModelConfig cfg;
    TargetModel target = TargetModel::make_initialized(cfg, 77);
    const auto path = std::filesystem::temp_directory_path() / "vspc_test.bin";
    save_checkpoint(path.string(), target.core().params());

    ParameterStore loaded = load_checkpoint(path.string());
    for (const auto& [name, t] : target.core().params().all()) {
        REQUIRE(loaded.contains(name));
        const Tensor& u = loaded.get(name);
        REQUIRE(u.shape() == t.shape());
        for (std::size_t i = 0; i < t.size(); ++i)
            CHECK(u.data()[i] == static_cast<double>(static_cast<float>(t.data()[i])));
    }

    // Round-tripping the loaded store reproduces the file byte-for-byte.
    const auto path2 = std::filesystem::temp_directory_path() / "vspc_test2.bin";
    save_checkpoint(path2.string(), loaded);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}
