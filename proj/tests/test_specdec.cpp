#include <doctest.h>

#include <numeric>

#include "vispec/specdec.hpp"

using namespace vispec;

namespace {

ModelConfig tiny_target_config() {
    ModelConfig cfg;
    cfg.vocab_size = 8;
    cfg.embed_dim = 8;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.max_seq_len = 48;
    cfg.patch_embed_dim = 4;
    return cfg;
}

ModelConfig tiny_draft_config() {
    ModelConfig cfg = tiny_target_config();
    cfg.num_layers = 1;
    return cfg;
}

void randomize_head(ParameterStore& params, std::uint64_t seed, double scale) {
    RngStream r(seed);
    for (double& v : params.get("head").mutable_data()) v = r.next_normal() * scale;
}

JointInput tiny_prompt(const TargetModel& target) {
    SyntheticImage img;
    img.num_patches = 4;
    img.patches = {0, 3, 0, 0};
    img.unique_positions = {1};
    img.unique_codes = {3};
    JointInput in = build_joint_input({1, 2}, target.encoder(), img, {4, 5},
                                      target.config().max_seq_len);
    return in;
}

std::vector<double> random_distribution(RngStream& rng, std::size_t n, double sharp) {
    std::vector<double> logits(n);
    for (double& v : logits) v = rng.next_normal() * sharp;
    return softmax(logits);
}

// Pearson statistic against expected counts; cells below a minimum expected
// count are merged into their neighbor.
double chi_square_statistic(const std::vector<std::size_t>& counts,
                            const std::vector<double>& probs, std::size_t n,
                            std::size_t& df_out) {
    double stat = 0.0, exp_acc = 0.0, obs_acc = 0.0;
    std::size_t cells = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        exp_acc += probs[i] * static_cast<double>(n);
        obs_acc += static_cast<double>(counts[i]);
        if (exp_acc >= 5.0 || i + 1 == counts.size()) {
            if (exp_acc > 0.0) {
                const double d = obs_acc - exp_acc;
                stat += d * d / exp_acc;
                ++cells;
            }
            exp_acc = obs_acc = 0.0;
        }
    }
    df_out = cells > 1 ? cells - 1 : 1;
    return stat;
}

// 0.999 quantiles of the chi-square distribution for small df.
double chi_square_crit_999(std::size_t df) {
    static const double q[] = {0, 10.828, 13.816, 16.266, 18.467, 20.515, 22.458,
                               24.322, 26.124, 27.877, 29.588, 31.264, 32.909,
                               34.528, 36.123, 37.697};
    REQUIRE(df < sizeof(q) / sizeof(q[0]));
    return q[df];
}

} // namespace

TEST_CASE("temperature distribution") {
    std::vector<double> logits = {1.0, 3.0, 3.0, -2.0};
    auto greedy = temperature_distribution(logits, 0.0);
    CHECK(greedy == std::vector<double>{0, 1, 0, 0});   // tie broken to the lowest id

    auto unit = temperature_distribution(logits, 1.0);
    auto ref = softmax(logits);
    for (std::size_t i = 0; i < 4; ++i) CHECK(unit[i] == doctest::Approx(ref[i]).epsilon(1e-15));

    // High temperature flattens, low temperature sharpens.
    auto hot = temperature_distribution(logits, 100.0);
    auto cold = temperature_distribution(logits, 0.01);
    CHECK(hot[3] > cold[3]);
    CHECK(cold[1] + cold[2] == doctest::Approx(1.0).epsilon(1e-9));

    CHECK_THROWS_AS(temperature_distribution(logits, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(temperature_distribution(std::vector<double>{}, 1.0), std::invalid_argument);
}

TEST_CASE("residual distribution: worked example and zero-residual error") {
    std::vector<double> p = {0.5, 0.3, 0.2}, ph = {0.2, 0.5, 0.3};
    auto r = residual_distribution(p, ph);
    CHECK(r[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r[1] == 0.0);
    CHECK(r[2] == 0.0);

    std::vector<double> p2 = {0.6, 0.1, 0.3}, ph2 = {0.2, 0.3, 0.5};
    auto r2 = residual_distribution(p2, ph2);   // positive part (0.4, 0, 0) -> (1,0,0)
    CHECK(r2[0] == doctest::Approx(1.0).epsilon(1e-15));

    std::vector<double> p3 = {0.25, 0.25, 0.5};
    CHECK_THROWS_AS(residual_distribution(p3, p3), std::domain_error);
    CHECK_THROWS_AS(residual_distribution(p, std::vector<double>{0.5, 0.5}),
                    std::invalid_argument);
}

TEST_CASE("accept_or_resample: acceptance rate and rejection distribution") {
    // p(t)/p_hat(t) = 0.3/0.5 -> accept with probability 0.6.
    std::vector<double> p = {0.3, 0.5, 0.2}, ph = {0.5, 0.25, 0.25};
    RngStream rng(1234);
    const std::size_t n = 100000;
    std::size_t accepted = 0;
    std::vector<std::size_t> repl(3, 0);
    for (std::size_t i = 0; i < n; ++i) {
        AcceptResult res = accept_or_resample(p, ph, 0, rng);
        if (res.accepted) {
            ++accepted;
            CHECK(res.replacement == 0);
        } else {
            repl[static_cast<std::size_t>(res.replacement)]++;
        }
    }
    CHECK(std::abs(static_cast<double>(accepted) / n - 0.6) < 0.01);
    // Residual is (0, 0.25, 0)/0.25 = one-hot on token 1.
    CHECK(repl[0] == 0);
    CHECK(repl[2] == 0);
    CHECK(repl[1] == n - accepted);

    CHECK_THROWS_AS(accept_or_resample(p, ph, 3, rng), std::invalid_argument);
    CHECK_THROWS_AS(accept_or_resample(p, ph, -1, rng), std::invalid_argument);
    std::vector<double> ph_zero = {0.0, 0.5, 0.5};
    CHECK_THROWS_AS(accept_or_resample(p, ph_zero, 0, rng), std::invalid_argument);
}

TEST_CASE("draft-then-verify induces exactly the target distribution (closed form)") {
    RngStream rng(55);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t v = 2 + static_cast<std::size_t>(rng.next_u64() % 15);
        auto p = random_distribution(rng, v, 2.0);
        auto ph = random_distribution(rng, v, 2.0);
        auto induced = induced_next_token_distribution(p, ph);
        for (std::size_t i = 0; i < v; ++i)
            CHECK(std::abs(induced[i] - p[i]) < 1e-12);
    }
    // Extreme mismatch: near-deterministic draft against a flat target.
    std::vector<double> p = {0.25, 0.25, 0.25, 0.25};
    std::vector<double> ph = {1.0 - 3e-12, 1e-12, 1e-12, 1e-12};
    auto induced = induced_next_token_distribution(p, ph);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(induced[i] - p[i]) < 1e-12);
}

TEST_CASE("draft tree construction: structure, budget, and attention lists") {
    ModelConfig cfg = tiny_target_config();
    TargetModel target = TargetModel::make_initialized(cfg, 5);
    randomize_head(target.core().params(), 9, 0.5);
    NoGradGuard ng;

    JointInput prompt = tiny_prompt(target);
    TargetAsDraftBackend backend(target);
    backend.begin(prompt, {});

    DecodeConfig dc;
    dc.tree_mode = true;
    dc.tree_budget = 10;
    dc.tree_depth = 3;
    dc.expand_top_k = 3;
    dc.temperature = 0.9;
    RngStream rng(77);
    DraftTree tree = build_draft_tree(backend, backend.tip_logits(), prompt.length(), dc, rng);

    CHECK(tree.size_excluding_root() <= dc.tree_budget);
    CHECK(tree.size_excluding_root() >= 1);
    CHECK(tree.depth <= dc.tree_depth);
    for (std::size_t i = 1; i < tree.nodes.size(); ++i) {
        const DraftTreeNode& n = tree.nodes[i];
        REQUIRE(n.parent >= 0);
        CHECK(n.depth == tree.nodes[static_cast<std::size_t>(n.parent)].depth + 1);
        CHECK(n.cum_prob <= tree.nodes[static_cast<std::size_t>(n.parent)].cum_prob + 1e-15);
        CHECK(n.token >= 0);
        CHECK(static_cast<std::size_t>(n.token) < cfg.vocab_size);
    }
    for (const DraftTreeNode& n : tree.nodes) {
        REQUIRE(n.round_tokens.size() == n.round_children.size());
        for (std::size_t r = 0; r < n.round_tokens.size(); ++r)
            CHECK(tree.nodes[n.round_children[r]].token == n.round_tokens[r]);
    }

    const std::size_t prefix = prompt.length();
    auto allowed = tree.attention_allowed(prefix);
    REQUIRE(allowed.size() == tree.size_excluding_root());
    for (std::size_t i = 1; i < tree.nodes.size(); ++i) {
        const auto& row = allowed[i - 1];
        // prefix, then the ancestor chain, then self; depth ancestors total.
        REQUIRE(row.size() == prefix + tree.nodes[i].depth);
        for (std::size_t j = 0; j < prefix; ++j) CHECK(row[j] == static_cast<std::int32_t>(j));
        CHECK(row.back() == static_cast<std::int32_t>(prefix + i - 1));
    }
}

TEST_CASE("greedy speculative decoding reproduces greedy target decoding exactly") {
    ModelConfig tcfg = tiny_target_config();
    TargetModel target = TargetModel::make_initialized(tcfg, 31);
    randomize_head(target.core().params(), 4, 0.6);
    ModelConfig dcfg = tiny_draft_config();
    DraftModel draft = DraftModel::make_initialized(dcfg, DraftVariant::Vispec, 8);
    randomize_head(draft.params(), 6, 0.4);

    JointInput prompt = tiny_prompt(target);
    GenerateResult base = generate_autoregressive(target, prompt, 0.0, 16, -1, 0);

    for (bool tree : {false, true}) {
        EagleDraftBackend backend(draft);
        DecodeConfig dc;
        dc.tree_mode = tree;
        dc.draft_len = 3;
        dc.tree_budget = 8;
        dc.tree_depth = 3;
        dc.expand_top_k = 2;
        dc.temperature = 0.0;
        dc.max_new_tokens = 16;
        GenerateResult spec = speculative_generate(target, backend, prompt, dc);
        CHECK(spec.tokens == base.tokens);
        CHECK(spec.stats.total_tokens == spec.tokens.size());
        CHECK(spec.stats.cycles == spec.stats.acceptance_histogram.size());
        const std::size_t acc = std::accumulate(spec.stats.acceptance_histogram.begin(),
                                                spec.stats.acceptance_histogram.end(), 0ull);
        CHECK(acc == spec.stats.accepted_draft_tokens);
    }

    // End-token handling matches as well.
    const std::int32_t eos = base.tokens.at(4);
    GenerateResult base_eos = generate_autoregressive(target, prompt, 0.0, 16, eos, 0);
    EagleDraftBackend backend(draft);
    DecodeConfig dc;
    dc.draft_len = 4;
    dc.temperature = 0.0;
    dc.max_new_tokens = 16;
    dc.end_token = eos;
    GenerateResult spec = speculative_generate(target, backend, prompt, dc);
    CHECK(spec.tokens == base_eos.tokens);
    CHECK(spec.tokens.back() == eos);
}

TEST_CASE("a single-branch tree is bit-identical to the chain") {
    ModelConfig tcfg = tiny_target_config();
    TargetModel target = TargetModel::make_initialized(tcfg, 13);
    randomize_head(target.core().params(), 21, 0.5);
    ModelConfig dcfg = tiny_draft_config();
    DraftModel draft = DraftModel::make_initialized(dcfg, DraftVariant::Vispec, 14);
    randomize_head(draft.params(), 22, 0.5);
    JointInput prompt = tiny_prompt(target);

    for (std::uint64_t seed : {0ull, 1ull, 2ull, 3ull}) {
        DecodeConfig chain;
        chain.draft_len = 3;
        chain.temperature = 0.8;
        chain.max_new_tokens = 12;
        chain.seed = seed;
        EagleDraftBackend b1(draft);
        GenerateResult rc = speculative_generate(target, b1, prompt, chain);

        DecodeConfig tree = chain;
        tree.tree_mode = true;
        tree.tree_depth = 3;
        tree.tree_budget = 3;
        tree.expand_top_k = 1;
        EagleDraftBackend b2(draft);
        GenerateResult rt = speculative_generate(target, b2, prompt, tree);

        CHECK(rc.tokens == rt.tokens);
        CHECK(rc.stats.accepted_draft_tokens == rt.stats.accepted_draft_tokens);
        CHECK(rc.stats.acceptance_histogram == rt.stats.acceptance_histogram);
    }
}

TEST_CASE("perfect draft accepts every token") {
    ModelConfig cfg = tiny_target_config();
    TargetModel target = TargetModel::make_initialized(cfg, 2);
    randomize_head(target.core().params(), 3, 0.5);
    JointInput prompt = tiny_prompt(target);

    TargetAsDraftBackend backend(target);
    DecodeConfig dc;
    dc.draft_len = 4;
    dc.temperature = 0.0;
    dc.max_new_tokens = 20;
    GenerateResult res = speculative_generate(target, backend, prompt, dc);
    CHECK(res.tokens.size() == 20);
    // Every full cycle emits draft_len accepted tokens plus the bonus.
    CHECK(res.stats.cycles == 4);
    for (std::size_t a : res.stats.acceptance_histogram) CHECK(a == dc.draft_len);
    CHECK(res.stats.accepted_draft_tokens == 16);
    CHECK(res.tokens == generate_autoregressive(target, prompt, 0.0, 20, -1, 0).tokens);
}

TEST_CASE("sampled decoding is lossless: first-token law matches the target") {
    // Adversarial setting: the untrained draft head proposes uniformly while
    // the target is sharp, so rejections and multi-round walks are frequent.
    ModelConfig tcfg = tiny_target_config();
    TargetModel target = TargetModel::make_initialized(tcfg, 41);
    randomize_head(target.core().params(), 42, 1.2);
    ModelConfig dcfg = tiny_draft_config();
    DraftModel draft = DraftModel::make_initialized(dcfg, DraftVariant::Vispec, 43);
    JointInput prompt = tiny_prompt(target);
    const double temp = 0.7;

    // Exact law of the first generated token.
    std::vector<double> expected;
    {
        NoGradGuard ng;
        TransformerSession s(target.core());
        target.forward(prompt, s);
        expected = temperature_distribution(s.logits_at(prompt.length() - 1), temp);
    }

    auto run_chi = [&](bool tree_mode) {
        const std::size_t n = 4000;
        std::vector<std::size_t> counts(tcfg.vocab_size, 0);
        for (std::size_t i = 0; i < n; ++i) {
            EagleDraftBackend backend(draft);
            DecodeConfig dc;
            dc.tree_mode = tree_mode;
            dc.draft_len = 2;
            dc.tree_budget = 6;
            dc.tree_depth = 2;
            dc.expand_top_k = 3;
            dc.temperature = temp;
            dc.max_new_tokens = 1;
            dc.seed = 1000 + i;
            GenerateResult r = speculative_generate(target, backend, prompt, dc);
            REQUIRE(r.tokens.size() == 1);
            counts[static_cast<std::size_t>(r.tokens[0])]++;
        }
        std::size_t df = 0;
        const double stat = chi_square_statistic(counts, expected, n, df);
        CHECK(stat < chi_square_crit_999(df));
    };
    run_chi(false);
    run_chi(true);
}

TEST_CASE("decode config validation") {
    DecodeConfig dc;
    CHECK_NOTHROW(dc.validate());
    dc.temperature = -0.1;
    CHECK_THROWS_AS(dc.validate(), std::invalid_argument);
    dc.temperature = 0.0;
    dc.max_new_tokens = 0;
    CHECK_THROWS_AS(dc.validate(), std::invalid_argument);
    dc.max_new_tokens = 4;
    dc.expand_top_k = 0;
    CHECK_THROWS_AS(dc.validate(), std::invalid_argument);
}
