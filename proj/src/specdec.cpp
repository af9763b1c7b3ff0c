#include "vispec/specdec.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vispec {

namespace {

constexpr double kProbFloor = 1e-300;   // clip before forming ratios
constexpr double kLogSpace = 1e-30;     // below this, divide in log space

std::uint64_t now_ns() {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::steady_clock::now().time_since_epoch())
            .count());
}

double ratio_clipped(double num, double den) {
    num = std::max(num, 0.0);
    den = std::max(den, kProbFloor);
    if (num >= den) return 1.0;
    if (num <= 0.0) return 0.0;
    if (num < kLogSpace || den < kLogSpace)
        return std::exp(std::log(std::max(num, kProbFloor)) - std::log(den));
    return num / den;
}

std::size_t argmax_lowest(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

void check_same_size(std::span<const double> p, std::span<const double> p_hat) {
    if (p.empty() || p.size() != p_hat.size())
        throw std::invalid_argument("distribution size mismatch");
}

} // namespace

void DecodeConfig::validate() const {
    if (draft_len < 1) throw std::invalid_argument("DecodeConfig: draft_len must be >= 1");
    if (tree_budget < 1 || tree_depth < 1 || expand_top_k < 1)
        throw std::invalid_argument("DecodeConfig: tree parameters must be >= 1");
    if (temperature < 0.0 || !std::isfinite(temperature))
        throw std::invalid_argument("DecodeConfig: temperature must be finite and >= 0");
    if (max_new_tokens < 1) throw std::invalid_argument("DecodeConfig: max_new_tokens must be >= 1");
}

std::vector<double> temperature_distribution(std::span<const double> logits, double temperature) {
    if (logits.empty()) throw std::invalid_argument("temperature_distribution: empty logits");
    if (temperature < 0.0 || !std::isfinite(temperature))
        throw std::invalid_argument("temperature_distribution: bad temperature");
    if (temperature == 0.0) {
        std::vector<double> out(logits.size(), 0.0);
        out[argmax_lowest(logits)] = 1.0;
        return out;
    }
    std::vector<double> scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
    return softmax(scaled);
}

std::vector<double> residual_distribution(std::span<const double> p, std::span<const double> p_hat) {
    check_same_size(p, p_hat);
    std::vector<double> out(p.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        out[i] = std::max(0.0, p[i] - p_hat[i]);
        sum += out[i];
    }
    if (sum <= 0.0)
        throw std::domain_error("residual_distribution: residual is identically zero");
    for (double& v : out) v /= sum;
    return out;
}

AcceptResult accept_or_resample(std::span<const double> p, std::span<const double> p_hat,
                                std::int32_t drafted_token, RngStream& rng) {
    check_same_size(p, p_hat);
    if (drafted_token < 0 || static_cast<std::size_t>(drafted_token) >= p.size())
        throw std::invalid_argument("accept_or_resample: drafted token out of range");
    if (p_hat[static_cast<std::size_t>(drafted_token)] <= 0.0)
        throw std::invalid_argument("accept_or_resample: draft assigned zero probability to its own token");
    const std::size_t t = static_cast<std::size_t>(drafted_token);
    const double accept_prob = ratio_clipped(p[t], p_hat[t]);
    const double u = rng.next_uniform();
    if (u < accept_prob) return {true, drafted_token};
    std::vector<double> residual = residual_distribution(p, p_hat);
    return {false, static_cast<std::int32_t>(rng.sample_index(residual))};
}

std::vector<double> induced_next_token_distribution(std::span<const double> p,
                                                    std::span<const double> p_hat) {
    check_same_size(p, p_hat);
    std::vector<double> out(p.size(), 0.0);
    double reject_mass = 0.0;
    for (std::size_t t = 0; t < p.size(); ++t) {
        out[t] = p_hat[t] * ratio_clipped(p[t], p_hat[t]);
        reject_mass += std::max(0.0, p_hat[t] - p[t]);
    }
    if (reject_mass > 0.0) {
        std::vector<double> residual = residual_distribution(p, p_hat);
        for (std::size_t t = 0; t < p.size(); ++t) out[t] += reject_mass * residual[t];
    }
    return out;
}

// ---- draft tree ----------------------------------------------------------

std::vector<std::vector<std::int32_t>> DraftTree::attention_allowed(std::size_t prefix_len) const {
    std::vector<std::vector<std::int32_t>> allowed;
    allowed.reserve(nodes.size() - 1);
    for (std::size_t i = 1; i < nodes.size(); ++i) {
        std::vector<std::int32_t> anc;   // ancestor node rows, root path first
        for (std::ptrdiff_t a = nodes[i].parent; a > 0; a = nodes[static_cast<std::size_t>(a)].parent)
            anc.push_back(static_cast<std::int32_t>(prefix_len + static_cast<std::size_t>(a) - 1));
        std::reverse(anc.begin(), anc.end());
        std::vector<std::int32_t> row;
        row.reserve(prefix_len + anc.size() + 1);
        for (std::size_t j = 0; j < prefix_len; ++j) row.push_back(static_cast<std::int32_t>(j));
        row.insert(row.end(), anc.begin(), anc.end());
        row.push_back(static_cast<std::int32_t>(prefix_len + i - 1));
        allowed.push_back(std::move(row));
    }
    return allowed;
}

// Best-first construction: repeatedly expand the unexpanded node (below the
// depth cap) with the highest path probability, so the budget follows the
// most promising paths to full depth instead of being spent breadth-first.
// At T > 0 each expansion draws a fixed number of iid samples from the
// node's draft distribution, decided before sampling, and every draw becomes
// a verification round; duplicates merge into one child node. Allowances and
// expansion order never depend on a node's own future draws, and
// value-dependent pruning of drawn candidates would bias verification, so it
// never happens. At T = 0 children are the distinct top tokens.
DraftTree build_draft_tree(DraftBackend& draft, std::span<const double> tip_logits,
                           std::size_t start_position, const DecodeConfig& cfg,
                           RngStream& sample_rng) {
    cfg.validate();
    DraftTree tree;
    DraftTreeNode root;
    root.draft_dist = temperature_distribution(tip_logits, cfg.temperature);
    tree.nodes.push_back(std::move(root));

    // T = 0 ranking distribution (plain softmax of the draft logits).
    std::vector<std::vector<double>> rank_dist;
    rank_dist.push_back(cfg.temperature == 0.0 ? softmax(tip_logits)
                                               : tree.nodes[0].draft_dist);

    std::size_t created = 0;
    std::vector<char> expanded = {0};
    while (created < cfg.tree_budget) {
        // Highest cumulative probability first; creation order breaks ties.
        std::ptrdiff_t parent = -1;
        for (std::size_t i = 0; i < tree.nodes.size(); ++i)
            if (!expanded[i] && tree.nodes[i].depth < cfg.tree_depth &&
                (parent < 0 ||
                 tree.nodes[i].cum_prob > tree.nodes[static_cast<std::size_t>(parent)].cum_prob))
                parent = static_cast<std::ptrdiff_t>(i);
        if (parent < 0) break;
        const std::size_t pi = static_cast<std::size_t>(parent);
        expanded[pi] = 1;
        const std::size_t allowance = std::min(cfg.expand_top_k, cfg.tree_budget - created);

        std::vector<std::int32_t> draws;
        if (cfg.temperature == 0.0) {
            const std::vector<double>& rd = rank_dist[pi];
            std::vector<std::size_t> order(rd.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return rd[a] > rd[b]; });
            for (std::size_t i = 0; i < std::min(allowance, order.size()); ++i)
                if (rd[order[i]] > 0.0) draws.push_back(static_cast<std::int32_t>(order[i]));
        } else {
            for (std::size_t i = 0; i < allowance; ++i)
                draws.push_back(
                    static_cast<std::int32_t>(sample_rng.sample_index(tree.nodes[pi].draft_dist)));
        }

        std::vector<std::size_t> new_children;
        for (std::int32_t t : draws) {
            std::size_t child = 0;
            bool found = false;
            for (std::size_t r = 0; r < tree.nodes[pi].round_tokens.size(); ++r)
                if (tree.nodes[pi].round_tokens[r] == t) {
                    child = tree.nodes[pi].round_children[r];
                    found = true;
                    break;
                }
            if (!found) {
                DraftTreeNode cn;
                cn.token = t;
                cn.parent = parent;
                cn.prob = rank_dist[pi][static_cast<std::size_t>(t)];
                cn.cum_prob = tree.nodes[pi].cum_prob * cn.prob;
                cn.depth = tree.nodes[pi].depth + 1;
                child = tree.nodes.size();
                tree.depth = std::max(tree.depth, cn.depth);
                tree.nodes.push_back(std::move(cn));
                rank_dist.emplace_back();
                expanded.push_back(0);
                new_children.push_back(child);
                ++created;
            }
            tree.nodes[pi].round_tokens.push_back(t);
            tree.nodes[pi].round_children.push_back(child);
        }

        // One draft forward per new node.
        for (std::size_t child : new_children) {
            DraftTreeNode& cn = tree.nodes[child];
            DraftBackend::Step step = draft.advance(cn.token, tree.nodes[pi].backend_row,
                                                    start_position + cn.depth - 1);
            cn.backend_row = static_cast<std::ptrdiff_t>(step.row);
            cn.draft_dist = temperature_distribution(step.logits, cfg.temperature);
            rank_dist[child] = cfg.temperature == 0.0 ? softmax(step.logits) : cn.draft_dist;
        }
    }
    return tree;
}

// ---- EAGLE-style backend -------------------------------------------------

EagleDraftBackend::EagleDraftBackend(const DraftModel& draft) : draft_(&draft) {}

void EagleDraftBackend::begin(const JointInput& prompt,
                              const std::vector<std::vector<double>>& target_hidden) {
    const std::size_t n = prompt.length(), d = draft_->config().embed_dim;
    if (target_hidden.size() != n)
        throw std::invalid_argument("EagleDraftBackend: target hidden row count mismatch");
    std::vector<double> flat;
    flat.reserve(n * d);
    for (const auto& r : target_hidden) {
        if (r.size() != d) throw std::invalid_argument("EagleDraftBackend: hidden width mismatch");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    Tensor prev = Tensor::from({n, d}, std::move(flat));

    session_ = std::make_unique<TransformerSession>(draft_->core());
    DraftModel::FullForward ff = draft_->forward_full(prompt, prev, *session_);
    committed_rows_ = session_->length();
    next_position_ = n;
    global_.clear();
    if (ff.layout.global_active_after_image && ff.layout.compressed) {
        auto g = ff.layout.compressed->global.data();
        global_.assign(g.begin(), g.end());
    }
    row_allowed_.assign(committed_rows_, {});
    for (std::size_t i = 0; i < committed_rows_; ++i)
        for (std::size_t j = 0; j <= i; ++j)
            row_allowed_[i].push_back(static_cast<std::int32_t>(j));
    tip_logits_.assign(session_->logits_at(committed_rows_ - 1).begin(),
                       session_->logits_at(committed_rows_ - 1).end());
}

DraftBackend::Step EagleDraftBackend::advance(std::int32_t token, std::ptrdiff_t parent_row,
                                              std::size_t position) {
    if (!session_) throw std::runtime_error("EagleDraftBackend: begin() not called");
    const std::size_t parent =
        parent_row < 0 ? committed_rows_ - 1 : static_cast<std::size_t>(parent_row);
    if (parent >= session_->length())
        throw std::invalid_argument("EagleDraftBackend: bad parent row");

    Tensor h_prev = Tensor::from({1, draft_->config().embed_dim},
                                 std::vector<double>(session_->hidden_at(parent).begin(),
                                                     session_->hidden_at(parent).end()));
    Tensor g_row;
    const Tensor* g = nullptr;
    if (!global_.empty()) {
        g_row = Tensor::from({1, global_.size()}, global_);
        g = &g_row;
    }
    Tensor row = draft_->text_input_row(token, h_prev, g);

    std::vector<std::int32_t> allowed = row_allowed_[parent];
    allowed.push_back(static_cast<std::int32_t>(session_->length()));
    Transformer::StepResult res =
        session_->append(row, {position}, {allowed}, {static_cast<std::int64_t>(token)});
    row_allowed_.push_back(allowed);
    Step out;
    out.row = session_->length() - 1;
    out.logits.assign(res.logits.row(0).begin(), res.logits.row(0).end());
    return out;
}

void EagleDraftBackend::commit(const std::vector<std::int32_t>& tokens,
                               const std::vector<std::vector<double>>& prev_hidden,
                               const std::vector<std::size_t>&) {
    // Speculative rows were built from the draft's own hidden states; the
    // verified sequence feeds the target's, so recompute every row.
    if (!session_) throw std::runtime_error("EagleDraftBackend: begin() not called");
    if (tokens.size() != prev_hidden.size())
        throw std::invalid_argument("EagleDraftBackend: commit size mismatch");
    session_->truncate(committed_rows_);
    row_allowed_.resize(committed_rows_);
    const std::size_t d = draft_->config().embed_dim;

    std::vector<Tensor> rows;
    std::vector<std::size_t> positions;
    std::vector<std::int64_t> tags;
    Tensor g_row;
    const Tensor* g = nullptr;
    if (!global_.empty()) {
        g_row = Tensor::from({1, global_.size()}, global_);
        g = &g_row;
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (prev_hidden[i].size() != d)
            throw std::invalid_argument("EagleDraftBackend: commit hidden width mismatch");
        Tensor h_prev = Tensor::from({1, d}, prev_hidden[i]);
        rows.push_back(draft_->text_input_row(tokens[i], h_prev, g));
        positions.push_back(next_position_ + i);
        tags.push_back(tokens[i]);
    }
    if (!rows.empty()) {
        Tensor stacked = rows.size() == 1 ? rows[0] : ops::concat_rows(rows);
        session_->append_causal(stacked, positions, tags);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::vector<std::int32_t> a(committed_rows_ + i + 1);
            std::iota(a.begin(), a.end(), 0);
            row_allowed_.push_back(std::move(a));
        }
        committed_rows_ += rows.size();
        next_position_ += rows.size();
    }
    tip_logits_.assign(session_->logits_at(committed_rows_ - 1).begin(),
                       session_->logits_at(committed_rows_ - 1).end());
}

std::vector<double> EagleDraftBackend::tip_logits() const {
    if (!session_) throw std::runtime_error("EagleDraftBackend: begin() not called");
    return tip_logits_;
}

// ---- target-as-draft backend ---------------------------------------------

TargetAsDraftBackend::TargetAsDraftBackend(const TargetModel& target) : target_(&target) {}

void TargetAsDraftBackend::begin(const JointInput& prompt,
                                 const std::vector<std::vector<double>>&) {
    session_ = std::make_unique<TransformerSession>(target_->core());
    target_->forward(prompt, *session_);
    committed_rows_ = session_->length();
    row_allowed_.assign(committed_rows_, {});
    for (std::size_t i = 0; i < committed_rows_; ++i)
        for (std::size_t j = 0; j <= i; ++j)
            row_allowed_[i].push_back(static_cast<std::int32_t>(j));
    tip_logits_.assign(session_->logits_at(committed_rows_ - 1).begin(),
                       session_->logits_at(committed_rows_ - 1).end());
}

DraftBackend::Step TargetAsDraftBackend::advance(std::int32_t token, std::ptrdiff_t parent_row,
                                                 std::size_t position) {
    if (!session_) throw std::runtime_error("TargetAsDraftBackend: begin() not called");
    const std::size_t parent =
        parent_row < 0 ? committed_rows_ - 1 : static_cast<std::size_t>(parent_row);
    if (parent >= session_->length())
        throw std::invalid_argument("TargetAsDraftBackend: bad parent row");
    std::vector<std::int32_t> allowed = row_allowed_[parent];
    allowed.push_back(static_cast<std::int32_t>(session_->length()));
    Transformer::StepResult res = session_->append(target_->token_input_row(token), {position},
                                                   {allowed}, {static_cast<std::int64_t>(token)});
    row_allowed_.push_back(allowed);
    Step out;
    out.row = session_->length() - 1;
    out.logits.assign(res.logits.row(0).begin(), res.logits.row(0).end());
    return out;
}

void TargetAsDraftBackend::commit(const std::vector<std::int32_t>& tokens,
                                  const std::vector<std::vector<double>>&,
                                  const std::vector<std::size_t>& accepted_rows) {
    // Speculative rows are exact here (inputs do not depend on which path
    // survives), so keep the accepted ones and only evaluate the final token.
    if (!session_) throw std::runtime_error("TargetAsDraftBackend: begin() not called");
    if (tokens.empty()) throw std::invalid_argument("TargetAsDraftBackend: empty commit");
    if (accepted_rows.size() + 1 != tokens.size())
        throw std::invalid_argument("TargetAsDraftBackend: accepted row count mismatch");
    std::vector<std::size_t> keep(committed_rows_);
    std::iota(keep.begin(), keep.end(), 0);
    keep.insert(keep.end(), accepted_rows.begin(), accepted_rows.end());
    session_->compact(keep);
    committed_rows_ = session_->length();

    const std::size_t pos = session_->position_at(committed_rows_ - 1) + 1;
    session_->append_causal(target_->token_input_row(tokens.back()), {pos},
                            {static_cast<std::int64_t>(tokens.back())});
    committed_rows_ += 1;
    row_allowed_.assign(committed_rows_, {});
    for (std::size_t i = 0; i < committed_rows_; ++i)
        for (std::size_t j = 0; j <= i; ++j)
            row_allowed_[i].push_back(static_cast<std::int32_t>(j));
    tip_logits_.assign(session_->logits_at(committed_rows_ - 1).begin(),
                       session_->logits_at(committed_rows_ - 1).end());
}

std::vector<double> TargetAsDraftBackend::tip_logits() const {
    if (!session_) throw std::runtime_error("TargetAsDraftBackend: begin() not called");
    return tip_logits_;
}

// ---- generation ----------------------------------------------------------

namespace {

std::vector<double> one_hot(std::size_t size, std::size_t index) {
    std::vector<double> v(size, 0.0);
    v[index] = 1.0;
    return v;
}

} // namespace

GenerateResult speculative_generate(const TargetModel& target, DraftBackend& draft,
                                    const JointInput& prompt, const DecodeConfig& cfg) {
    cfg.validate();
    NoGradGuard ng;
    const std::uint64_t t0 = now_ns();
    const std::size_t vocab = target.config().vocab_size;

    // Effective tree shape: chain mode is the linear tree.
    DecodeConfig shape = cfg;
    if (!cfg.tree_mode) {
        shape.tree_depth = cfg.draft_len;
        shape.tree_budget = cfg.draft_len;
        shape.expand_top_k = 1;
    }

    TransformerSession session(target.core());
    target.forward(prompt, session);
    std::size_t committed = session.length();
    std::vector<std::vector<double>> prompt_hidden(committed);
    for (std::size_t i = 0; i < committed; ++i)
        prompt_hidden[i].assign(session.hidden_at(i).begin(), session.hidden_at(i).end());
    draft.begin(prompt, prompt_hidden);

    std::vector<double> pending =
        temperature_distribution(session.logits_at(committed - 1), cfg.temperature);

    GenerateResult out;
    RngStream base(RngStream::mix(cfg.seed ^ 0x737065636465ULL));
    bool done = false;
    while (!done && out.tokens.size() < cfg.max_new_tokens) {
        const std::size_t cycle = out.stats.cycles;
        RngStream cyc = base.fork(cycle);
        RngStream draft_rng = cyc.fork(0);
        RngStream verify_rng = cyc.fork(1);

        if (committed + shape.tree_depth + 1 > target.config().max_seq_len)
            throw std::runtime_error("speculative_generate: context window exhausted");

        const std::uint64_t d0 = now_ns();
        std::vector<double> tip = draft.tip_logits();
        DraftTree tree = build_draft_tree(draft, tip, committed, shape, draft_rng);
        out.stats.wall_ns_draft += now_ns() - d0;
        if (tree.size_excluding_root() == 0)
            throw std::runtime_error("speculative_generate: empty draft tree");

        // Batched target pass over every tree node.
        std::vector<Tensor> rows;
        std::vector<std::size_t> positions;
        std::vector<std::int64_t> tags;
        for (std::size_t i = 1; i < tree.nodes.size(); ++i) {
            rows.push_back(target.token_input_row(tree.nodes[i].token));
            positions.push_back(committed + tree.nodes[i].depth - 1);
            tags.push_back(tree.nodes[i].token);
        }
        Tensor stacked = rows.size() == 1 ? rows[0] : ops::concat_rows(rows);
        session.append(stacked, positions, tree.attention_allowed(committed), tags);

        // Multi-round rejection walk from the root.
        std::vector<double> r = pending;
        std::size_t cur = 0;
        std::vector<std::int32_t> accepted;
        std::vector<std::size_t> accepted_nodes;
        std::int32_t final_token = -1;
        for (;;) {
            const DraftTreeNode& node = tree.nodes[cur];
            std::ptrdiff_t descend = -1;
            for (std::size_t ri = 0; ri < node.round_tokens.size() && descend < 0; ++ri) {
                const std::int32_t t = node.round_tokens[ri];
                const std::vector<double> q = cfg.temperature == 0.0
                    ? one_hot(vocab, static_cast<std::size_t>(t))
                    : node.draft_dist;
                const double accept_prob =
                    ratio_clipped(r[static_cast<std::size_t>(t)], q[static_cast<std::size_t>(t)]);
                const double u = verify_rng.next_uniform();
                if (u < accept_prob) {
                    descend = static_cast<std::ptrdiff_t>(node.round_children[ri]);
                } else {
                    r = residual_distribution(r, q);
                }
            }
            if (descend < 0) {
                final_token = static_cast<std::int32_t>(verify_rng.sample_index(r));
                break;
            }
            cur = static_cast<std::size_t>(descend);
            accepted.push_back(tree.nodes[cur].token);
            accepted_nodes.push_back(cur);
            r = temperature_distribution(session.logits_at(committed + cur - 1), cfg.temperature);
            if (tree.nodes[cur].round_tokens.empty()) {
                // Full path accepted: bonus token from the target's
                // distribution at the path tip.
                final_token = static_cast<std::int32_t>(verify_rng.sample_index(r));
                break;
            }
        }

        // Assemble this cycle's emission, honoring the length and end-token
        // caps before committing anything.
        std::vector<std::int32_t> emitted = accepted;
        emitted.push_back(final_token);
        std::size_t keep = std::min(emitted.size(), cfg.max_new_tokens - out.tokens.size());
        for (std::size_t i = 0; i < keep; ++i)
            if (cfg.end_token >= 0 && emitted[i] == cfg.end_token) {
                keep = i + 1;
                done = true;
                break;
            }
        if (keep < emitted.size()) done = true;
        emitted.resize(keep);
        const std::size_t accepted_kept = std::min(accepted.size(), keep);

        out.stats.cycles += 1;
        out.stats.accepted_draft_tokens += accepted_kept;
        out.stats.total_tokens += keep;
        out.stats.acceptance_histogram.push_back(accepted_kept);
        out.tokens.insert(out.tokens.end(), emitted.begin(), emitted.end());
        if (out.tokens.size() >= cfg.max_new_tokens) done = true;
        if (done) break;

        // Keep the surviving path's rows (already exact), evaluate only the
        // final token, and advance both sides.
        std::vector<std::size_t> keep_rows(committed);
        std::iota(keep_rows.begin(), keep_rows.end(), 0);
        std::vector<std::size_t> draft_rows;
        for (std::size_t node : accepted_nodes) {
            keep_rows.push_back(committed + node - 1);
            draft_rows.push_back(static_cast<std::size_t>(tree.nodes[node].backend_row));
        }
        session.compact(keep_rows);
        session.append_causal(target.token_input_row(final_token), {committed + accepted.size()},
                              {static_cast<std::int64_t>(final_token)});

        std::vector<std::vector<double>> prev_hidden(emitted.size());
        for (std::size_t i = 0; i < emitted.size(); ++i) {
            auto h = session.hidden_at(committed + i - 1);
            prev_hidden[i].assign(h.begin(), h.end());
        }
        draft.commit(emitted, prev_hidden, draft_rows);
        committed += emitted.size();
        pending = temperature_distribution(session.logits_at(committed - 1), cfg.temperature);
    }

    out.stats.wall_ns_spec = now_ns() - t0;
    return out;
}

GenerateResult generate_autoregressive(const TargetModel& target, const JointInput& prompt,
                                       double temperature, std::size_t max_new_tokens,
                                       std::int32_t end_token, std::uint64_t seed) {
    if (temperature < 0.0 || !std::isfinite(temperature))
        throw std::invalid_argument("generate_autoregressive: bad temperature");
    if (max_new_tokens < 1)
        throw std::invalid_argument("generate_autoregressive: max_new_tokens must be >= 1");
    NoGradGuard ng;
    const std::uint64_t t0 = now_ns();
    TransformerSession session(target.core());
    target.forward(prompt, session);
    std::size_t committed = session.length();

    GenerateResult out;
    RngStream rng(RngStream::mix(seed ^ 0x6175746f72ULL));
    while (out.tokens.size() < max_new_tokens) {
        if (committed + 1 > target.config().max_seq_len)
            throw std::runtime_error("generate_autoregressive: context window exhausted");
        std::vector<double> p =
            temperature_distribution(session.logits_at(committed - 1), temperature);
        const std::int32_t tok = static_cast<std::int32_t>(
            temperature == 0.0 ? argmax_lowest(p) : rng.sample_index(p));
        out.tokens.push_back(tok);
        out.stats.total_tokens += 1;
        if (end_token >= 0 && tok == end_token) break;
        if (out.tokens.size() >= max_new_tokens) break;
        session.append_causal(target.token_input_row(tok), {committed},
                              {static_cast<std::int64_t>(tok)});
        committed += 1;
    }
    out.stats.wall_ns_target_only = now_ns() - t0;
    return out;
}

} // namespace vispec
