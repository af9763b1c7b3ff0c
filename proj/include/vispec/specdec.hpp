#pragma once
#include <cstdint>
#include <span>
#include <vector>

#include "vispec/vlm.hpp"

namespace vispec {

struct AcceptanceRule {
    double temperature = 0.0;   // 0 = greedy verification via one-hot distributions
    std::uint64_t rng_seed = 0;
};

struct DecodeConfig {
    bool tree_mode = false;
    std::size_t draft_len = 4;       // chain k
    std::size_t tree_budget = 30;    // total draft tokens
    std::size_t tree_depth = 3;
    std::size_t expand_top_k = 8;    // nodes expanded per layer / children per expansion
    double temperature = 0.0;
    std::size_t max_new_tokens = 64;
    std::int32_t end_token = -1;     // -1: no end token
    std::uint64_t seed = 0;

    void validate() const;
};

struct DecodeStats {
    std::size_t cycles = 0;
    std::size_t accepted_draft_tokens = 0;
    std::size_t total_tokens = 0;
    std::uint64_t wall_ns_target_only = 0;
    std::uint64_t wall_ns_spec = 0;
    std::uint64_t wall_ns_draft = 0;    // drafting portion of wall_ns_spec
    std::vector<std::size_t> acceptance_histogram;   // accepted count per cycle
};

// Logits -> distribution at a temperature; T = 0 yields a one-hot argmax
// (ties broken toward the lowest token id).
std::vector<double> temperature_distribution(std::span<const double> logits, double temperature);

// norm(max(0, p - p_hat)). Throws std::domain_error when the residual is
// identically zero (p == p_hat), which callers must never request.
std::vector<double> residual_distribution(std::span<const double> p, std::span<const double> p_hat);

struct AcceptResult {
    bool accepted = false;
    std::int32_t replacement = -1;   // valid when rejected
};

// Accept the drafted token with probability min(1, p(t)/p_hat(t)); on
// rejection draw the replacement from the residual distribution.
AcceptResult accept_or_resample(std::span<const double> p, std::span<const double> p_hat,
                                std::int32_t drafted_token, RngStream& rng);

// Closed-form left side of the losslessness identity: the distribution of
// the emitted token under draft-then-verify. Equals p exactly.
std::vector<double> induced_next_token_distribution(std::span<const double> p,
                                                    std::span<const double> p_hat);

// ---- draft tree ----------------------------------------------------------

struct DraftTreeNode {
    std::int32_t token = -1;          // -1 for the root (last verified token)
    std::ptrdiff_t parent = -1;
    double prob = 1.0;                // draft probability of this token at its parent
    double cum_prob = 1.0;            // product along the root path
    std::size_t depth = 0;            // root = 0
    // Verification rounds at this node: drafted tokens in draw order, each
    // mapping to a child node index. At T > 0 these are iid samples from the
    // node's draft distribution (duplicates allowed); at T = 0 they are the
    // distinct top tokens.
    std::vector<std::int32_t> round_tokens;
    std::vector<std::size_t> round_children;
    std::vector<double> draft_dist;   // draft distribution after this node's token
    std::ptrdiff_t backend_row = -1;  // draft-backend row id (-1 = committed tip)
};

struct DraftTree {
    std::vector<DraftTreeNode> nodes;   // nodes[0] is the root
    std::size_t depth = 0;

    std::size_t size_excluding_root() const { return nodes.size() - 1; }
    // Allowed-key lists for a batched target forward over nodes[1..]:
    // prefix rows [0, prefix_len) plus ancestors plus self.
    std::vector<std::vector<std::int32_t>> attention_allowed(std::size_t prefix_len) const;
};

// ---- draft backends ------------------------------------------------------

// Incremental drafting interface the engine drives. A backend owns its own
// session/cache and hides the draft-side sequence layout.
class DraftBackend {
public:
    virtual ~DraftBackend() = default;

    // Reset onto a prompt; target_hidden holds the target's f row for every
    // joint position of the prompt.
    virtual void begin(const JointInput& prompt,
                       const std::vector<std::vector<double>>& target_hidden) = 0;

    struct Step {
        std::size_t row = 0;             // backend row id for tree parenting
        std::vector<double> logits;
    };
    // Append a drafted token under `parent_row` (-1 = committed tip) at the
    // given absolute sequence position.
    virtual Step advance(std::int32_t token, std::ptrdiff_t parent_row, std::size_t position) = 0;

    // Drop speculative rows, then extend the committed prefix with verified
    // tokens; prev_hidden[i] is the target's f at the position before
    // tokens[i]. accepted_rows holds this backend's row ids for all but the
    // last token (which was never drafted); backends whose speculative rows
    // are already exact may keep them instead of recomputing.
    virtual void commit(const std::vector<std::int32_t>& tokens,
                        const std::vector<std::vector<double>>& prev_hidden,
                        const std::vector<std::size_t>& accepted_rows) = 0;

    // Logits predicting the next token at the committed tip.
    virtual std::vector<double> tip_logits() const = 0;
};

// EAGLE-style backend over the single-layer draft model.
class EagleDraftBackend : public DraftBackend {
public:
    explicit EagleDraftBackend(const DraftModel& draft);
    void begin(const JointInput& prompt,
               const std::vector<std::vector<double>>& target_hidden) override;
    Step advance(std::int32_t token, std::ptrdiff_t parent_row, std::size_t position) override;
    void commit(const std::vector<std::int32_t>& tokens,
                const std::vector<std::vector<double>>& prev_hidden,
                const std::vector<std::size_t>& accepted_rows) override;
    std::vector<double> tip_logits() const override;

private:
    const DraftModel* draft_;
    std::unique_ptr<TransformerSession> session_;
    std::vector<std::vector<std::int32_t>> row_allowed_;   // per session row
    std::vector<double> global_;                           // g, empty when inactive
    std::size_t committed_rows_ = 0;
    std::size_t next_position_ = 0;
    std::vector<double> tip_logits_;
};

// The target model acting as its own draft (perfect-draft configuration).
class TargetAsDraftBackend : public DraftBackend {
public:
    explicit TargetAsDraftBackend(const TargetModel& target);
    void begin(const JointInput& prompt,
               const std::vector<std::vector<double>>& target_hidden) override;
    Step advance(std::int32_t token, std::ptrdiff_t parent_row, std::size_t position) override;
    void commit(const std::vector<std::int32_t>& tokens,
                const std::vector<std::vector<double>>& prev_hidden,
                const std::vector<std::size_t>& accepted_rows) override;
    std::vector<double> tip_logits() const override;

private:
    const TargetModel* target_;
    std::unique_ptr<TransformerSession> session_;
    std::vector<std::vector<std::int32_t>> row_allowed_;
    std::size_t committed_rows_ = 0;
    std::vector<double> tip_logits_;
};

// ---- generation ----------------------------------------------------------

struct GenerateResult {
    TokenSeq tokens;
    DecodeStats stats;
};

// Exposed for testing: builds the draft tree for one cycle.
DraftTree build_draft_tree(DraftBackend& draft, std::span<const double> tip_logits,
                           std::size_t start_position, const DecodeConfig& cfg, RngStream& sample_rng);

GenerateResult speculative_generate(const TargetModel& target, DraftBackend& draft,
                                    const JointInput& prompt, const DecodeConfig& cfg);

GenerateResult generate_autoregressive(const TargetModel& target, const JointInput& prompt,
                                       double temperature, std::size_t max_new_tokens,
                                       std::int32_t end_token, std::uint64_t seed);

} // namespace vispec
