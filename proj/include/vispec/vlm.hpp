#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vispec/checkpoint.hpp"
#include "vispec/tensor.hpp"

namespace vispec {

using TokenSeq = std::vector<std::int32_t>;

struct ModelConfig {
    std::size_t vocab_size = 16;
    std::size_t embed_dim = 24;        // d
    std::size_t num_layers = 2;        // target >= 2, draft == 1
    std::size_t num_heads = 2;
    std::size_t max_seq_len = 192;
    std::size_t patch_embed_dim = 8;   // d_v (vision encoder internal dim)
    std::size_t num_queries = 1;       // m, adaptor learnable queries
    bool attention_scaling = true;
    std::size_t codebook_size = 10;    // patch codes 0..C-1
    std::uint64_t encoder_seed = 7;    // frozen vision-encoder draw

    void validate(bool is_draft) const;
};

// Patch grid: most patches carry the shared code, a few carry unique codes.
struct SyntheticImage {
    std::size_t num_patches = 0;                 // r
    std::vector<std::int32_t> patches;           // size r
    std::vector<std::size_t> unique_positions;   // 0-based, sorted
    std::vector<std::int32_t> unique_codes;      // aligned with unique_positions
    std::int32_t redundant_code = 0;             // the shared code s

    void validate() const;
};

struct VisualEmbeddings {
    Tensor rows;                 // r x d
    std::size_t span_start = 0;  // filled by build_joint_input
    std::size_t span_len = 0;
};

struct CompressedVisual {
    Tensor tokens;               // m x d
    Tensor global;               // g, 1 x d (kept in-graph during training)
    std::size_t anchor_position = 0;
};

// H = E_t(pre) (+) V (+) E_t(post); positions are implicit 0..n-1.
struct JointInput {
    TokenSeq pre_text;
    SyntheticImage image;
    VisualEmbeddings visual;
    TokenSeq post_text;

    std::size_t image_start() const { return pre_text.size(); }
    std::size_t image_len() const { return visual.span_len; }
    std::size_t length() const { return pre_text.size() + visual.span_len + post_text.size(); }
    // Token at joint position p, or nullopt for visual positions.
    std::optional<std::int32_t> token_at(std::size_t p) const;
};

// Frozen random codebook encoder: row i = proj(codebook[code_i] + postag[i]).
class VisionEncoder {
public:
    VisionEncoder(const ModelConfig& cfg);
    VisualEmbeddings encode_image(const SyntheticImage& image) const;
    std::size_t embed_dim() const { return cfg_.embed_dim; }

private:
    ModelConfig cfg_;
    Tensor codebook_;   // C x d_v
    Tensor postags_;    // max_seq_len x d_v
    Tensor proj_;       // d_v x d
};

JointInput build_joint_input(const TokenSeq& pre_text, const VisionEncoder& encoder,
                             const SyntheticImage& image, const TokenSeq& post_text,
                             std::size_t max_seq_len);

// Prompt without an image (the draft then behaves as a pure text model).
JointInput make_text_input(const TokenSeq& tokens, std::size_t max_seq_len);

// f_t + W_g g.
std::vector<double> inject_global(std::span<const double> hidden, std::span<const double> global,
                                  const Tensor& w_g);

// ---- transformer core ----------------------------------------------------

// Pre-LN decoder stack evaluated append-wise over an explicit attention
// index list per query row, which makes chain, cached and tree evaluation
// share one arithmetic path.
class Transformer {
public:
    Transformer(ModelConfig cfg, ParameterStore params);
    static ParameterStore init_params(const ModelConfig& cfg, RngStream& rng);

    const ModelConfig& config() const { return cfg_; }
    const ParameterStore& params() const { return params_; }
    ParameterStore& params() { return params_; }

    struct StepResult {
        Tensor logits;   // n_new x V
        Tensor hidden;   // n_new x d (post final-norm, the model's f)
    };

    friend class TransformerSession;

private:
    ModelConfig cfg_;
    ParameterStore params_;
};

class TransformerSession {
public:
    explicit TransformerSession(const Transformer& model);

    // inputs: n_new x d rows (pre position-embedding); positions: absolute
    // position ids; allowed: per new row, global key indices (cached rows
    // first) in summation order; tags: opaque per-row identity used for
    // cache/prefix consistency checks. Appends to the cache.
    Transformer::StepResult append(const Tensor& inputs, const std::vector<std::size_t>& positions,
                                   const std::vector<std::vector<std::int32_t>>& allowed,
                                   const std::vector<std::int64_t>& tags = {});

    // Causal convenience: row i attends to all cached rows plus new rows 0..i.
    Transformer::StepResult append_causal(const Tensor& inputs,
                                          const std::vector<std::size_t>& positions,
                                          const std::vector<std::int64_t>& tags = {});

    void truncate(std::size_t new_len);
    // Keep only the listed rows (strictly increasing). A tree-verified row's
    // cache entries already equal what a causal re-append over the surviving
    // path would produce, so compaction preserves bit-exactness.
    void compact(const std::vector<std::size_t>& keep);
    std::size_t length() const { return length_; }

    std::span<const double> hidden_at(std::size_t pos) const;   // f row
    std::span<const double> logits_at(std::size_t pos) const;
    std::int64_t tag_at(std::size_t pos) const { return row_tags_[pos]; }
    std::size_t position_at(std::size_t pos) const { return row_positions_[pos]; }

private:
    const Transformer* model_;
    std::size_t length_ = 0;
    std::vector<Tensor> k_cache_;   // per layer, len x d
    std::vector<Tensor> v_cache_;
    std::vector<std::vector<double>> hidden_rows_;
    std::vector<std::vector<double>> logits_rows_;
    std::vector<std::int64_t> row_tags_;
    std::vector<std::size_t> row_positions_;
};

// ---- target model --------------------------------------------------------

class TargetModel {
public:
    TargetModel(ModelConfig cfg, ParameterStore params);
    static TargetModel make_initialized(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return core_.config(); }
    const VisionEncoder& encoder() const { return encoder_; }
    Transformer& core() { return core_; }
    const Transformer& core() const { return core_; }

    // Incremental forward: appends the portion of `input` beyond the
    // session's current length; throws on cache/prefix mismatch.
    Transformer::StepResult forward(const JointInput& input, TransformerSession& session) const;

    // Input rows for joint positions [start, start+len), without pos embed.
    Tensor input_rows(const JointInput& input, std::size_t start, std::size_t len) const;
    // Input row for a single follow-on token (beyond the joint input).
    Tensor token_input_row(std::int32_t token) const;

private:
    Transformer core_;
    VisionEncoder encoder_;
};

// ---- draft model ---------------------------------------------------------

enum class DraftVariant { Vispec, VispecNoGlobal, TextOnly, FullImage };

DraftVariant draft_variant_from_string(const std::string& s);
std::string to_string(DraftVariant v);

// Single-layer EAGLE-style draft: per-position input fuses the previous
// position's hidden state with the current token embedding; visual context
// enters as compressed adaptor tokens plus an injected global feature.
class DraftModel {
public:
    DraftModel(ModelConfig cfg, DraftVariant variant, ParameterStore params);
    static DraftModel make_initialized(const ModelConfig& cfg, DraftVariant variant,
                                       std::uint64_t seed);

    const ModelConfig& config() const { return core_.config(); }
    DraftVariant variant() const { return variant_; }
    Transformer& core() { return core_; }
    const Transformer& core() const { return core_; }
    ParameterStore& params() { return core_.params(); }
    const ParameterStore& params() const { return core_.params(); }

    CompressedVisual compress_visual(const VisualEmbeddings& visual) const;

    // Fused input row for a text token: W_h h_prev + W_e embed(t) + b
    // (+ W_g g when `global` is present). prev_hidden/global are 1 x d and
    // may carry gradients (MTP unroll feeds the draft's own hidden back).
    Tensor text_input_row(std::int32_t token, const Tensor& prev_hidden,
                          const Tensor* global) const;

    // Draft-side sequence layout for a joint input. For Vispec variants the
    // image span contributes `m` compressed rows at its first positions; for
    // TextOnly it contributes none; for FullImage all r raw rows.
    struct Layout {
        std::vector<std::size_t> positions;       // absolute position ids per draft row
        std::vector<bool> is_text;                // text rows get fused inputs
        std::vector<std::size_t> joint_index;     // joint position per draft row
        std::optional<CompressedVisual> compressed;
        bool global_active_after_image = false;
    };
    Layout layout_for(const JointInput& input) const;

    // Teacher-forced forward over the whole joint input into an empty
    // session. prev_hidden is n x d, row p = the hidden state fed to the
    // draft row whose predecessor sits at joint position p (the target's f
    // during training and verified decoding, or the draft's own f during the
    // multi-token unroll). Row 0 of the draft sequence receives zeros.
    struct FullForward {
        Transformer::StepResult step;   // per draft row
        Layout layout;
    };
    FullForward forward_full(const JointInput& input, const Tensor& prev_hidden,
                             TransformerSession& session) const;

private:
    Transformer core_;
    DraftVariant variant_;
};

} // namespace vispec
