#include "vispec/vlm.hpp"

#include <cmath>
#include <stdexcept>

namespace vispec {

namespace {
constexpr double kInitStd = 0.08;

Tensor detach_copy(const Tensor& t) {
    return Tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
}

} // namespace

void ModelConfig::validate(bool is_draft) const {
    if (vocab_size < 2) throw std::invalid_argument("ModelConfig: vocab_size < 2");
    if (embed_dim == 0 || embed_dim % num_heads != 0)
        throw std::invalid_argument("ModelConfig: embed_dim must be a positive multiple of num_heads");
    if (is_draft && num_layers != 1)
        throw std::invalid_argument("ModelConfig: draft model must have exactly one layer");
    if (!is_draft && num_layers < 2)
        throw std::invalid_argument("ModelConfig: target model needs at least two layers");
    if (max_seq_len == 0) throw std::invalid_argument("ModelConfig: max_seq_len == 0");
    if (patch_embed_dim == 0) throw std::invalid_argument("ModelConfig: patch_embed_dim == 0");
    if (codebook_size < 2) throw std::invalid_argument("ModelConfig: codebook_size < 2");
}

void SyntheticImage::validate() const {
    if (num_patches < 1) throw std::invalid_argument("SyntheticImage: r must be >= 1");
    if (patches.size() != num_patches)
        throw std::invalid_argument("SyntheticImage: patch count mismatch");
    if (unique_positions.size() != unique_codes.size())
        throw std::invalid_argument("SyntheticImage: unique positions/codes mismatch");
    std::vector<bool> seen(num_patches, false);
    for (std::size_t i = 0; i < unique_positions.size(); ++i) {
        const std::size_t u = unique_positions[i];
        if (u >= num_patches) throw std::invalid_argument("SyntheticImage: unique position out of range");
        if (seen[u]) throw std::invalid_argument("SyntheticImage: duplicate unique position");
        seen[u] = true;
        if (patches[u] != unique_codes[i])
            throw std::invalid_argument("SyntheticImage: patch/unique code mismatch");
    }
    for (std::size_t p = 0; p < num_patches; ++p)
        if (!seen[p] && patches[p] != redundant_code)
            throw std::invalid_argument("SyntheticImage: non-unique patch must carry the shared code");
}

std::optional<std::int32_t> JointInput::token_at(std::size_t p) const {
    if (p < pre_text.size()) return pre_text[p];
    if (p < pre_text.size() + visual.span_len) return std::nullopt;
    const std::size_t k = p - pre_text.size() - visual.span_len;
    if (k >= post_text.size()) throw std::out_of_range("JointInput::token_at");
    return post_text[k];
}

VisionEncoder::VisionEncoder(const ModelConfig& cfg) : cfg_(cfg) {
    RngStream rng(RngStream::mix(cfg.encoder_seed ^ 0x56495350ULL));
    RngStream cb = rng.fork(1), pt = rng.fork(2), pr = rng.fork(3);
    codebook_ = Tensor::randn({cfg.codebook_size, cfg.patch_embed_dim}, cb, 1.0);
    postags_ = Tensor::randn({cfg.max_seq_len, cfg.patch_embed_dim}, pt, 0.25);
    proj_ = Tensor::randn({cfg.patch_embed_dim, cfg.embed_dim}, pr,
                          1.0 / std::sqrt(static_cast<double>(cfg.patch_embed_dim)));
}

VisualEmbeddings VisionEncoder::encode_image(const SyntheticImage& image) const {
    image.validate();
    const std::size_t r = image.num_patches, dv = cfg_.patch_embed_dim, d = cfg_.embed_dim;
    if (r > cfg_.max_seq_len) throw std::invalid_argument("encode_image: image larger than max_seq_len");
    std::vector<double> rows(r * d, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        const std::int32_t code = image.patches[i];
        if (code < 0 || static_cast<std::size_t>(code) >= cfg_.codebook_size)
            throw std::invalid_argument("encode_image: unknown patch code");
        for (std::size_t a = 0; a < dv; ++a) {
            const double e = codebook_.at(static_cast<std::size_t>(code), a) + postags_.at(i, a);
            for (std::size_t b = 0; b < d; ++b) rows[i * d + b] += e * proj_.at(a, b);
        }
    }
    VisualEmbeddings out;
    out.rows = Tensor::from({r, d}, std::move(rows));
    out.span_len = r;
    return out;
}

JointInput build_joint_input(const TokenSeq& pre_text, const VisionEncoder& encoder,
                             const SyntheticImage& image, const TokenSeq& post_text,
                             std::size_t max_seq_len) {
    JointInput out;
    out.pre_text = pre_text;
    out.image = image;
    out.visual = encoder.encode_image(image);
    out.post_text = post_text;
    out.visual.span_start = pre_text.size();
    if (out.length() > max_seq_len)
        throw std::invalid_argument("build_joint_input: sequence exceeds max_seq_len");
    return out;
}

JointInput make_text_input(const TokenSeq& tokens, std::size_t max_seq_len) {
    JointInput out;
    out.pre_text = tokens;
    if (out.length() > max_seq_len)
        throw std::invalid_argument("make_text_input: sequence exceeds max_seq_len");
    return out;
}

std::vector<double> inject_global(std::span<const double> hidden, std::span<const double> global,
                                  const Tensor& w_g) {
    const std::size_t d = hidden.size();
    if (global.size() != d || w_g.rows() != d || w_g.cols() != d)
        throw std::invalid_argument("inject_global: dimension mismatch");
    std::vector<double> out(hidden.begin(), hidden.end());
    for (std::size_t a = 0; a < d; ++a) {
        const double g = global[a];
        if (g == 0.0) continue;
        for (std::size_t b = 0; b < d; ++b) out[b] += g * w_g.at(a, b);
    }
    return out;
}

// ---- transformer ---------------------------------------------------------

Transformer::Transformer(ModelConfig cfg, ParameterStore params)
    : cfg_(cfg), params_(std::move(params)) {}

ParameterStore Transformer::init_params(const ModelConfig& cfg, RngStream& rng) {
    ParameterStore p;
    const std::size_t d = cfg.embed_dim, dff = 2 * cfg.embed_dim;
    const double w_std = kInitStd;
    std::uint64_t s = 0;
    auto draw = [&](std::vector<std::size_t> shape, double stddev) {
        RngStream st = rng.fork(s++);
        return Tensor::randn(std::move(shape), st, stddev);
    };
    p.add("tok_embed", draw({cfg.vocab_size, d}, w_std));
    p.add("pos_embed", draw({cfg.max_seq_len, d}, w_std));
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        p.add(pre + "ln1.gain", Tensor::full({d}, 1.0));
        p.add(pre + "ln1.bias", Tensor::zeros({d}));
        p.add(pre + "wq", draw({d, d}, w_std));
        p.add(pre + "wk", draw({d, d}, w_std));
        p.add(pre + "wv", draw({d, d}, w_std));
        p.add(pre + "wo", draw({d, d}, w_std));
        p.add(pre + "ln2.gain", Tensor::full({d}, 1.0));
        p.add(pre + "ln2.bias", Tensor::zeros({d}));
        p.add(pre + "ff.w1", draw({d, dff}, w_std));
        p.add(pre + "ff.b1", Tensor::zeros({dff}));
        p.add(pre + "ff.w2", draw({dff, d}, w_std));
        p.add(pre + "ff.b2", Tensor::zeros({d}));
    }
    p.add("lnf.gain", Tensor::full({d}, 1.0));
    p.add("lnf.bias", Tensor::zeros({d}));
    // Zero output head: an untrained model emits the uniform distribution.
    p.add("head", Tensor::zeros({d, cfg.vocab_size}));
    return p;
}

TransformerSession::TransformerSession(const Transformer& model) : model_(&model) {
    const std::size_t d = model.config().embed_dim;
    for (std::size_t l = 0; l < model.config().num_layers; ++l) {
        k_cache_.push_back(Tensor::zeros({0, d}));
        v_cache_.push_back(Tensor::zeros({0, d}));
    }
}

Transformer::StepResult TransformerSession::append(
    const Tensor& inputs, const std::vector<std::size_t>& positions,
    const std::vector<std::vector<std::int32_t>>& allowed, const std::vector<std::int64_t>& tags) {
    const ModelConfig& cfg = model_->config();
    const std::size_t n_new = inputs.rows(), d = cfg.embed_dim;
    if (d != inputs.cols()) throw std::invalid_argument("append: input width mismatch");
    if (positions.size() != n_new || allowed.size() != n_new)
        throw std::invalid_argument("append: positions/allowed count mismatch");
    if (!tags.empty() && tags.size() != n_new)
        throw std::invalid_argument("append: tag count mismatch");
    for (std::size_t i = 0; i < n_new; ++i) {
        if (positions[i] >= cfg.max_seq_len)
            throw std::invalid_argument("append: position beyond max_seq_len");
        for (std::int32_t j : allowed[i])
            if (j < 0 || static_cast<std::size_t>(j) >= length_ + n_new ||
                (static_cast<std::size_t>(j) >= length_ &&
                 static_cast<std::size_t>(j) > length_ + i))
                throw std::invalid_argument("append: allowed index violates causality");
    }

    const ParameterStore& P = model_->params();
    std::vector<std::int32_t> pos_ids(positions.begin(), positions.end());
    Tensor x = ops::add(inputs, ops::gather_rows(P.get("pos_embed"), pos_ids));
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        Tensor h = ops::layer_norm(x, P.get(pre + "ln1.gain"), P.get(pre + "ln1.bias"));
        Tensor q = ops::matmul(h, P.get(pre + "wq"));
        Tensor k_new = ops::matmul(h, P.get(pre + "wk"));
        Tensor v_new = ops::matmul(h, P.get(pre + "wv"));
        Tensor k_all = ops::concat_rows({k_cache_[l], k_new});
        Tensor v_all = ops::concat_rows({v_cache_[l], v_new});
        Tensor attn = ops::attention(q, k_all, v_all, allowed, cfg.attention_scaling, cfg.num_heads);
        x = ops::add(x, ops::matmul(attn, P.get(pre + "wo")));
        Tensor h2 = ops::layer_norm(x, P.get(pre + "ln2.gain"), P.get(pre + "ln2.bias"));
        Tensor ff1 = ops::tanh_op(ops::add_row_broadcast(ops::matmul(h2, P.get(pre + "ff.w1")),
                                                         P.get(pre + "ff.b1")));
        Tensor ff2 = ops::add_row_broadcast(ops::matmul(ff1, P.get(pre + "ff.w2")),
                                            P.get(pre + "ff.b2"));
        x = ops::add(x, ff2);
        k_cache_[l] = detach_copy(k_all);
        v_cache_[l] = detach_copy(v_all);
    }
    Tensor hidden = ops::layer_norm(x, P.get("lnf.gain"), P.get("lnf.bias"));
    Tensor logits = ops::matmul(hidden, P.get("head"));
    logits.check_finite("Transformer::append logits");

    for (std::size_t i = 0; i < n_new; ++i) {
        hidden_rows_.emplace_back(hidden.row(i).begin(), hidden.row(i).end());
        logits_rows_.emplace_back(logits.row(i).begin(), logits.row(i).end());
        row_tags_.push_back(tags.empty() ? 0 : tags[i]);
        row_positions_.push_back(positions[i]);
    }
    length_ += n_new;
    return {logits, hidden};
}

Transformer::StepResult TransformerSession::append_causal(const Tensor& inputs,
                                                          const std::vector<std::size_t>& positions,
                                                          const std::vector<std::int64_t>& tags) {
    std::vector<std::vector<std::int32_t>> allowed(inputs.rows());
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
        allowed[i].resize(length_ + i + 1);
        for (std::size_t j = 0; j <= length_ + i; ++j) allowed[i][j] = static_cast<std::int32_t>(j);
    }
    return append(inputs, positions, allowed, tags);
}

void TransformerSession::truncate(std::size_t new_len) {
    if (new_len > length_) throw std::invalid_argument("truncate: cannot grow");
    const std::size_t d = model_->config().embed_dim;
    for (std::size_t l = 0; l < k_cache_.size(); ++l) {
        k_cache_[l] = Tensor::from({new_len, d},
            std::vector<double>(k_cache_[l].data().begin(), k_cache_[l].data().begin() + static_cast<std::ptrdiff_t>(new_len * d)));
        v_cache_[l] = Tensor::from({new_len, d},
            std::vector<double>(v_cache_[l].data().begin(), v_cache_[l].data().begin() + static_cast<std::ptrdiff_t>(new_len * d)));
    }
    hidden_rows_.resize(new_len);
    logits_rows_.resize(new_len);
    row_tags_.resize(new_len);
    row_positions_.resize(new_len);
    length_ = new_len;
}

void TransformerSession::compact(const std::vector<std::size_t>& keep) {
    for (std::size_t i = 0; i < keep.size(); ++i)
        if (keep[i] >= length_ || (i > 0 && keep[i] <= keep[i - 1]))
            throw std::invalid_argument("compact: rows must be strictly increasing and in range");
    const std::size_t d = model_->config().embed_dim;
    for (std::size_t l = 0; l < k_cache_.size(); ++l) {
        std::vector<double> kd, vd;
        kd.reserve(keep.size() * d);
        vd.reserve(keep.size() * d);
        for (std::size_t r : keep) {
            auto kr = k_cache_[l].row(r), vr = v_cache_[l].row(r);
            kd.insert(kd.end(), kr.begin(), kr.end());
            vd.insert(vd.end(), vr.begin(), vr.end());
        }
        k_cache_[l] = Tensor::from({keep.size(), d}, std::move(kd));
        v_cache_[l] = Tensor::from({keep.size(), d}, std::move(vd));
    }
    auto gather = [&](auto& rows) {
        std::decay_t<decltype(rows)> out;
        out.reserve(keep.size());
        for (std::size_t r : keep) out.push_back(rows[r]);
        rows = std::move(out);
    };
    gather(hidden_rows_);
    gather(logits_rows_);
    gather(row_tags_);
    gather(row_positions_);
    length_ = keep.size();
}

std::span<const double> TransformerSession::hidden_at(std::size_t pos) const {
    return hidden_rows_.at(pos);
}

std::span<const double> TransformerSession::logits_at(std::size_t pos) const {
    return logits_rows_.at(pos);
}

// ---- target model --------------------------------------------------------

TargetModel::TargetModel(ModelConfig cfg, ParameterStore params)
    : core_(cfg, std::move(params)), encoder_(cfg) {
    cfg.validate(false);
}

TargetModel TargetModel::make_initialized(const ModelConfig& cfg, std::uint64_t seed) {
    RngStream rng(RngStream::mix(seed ^ 0x7461726765744dULL));
    return TargetModel(cfg, Transformer::init_params(cfg, rng));
}

Tensor TargetModel::input_rows(const JointInput& input, std::size_t start, std::size_t len) const {
    const ParameterStore& P = core_.params();
    std::vector<Tensor> parts;
    std::size_t p = start;
    while (p < start + len) {
        if (p >= input.image_start() && p < input.image_start() + input.image_len()) {
            const std::size_t vi = p - input.image_start();
            const std::size_t run = std::min(start + len, input.image_start() + input.image_len()) - p;
            parts.push_back(ops::slice_rows(input.visual.rows, vi, run));
            p += run;
        } else {
            std::vector<std::int32_t> toks;
            while (p < start + len &&
                   !(p >= input.image_start() && p < input.image_start() + input.image_len())) {
                toks.push_back(*input.token_at(p));
                ++p;
            }
            parts.push_back(ops::gather_rows(P.get("tok_embed"), toks));
        }
    }
    if (parts.size() == 1) return parts[0];
    return ops::concat_rows(parts);
}

Tensor TargetModel::token_input_row(std::int32_t token) const {
    return ops::gather_rows(core_.params().get("tok_embed"), {token});
}

namespace {
std::int64_t joint_tag(const JointInput& input, std::size_t p) {
    auto tok = input.token_at(p);
    if (tok) return static_cast<std::int64_t>(*tok);
    return -1 - static_cast<std::int64_t>(p);   // visual rows keyed by position
}
} // namespace

Transformer::StepResult TargetModel::forward(const JointInput& input,
                                             TransformerSession& session) const {
    const std::size_t n = input.length();
    if (session.length() > n)
        throw std::runtime_error("target_forward: cache longer than input (cache/prefix mismatch)");
    for (std::size_t p = 0; p < session.length(); ++p)
        if (session.tag_at(p) != joint_tag(input, p) || session.position_at(p) != p)
            throw std::runtime_error("target_forward: cache/prefix mismatch");
    const std::size_t start = session.length(), len = n - start;
    if (len == 0) throw std::invalid_argument("target_forward: nothing to append");
    Tensor rows = input_rows(input, start, len);
    std::vector<std::size_t> positions(len);
    std::vector<std::int64_t> tags(len);
    for (std::size_t i = 0; i < len; ++i) {
        positions[i] = start + i;
        tags[i] = joint_tag(input, start + i);
    }
    return session.append_causal(rows, positions, tags);
}

// ---- draft model ---------------------------------------------------------

DraftVariant draft_variant_from_string(const std::string& s) {
    if (s == "vispec") return DraftVariant::Vispec;
    if (s == "vispec_no_g") return DraftVariant::VispecNoGlobal;
    if (s == "text_only") return DraftVariant::TextOnly;
    if (s == "full_image") return DraftVariant::FullImage;
    throw std::invalid_argument("unknown draft variant: " + s);
}

std::string to_string(DraftVariant v) {
    switch (v) {
        case DraftVariant::Vispec: return "vispec";
        case DraftVariant::VispecNoGlobal: return "vispec_no_g";
        case DraftVariant::TextOnly: return "text_only";
        case DraftVariant::FullImage: return "full_image";
    }
    return "?";
}

DraftModel::DraftModel(ModelConfig cfg, DraftVariant variant, ParameterStore params)
    : core_(cfg, std::move(params)), variant_(variant) {
    cfg.validate(true);
}

DraftModel DraftModel::make_initialized(const ModelConfig& cfg, DraftVariant variant,
                                        std::uint64_t seed) {
    RngStream rng(RngStream::mix(seed ^ 0x6472616674ULL));
    ParameterStore p = Transformer::init_params(cfg, rng);
    const std::size_t d = cfg.embed_dim;
    std::uint64_t s = 1000;
    auto draw = [&](std::vector<std::size_t> shape, double stddev) {
        RngStream st = rng.fork(s++);
        return Tensor::randn(std::move(shape), st, stddev);
    };
    p.add("fuse.wh", draw({d, d}, kInitStd));
    p.add("fuse.we", draw({d, d}, kInitStd));
    p.add("fuse.b", Tensor::zeros({d}));
    p.add("wg", Tensor::zeros({d, d}));
    if (cfg.num_queries > 0) {
        p.add("adaptor.queries", draw({cfg.num_queries, d}, 1.0));
        p.add("adaptor.wk", draw({d, d}, kInitStd));
        p.add("adaptor.wv", draw({d, d}, kInitStd));
        p.add("adaptor.wo", draw({d, d}, kInitStd));
    }
    return DraftModel(cfg, variant, std::move(p));
}

CompressedVisual DraftModel::compress_visual(const VisualEmbeddings& visual) const {
    const ModelConfig& cfg = config();
    const std::size_t r = visual.span_len, m = cfg.num_queries;
    if (r < 1) throw std::invalid_argument("compress_visual: r must be >= 1");
    if (m == 0) throw std::invalid_argument("compress_visual: adaptor disabled (m == 0)");
    if (m > std::max<std::size_t>(1, r / 4))
        throw std::invalid_argument("compress_visual: m must stay well below r (m <= max(1, r/4))");
    const ParameterStore& P = core_.params();
    Tensor keys = ops::matmul(visual.rows, P.get("adaptor.wk"));
    Tensor values = ops::matmul(visual.rows, P.get("adaptor.wv"));
    std::vector<std::vector<std::int32_t>> allowed(m);
    for (std::size_t i = 0; i < m; ++i) {
        allowed[i].resize(r);
        for (std::size_t j = 0; j < r; ++j) allowed[i][j] = static_cast<std::int32_t>(j);
    }
    // Unscaled single-head query attention; learnable query magnitude sets
    // how sharply the adaptor can single out non-redundant rows.
    Tensor attn = ops::attention(P.get("adaptor.queries"), keys, values, allowed, false, 1);
    Tensor tokens = ops::matmul(attn, P.get("adaptor.wo"));
    CompressedVisual out;
    out.tokens = tokens;
    // g: mean of the adaptor outputs (the single token when m == 1).
    Tensor ones = Tensor::full({1, m}, 1.0 / static_cast<double>(m));
    out.global = ops::matmul(ones, tokens);
    out.anchor_position = visual.span_start;
    return out;
}

Tensor DraftModel::text_input_row(std::int32_t token, const Tensor& prev_hidden,
                                  const Tensor* global) const {
    const ParameterStore& P = core_.params();
    Tensor e = ops::gather_rows(P.get("tok_embed"), {token});
    Tensor x = ops::add_row_broadcast(
        ops::add(ops::matmul(prev_hidden, P.get("fuse.wh")), ops::matmul(e, P.get("fuse.we"))),
        P.get("fuse.b"));
    if (global) {
        if (global->cols() != config().embed_dim)
            throw std::invalid_argument("text_input_row: global feature dim mismatch");
        x = ops::add(x, ops::matmul(*global, P.get("wg")));
    }
    return x;
}

DraftModel::Layout DraftModel::layout_for(const JointInput& input) const {
    Layout layout;
    const std::size_t k = input.image_start(), r = input.image_len();
    auto push_text = [&](std::size_t joint_pos) {
        layout.positions.push_back(joint_pos);
        layout.is_text.push_back(true);
        layout.joint_index.push_back(joint_pos);
    };
    for (std::size_t p = 0; p < k; ++p) push_text(p);
    if (r > 0) {
        switch (variant_) {
            case DraftVariant::Vispec:
            case DraftVariant::VispecNoGlobal: {
                if (config().num_queries == 0) break;   // m == 0 degrades to text-only
                CompressedVisual cv = compress_visual(input.visual);
                const std::size_t m = cv.tokens.rows();
                for (std::size_t j = 0; j < m; ++j) {
                    // Compressed tokens keep the image's leading positions.
                    layout.positions.push_back(cv.anchor_position + j);
                    layout.is_text.push_back(false);
                    layout.joint_index.push_back(k + j);
                }
                layout.compressed = std::move(cv);
                layout.global_active_after_image = (variant_ == DraftVariant::Vispec);
                break;
            }
            case DraftVariant::FullImage:
                for (std::size_t j = 0; j < r; ++j) {
                    layout.positions.push_back(k + j);
                    layout.is_text.push_back(false);
                    layout.joint_index.push_back(k + j);
                }
                break;
            case DraftVariant::TextOnly:
                break;
        }
    }
    for (std::size_t p = k + r; p < input.length(); ++p) push_text(p);
    return layout;
}

DraftModel::FullForward DraftModel::forward_full(const JointInput& input, const Tensor& prev_hidden,
                                                 TransformerSession& session) const {
    if (session.length() != 0)
        throw std::invalid_argument("forward_full: session must be empty");
    const std::size_t n = input.length(), d = config().embed_dim;
    if (prev_hidden.rows() != n || prev_hidden.cols() != d)
        throw std::invalid_argument("forward_full: prev_hidden must be n x d");
    Layout layout = layout_for(input);
    const std::size_t image_end = input.image_start() + input.image_len();

    std::vector<Tensor> rows;
    rows.reserve(layout.positions.size());
    for (std::size_t i = 0; i < layout.positions.size(); ++i) {
        const std::size_t jp = layout.joint_index[i];
        if (layout.is_text[i]) {
            Tensor h_prev = (i == 0)
                ? Tensor::zeros({1, d})
                : ops::slice_rows(prev_hidden, layout.joint_index[i - 1], 1);
            const Tensor* g = nullptr;
            if (layout.global_active_after_image && input.image_len() > 0 && jp >= image_end)
                g = &layout.compressed->global;
            rows.push_back(text_input_row(*input.token_at(jp), h_prev, g));
        } else if (layout.compressed) {
            rows.push_back(ops::slice_rows(layout.compressed->tokens, i - input.image_start(), 1));
        } else {
            rows.push_back(ops::slice_rows(input.visual.rows, jp - input.image_start(), 1));
        }
    }
    Tensor stacked = rows.size() == 1 ? rows[0] : ops::concat_rows(rows);
    Transformer::StepResult step = session.append_causal(stacked, layout.positions);
    return {std::move(step), std::move(layout)};
}

} // namespace vispec
