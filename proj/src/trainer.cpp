#include "vispec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vispec {

namespace {

// Linear warmup to the peak rate, then linear decay to zero.
double lr_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
    const std::size_t warm = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(cfg.warmup_fraction * static_cast<double>(total_steps))));
    if (step < warm)
        return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warm);
    const std::size_t tail = std::max<std::size_t>(1, total_steps - warm);
    return cfg.learning_rate * static_cast<double>(total_steps - step) / static_cast<double>(tail);
}

void sgd_apply(ParameterStore& params, double lr, double inv_batch) {
    for (auto& [name, t] : params.all()) {
        if (t.grad().empty()) continue;
        auto v = t.mutable_data();
        auto g = t.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * inv_batch * g[i];
    }
    params.zero_grads();
}

void check_loss_finite(double loss, const char* what, std::size_t epoch, std::size_t step) {
    if (!std::isfinite(loss))
        throw std::runtime_error(std::string(what) + ": non-finite loss at epoch " +
                                 std::to_string(epoch) + ", step " + std::to_string(step) +
                                 " (divergence)");
}

std::size_t holdout_count(std::size_t n) { return std::max<std::size_t>(1, n / 5); }

Tensor stored_f_tensor(const TrainingTrace& trace, std::size_t d) {
    std::vector<double> flat;
    flat.reserve(trace.f.size() * d);
    for (const auto& row : trace.f) flat.insert(flat.end(), row.begin(), row.end());
    return Tensor::from({trace.f.size(), d}, std::move(flat));
}

// Per-draft-row soft targets and weights for predicting response tokens.
void trace_targets(const TrainingTrace& trace, const DraftModel::Layout& layout,
                   std::size_t vocab, std::vector<double>& probs_flat,
                   std::vector<double>& weights) {
    const std::size_t rows = layout.positions.size(), n = trace.input.length();
    probs_flat.assign(rows * vocab, 0.0);
    weights.assign(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!layout.is_text[i]) continue;
        const std::size_t next = layout.joint_index[i] + 1;
        if (next < trace.response_start || next >= n) continue;
        const auto& p = trace.p.at(next - trace.response_start);
        std::copy(p.begin(), p.end(), probs_flat.begin() + static_cast<std::ptrdiff_t>(i * vocab));
        weights[i] = 1.0;
    }
}

} // namespace

void TrainConfig::validate() const {
    if (learning_rate < 0.0 || !std::isfinite(learning_rate))
        throw std::invalid_argument("TrainConfig: learning_rate must be finite and >= 0");
    if (batch_size < 1 || epochs < 1)
        throw std::invalid_argument("TrainConfig: batch_size and epochs must be >= 1");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        throw std::invalid_argument("TrainConfig: warmup_fraction must be in [0, 1)");
    if (mtp_horizon < 1) throw std::invalid_argument("TrainConfig: mtp_horizon must be >= 1");
    arch_for_regime(variant);
}

double cross_entropy(std::span<const double> p, std::span<const double> p_hat) {
    if (p.size() != p_hat.size() || p.empty())
        throw std::invalid_argument("cross_entropy: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) acc -= p[i] * std::log(std::max(p_hat[i], 1e-12));
    return acc;
}

DraftVariant arch_for_regime(const std::string& variant) {
    if (variant == "vispec" || variant == "baseline_b") return DraftVariant::Vispec;
    if (variant == "vispec_no_g") return DraftVariant::VispecNoGlobal;
    if (variant == "text_only") return DraftVariant::TextOnly;
    if (variant == "full_image") return DraftVariant::FullImage;
    throw std::invalid_argument("unknown training variant: " + variant);
}

// ---- target training -----------------------------------------------------

TrainReport train_target(TargetModel& target, const std::vector<DatasetRecord>& corpus,
                         const TrainConfig& cfg, const std::string& checkpoint_path) {
    cfg.validate();
    if (corpus.empty()) throw std::invalid_argument("train_target: empty corpus");
    const std::size_t n_hold = corpus.size() > 1 ? holdout_count(corpus.size()) : 0;
    const std::size_t n_train = corpus.size() - n_hold;

    struct Prepared {
        JointInput input;
        std::vector<double> targets_flat;   // one-hot rows
        std::vector<double> weights;
    };
    const std::size_t vocab = target.config().vocab_size;
    std::vector<Prepared> prepared;
    prepared.reserve(n_train);
    for (std::size_t i = 0; i < n_train; ++i) {
        const DatasetRecord& rec = corpus[i];
        Prepared pr{record_input(target, rec, true), {}, {}};
        const std::size_t n = pr.input.length();
        const std::size_t resp_start = n - rec.response.size();
        pr.targets_flat.assign(n * vocab, 0.0);
        pr.weights.assign(n, 0.0);
        for (std::size_t p = 0; p + 1 < n; ++p) {
            if (p + 1 < resp_start) continue;
            pr.targets_flat[p * vocab + static_cast<std::size_t>(*pr.input.token_at(p + 1))] = 1.0;
            pr.weights[p] = 1.0;
        }
        prepared.push_back(std::move(pr));
    }

    TrainReport report;
    report.seed = cfg.seed;
    const std::size_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;
    ParameterStore& params = target.core().params();
    params.zero_grads();

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t epoch_records = 0;
        for (std::size_t b = 0; b < n_train; b += cfg.batch_size, ++step) {
            const std::size_t bn = std::min(cfg.batch_size, n_train - b);
            double batch_loss = 0.0;
            for (std::size_t i = b; i < b + bn; ++i) {
                const Prepared& pr = prepared[i];
                TransformerSession session(target.core());
                Transformer::StepResult res = target.forward(pr.input, session);
                Tensor targets = Tensor::from({pr.weights.size(), vocab},
                                              std::vector<double>(pr.targets_flat));
                Tensor loss = ops::cross_entropy_rows(res.logits, targets, pr.weights);
                check_loss_finite(loss.item(), "train_target", epoch, step);
                backward(loss);
                batch_loss += loss.item();
            }
            sgd_apply(params, lr_at(cfg, step, total_steps), 1.0 / static_cast<double>(bn));
            epoch_loss += batch_loss;
            epoch_records += bn;
        }
        report.epoch_loss.push_back(epoch_loss / static_cast<double>(epoch_records));
    }

    std::vector<DatasetRecord> holdout(corpus.end() - static_cast<std::ptrdiff_t>(n_hold ? n_hold : corpus.size()),
                                       corpus.end());
    report.holdout_metric = target_exact_match(target, holdout);
    report.gate_passed = report.holdout_metric >= 0.95;
    if (!checkpoint_path.empty()) {
        save_checkpoint(checkpoint_path, params);
        report.checkpoint_path = checkpoint_path;
    }
    return report;
}

double target_exact_match(const TargetModel& target, const std::vector<DatasetRecord>& records) {
    if (records.empty()) throw std::invalid_argument("target_exact_match: no records");
    NoGradGuard ng;
    std::size_t hits = 0;
    for (const DatasetRecord& rec : records) {
        JointInput prompt = record_input(target, rec, false);
        const std::size_t budget =
            std::min(rec.response.size() + 8, target.config().max_seq_len - prompt.length() - 1);
        GenerateResult gen = generate_autoregressive(target, prompt, 0.0, budget, tok::kEos, 0);
        hits += (gen.tokens == rec.response) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

// ---- draft training ------------------------------------------------------

Tensor draft_trace_loss(const DraftModel& draft, const TrainingTrace& trace,
                        std::size_t mtp_horizon) {
    if (mtp_horizon < 1) throw std::invalid_argument("draft_trace_loss: mtp_horizon must be >= 1");
    if (trace.p.empty()) throw std::invalid_argument("draft_trace_loss: trace has no response");
    const std::size_t d = draft.config().embed_dim, vocab = draft.config().vocab_size;
    const std::size_t n = trace.input.length();
    const std::size_t resp_len = n - trace.response_start;

    Tensor f_const = stored_f_tensor(trace, d);
    Tensor prev = f_const;
    Tensor total;
    for (std::size_t h = 0; h < mtp_horizon; ++h) {
        TransformerSession session(draft.core());
        DraftModel::FullForward ff = draft.forward_full(trace.input, prev, session);
        std::vector<double> probs_flat, weights;
        trace_targets(trace, ff.layout, vocab, probs_flat, weights);
        Tensor targets = Tensor::from({weights.size(), vocab}, std::move(probs_flat));
        Tensor step_loss = ops::cross_entropy_rows(ff.step.logits, targets, weights);
        total = (h == 0) ? step_loss : ops::add(total, step_loss);

        if (h + 1 < mtp_horizon) {
            // Response positions now feed the draft's own hidden states; the
            // response rows are the trailing draft rows, in joint order.
            const std::size_t rows = ff.layout.positions.size();
            Tensor own = ops::slice_rows(ff.step.hidden, rows - resp_len, resp_len);
            prev = ops::concat_rows({ops::slice_rows(f_const, 0, trace.response_start), own});
        }
    }
    return ops::scale(total, 1.0 / static_cast<double>(mtp_horizon));
}

TrainReport train_draft(DraftModel& draft, const std::vector<TrainingTrace>& traces,
                        const TrainConfig& cfg, const std::string& checkpoint_path) {
    cfg.validate();
    if (traces.empty()) throw std::invalid_argument("train_draft: no traces");
    if (draft.variant() != arch_for_regime(cfg.variant))
        throw std::invalid_argument("train_draft: draft architecture does not match variant " +
                                    cfg.variant);
    const std::size_t horizon = cfg.variant == "baseline_b" ? 1 : cfg.mtp_horizon;
    const std::size_t n_hold = traces.size() > 1 ? holdout_count(traces.size()) : 0;
    const std::size_t n_train = traces.size() - n_hold;

    TrainReport report;
    report.seed = cfg.seed;
    const std::size_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;
    ParameterStore& params = draft.params();
    params.zero_grads();

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t epoch_records = 0;
        for (std::size_t b = 0; b < n_train; b += cfg.batch_size, ++step) {
            const std::size_t bn = std::min(cfg.batch_size, n_train - b);
            double batch_loss = 0.0;
            for (std::size_t i = b; i < b + bn; ++i) {
                Tensor loss = draft_trace_loss(draft, traces[i], horizon);
                check_loss_finite(loss.item(), "train_draft", epoch, step);
                backward(loss);
                batch_loss += loss.item();
            }
            sgd_apply(params, lr_at(cfg, step, total_steps), 1.0 / static_cast<double>(bn));
            epoch_loss += batch_loss;
            epoch_records += bn;
        }
        report.epoch_loss.push_back(epoch_loss / static_cast<double>(epoch_records));
    }

    std::vector<TrainingTrace> holdout(traces.end() - static_cast<std::ptrdiff_t>(n_hold ? n_hold : traces.size()),
                                       traces.end());
    report.holdout_metric = draft_top1_agreement(draft, holdout);
    if (!checkpoint_path.empty()) {
        save_checkpoint(checkpoint_path, params);
        report.checkpoint_path = checkpoint_path;
    }
    return report;
}

double draft_top1_agreement(const DraftModel& draft, const std::vector<TrainingTrace>& traces) {
    if (traces.empty()) throw std::invalid_argument("draft_top1_agreement: no traces");
    NoGradGuard ng;
    const std::size_t d = draft.config().embed_dim, vocab = draft.config().vocab_size;
    std::size_t hits = 0, total = 0;
    for (const TrainingTrace& trace : traces) {
        TransformerSession session(draft.core());
        DraftModel::FullForward ff = draft.forward_full(trace.input, stored_f_tensor(trace, d), session);
        std::vector<double> probs_flat, weights;
        trace_targets(trace, ff.layout, vocab, probs_flat, weights);
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] == 0.0) continue;
            auto row = ff.step.logits.row(i);
            const std::size_t am_hat = static_cast<std::size_t>(
                std::max_element(row.begin(), row.end()) - row.begin());
            auto t0 = probs_flat.begin() + static_cast<std::ptrdiff_t>(i * vocab);
            const std::size_t am = static_cast<std::size_t>(
                std::max_element(t0, t0 + static_cast<std::ptrdiff_t>(vocab)) - t0);
            hits += (am_hat == am) ? 1 : 0;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

} // namespace vispec
