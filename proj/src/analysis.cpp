#include "vispec/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <fstream>
#include <stdexcept>

#include "vispec/trainer.hpp"

namespace vispec {

DilutionParams DilutionParams::seeded(std::size_t d, std::uint64_t seed) {
    if (d < 1) throw std::invalid_argument("DilutionParams: d must be >= 1");
    RngStream rng(RngStream::mix(seed ^ 0x64696c757465ULL));
    DilutionParams p;
    p.d = d;
    const double wscale = 0.35 / std::sqrt(static_cast<double>(d));
    p.w_q = Tensor::randn({d, d}, rng, wscale);
    p.w_k = Tensor::randn({d, d}, rng, wscale);
    p.w_v = Tensor::randn({d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    p.s = Tensor::randn({1, d}, rng, 1.0);
    p.t = Tensor::randn({1, d}, rng, 1.0);
    p.e_i = Tensor::randn({1, d}, rng, 1.0);
    return p;
}

void DilutionParams::validate() const {
    if (d < 1) throw std::invalid_argument("DilutionParams: d must be >= 1");
    for (const Tensor* m : {&w_q, &w_k, &w_v})
        if (m->rows() != d || m->cols() != d)
            throw std::invalid_argument("DilutionParams: weight matrices must be d x d");
    for (const Tensor* v : {&s, &t, &e_i})
        if (v->rows() != 1 || v->cols() != d)
            throw std::invalid_argument("DilutionParams: embeddings must be 1 x d");
    for (std::size_t i = 1; i < R_values.size(); ++i)
        if (R_values[i] <= R_values[i - 1])
            throw std::invalid_argument("DilutionParams: R_values must be strictly increasing");
    for (const Tensor* m : {&w_q, &w_k, &w_v, &s, &t, &e_i}) m->check_finite("DilutionParams");
}

double dilution_alpha(double A, double B, std::size_t R) {
    if (!std::isfinite(A) || !std::isfinite(B))
        throw std::invalid_argument("dilution_alpha: scores must be finite");
    if (R < 1) throw std::invalid_argument("dilution_alpha: R must be >= 1");
    // exp(B) / (R exp(A) + exp(B)) via the score difference; overflow of the
    // ratio saturates to 0, underflow to 1.
    return 1.0 / (static_cast<double>(R) * std::exp(A - B) + 1.0);
}

double output_collapse_error(const DilutionParams& params, std::size_t R, bool include_unique) {
    params.validate();
    if (R < 1) throw std::invalid_argument("output_collapse_error: R must be >= 1");
    NoGradGuard ng;
    const std::size_t n = R + (include_unique ? 1 : 0);
    std::vector<double> flat;
    flat.reserve(n * params.d);
    for (std::size_t r = 0; r < R; ++r)
        flat.insert(flat.end(), params.s.data().begin(), params.s.data().end());
    if (include_unique) flat.insert(flat.end(), params.t.data().begin(), params.t.data().end());
    Tensor x = Tensor::from({n, params.d}, std::move(flat));

    Tensor q = ops::matmul(params.e_i, params.w_q);
    Tensor k = ops::matmul(x, params.w_k);
    Tensor v = ops::matmul(x, params.w_v);
    Tensor y = plain_attention(q, k, v);
    Tensor ref = ops::matmul(params.s, params.w_v);

    double err = 0.0;
    for (std::size_t j = 0; j < params.d; ++j) {
        const double diff = y.data()[j] - ref.data()[j];
        err += diff * diff;
    }
    return std::sqrt(err);
}

// ---- lost-in-the-middle probe --------------------------------------------

ProbeGrid lost_in_middle_probe(const DraftModel& draft, const TargetModel& target,
                               const TaskConfig& task,
                               const std::vector<std::size_t>& context_lengths,
                               const std::vector<std::size_t>& image_offsets,
                               std::size_t prompts_per_cell, std::size_t response_len,
                               std::uint64_t seed) {
    if (context_lengths.empty() || image_offsets.empty())
        throw std::invalid_argument("lost_in_middle_probe: empty grid axes");
    if (prompts_per_cell < 1 || response_len < 1)
        throw std::invalid_argument("lost_in_middle_probe: prompts_per_cell and response_len >= 1");
    const std::size_t max_len = target.config().max_seq_len;
    for (std::size_t L : context_lengths)
        if (3 + L + task.num_patches + response_len > max_len)
            throw std::invalid_argument("lost_in_middle_probe: context overflow");

    ProbeGrid grid;
    grid.context_lengths = context_lengths;
    grid.image_offsets = image_offsets;
    RngStream base(RngStream::mix(seed ^ 0x70726f6265ULL));

    for (std::size_t li = 0; li < context_lengths.size(); ++li) {
        const std::size_t L = context_lengths[li];
        std::vector<double> row;
        for (std::size_t oi = 0; oi < image_offsets.size(); ++oi) {
            const std::size_t o = image_offsets[oi];
            if (o > L) {
                row.push_back(std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            std::vector<TrainingTrace> traces;
            for (std::size_t j = 0; j < prompts_per_cell; ++j) {
                // Same images per cell index so cells differ only in layout.
                RngStream img_rng = base.fork(j);
                DatasetRecord rec;
                rec.image = generate_image(task.num_patches, task.num_unique, task.codebook_size,
                                           img_rng);
                rec.pre_text = {tok::kBos, tok::kQuery};
                rec.pre_text.insert(rec.pre_text.end(), o, tok::kPad);
                rec.post_text.assign(L - o, tok::kPad);
                rec.post_text.push_back(tok::kAnswer);
                JointInput prompt = record_input(target, rec, false);
                GenerateResult gen =
                    generate_autoregressive(target, prompt, 0.0, response_len, -1, 0);
                rec.response = gen.tokens;
                traces.push_back(build_training_trace(target, rec));
            }
            row.push_back(draft_top1_agreement(draft, traces));
        }
        grid.agreement.push_back(std::move(row));
    }
    return grid;
}

void write_probe_csv(const std::filesystem::path& path, const ProbeGrid& grid) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_probe_csv: cannot open " + path.string());
    out << "context_length,image_offset,agreement\n";
    char buf[128];
    for (std::size_t li = 0; li < grid.context_lengths.size(); ++li)
        for (std::size_t oi = 0; oi < grid.image_offsets.size(); ++oi) {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g\n", grid.context_lengths[li],
                          grid.image_offsets[oi], grid.agreement[li][oi]);
            out << buf;
        }
    if (!out) throw std::runtime_error("write_probe_csv: write failed for " + path.string());
}

// ---- ablations -----------------------------------------------------------

std::vector<CompressedCountRow> ablation_compressed_count(
    const TargetModel& target, const std::vector<std::pair<std::size_t, const DraftModel*>>& drafts,
    const BenchSuite& suite, const DecodeConfig& decode) {
    if (drafts.empty()) throw std::invalid_argument("ablation_compressed_count: no drafts");
    std::vector<BenchMethod> methods;
    for (const auto& [m, draft] : drafts) {
        if (!draft)
            throw std::invalid_argument("ablation_compressed_count: missing draft for m=" +
                                        std::to_string(m));
        if (draft->config().num_queries != m)
            throw std::invalid_argument("ablation_compressed_count: draft/m mismatch at m=" +
                                        std::to_string(m));
        methods.push_back({"m=" + std::to_string(m), draft, decode});
    }
    std::vector<BenchResult> results = run_bench(target, methods, suite);
    std::vector<CompressedCountRow> rows;
    for (std::size_t i = 0; i < drafts.size(); ++i) {
        const BenchResult& r = results[i + 1];   // results[0] is the baseline
        rows.push_back({drafts[i].first, r.tau, r.speedup, r.draft_ms_per_cycle});
    }
    return rows;
}

void write_m_table_csv(const std::filesystem::path& path,
                       const std::vector<CompressedCountRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_m_table_csv: cannot open " + path.string());
    out << "m,tau,speedup,draft_ms_per_cycle\n";
    char buf[160];
    for (const CompressedCountRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", r.m, r.tau, r.speedup,
                      r.draft_ms_per_cycle);
        out << buf;
    }
    if (!out) throw std::runtime_error("write_m_table_csv: write failed for " + path.string());
}

std::vector<ComponentRow> ablation_components(const TargetModel& target,
                                              const DraftModel& full_image,
                                              const DraftModel& with_compression,
                                              const DraftModel& with_injection,
                                              const DraftModel& with_long_traces,
                                              const BenchSuite& suite, const DecodeConfig& decode) {
    const std::pair<std::string, const DraftModel*> arms[] = {
        {"full_image", &full_image},
        {"+compression", &with_compression},
        {"+global_injection", &with_injection},
        {"+long_responses", &with_long_traces},
    };
    if (full_image.variant() != DraftVariant::FullImage ||
        with_compression.variant() != DraftVariant::VispecNoGlobal ||
        with_injection.variant() != DraftVariant::Vispec ||
        with_long_traces.variant() != DraftVariant::Vispec)
        throw std::invalid_argument("ablation_components: arm/architecture mismatch");
    std::vector<BenchMethod> methods;
    for (const auto& [name, draft] : arms) methods.push_back({name, draft, decode});
    std::vector<BenchResult> results = run_bench(target, methods, suite);
    std::vector<ComponentRow> rows;
    for (std::size_t i = 0; i < std::size(arms); ++i)
        rows.push_back({arms[i].first, results[i + 1].tau, results[i + 1].speedup});
    return rows;
}

void write_components_csv(const std::filesystem::path& path,
                          const std::vector<ComponentRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_components_csv: cannot open " + path.string());
    out << "configuration,tau,speedup\n";
    char buf[160];
    for (const ComponentRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g\n", r.configuration.c_str(), r.tau,
                      r.speedup);
        out << buf;
    }
    if (!out) throw std::runtime_error("write_components_csv: write failed for " + path.string());
}

} // namespace vispec
