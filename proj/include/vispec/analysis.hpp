#pragma once
#include <filesystem>
#include <string>
#include <vector>

#include "vispec/bench.hpp"
#include "vispec/datagen.hpp"

namespace vispec {

// Single-layer attention setting for the redundancy analysis: a sequence of
// R copies of the shared embedding s plus one unique embedding t, attended
// by a query built from e_i, with no positions and no score scaling.
struct DilutionParams {
    std::size_t d = 8;
    std::vector<std::size_t> R_values = {4, 16, 64, 256, 1024};
    Tensor w_q, w_k, w_v;           // d x d
    Tensor s, t, e_i;               // 1 x d

    static DilutionParams seeded(std::size_t d, std::uint64_t seed);
    void validate() const;
};

// Attention weight on the unique token given the shared-token score A, the
// unique-token score B and the redundant count R: exp(B) / (R exp(A) +
// exp(B)). Evaluated through the score difference, so equal scores give
// exactly 1/(R+1), shifts of (A, B) cancel exactly, and large magnitudes
// saturate instead of overflowing.
double dilution_alpha(double A, double B, std::size_t R);

// || y_i - W_v s ||_2 with y_i the actual attention output over the
// (R+1)-token sequence; include_unique=false drops the unique token (pure
// redundancy, error identically 0).
double output_collapse_error(const DilutionParams& params, std::size_t R,
                             bool include_unique = true);

// ---- lost-in-the-middle probe --------------------------------------------

// Draft-vs-target top-1 agreement over greedy responses, with the image
// embedded at varying offsets inside padded contexts of varying lengths.
struct ProbeGrid {
    std::vector<std::size_t> context_lengths;   // total padding tokens
    std::vector<std::size_t> image_offsets;     // padding before the image
    std::vector<std::vector<double>> agreement; // [context][offset]
};

ProbeGrid lost_in_middle_probe(const DraftModel& draft, const TargetModel& target,
                               const TaskConfig& task,
                               const std::vector<std::size_t>& context_lengths,
                               const std::vector<std::size_t>& image_offsets,
                               std::size_t prompts_per_cell, std::size_t response_len,
                               std::uint64_t seed);

void write_probe_csv(const std::filesystem::path& path, const ProbeGrid& grid);

// ---- ablations over trained drafts ---------------------------------------

struct CompressedCountRow {
    std::size_t m = 0;
    double tau = 0.0;
    double speedup = 0.0;
    double draft_ms_per_cycle = 0.0;
};

// One benchmark row per compressed-token count; `drafts` pairs each m with a
// draft trained at that m (identical otherwise).
std::vector<CompressedCountRow> ablation_compressed_count(
    const TargetModel& target, const std::vector<std::pair<std::size_t, const DraftModel*>>& drafts,
    const BenchSuite& suite, const DecodeConfig& decode);

void write_m_table_csv(const std::filesystem::path& path,
                       const std::vector<CompressedCountRow>& rows);

struct ComponentRow {
    std::string configuration;
    double tau = 0.0;
    double speedup = 0.0;
};

// Cumulative component table: raw-image baseline, +compression, +global
// injection, +long-response training, in that order.
std::vector<ComponentRow> ablation_components(const TargetModel& target,
                                              const DraftModel& full_image,
                                              const DraftModel& with_compression,
                                              const DraftModel& with_injection,
                                              const DraftModel& with_long_traces,
                                              const BenchSuite& suite, const DecodeConfig& decode);

void write_components_csv(const std::filesystem::path& path,
                          const std::vector<ComponentRow>& rows);

} // namespace vispec
