#pragma once
#include <filesystem>
#include <string>
#include <vector>

#include "vispec/datagen.hpp"
#include "vispec/specdec.hpp"

namespace vispec {

// Evaluation prompts plus timing policy. The records' responses are ignored;
// only the prompt (pre-text, image, post-text) is used.
struct BenchSuite {
    std::vector<DatasetRecord> prompts;
    std::size_t repetitions = 3;   // timed passes
    std::size_t warmup = 1;        // untimed passes
    std::uint64_t seed = 0;

    void validate() const;
};

struct BenchResult {
    std::string method;
    double tau = 0.0;
    double speedup = 1.0;               // baseline ms/token over this method's
    double ms_per_token_mean = 0.0;
    double ms_per_token_std = 0.0;
    double draft_ms_per_cycle = 0.0;    // best over repetitions; 0 for baseline
    std::uint64_t seed = 0;
    std::uint64_t fingerprint = 0;
    std::vector<double> ms_per_token_runs;
    DecodeStats stats;                  // summed over prompts, last repetition
};

// Accepted draft tokens per drafting-verification cycle (bonus excluded).
double measure_tau(const DecodeStats& stats);

// Ratio of per-token wall times. Each side uses its own timing field:
// target-only runs fill wall_ns_target_only, speculative runs wall_ns_spec.
double measure_speedup(const DecodeStats& baseline, const DecodeStats& method);

struct BenchMethod {
    std::string name;
    const DraftModel* draft = nullptr;   // null: the target drafts for itself
    DecodeConfig decode;
};

// Times autoregressive decoding as the baseline row, then every method over
// the same prompts and per-prompt seeds. Token outputs are deterministic per
// seed, so only wall times vary across repetitions.
std::vector<BenchResult> run_bench(const TargetModel& target,
                                   const std::vector<BenchMethod>& methods,
                                   const BenchSuite& suite);

// Stable hash of everything that determines a result's token output: the
// decode configuration, suite policy and prompts, and draft weights.
std::uint64_t bench_fingerprint(const DecodeConfig& decode, const BenchSuite& suite,
                                const DraftModel* draft);

void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchResult>& rows);

} // namespace vispec
