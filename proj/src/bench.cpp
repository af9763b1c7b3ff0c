#include "vispec/bench.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace vispec {

namespace {

void fnv_mix(std::uint64_t& h, const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
}

template <typename T>
void fnv_mix_value(std::uint64_t& h, const T& v) {
    fnv_mix(h, &v, sizeof(v));
}

double per_token_ms(std::uint64_t wall_ns, std::size_t tokens) {
    if (tokens == 0) throw std::invalid_argument("bench: run produced no tokens");
    if (wall_ns == 0) throw std::runtime_error("bench: sub-resolution timing");
    return static_cast<double>(wall_ns) / 1e6 / static_cast<double>(tokens);
}

void accumulate(DecodeStats& into, const DecodeStats& s) {
    into.cycles += s.cycles;
    into.accepted_draft_tokens += s.accepted_draft_tokens;
    into.total_tokens += s.total_tokens;
    into.wall_ns_target_only += s.wall_ns_target_only;
    into.wall_ns_spec += s.wall_ns_spec;
    into.wall_ns_draft += s.wall_ns_draft;
    into.acceptance_histogram.insert(into.acceptance_histogram.end(),
                                     s.acceptance_histogram.begin(),
                                     s.acceptance_histogram.end());
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
    mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    sd = 0.0;
    if (xs.size() > 1) {
        for (double x : xs) sd += (x - mean) * (x - mean);
        sd = std::sqrt(sd / static_cast<double>(xs.size() - 1));
    }
}

} // namespace

void BenchSuite::validate() const {
    if (prompts.empty()) throw std::invalid_argument("BenchSuite: no prompts");
    if (repetitions < 3) throw std::invalid_argument("BenchSuite: repetitions must be >= 3");
    if (warmup < 1) throw std::invalid_argument("BenchSuite: warmup must be >= 1");
}

double measure_tau(const DecodeStats& stats) {
    if (stats.cycles == 0) throw std::invalid_argument("measure_tau: zero cycles");
    return static_cast<double>(stats.accepted_draft_tokens) / static_cast<double>(stats.cycles);
}

double measure_speedup(const DecodeStats& baseline, const DecodeStats& method) {
    const std::uint64_t base_ns =
        baseline.wall_ns_target_only ? baseline.wall_ns_target_only : baseline.wall_ns_spec;
    const std::uint64_t meth_ns = method.wall_ns_spec ? method.wall_ns_spec : method.wall_ns_target_only;
    return per_token_ms(base_ns, baseline.total_tokens) / per_token_ms(meth_ns, method.total_tokens);
}

std::uint64_t bench_fingerprint(const DecodeConfig& decode, const BenchSuite& suite,
                                const DraftModel* draft) {
    std::uint64_t h = 1469598103934665603ULL;   // FNV-1a 64
    fnv_mix_value(h, decode.tree_mode);
    fnv_mix_value(h, decode.draft_len);
    fnv_mix_value(h, decode.tree_budget);
    fnv_mix_value(h, decode.tree_depth);
    fnv_mix_value(h, decode.expand_top_k);
    fnv_mix_value(h, decode.temperature);
    fnv_mix_value(h, decode.max_new_tokens);
    fnv_mix_value(h, decode.end_token);
    fnv_mix_value(h, suite.repetitions);
    fnv_mix_value(h, suite.warmup);
    fnv_mix_value(h, suite.seed);
    fnv_mix_value(h, corpus_fingerprint(suite.prompts));
    if (draft) {
        const auto variant = draft->variant();
        fnv_mix_value(h, variant);
        for (const auto& [name, t] : draft->params().all()) {
            fnv_mix(h, name.data(), name.size());
            for (double v : t.data()) fnv_mix_value(h, static_cast<float>(v));
        }
    }
    return h;
}

std::vector<BenchResult> run_bench(const TargetModel& target,
                                   const std::vector<BenchMethod>& methods,
                                   const BenchSuite& suite) {
    suite.validate();
    std::vector<JointInput> inputs;
    std::vector<std::uint64_t> prompt_seeds;
    inputs.reserve(suite.prompts.size());
    RngStream seeder(RngStream::mix(suite.seed ^ 0x62656e6368ULL));
    for (std::size_t i = 0; i < suite.prompts.size(); ++i) {
        inputs.push_back(record_input(target, suite.prompts[i], false));
        prompt_seeds.push_back(seeder.fork(i).next_u64());
    }

    DecodeConfig base_cfg = methods.empty() ? DecodeConfig{} : methods.front().decode;
    auto run_baseline_pass = [&] {
        DecodeStats agg;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            GenerateResult r = generate_autoregressive(target, inputs[i], base_cfg.temperature,
                                                       base_cfg.max_new_tokens, base_cfg.end_token,
                                                       prompt_seeds[i]);
            accumulate(agg, r.stats);
        }
        return agg;
    };

    std::vector<BenchResult> out;
    BenchResult baseline;
    baseline.method = "baseline";
    baseline.seed = suite.seed;
    baseline.fingerprint = bench_fingerprint(base_cfg, suite, nullptr);
    for (std::size_t w = 0; w < suite.warmup; ++w) run_baseline_pass();
    for (std::size_t rep = 0; rep < suite.repetitions; ++rep) {
        baseline.stats = run_baseline_pass();
        baseline.ms_per_token_runs.push_back(
            per_token_ms(baseline.stats.wall_ns_target_only, baseline.stats.total_tokens));
    }
    mean_std(baseline.ms_per_token_runs, baseline.ms_per_token_mean, baseline.ms_per_token_std);
    out.push_back(baseline);

    for (const BenchMethod& m : methods) {
        BenchResult res;
        res.method = m.name;
        res.seed = suite.seed;
        res.fingerprint = bench_fingerprint(m.decode, suite, m.draft);

        auto run_pass = [&] {
            DecodeStats agg;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                std::unique_ptr<DraftBackend> backend;
                if (m.draft)
                    backend = std::make_unique<EagleDraftBackend>(*m.draft);
                else
                    backend = std::make_unique<TargetAsDraftBackend>(target);
                DecodeConfig cfg = m.decode;
                cfg.seed = prompt_seeds[i];
                GenerateResult r = speculative_generate(target, *backend, inputs[i], cfg);
                accumulate(agg, r.stats);
            }
            return agg;
        };

        for (std::size_t w = 0; w < suite.warmup; ++w) run_pass();
        double best_draft_ms = 0.0;
        for (std::size_t rep = 0; rep < suite.repetitions; ++rep) {
            res.stats = run_pass();
            res.ms_per_token_runs.push_back(
                per_token_ms(res.stats.wall_ns_spec, res.stats.total_tokens));
            const double draft_ms = static_cast<double>(res.stats.wall_ns_draft) / 1e6 /
                                    static_cast<double>(res.stats.cycles);
            best_draft_ms = rep == 0 ? draft_ms : std::min(best_draft_ms, draft_ms);
        }
        mean_std(res.ms_per_token_runs, res.ms_per_token_mean, res.ms_per_token_std);
        res.tau = measure_tau(res.stats);
        res.speedup = baseline.ms_per_token_mean / res.ms_per_token_mean;
        res.draft_ms_per_cycle = best_draft_ms;
        out.push_back(std::move(res));
    }
    return out;
}

void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchResult>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_bench_csv: cannot open " + path.string());
    out << "method,tau,speedup,ms_per_token_mean,ms_per_token_std,seed,fingerprint\n";
    char buf[256];
    for (const BenchResult& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%llu,%llu\n",
                      r.method.c_str(), r.tau, r.speedup, r.ms_per_token_mean, r.ms_per_token_std,
                      static_cast<unsigned long long>(r.seed),
                      static_cast<unsigned long long>(r.fingerprint));
        out << buf;
    }
    if (!out) throw std::runtime_error("write_bench_csv: write failed for " + path.string());
}

} // namespace vispec
