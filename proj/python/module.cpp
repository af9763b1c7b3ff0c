// Python bindings for the core operations: sampling-identity primitives,
// the attention-redundancy analysis, and a small end-to-end decode check.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vispec/analysis.hpp"
#include "vispec/bench.hpp"
#include "vispec/trainer.hpp"

namespace py = pybind11;
using namespace vispec;

namespace {

// Tiny seeded target with a randomized head (untrained weights give nearly
// uniform logits, which would make the checks vacuous).
TargetModel demo_target(const TaskConfig& task, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.vocab_size = task.vocab_size();
    cfg.embed_dim = 8;
    cfg.num_heads = 2;
    cfg.max_seq_len = task.max_seq_len;
    cfg.patch_embed_dim = 4;
    cfg.codebook_size = task.codebook_size;
    TargetModel target = TargetModel::make_initialized(cfg, seed);
    RngStream r(RngStream::mix(seed ^ 0x68656164ULL));
    for (double& v : target.core().params().get("head").mutable_data()) v = r.next_normal() * 0.3;
    return target;
}

// Speculative decode on one seeded prompt; reports tau and whether the
// output matches target-only greedy decoding token for token.
py::dict speculative_demo(std::uint64_t seed, bool tree_mode, std::size_t max_new_tokens) {
    TaskConfig task;
    task.num_patches = 8;
    task.min_response_len = 8;
    task.max_seq_len = 96;
    TargetModel target = demo_target(task, seed);
    DatasetRecord rec = generate_task_corpus(task, 1, seed)[0];
    JointInput prompt = record_input(target, rec, false);

    ModelConfig dcfg = target.config();
    dcfg.num_layers = 1;
    dcfg.num_queries = 2;
    DraftModel draft = DraftModel::make_initialized(dcfg, DraftVariant::Vispec, seed + 1);
    EagleDraftBackend backend(draft);

    DecodeConfig dc;
    dc.tree_mode = tree_mode;
    dc.max_new_tokens = max_new_tokens;
    dc.seed = seed;
    GenerateResult spec = speculative_generate(target, backend, prompt, dc);
    GenerateResult greedy = generate_autoregressive(target, prompt, 0.0, max_new_tokens, -1, seed);

    py::dict out;
    out["tokens"] = spec.tokens;
    out["tau"] = measure_tau(spec.stats);
    out["cycles"] = spec.stats.cycles;
    out["matches_greedy"] = spec.tokens == greedy.tokens;
    return out;
}

} // namespace

PYBIND11_MODULE(_vispec, m) {
    m.doc() = "vision-aware speculative decoding core operations";

    m.def("temperature_distribution",
          [](const std::vector<double>& logits, double t) {
              return temperature_distribution(logits, t);
          },
          py::arg("logits"), py::arg("temperature"));
    m.def("residual_distribution",
          [](const std::vector<double>& p, const std::vector<double>& p_hat) {
              return residual_distribution(p, p_hat);
          },
          py::arg("p"), py::arg("p_hat"));
    m.def("induced_next_token_distribution",
          [](const std::vector<double>& p, const std::vector<double>& p_hat) {
              return induced_next_token_distribution(p, p_hat);
          },
          py::arg("p"), py::arg("p_hat"));
    m.def("cross_entropy",
          [](const std::vector<double>& p, const std::vector<double>& p_hat) {
              return cross_entropy(p, p_hat);
          },
          py::arg("p"), py::arg("p_hat"));

    m.def("dilution_alpha", &dilution_alpha, py::arg("shared_score"), py::arg("unique_score"),
          py::arg("redundant_count"));
    m.def("output_collapse_error",
          [](std::size_t d, std::uint64_t seed, std::size_t R) {
              return output_collapse_error(DilutionParams::seeded(d, seed), R);
          },
          py::arg("d"), py::arg("seed"), py::arg("R"));

    m.def("speculative_demo", &speculative_demo, py::arg("seed") = 0, py::arg("tree") = false,
          py::arg("max_new_tokens") = 12);
}
