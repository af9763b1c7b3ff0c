// Pipeline driver: data generation, training, decoding, benchmarking and
// analysis, one stage per invocation. Artifacts live under a run directory
// (VISPEC_RUN_DIR or ./run) with a manifest recording every stage.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "vispec/analysis.hpp"
#include "vispec/bench.hpp"
#include "vispec/trainer.hpp"

using namespace vispec;
using nlohmann::json;

namespace {

std::filesystem::path run_dir() {
    const char* env = std::getenv("VISPEC_RUN_DIR");
    std::filesystem::path dir = env && *env ? env : "run";
    std::filesystem::create_directories(dir);
    return dir;
}

// Resolve a user path against the run directory unless absolute.
std::filesystem::path in_run(const std::string& name) {
    std::filesystem::path p(name);
    return p.is_absolute() ? p : run_dir() / p;
}

void manifest_add(const std::string& stage, const json& entry) {
    const std::filesystem::path path = run_dir() / "manifest.json";
    json m;
    if (std::ifstream in(path); in) in >> m;
    if (!m.contains("stages")) m["stages"] = json::array();
    json e = entry;
    e["stage"] = stage;
    m["stages"].push_back(e);
    std::ofstream out(path);
    out << m.dump(2) << "\n";
}

// Model checkpoints carry a sidecar JSON describing config and variant so
// later stages can reload them without repeating every flag.
json config_to_json(const ModelConfig& cfg) {
    return {{"vocab_size", cfg.vocab_size},       {"embed_dim", cfg.embed_dim},
            {"num_layers", cfg.num_layers},       {"num_heads", cfg.num_heads},
            {"max_seq_len", cfg.max_seq_len},     {"patch_embed_dim", cfg.patch_embed_dim},
            {"num_queries", cfg.num_queries},     {"codebook_size", cfg.codebook_size},
            {"encoder_seed", cfg.encoder_seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size");
    cfg.embed_dim = j.at("embed_dim");
    cfg.num_layers = j.at("num_layers");
    cfg.num_heads = j.at("num_heads");
    cfg.max_seq_len = j.at("max_seq_len");
    cfg.patch_embed_dim = j.at("patch_embed_dim");
    cfg.num_queries = j.at("num_queries");
    cfg.codebook_size = j.at("codebook_size");
    cfg.encoder_seed = j.at("encoder_seed");
    return cfg;
}

void save_model(const std::filesystem::path& ckpt, const ParameterStore& params,
                const ModelConfig& cfg, const std::string& kind, const std::string& variant = "") {
    save_checkpoint(ckpt, params);
    json meta = {{"kind", kind}, {"config", config_to_json(cfg)}};
    if (!variant.empty()) meta["variant"] = variant;
    std::ofstream out(std::filesystem::path(ckpt).replace_extension(".json"));
    out << meta.dump(2) << "\n";
}

json load_meta(const std::filesystem::path& ckpt) {
    const auto meta_path = std::filesystem::path(ckpt).replace_extension(".json");
    std::ifstream in(meta_path);
    if (!in) throw std::runtime_error("missing checkpoint sidecar " + meta_path.string());
    json meta;
    in >> meta;
    return meta;
}

TargetModel load_target(const std::filesystem::path& ckpt) {
    json meta = load_meta(ckpt);
    if (meta.at("kind") != "target") throw std::runtime_error("not a target checkpoint: " + ckpt.string());
    return TargetModel(config_from_json(meta.at("config")), load_checkpoint(ckpt));
}

DraftModel load_draft(const std::filesystem::path& ckpt) {
    json meta = load_meta(ckpt);
    if (meta.at("kind") != "draft") throw std::runtime_error("not a draft checkpoint: " + ckpt.string());
    return DraftModel(config_from_json(meta.at("config")),
                      draft_variant_from_string(meta.at("variant")), load_checkpoint(ckpt));
}

std::vector<TrainingTrace> traces_from_records(const TargetModel& target,
                                               const std::vector<DatasetRecord>& records) {
    std::vector<TrainingTrace> traces;
    traces.reserve(records.size());
    for (const DatasetRecord& r : records) traces.push_back(build_training_trace(target, r));
    return traces;
}

void write_tokens(const std::filesystem::path& path, const TokenSeq& tokens) {
    std::ofstream out(path);
    for (std::size_t i = 0; i < tokens.size(); ++i) out << tokens[i] << (i + 1 < tokens.size() ? " " : "");
    out << "\n";
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"vision-aware speculative decoding pipeline"};
    app.require_subcommand(1);
    app.fallthrough();   // --seed may follow the subcommand name

    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "root seed for every stage");

    // Synthetic task shape, shared by the stages that need it.
    TaskConfig task;
    task.num_patches = 96;
    task.codebook_size = 6;
    task.max_seq_len = 256;
    auto add_task_flags = [&](CLI::App* sub) {
        sub->add_option("--patches", task.num_patches, "visual patches per image (r)");
        sub->add_option("--unique-patches", task.num_unique, "unique patches per image");
        sub->add_option("--codebook", task.codebook_size, "patch codebook size");
        sub->add_option("--min-response", task.min_response_len, "minimum response length");
        sub->add_option("--max-seq", task.max_seq_len, "context window");
    };

    // ---- gen-data ---------------------------------------------------------
    auto* gen_data = app.add_subcommand("gen-data", "generate a task corpus with template answers");
    std::size_t samples = 256;
    std::string out_name = "corpus.records";
    gen_data->add_option("--samples", samples, "record count");
    gen_data->add_option("--out", out_name, "output records file");
    add_task_flags(gen_data);
    gen_data->callback([&] {
        if (samples < 1) throw CLI::ValidationError("--samples", "must be >= 1");
        task.validate();
        auto records = generate_task_corpus(task, samples, seed);
        const auto path = in_run(out_name);
        write_records(path, records, seed);
        manifest_add("gen-data", {{"seed", seed},
                                  {"samples", samples},
                                  {"fingerprint", corpus_fingerprint(records)},
                                  {"artifacts", {path.string()}}});
        std::cout << "wrote " << records.size() << " records to " << path << "\n";
    });

    // ---- train-target -----------------------------------------------------
    auto* train_t = app.add_subcommand("train-target", "train the target model; gated on held-out exact match");
    std::string corpus_name = "corpus.records", target_name = "target.ckpt";
    ModelConfig tcfg;
    TrainConfig ttrain;
    ttrain.learning_rate = 0.3;
    ttrain.epochs = 90;
    train_t->add_option("--corpus", corpus_name, "training records");
    train_t->add_option("--out", target_name, "target checkpoint");
    train_t->add_option("--dim", tcfg.embed_dim, "embedding width");
    train_t->add_option("--layers", tcfg.num_layers, "decoder layers");
    train_t->add_option("--heads", tcfg.num_heads, "attention heads");
    train_t->add_option("--lr", ttrain.learning_rate, "learning rate");
    train_t->add_option("--epochs", ttrain.epochs, "epochs");
    train_t->add_option("--batch", ttrain.batch_size, "batch size");
    add_task_flags(train_t);
    train_t->callback([&] {
        auto records = read_records(in_run(corpus_name));
        tcfg.vocab_size = task.vocab_size();
        tcfg.max_seq_len = task.max_seq_len;
        tcfg.codebook_size = task.codebook_size;
        ttrain.seed = seed;
        TargetModel target = TargetModel::make_initialized(tcfg, seed);
        TrainReport rep = train_target(target, records, ttrain);
        const auto path = in_run(target_name);
        save_model(path, target.core().params(), tcfg, "target");
        manifest_add("train-target", {{"seed", seed},
                                      {"holdout_exact_match", rep.holdout_metric},
                                      {"gate_passed", rep.gate_passed},
                                      {"final_loss", rep.epoch_loss.back()},
                                      {"artifacts", {path.string()}}});
        std::cout << "held-out exact match " << rep.holdout_metric << ", checkpoint " << path << "\n";
        if (!rep.gate_passed) throw std::runtime_error("target gate failed: exact match below 0.95");
    });

    // ---- gen-traces -------------------------------------------------------
    auto* gen_traces = app.add_subcommand("gen-traces", "sample long responses from the target for draft training");
    std::string traces_name = "traces.records";
    std::size_t trace_count = 96, truncate_response = 0;
    double trace_temperature = 1.0;
    gen_traces->add_option("--target", target_name, "target checkpoint");
    gen_traces->add_option("--count", trace_count, "trace count");
    gen_traces->add_option("--temperature", trace_temperature, "sampling temperature");
    gen_traces->add_option("--truncate-response", truncate_response,
                           "cap responses at this many tokens (0 = off; short-response arms)");
    gen_traces->add_option("--out", traces_name, "output records file");
    add_task_flags(gen_traces);
    gen_traces->callback([&] {
        TargetModel target = load_target(in_run(target_name));
        auto records = generate_long_responses(target, task, trace_count, trace_temperature, seed);
        if (truncate_response > 0)
            for (DatasetRecord& r : records)
                if (r.response.size() > truncate_response) r.response.resize(truncate_response);
        const auto path = in_run(traces_name);
        write_records(path, records, seed);
        manifest_add("gen-traces", {{"seed", seed},
                                    {"count", trace_count},
                                    {"temperature", trace_temperature},
                                    {"truncate_response", truncate_response},
                                    {"fingerprint", corpus_fingerprint(records)},
                                    {"artifacts", {path.string()}}});
        std::cout << "wrote " << records.size() << " traces to " << path << "\n";
    });

    // ---- train-draft ------------------------------------------------------
    auto* train_d = app.add_subcommand("train-draft", "train a draft model on target traces");
    std::string draft_name = "draft.ckpt";
    std::size_t num_queries = 2;
    TrainConfig dtrain;
    dtrain.learning_rate = 0.25;
    dtrain.epochs = 40;
    dtrain.mtp_horizon = 3;
    train_d->add_option("--target", target_name, "target checkpoint");
    train_d->add_option("--traces", traces_name, "trace records");
    train_d->add_option("--variant", dtrain.variant,
                        "vispec | vispec_no_g | baseline_b | text_only | full_image");
    train_d->add_option("--queries", num_queries, "compressed visual tokens (m)");
    train_d->add_option("--lr", dtrain.learning_rate, "learning rate");
    train_d->add_option("--epochs", dtrain.epochs, "epochs");
    train_d->add_option("--batch", dtrain.batch_size, "batch size");
    train_d->add_option("--horizon", dtrain.mtp_horizon, "multi-step prediction horizon");
    train_d->add_option("--out", draft_name, "draft checkpoint");
    train_d->callback([&] {
        TargetModel target = load_target(in_run(target_name));
        auto records = read_records(in_run(traces_name));
        auto traces = traces_from_records(target, records);
        ModelConfig dcfg = target.config();
        dcfg.num_layers = 1;
        dcfg.num_queries = num_queries;
        dtrain.seed = seed;
        DraftModel draft =
            DraftModel::make_initialized(dcfg, arch_for_regime(dtrain.variant), seed + 1000);
        TrainReport rep = train_draft(draft, traces, dtrain);
        const auto path = in_run(draft_name);
        save_model(path, draft.params(), dcfg, "draft", to_string(draft.variant()));
        manifest_add("train-draft", {{"seed", seed},
                                     {"variant", dtrain.variant},
                                     {"holdout_top1_agreement", rep.holdout_metric},
                                     {"final_loss", rep.epoch_loss.back()},
                                     {"artifacts", {path.string()}}});
        std::cout << "held-out top-1 agreement " << rep.holdout_metric << ", checkpoint " << path << "\n";
        if (!rep.gate_passed) throw std::runtime_error("draft training gate failed");
    });

    // ---- decode -----------------------------------------------------------
    auto* decode = app.add_subcommand("decode", "decode one seeded prompt and write the tokens");
    std::string mode = "chain", decode_out = "decode_tokens.txt";
    DecodeConfig dc;   // defaults: budget 30, depth 3, top-k 8
    bool use_draft = false;
    decode->add_option("--target", target_name, "target checkpoint");
    auto* draft_opt = decode->add_option("--draft", draft_name, "draft checkpoint (omit for target-only decoding)");
    decode->add_option("--mode", mode, "chain | tree")->check(CLI::IsMember({"chain", "tree"}));
    decode->add_option("--draft-len", dc.draft_len, "chain draft length k");
    decode->add_option("--tree-budget", dc.tree_budget, "tree node budget");
    decode->add_option("--tree-depth", dc.tree_depth, "tree depth");
    decode->add_option("--expand-top-k", dc.expand_top_k, "children per expansion");
    decode->add_option("--temperature", dc.temperature, "sampling temperature");
    decode->add_option("--max-new", dc.max_new_tokens, "generation budget");
    decode->add_option("--out", decode_out, "output token file");
    add_task_flags(decode);
    decode->callback([&] {
        use_draft = draft_opt->count() > 0;
        TargetModel target = load_target(in_run(target_name));
        DatasetRecord rec = generate_task_corpus(task, 1, seed)[0];
        JointInput prompt = record_input(target, rec, false);
        dc.tree_mode = mode == "tree";
        dc.end_token = tok::kEos;
        dc.seed = seed;
        GenerateResult res;
        if (use_draft) {
            DraftModel draft = load_draft(in_run(draft_name));
            EagleDraftBackend backend(draft);
            res = speculative_generate(target, backend, prompt, dc);
            std::cout << "tau " << measure_tau(res.stats) << " over " << res.stats.cycles
                      << " cycles\n";
        } else {
            res = generate_autoregressive(target, prompt, dc.temperature, dc.max_new_tokens,
                                          dc.end_token, seed);
        }
        const auto path = in_run(decode_out);
        write_tokens(path, res.tokens);
        manifest_add("decode", {{"seed", seed},
                                {"mode", use_draft ? mode : "autoregressive"},
                                {"tokens", res.tokens.size()},
                                {"artifacts", {path.string()}}});
        std::cout << "wrote " << res.tokens.size() << " tokens to " << path << "\n";
    });

    // ---- bench ------------------------------------------------------------
    auto* bench = app.add_subcommand("bench", "time baseline, chain and tree decoding over a prompt suite");
    std::string suite_name = "corpus.records", csv_name = "bench.csv";
    std::size_t bench_prompts = 32, jobs = 1;
    DecodeConfig bdc;
    bdc.max_new_tokens = 28;
    bench->add_option("--target", target_name, "target checkpoint");
    bench->add_option("--draft", draft_name, "draft checkpoint");
    bench->add_option("--suite", suite_name, "prompt records file");
    bench->add_option("--prompts", bench_prompts, "prompts used from the suite");
    bench->add_option("--csv", csv_name, "output CSV");
    bench->add_option("--draft-len", bdc.draft_len, "chain draft length k");
    bench->add_option("--tree-budget", bdc.tree_budget, "tree node budget");
    bench->add_option("--tree-depth", bdc.tree_depth, "tree depth");
    bench->add_option("--expand-top-k", bdc.expand_top_k, "children per expansion");
    bench->add_option("--temperature", bdc.temperature, "sampling temperature");
    bench->add_option("--max-new", bdc.max_new_tokens, "generation budget per prompt");
    bench->add_option("--jobs", jobs, "worker count (timings are always single-job)");
    bench->callback([&] {
        if (jobs != 1) throw CLI::ValidationError("--jobs", "timing mode runs single-job");
        TargetModel target = load_target(in_run(target_name));
        DraftModel draft = load_draft(in_run(draft_name));
        BenchSuite suite;
        suite.prompts = read_records(in_run(suite_name));
        if (suite.prompts.size() > bench_prompts) suite.prompts.resize(bench_prompts);
        suite.seed = seed;
        bdc.end_token = tok::kEos;
        DecodeConfig chain = bdc, tree = bdc;
        chain.tree_mode = false;
        tree.tree_mode = true;
        auto rows = run_bench(target, {{"chain", &draft, chain}, {"tree", &draft, tree}}, suite);
        const auto path = in_run(csv_name);
        write_bench_csv(path, rows);
        for (const BenchResult& r : rows)
            std::cout << r.method << ": tau " << r.tau << ", speedup " << r.speedup << "\n";
        manifest_add("bench", {{"seed", seed},
                               {"prompts", suite.prompts.size()},
                               {"artifacts", {path.string()}}});
    });

    // ---- analyze ----------------------------------------------------------
    auto* analyze = app.add_subcommand("analyze", "attention analyses and trained-draft ablations");
    analyze->require_subcommand(1);

    auto* dilution = analyze->add_subcommand("dilution", "attention weight and output collapse vs redundancy");
    std::string dilution_csv = "dilution.csv";
    std::size_t dilution_dim = 8;
    dilution->add_option("--dim", dilution_dim, "embedding width");
    dilution->add_option("--csv", dilution_csv, "output CSV");
    dilution->callback([&] {
        DilutionParams p = DilutionParams::seeded(dilution_dim, seed);
        const auto path = in_run(dilution_csv);
        std::ofstream out(path);
        out << "R,alpha_equal_scores,collapse_error\n";
        for (std::size_t R : p.R_values)
            out << R << "," << dilution_alpha(0.0, 0.0, R) << "," << output_collapse_error(p, R)
                << "\n";
        if (!out) throw std::runtime_error("cannot write " + path.string());
        manifest_add("analyze-dilution", {{"seed", seed}, {"artifacts", {path.string()}}});
        std::cout << "wrote " << path << "\n";
    });

    auto* lim = analyze->add_subcommand("lost-in-middle", "draft/target agreement vs image depth");
    std::string probe_csv = "probe.csv";
    std::vector<std::size_t> ctx_lengths = {0, 16, 32, 64}, img_offsets = {0, 16, 32, 64};
    std::size_t probe_prompts = 4, probe_response = 16;
    lim->add_option("--target", target_name, "target checkpoint");
    lim->add_option("--draft", draft_name, "draft checkpoint");
    lim->add_option("--context-lengths", ctx_lengths, "padding context lengths");
    lim->add_option("--image-offsets", img_offsets, "padding before the image");
    lim->add_option("--prompts-per-cell", probe_prompts, "prompts per grid cell");
    lim->add_option("--response-len", probe_response, "greedy response length");
    lim->add_option("--csv", probe_csv, "output CSV");
    add_task_flags(lim);
    lim->callback([&] {
        TargetModel target = load_target(in_run(target_name));
        DraftModel draft = load_draft(in_run(draft_name));
        ProbeGrid grid = lost_in_middle_probe(draft, target, task, ctx_lengths, img_offsets,
                                              probe_prompts, probe_response, seed);
        const auto path = in_run(probe_csv);
        write_probe_csv(path, grid);
        manifest_add("analyze-lost-in-middle", {{"seed", seed}, {"artifacts", {path.string()}}});
        std::cout << "wrote " << path << "\n";
    });

    auto* abm = analyze->add_subcommand("ablation-m", "tau and draft latency vs compressed token count");
    std::string m_csv = "m_table.csv";
    std::vector<std::string> m_drafts;
    std::size_t abl_prompts = 16;
    DecodeConfig abl_dc;
    abl_dc.max_new_tokens = 28;
    abm->add_option("--target", target_name, "target checkpoint");
    abm->add_option("--draft", m_drafts, "draft checkpoints, one per m, ascending")->required();
    abm->add_option("--suite", suite_name, "prompt records file");
    abm->add_option("--prompts", abl_prompts, "prompts used from the suite");
    abm->add_option("--draft-len", abl_dc.draft_len, "chain draft length k");
    abm->add_option("--max-new", abl_dc.max_new_tokens, "generation budget per prompt");
    abm->add_option("--csv", m_csv, "output CSV");
    abm->callback([&] {
        TargetModel target = load_target(in_run(target_name));
        std::vector<DraftModel> drafts;
        drafts.reserve(m_drafts.size());
        for (const std::string& name : m_drafts) drafts.push_back(load_draft(in_run(name)));
        std::vector<std::pair<std::size_t, const DraftModel*>> arms;
        for (const DraftModel& d : drafts) arms.push_back({d.config().num_queries, &d});
        BenchSuite suite;
        suite.prompts = read_records(in_run(suite_name));
        if (suite.prompts.size() > abl_prompts) suite.prompts.resize(abl_prompts);
        suite.seed = seed;
        abl_dc.end_token = tok::kEos;
        auto rows = ablation_compressed_count(target, arms, suite, abl_dc);
        const auto path = in_run(m_csv);
        write_m_table_csv(path, rows);
        for (const CompressedCountRow& r : rows)
            std::cout << "m=" << r.m << ": tau " << r.tau << ", draft ms/cycle "
                      << r.draft_ms_per_cycle << "\n";
        manifest_add("analyze-ablation-m", {{"seed", seed}, {"artifacts", {path.string()}}});
    });

    auto* abc = analyze->add_subcommand("ablation-components", "cumulative component table");
    std::string comp_csv = "components.csv";
    std::string full_name, nog_name, vis_name, vis_long_name;
    abc->add_option("--target", target_name, "target checkpoint");
    abc->add_option("--full-image", full_name, "raw-image draft checkpoint")->required();
    abc->add_option("--compression", nog_name, "compressed-token draft checkpoint")->required();
    abc->add_option("--injection", vis_name, "compressed + global-injection draft checkpoint")->required();
    abc->add_option("--long-responses", vis_long_name, "draft trained on full-length traces")->required();
    abc->add_option("--suite", suite_name, "prompt records file");
    abc->add_option("--prompts", abl_prompts, "prompts used from the suite");
    abc->add_option("--draft-len", abl_dc.draft_len, "chain draft length k");
    abc->add_option("--max-new", abl_dc.max_new_tokens, "generation budget per prompt");
    abc->add_option("--csv", comp_csv, "output CSV");
    abc->callback([&] {
        TargetModel target = load_target(in_run(target_name));
        DraftModel full = load_draft(in_run(full_name));
        DraftModel nog = load_draft(in_run(nog_name));
        DraftModel vis = load_draft(in_run(vis_name));
        DraftModel vis_long = load_draft(in_run(vis_long_name));
        BenchSuite suite;
        suite.prompts = read_records(in_run(suite_name));
        if (suite.prompts.size() > abl_prompts) suite.prompts.resize(abl_prompts);
        suite.seed = seed;
        abl_dc.end_token = tok::kEos;
        auto rows = ablation_components(target, full, nog, vis, vis_long, suite, abl_dc);
        const auto path = in_run(comp_csv);
        write_components_csv(path, rows);
        for (const ComponentRow& r : rows)
            std::cout << r.configuration << ": tau " << r.tau << "\n";
        manifest_add("analyze-ablation-components", {{"seed", seed}, {"artifacts", {path.string()}}});
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
