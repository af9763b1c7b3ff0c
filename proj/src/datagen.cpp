#include "vispec/datagen.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace vispec {

namespace {
using nlohmann::json;

json record_to_json(const DatasetRecord& r) {
    json j;
    j["image_seed"] = r.image_seed;
    j["r"] = r.image.num_patches;
    j["unique_positions"] = r.image.unique_positions;
    j["unique_codes"] = r.image.unique_codes;
    j["pre"] = r.pre_text;
    j["post"] = r.post_text;
    j["response"] = r.response;
    j["temperature"] = r.gen_temperature;
    return j;
}

DatasetRecord record_from_json(const json& j) {
    DatasetRecord r;
    r.image_seed = j.at("image_seed").get<std::uint64_t>();
    r.image.num_patches = j.at("r").get<std::size_t>();
    r.image.unique_positions = j.at("unique_positions").get<std::vector<std::size_t>>();
    r.image.unique_codes = j.at("unique_codes").get<std::vector<std::int32_t>>();
    r.image.redundant_code = 0;
    r.image.patches.assign(r.image.num_patches, r.image.redundant_code);
    for (std::size_t i = 0; i < r.image.unique_positions.size(); ++i)
        r.image.patches.at(r.image.unique_positions[i]) = r.image.unique_codes[i];
    r.image.validate();
    r.pre_text = j.at("pre").get<TokenSeq>();
    r.post_text = j.at("post").get<TokenSeq>();
    r.response = j.at("response").get<TokenSeq>();
    r.gen_temperature = j.at("temperature").get<double>();
    return r;
}

} // namespace

void TaskConfig::validate() const {
    if (num_patches < 1) throw std::invalid_argument("TaskConfig: num_patches must be >= 1");
    if (num_unique >= num_patches)
        throw std::invalid_argument("TaskConfig: num_unique must be < num_patches");
    if (codebook_size < 2) throw std::invalid_argument("TaskConfig: codebook_size must be >= 2");
    if (num_unique > codebook_size - 1)
        throw std::invalid_argument("TaskConfig: not enough distinct unique codes");
    // prompt (BOS QRY, image, ANS) + response + EOS must fit.
    if (2 + num_patches + 1 + min_response_len + 1 > max_seq_len)
        throw std::invalid_argument("TaskConfig: min_response_len does not fit in max_seq_len");
}

SyntheticImage generate_image(std::size_t r, std::size_t num_unique, std::size_t codebook_size,
                              RngStream& rng) {
    if (num_unique >= r) throw std::invalid_argument("generate_image: num_unique must be < r");
    if (codebook_size < 2 || num_unique > codebook_size - 1)
        throw std::invalid_argument("generate_image: not enough distinct codes");
    SyntheticImage img;
    img.num_patches = r;
    img.redundant_code = 0;
    img.patches.assign(r, img.redundant_code);

    // Positions: partial Fisher-Yates, then sorted for a canonical order.
    std::vector<std::size_t> pool(r);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < num_unique; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (r - i));
        std::swap(pool[i], pool[j]);
    }
    img.unique_positions.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(num_unique));
    std::sort(img.unique_positions.begin(), img.unique_positions.end());

    // Codes: distinct draws from 1..C-1.
    std::vector<std::int32_t> codes(codebook_size - 1);
    std::iota(codes.begin(), codes.end(), 1);
    for (std::size_t i = 0; i < num_unique; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (codes.size() - i));
        std::swap(codes[i], codes[j]);
    }
    img.unique_codes.assign(codes.begin(), codes.begin() + static_cast<std::ptrdiff_t>(num_unique));
    for (std::size_t i = 0; i < num_unique; ++i)
        img.patches[img.unique_positions[i]] = img.unique_codes[i];
    img.validate();
    return img;
}

TokenSeq ideal_response(const SyntheticImage& image, const TaskConfig& task) {
    // Facts in ascending code order; the sentence gains a filler token when
    // the smallest unique code is odd, so the period is image-dependent.
    std::vector<std::int32_t> codes = image.unique_codes;
    std::sort(codes.begin(), codes.end());
    TokenSeq sentence;
    for (std::int32_t c : codes) sentence.push_back(tok::kFactBase + c);
    const std::int32_t min_code = codes.empty() ? 0 : codes.front();
    if (min_code % 2 == 1) sentence.push_back(tok::kFactBase);   // shared-code filler
    sentence.push_back(tok::kSep);

    TokenSeq out;
    while (out.size() < task.min_response_len)
        out.insert(out.end(), sentence.begin(), sentence.end());
    out.push_back(tok::kEos);
    return out;
}

DatasetRecord make_task_record(const TaskConfig& task, std::uint64_t image_seed) {
    task.validate();
    DatasetRecord rec;
    rec.image_seed = image_seed;
    RngStream rng(RngStream::mix(image_seed ^ 0x696d616765ULL));
    rec.image = generate_image(task.num_patches, task.num_unique, task.codebook_size, rng);
    rec.pre_text = {tok::kBos, tok::kQuery};
    rec.post_text = {tok::kAnswer};
    rec.response = ideal_response(rec.image, task);
    rec.gen_temperature = 0.0;
    return rec;
}

std::vector<DatasetRecord> generate_task_corpus(const TaskConfig& task, std::size_t count,
                                                std::uint64_t seed) {
    if (count == 0) throw std::invalid_argument("generate_task_corpus: count must be >= 1");
    std::vector<DatasetRecord> out;
    out.reserve(count);
    RngStream base(RngStream::mix(seed ^ 0x636f72707573ULL));
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(make_task_record(task, base.fork(i).next_u64()));
    return out;
}

JointInput record_input(const TargetModel& target, const DatasetRecord& record,
                        bool include_response) {
    TokenSeq post = record.post_text;
    if (include_response)
        post.insert(post.end(), record.response.begin(), record.response.end());
    return build_joint_input(record.pre_text, target.encoder(), record.image, post,
                             target.config().max_seq_len);
}

std::vector<DatasetRecord> generate_long_responses(const TargetModel& target,
                                                   const TaskConfig& task, std::size_t count,
                                                   double temperature, std::uint64_t seed) {
    task.validate();
    if (count == 0) throw std::invalid_argument("generate_long_responses: count must be >= 1");
    if (task.vocab_size() != target.config().vocab_size)
        throw std::invalid_argument("generate_long_responses: task/model vocab mismatch");
    std::vector<DatasetRecord> out;
    out.reserve(count);
    RngStream base(RngStream::mix(seed ^ 0x747261636573ULL));
    for (std::size_t i = 0; i < count; ++i) {
        RngStream rec_rng = base.fork(i);
        DatasetRecord rec;
        rec.image_seed = rec_rng.fork(0).next_u64();
        RngStream img_rng(RngStream::mix(rec.image_seed ^ 0x696d616765ULL));
        rec.image = generate_image(task.num_patches, task.num_unique, task.codebook_size, img_rng);
        rec.pre_text = {tok::kBos, tok::kQuery};
        rec.post_text = {tok::kAnswer};
        rec.gen_temperature = temperature;

        JointInput prompt = record_input(target, rec, false);
        const std::size_t budget = target.config().max_seq_len - prompt.length() - 1;
        bool ok = false;
        for (std::size_t attempt = 0; attempt <= task.retry_cap && !ok; ++attempt) {
            GenerateResult gen = generate_autoregressive(target, prompt, temperature, budget,
                                                         tok::kEos, rec_rng.fork(1 + attempt).next_u64());
            const std::size_t body = gen.tokens.empty() || gen.tokens.back() != tok::kEos
                                         ? gen.tokens.size()
                                         : gen.tokens.size() - 1;
            if (body >= task.min_response_len) {
                rec.response = gen.tokens;
                if (rec.response.empty() || rec.response.back() != tok::kEos)
                    rec.response.push_back(tok::kEos);
                ok = true;
            }
        }
        if (!ok)
            throw std::runtime_error(
                "generate_long_responses: retry cap exceeded; target cannot produce long outputs");
        out.push_back(std::move(rec));
    }
    return out;
}

TrainingTrace build_training_trace(const TargetModel& target, const DatasetRecord& record) {
    for (const TokenSeq* seq : {&record.pre_text, &record.post_text, &record.response})
        for (std::int32_t t : *seq)
            if (t < 0 || static_cast<std::size_t>(t) >= target.config().vocab_size)
                throw std::invalid_argument("build_training_trace: token outside model vocab");

    TrainingTrace trace;
    trace.input = record_input(target, record, true);
    trace.response_start = record.pre_text.size() + record.image.num_patches +
                           record.post_text.size();
    trace.gen_temperature = record.gen_temperature;

    NoGradGuard ng;
    TransformerSession session(target.core());
    target.forward(trace.input, session);
    const std::size_t n = trace.input.length();
    trace.f.reserve(n);
    for (std::size_t p = 0; p < n; ++p) {
        auto h = session.hidden_at(p);
        trace.f.emplace_back(h.begin(), h.end());
    }
    if (!record.response.empty())
        for (std::size_t p = trace.response_start - 1; p + 1 < n; ++p)
            trace.p.push_back(softmax(session.logits_at(p)));
    return trace;
}

double sampled_argmax_agreement(const std::vector<TrainingTrace>& traces) {
    std::size_t hits = 0, total = 0;
    for (const TrainingTrace& tr : traces) {
        for (std::size_t i = 0; i < tr.p.size(); ++i) {
            const std::int32_t token = *tr.input.token_at(tr.response_start + i);
            const auto& p = tr.p[i];
            const std::size_t am = static_cast<std::size_t>(
                std::max_element(p.begin(), p.end()) - p.begin());
            hits += (am == static_cast<std::size_t>(token)) ? 1 : 0;
            ++total;
        }
    }
    if (total == 0) throw std::invalid_argument("sampled_argmax_agreement: no response positions");
    return static_cast<double>(hits) / static_cast<double>(total);
}

void write_records(const std::filesystem::path& path, const std::vector<DatasetRecord>& records,
                   std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_records: cannot open " + path.string());
    json manifest;
    manifest["manifest"] = {{"seed", seed}, {"count", records.size()}};
    out << manifest.dump() << "\n";
    for (const DatasetRecord& r : records) out << record_to_json(r).dump() << "\n";
    if (!out) throw std::runtime_error("write_records: write failed for " + path.string());
}

std::vector<DatasetRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_records: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_records: missing manifest");
    const json manifest = json::parse(line);
    const std::size_t count = manifest.at("manifest").at("count").get<std::size_t>();
    std::vector<DatasetRecord> out;
    out.reserve(count);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(record_from_json(json::parse(line)));
    }
    if (out.size() != count)
        throw std::runtime_error("read_records: record count does not match manifest");
    return out;
}

std::uint64_t corpus_fingerprint(const std::vector<DatasetRecord>& records) {
    std::uint64_t h = 1469598103934665603ULL;   // FNV-1a 64
    auto mix = [&](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
    };
    for (const DatasetRecord& r : records) mix(record_to_json(r).dump());
    return h;
}

} // namespace vispec
