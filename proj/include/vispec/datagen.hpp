#pragma once
#include <filesystem>
#include <vector>

#include "vispec/specdec.hpp"
#include "vispec/vlm.hpp"

namespace vispec {

// Token ids of the synthetic task vocabulary. Fact tokens follow the
// specials: fact(code c) = kFactBase + c, one per codebook entry.
namespace tok {
inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kBos = 1;
inline constexpr std::int32_t kSep = 2;
inline constexpr std::int32_t kEos = 3;
inline constexpr std::int32_t kQuery = 4;
inline constexpr std::int32_t kAnswer = 5;
inline constexpr std::int32_t kFactBase = 6;
} // namespace tok

// Synthetic long-answer task: the image shows a few unique patch codes in a
// sea of the shared code; the expected answer repeats a sentence naming the
// unique facts in code order, with a sentence period that depends on the
// image, until the minimum length is reached.
struct TaskConfig {
    std::size_t num_patches = 32;       // r
    std::size_t num_unique = 2;
    std::size_t codebook_size = 10;     // shared code 0, unique codes 1..C-1
    std::size_t min_response_len = 64;  // response tokens before the end token
    std::size_t max_seq_len = 192;
    std::size_t retry_cap = 8;

    std::size_t vocab_size() const { return tok::kFactBase + codebook_size; }
    void validate() const;
};

struct DatasetRecord {
    std::uint64_t image_seed = 0;
    SyntheticImage image;
    TokenSeq pre_text;    // [BOS, QRY]
    TokenSeq post_text;   // [ANS]
    TokenSeq response;    // ends with EOS
    double gen_temperature = 0.0;
};

// Per-position teacher data for draft training. f covers every joint
// position; p covers positions predicting a response token, i.e. joint
// positions response_start-1 .. n-2 in order.
struct TrainingTrace {
    JointInput input;               // prompt plus response
    std::size_t response_start = 0; // joint index of the first response token
    std::vector<std::vector<double>> f;
    std::vector<std::vector<double>> p;
    double gen_temperature = 0.0;
};

SyntheticImage generate_image(std::size_t r, std::size_t num_unique, std::size_t codebook_size,
                              RngStream& rng);

// Ground-truth answer for an image (deterministic template).
TokenSeq ideal_response(const SyntheticImage& image, const TaskConfig& task);

// Record with the template answer (used to train the target).
DatasetRecord make_task_record(const TaskConfig& task, std::uint64_t image_seed);
std::vector<DatasetRecord> generate_task_corpus(const TaskConfig& task, std::size_t count,
                                                std::uint64_t seed);

// Records whose responses are sampled from the target; records shorter than
// min_response_len are regenerated up to the retry cap.
std::vector<DatasetRecord> generate_long_responses(const TargetModel& target,
                                                   const TaskConfig& task, std::size_t count,
                                                   double temperature, std::uint64_t seed);

// Joint input for a record, with or without the response appended.
JointInput record_input(const TargetModel& target, const DatasetRecord& record,
                        bool include_response);

TrainingTrace build_training_trace(const TargetModel& target, const DatasetRecord& record);

// Fraction of response positions where the recorded token is the argmax of
// the stored target distribution (1.0 would be the greedy failure mode).
double sampled_argmax_agreement(const std::vector<TrainingTrace>& traces);

// Line-delimited records plus a manifest line carrying seed and count.
void write_records(const std::filesystem::path& path, const std::vector<DatasetRecord>& records,
                   std::uint64_t seed);
std::vector<DatasetRecord> read_records(const std::filesystem::path& path);

// FNV-1a over the serialized records; stable across runs.
std::uint64_t corpus_fingerprint(const std::vector<DatasetRecord>& records);

} // namespace vispec
