#pragma once
#include <string>
#include <vector>

#include "vispec/datagen.hpp"

namespace vispec {

// Training regime tag. baseline_b is the degraded regime: the vispec
// architecture trained with a single prediction step on greedy traces.
struct TrainConfig {
    double learning_rate = 0.2;
    std::size_t batch_size = 8;
    std::size_t epochs = 20;
    double warmup_fraction = 0.1;
    std::uint64_t seed = 0;
    std::size_t mtp_horizon = 2;          // draft self-rollout steps per position
    std::string variant = "vispec";       // vispec | baseline_b | text_only | full_image | vispec_no_g

    void validate() const;
};

struct TrainReport {
    std::vector<double> epoch_loss;
    double holdout_metric = 0.0;   // exact match (target) / top-1 agreement (draft)
    std::string checkpoint_path;
    std::uint64_t seed = 0;
    bool gate_passed = true;
};

// -sum_t p(t) log p_hat(t), with p_hat clipped at 1e-12. Always >= H(p).
double cross_entropy(std::span<const double> p, std::span<const double> p_hat);

// Draft architecture for a training regime tag.
DraftVariant arch_for_regime(const std::string& variant);

// Teacher-forced supervised training on the synthetic task. The last fifth
// of the corpus (at least one record) is held out for the exact-match gate.
TrainReport train_target(TargetModel& target, const std::vector<DatasetRecord>& corpus,
                         const TrainConfig& cfg, const std::string& checkpoint_path = "");

// Greedy generation reproduces the recorded response exactly.
double target_exact_match(const TargetModel& target, const std::vector<DatasetRecord>& records);

// Multi-step prediction loss for one trace: step 1 feeds the stored target
// hidden states; later steps feed the draft's own previous-step hidden
// states at response positions, with gradients flowing through the unroll.
Tensor draft_trace_loss(const DraftModel& draft, const TrainingTrace& trace,
                        std::size_t mtp_horizon);

TrainReport train_draft(DraftModel& draft, const std::vector<TrainingTrace>& traces,
                        const TrainConfig& cfg, const std::string& checkpoint_path = "");

// Teacher-forced top-1 agreement with the stored target distributions over
// response positions.
double draft_top1_agreement(const DraftModel& draft, const std::vector<TrainingTrace>& traces);

} // namespace vispec
