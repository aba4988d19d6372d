#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vitcn/contrast.hpp"
#include "vitcn/encoder.hpp"

namespace vitcn {

inline constexpr int64_t kPanelsPerProblem = 16; // 8 context + 8 candidates

enum class LossVariant : uint8_t { CrossEntropy = 0, Contrast = 1 };

LossVariant loss_variant_from_name(const std::string& name); // "ce" | "contrast"
std::string loss_variant_name(LossVariant v);

struct ModelConfig {
    EncoderConfig encoder;
    ContrastConfig contrast;
    FeatureReadout readout = FeatureReadout::ClassToken;
    std::string preset = "custom";

    void validate() const;
};

// "desk": the default training size. "tiny": small enough for exhaustive
// gradient checking.
ModelConfig desk_config();
ModelConfig tiny_config();
ModelConfig preset_config(const std::string& name);

struct ModelParams {
    EncoderParams encoder;
    ContrastParams contrast;
};

ModelParams init_model_params(const ModelConfig& cfg, uint64_t seed);

struct NamedTensor {
    std::string name;
    Tensor tensor; // aliases the parameter storage
};

// Trainable parameters in a fixed, documented order.
std::vector<NamedTensor> trainable_parameters(ModelParams& params);
// Non-trained state that still belongs in a checkpoint (running statistics).
std::vector<NamedTensor> state_tensors(ModelParams& params);

int64_t parameter_count(ModelParams& params);

// One problem's worth of raw panels; each span is W*W*C bytes, context first.
struct ProblemPanels {
    std::array<std::span<const uint8_t>, kPanelsPerProblem> panels;
};

// Scores for a batch of problems. Training mode couples the problems through
// the batch statistics inside h; eval mode scores each problem independently
// off the running statistics.
std::vector<Tensor> forward_scores(const std::vector<ProblemPanels>& batch, ModelParams& params,
                                   const ModelConfig& cfg, bool training);

// Mean per-problem loss over the batch under the chosen objective.
Tensor batch_loss(const std::vector<Tensor>& scores, const std::vector<int64_t>& answers,
                  LossVariant variant);

// Eval-mode scores for one problem (no recording).
std::array<double, kNumCandidates> score_problem(const ProblemPanels& problem,
                                                 ModelParams& params, const ModelConfig& cfg);

} // namespace vitcn
