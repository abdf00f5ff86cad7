#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "segfuse/projector.hpp"
#include "segfuse/segstack.hpp"
#include "segfuse/synthetic.hpp"
#include "segfuse/toylm.hpp"

namespace segfuse {

struct TrainConfig {
  double base_lr = 1e-3;      // desk-scale default; full-scale runs use 2e-5
  double warmup_ratio = 0.03;
  int batch_size = 8;
  int epochs_per_stage = 1;
  std::uint64_t seed = 0;
};

enum class Stage { Stage1 = 1, Stage2 = 2 };

// Everything the optimizer touches: projector first, then the toy decoder,
// each under a qualified name ("projector.C", "decoder.E", ...).
struct PipelineParams {
  ProjectorParams projector;
  ToyLMParams decoder;

  std::vector<std::pair<std::string, TensorF*>> named_tensors();
};

// Trainable flags aligned with PipelineParams::named_tensors(). Stage 1
// trains everything; stage 2 trains the projector only with the decoder
// frozen, and requires the segmentation branch to already exist (running
// stage 2 before stage 1 is a sequencing error).
std::vector<bool> freeze_mask(Stage stage, PipelineParams& params);

// Seeded 80/10/10 split of [0, n).
struct SplitIndices {
  std::vector<int> train, val, test;
};
SplitIndices split_dataset(int n, std::uint64_t seed);

// Adapts full-ontology masks to the projector's segmentation input:
// n_cls == 212 pools the raw stack, n_cls == 20 aggregates superclasses
// first. An optional shuffle seed permutes class planes before pooling
// (the ablation knob).
class SegGridder {
 public:
  explicit SegGridder(const Dims& dims);
  TensorF grid(const MaskStack& masks,
               std::optional<std::uint64_t> shuffle_seed = std::nullopt) const;

 private:
  Dims dims_;
  SuperclassMap map_;
  bool aggregate_ = false;
};

struct LossRow {
  int step;  // global step index across stages
  int stage;
  double lr;
  double loss;
};

struct TrainResult {
  std::vector<LossRow> curve;
  std::vector<double> alpha_trace;  // post-update gate values, WeightedAddition only
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// One optimization stage over the train split (mutates params). Aborts with
// the step index if the loss stops being finite.
TrainResult train_stage(PipelineParams& params, const SyntheticDataset& ds,
                        const std::vector<int>& train_idx,
                        const TrainConfig& cfg, Stage stage,
                        int step_offset = 0);

struct TwoStageResult {
  TrainResult stage1, stage2;
  SplitIndices split;
};

// The two-stage recipe: stage 1 trains the features-only concatenation
// pipeline end to end; then the segmentation branch is added (freshly
// initialized from branch_seed) and stage 2 trains the projector alone.
TwoStageResult train_two_stage(PipelineParams& params,
                               const SyntheticDataset& ds,
                               const TrainConfig& cfg,
                               std::uint64_t branch_seed);

void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows);

// Generates a report per selected sample and scores it against the known
// finding vector with the keyword labeler.
struct EvalOutput {
  double ce_precision = 0.0;
  double ce_recall = 0.0;
  double ce_f1 = 0.0;
  std::vector<std::string> generated;  // aligned with idx
};
EvalOutput evaluate_model(const PipelineParams& params,
                          const SyntheticDataset& ds,
                          const std::vector<int>& idx, const GenConfig& gen,
                          std::uint64_t seed,
                          std::optional<std::uint64_t> shuffle_seed = std::nullopt);

}  // namespace segfuse
