#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segfuse/metrics.hpp"
#include "segfuse/projector.hpp"
#include "segfuse/stats.hpp"
#include "segfuse/train.hpp"

namespace segfuse {

// What a run directory says about itself. The manifest goes to disk before
// any output it names, so a crashed run is recognizable by its missing
// files, and rerunning the same manifest reproduces the outputs bit for bit
// (timestamps aside).
struct RunManifest {
  std::string command;
  std::string config_hash;  // fnv1a of the config bytes, hex; "-" without one
  std::uint64_t seed = 0;
  std::string variant;
  std::vector<std::string> checkpoints;  // stage order
  std::vector<std::string> outputs;
  std::string created;  // UTC, ISO 8601
};
void write_manifest(const RunManifest& m, const std::string& dir);

// A checkpoint directory: projector.asrg plus decoder.{E,U,bias}.tnsr.
void save_pipeline(const PipelineParams& pipe, const std::string& dir);
PipelineParams load_pipeline(const std::string& dir);

// Training run description, read from the --config JSON. Every field has a
// default so {} is a valid config.
struct TrainSpec {
  int dataset_n = 64;
  std::uint64_t dataset_seed = 1;
  std::string dataset_path;  // when set, load instead of generating
  FusionKind kind = FusionKind::Concatenation;
  bool use_segmaps = false;  // true runs the two-stage recipe
  double alpha_init = 0.0;
  std::uint64_t branch_seed = 99;
  TrainConfig train;
  std::string config_hash = "-";  // filled in by parse_train_spec
};
TrainSpec parse_train_spec(const std::string& config_path);

RunManifest cmd_train(const TrainSpec& spec, const Dims& dims,
                      const std::string& out_dir);

// Scores a checkpoint against a stored dataset: generates one report per
// sample and writes eval.json. A shuffle seed permutes the segmentation
// planes the model sees (the ablation's broken-correspondence arm).
EvalSummary cmd_eval(const std::string& ckpt_dir,
                     const std::string& dataset_dir,
                     const std::string& out_dir, std::uint64_t seed,
                     std::optional<std::uint64_t> shuffle_seed = std::nullopt);

struct AblateResult {
  RunGroup sorted;    // clinical F1 per seed, masks in their natural order
  RunGroup shuffled;  // same seeds, planes permuted
  TestResult test;    // one-sided: sorted exceeds shuffled
};
AblateResult cmd_ablate_shuffle(const std::string& ckpt_dir,
                                const std::string& dataset_dir,
                                const std::string& out_dir,
                                const std::vector<std::uint64_t>& seeds);

// Group comparison table from a JSON file of scores:
// {groups: [{label, scores[]}], comparisons: [[labelA, labelB, sidedness]]}.
struct StatsOutput {
  std::string table;  // aligned text
  std::string json;   // same rows, machine-readable
};
StatsOutput cmd_stats(const std::string& json_path);

// Report/segmentation agreement per finding: the keyword labeler reads the
// report while presence() reads the mask stack, and each mapped finding
// lands in one of four agreement buckets. Findings without a configured
// mask class come back "unmapped".
struct GroundRow {
  std::string finding;
  std::string label;  // both-positive | report-only | segmentation-only |
                      // both-negative | unmapped
};
std::vector<GroundRow> cmd_ground(const std::string& report_path,
                                  const std::string& stack_path,
                                  const std::string& mapping_path = "");
std::string ground_table(const std::vector<GroundRow>& rows);
std::string ground_json(const std::vector<GroundRow>& rows);

// Walks every fusion variant at the given size: builds it, runs one seeded
// forward, and reports token counts, output shape, and the parameter bill.
std::string demo_fusion(const Dims& dims, std::uint64_t seed);

// End-to-end derivative verification for each variant, through the toy
// decoder loss. The battery that guards the training loop.
struct GradCheckSummary {
  bool pass = false;
  std::string report;
};
GradCheckSummary grad_check_all(const Dims& dims, std::uint64_t seed);

}  // namespace segfuse
