#include "segfuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "segfuse/ce_label.hpp"
#include "segfuse/errors.hpp"
#include "segfuse/ontology.hpp"
#include "segfuse/optim.hpp"
#include "segfuse/rng.hpp"
#include "segfuse/tape.hpp"

namespace segfuse {

namespace {

constexpr int kSuperclassCount = 20;
constexpr int kOntologyCount = 212;

// Builds the loss graph for one sample: project the multimodal prefix once,
// then average next-token cross-entropies over every report position plus
// the final end-of-sequence prediction.
Var sample_loss(Tape& t, const ProjectorParams& pp, const BoundProjector& bp,
                const BoundToyLM& bd, const SyntheticSample& s,
                const TensorF* S_grid, int eos) {
  Var f = t.input(s.F_I);
  TensorF r_row({1, s.R.dim(0)});
  r_row.data = s.R.data;
  Var r = t.input(std::move(r_row));
  std::optional<Var> sv;
  if (S_grid) sv = t.input(*S_grid);
  Var prefix = projector_forward(t, pp, bp, f, r, sv);

  std::vector<Var> losses;
  std::vector<int> ctx = s.prompt_ids;
  losses.reserve(s.report_ids.size() + 1);
  for (int target : s.report_ids) {
    losses.push_back(t.xent(toylm_logits(t, bd, prefix, ctx), target));
    ctx.push_back(target);
  }
  losses.push_back(t.xent(toylm_logits(t, bd, prefix, ctx), eos));
  return t.mean_scalars(losses);
}

}  // namespace

std::vector<std::pair<std::string, TensorF*>> PipelineParams::named_tensors() {
  std::vector<std::pair<std::string, TensorF*>> out;
  for (auto& [name, t] : projector.named_tensors())
    out.emplace_back("projector." + name, t);
  for (auto& [name, t] : decoder.named_tensors())
    out.emplace_back("decoder." + name, t);
  return out;
}

std::vector<bool> freeze_mask(Stage stage, PipelineParams& params) {
  const size_t n_proj = params.projector.named_tensors().size();
  const size_t n_total = n_proj + params.decoder.named_tensors().size();
  if (stage == Stage::Stage1) return std::vector<bool>(n_total, true);
  if (!params.projector.variant.use_segmaps)
    throw std::invalid_argument(
        "stage 2 before stage 1: the segmentation branch has not been added "
        "yet (train stage 1 and add the branch first)");
  std::vector<bool> mask(n_total, false);
  for (size_t i = 0; i < n_proj; ++i) mask[i] = true;
  return mask;
}

SplitIndices split_dataset(int n, std::uint64_t seed) {
  if (n < 3)
    throw std::invalid_argument("dataset of " + std::to_string(n) +
                                " cannot be split three ways");
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const int n_train = static_cast<int>(0.8 * n);
  const int n_val = static_cast<int>(0.1 * n);
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

SegGridder::SegGridder(const Dims& dims) : dims_(dims) {
  if (dims.n_cls == kSuperclassCount) {
    map_ = load_superclass_map();
    aggregate_ = true;
  } else if (dims.n_cls != kOntologyCount) {
    throw std::invalid_argument(
        "segmentation input expects n_cls of 212 (full classes) or 20 "
        "(superclasses), got " +
        std::to_string(dims.n_cls));
  }
}

TensorF SegGridder::grid(const MaskStack& masks,
                         std::optional<std::uint64_t> shuffle_seed) const {
  MaskStack stack = aggregate_ ? aggregate_superclasses(masks, map_) : masks;
  if (shuffle_seed) stack = shuffle_classes(stack, *shuffle_seed);
  return pool_to_grid(stack, dims_.g);
}

TrainResult train_stage(PipelineParams& params, const SyntheticDataset& ds,
                        const std::vector<int>& train_idx,
                        const TrainConfig& cfg, Stage stage, int step_offset) {
  if (train_idx.empty())
    throw std::invalid_argument("training needs at least one sample");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("batch size must be positive");
  if (cfg.epochs_per_stage < 1)
    throw std::invalid_argument("need at least one epoch");
  params.projector.dims.validate();
  if (params.projector.dims.D_llm != params.decoder.D_llm)
    throw std::invalid_argument("projector output width " +
                                std::to_string(params.projector.dims.D_llm) +
                                " does not match decoder width " +
                                std::to_string(params.decoder.D_llm));

  const std::vector<bool> trainable = freeze_mask(stage, params);
  auto named = params.named_tensors();
  std::vector<TensorF*> tensors;
  std::vector<const TensorF*> tensors_const;
  for (auto& [name, t] : named) {
    tensors.push_back(t);
    tensors_const.push_back(t);
  }

  const bool use_seg = params.projector.variant.use_segmaps;
  SegGridder gridder(params.projector.dims);
  std::vector<TensorF> grids;
  if (use_seg) {
    grids.reserve(train_idx.size());
    for (int idx : train_idx)
      grids.push_back(gridder.grid(ds.samples[static_cast<size_t>(idx)].masks));
  }

  const int steps_per_epoch = static_cast<int>(
      (train_idx.size() + static_cast<size_t>(cfg.batch_size) - 1) /
      static_cast<size_t>(cfg.batch_size));
  const int total = steps_per_epoch * cfg.epochs_per_stage;
  OptimState opt =
      OptimState::create(tensors_const, cfg.base_lr, cfg.warmup_ratio, total);

  const bool track_alpha =
      params.projector.variant.kind == FusionKind::WeightedAddition;
  Rng order_rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(stage));

  TrainResult result;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
    std::vector<size_t> order(train_idx.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(),
                                  begin + static_cast<size_t>(cfg.batch_size));
      Tape t;
      BoundProjector bp = bind(t, params.projector);
      BoundToyLM bd = bind(t, params.decoder);
      std::vector<Var> batch_losses;
      for (size_t k = begin; k < end; ++k) {
        const size_t pos = order[k];
        const SyntheticSample& s = ds.samples[static_cast<size_t>(train_idx[pos])];
        batch_losses.push_back(sample_loss(t, params.projector, bp, bd, s,
                                           use_seg ? &grids[pos] : nullptr,
                                           ds.vocab.eos()));
      }
      Var loss = t.mean_scalars(batch_losses);
      const double loss_value = t.val(loss).data[0];
      if (!std::isfinite(loss_value))
        throw std::runtime_error("training diverged: loss is not finite at step " +
                                 std::to_string(step_offset + step));
      t.backward(loss);

      std::vector<const TensorF*> grads;
      grads.reserve(named.size());
      for (auto& [name, var] : bp.vars) grads.push_back(&t.grad(var));
      grads.push_back(&t.grad(bd.E));
      grads.push_back(&t.grad(bd.U));
      grads.push_back(&t.grad(bd.bias));

      const double lr = adam_step(opt, tensors, grads, trainable);
      result.curve.push_back(
          {step_offset + step, static_cast<int>(stage), lr, loss_value});
      if (track_alpha) result.alpha_trace.push_back(params.projector.alpha.data[0]);
      ++step;
    }
  }
  result.initial_loss = result.curve.front().loss;
  result.final_loss = result.curve.back().loss;
  return result;
}

TwoStageResult train_two_stage(PipelineParams& params,
                               const SyntheticDataset& ds,
                               const TrainConfig& cfg,
                               std::uint64_t branch_seed) {
  if (params.projector.variant.kind != FusionKind::Concatenation ||
      params.projector.variant.use_segmaps)
    throw std::invalid_argument(
        "the two-stage recipe starts from a features-only concatenation "
        "projector");
  TwoStageResult out;
  out.split = split_dataset(static_cast<int>(ds.samples.size()), cfg.seed);
  out.stage1 = train_stage(params, ds, out.split.train, cfg, Stage::Stage1);
  add_segmap_branch(params.projector, branch_seed);
  out.stage2 = train_stage(params, ds, out.split.train, cfg, Stage::Stage2,
                           static_cast<int>(out.stage1.curve.size()));
  return out;
}

void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open loss curve for writing [" + path + "]");
  f << "step,stage,lr,loss\n";
  for (const LossRow& r : rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%d,%d,%.10g,%.10g\n", r.step, r.stage,
                  r.lr, r.loss);
    f << line;
  }
  if (!f) throw IoError("loss curve write failed [" + path + "]");
}

EvalOutput evaluate_model(const PipelineParams& params,
                          const SyntheticDataset& ds,
                          const std::vector<int>& idx, const GenConfig& gen,
                          std::uint64_t seed,
                          std::optional<std::uint64_t> shuffle_seed) {
  if (idx.empty()) throw std::invalid_argument("evaluation needs samples");
  const bool use_seg = params.projector.variant.use_segmaps;
  SegGridder gridder(params.projector.dims);
  const CeLexicon lex = load_ce_lexicon();
  const Rng root(seed);

  EvalOutput out;
  std::vector<CEVector> preds, golds;
  for (size_t k = 0; k < idx.size(); ++k) {
    const SyntheticSample& s = ds.samples[static_cast<size_t>(idx[k])];
    Tape t;
    BoundProjector bp = bind(t, params.projector);
    Var f = t.input(s.F_I);
    TensorF r_row({1, s.R.dim(0)});
    r_row.data = s.R.data;
    Var r = t.input(std::move(r_row));
    std::optional<Var> sv;
    if (use_seg) sv = t.input(gridder.grid(s.masks, shuffle_seed));
    Var prefix = projector_forward(t, params.projector, bp, f, r, sv);

    const std::vector<int> ids =
        generate_tokens(params.decoder, t.val(prefix), s.prompt_ids,
                        ds.vocab.eos(), gen, root.fork(k).next_u64());
    const std::string text = ds.vocab.decode(ids);
    out.generated.push_back(text);
    preds.push_back(keyword_labeler(text, lex));
    golds.push_back(s.z);
  }
  const CeScores scores = ce_scores(preds, golds);
  out.ce_precision = scores.precision;
  out.ce_recall = scores.recall;
  out.ce_f1 = scores.f1;
  return out;
}

}  // namespace segfuse
