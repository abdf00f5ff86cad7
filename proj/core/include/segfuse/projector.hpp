#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "segfuse/segstack.hpp"
#include "segfuse/tape.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse {

// Segmentation-assisted fusion projector.
//
// The module takes the vision tower's token grid F_I [T_v, D], a per-image
// report feature row R [1, d_R], and optionally a pooled segmentation grid
// S_grid [n_cls, g*g], fuses them into a single token sequence, and maps the
// result through a two-layer MLP into decoder embedding space [T_out, D_llm].
// Forward passes are built per sample on a Tape so the whole projector is
// trainable end to end; batching is a loop one level up.
//
// Fusion variants share a common report path: R is lifted to d dims, tiled
// over T_c rows ("R_stack"), and for most variants mixed with a learned class
// embedding C [T_c, d] through a first linear layer into R_I [T_c, D].
//   Baseline          tokens = F_I                          T_out = T_v
//   Replace           tokens = Adapt(Conv1d(AdaIN(C, R_stack)))   T_v
//   LearnedMixing     tokens = Lin2(CAT_rows(F_I, R_I))     T_v + T_c
//   WeightedAddition  tokens = F_I + alpha * Adapt(R_I)     T_v
//   Concatenation     tokens = CAT_rows(F_I, R_I)           T_v + T_c
// With use_segmaps (Concatenation only) a pooled segmentation embedding
// S_I [T_c, D] is appended as well, giving T_out = T_v + 2*T_c.

struct Dims {
  int64_t T_v;    // vision tokens
  int64_t D;      // vision embedding width
  int64_t T_c;    // class-embedding tokens
  int64_t d;      // class-embedding width
  int64_t d_R;    // report feature width
  int64_t n_cls;  // segmentation classes
  int64_t g;      // pooled segmentation grid side
  int64_t D_llm;  // decoder embedding width
  int64_t d_s;    // pooled segmentation embedding width

  // Small configuration that a laptop can train and gradient-check.
  static Dims desk();
  // Full-scale configuration used for parameter accounting.
  static Dims paper();

  void validate() const;
};

enum class FusionKind {
  Baseline,
  Replace,
  LearnedMixing,
  WeightedAddition,
  Concatenation,
};

const char* to_string(FusionKind kind);
FusionKind fusion_kind_from_string(const std::string& name);

struct FusionVariant {
  FusionKind kind = FusionKind::Concatenation;
  bool use_segmaps = false;
  double alpha_init = 0.0;  // WeightedAddition only; stored exactly

  void validate() const;  // use_segmaps requires Concatenation
};

// Token count of the fused sequence before the output MLP (which preserves it).
int64_t fused_tokens(const Dims& dims, const FusionVariant& variant);

// Parameter store. Only the tensors a variant actually uses are allocated;
// the rest stay empty. Tensor identities, shapes, and their serialization
// order all come from one shape table so construction, parameter counting,
// and checkpoints cannot drift apart.
struct ProjectorParams {
  Dims dims{};
  FusionVariant variant{};

  TensorF C;                        // [T_c, d] learned class embedding
  TensorF W_R, b_R;                 // [d_R, d], [d] report lift
  TensorF conv_w, conv_b;           // [D, d, 3], [D] Replace conv, pad 1
  TensorF adapt_w;                  // [T_v, T_c] token adapter (no bias)
  TensorF lin1_w, lin1_b;           // [2d, D], [D] first mixing layer
  TensorF lin2_w, lin2_b;           // [D, D], [D] LearnedMixing second layer
  TensorF alpha;                    // [1] WeightedAddition gate
  TensorF cls_conv_w, cls_conv_b;   // [T_c, n_cls, 1], [T_c] class mixing
  TensorF spatial_w, spatial_b;     // [g*g, d_s], [d_s] spatial embedding
  TensorF seg_lin_w, seg_lin_b;     // [D + d_s, D], [D] segmap token layer
  TensorF p1_w, p1_b;               // [D, D_llm], [D_llm] output MLP
  TensorF p2_w, p2_b;               // [D_llm, D_llm], [D_llm]

  // Allocated tensors in canonical (checkpoint) order.
  std::vector<std::pair<std::string, TensorF*>> named_tensors();
  std::vector<std::pair<std::string, const TensorF*>> named_tensors() const;
  int64_t n_params() const;
};

// Seeded construction. A single generator walks the canonical tensor order:
// C is drawn N(0, 0.02), alpha is set to alpha_init exactly, and every other
// weight and bias is uniform in +-1/sqrt(fan_in).
ProjectorParams make_projector(const Dims& dims, const FusionVariant& variant,
                               std::uint64_t seed);

// Allocates and freshly initializes the segmentation branch of an existing
// Concatenation projector (second training stage). All other tensors keep
// their values. Errors if the branch is already present or the variant
// cannot carry one.
void add_segmap_branch(ProjectorParams& params, std::uint64_t seed);

// Parameter accounting relative to a frozen backbone.
struct ParamBudget {
  std::vector<std::pair<std::string, int64_t>> tensors;
  int64_t feature = 0;    // class embedding + report mixing path
  int64_t segmap = 0;     // segmentation branch
  int64_t projector = 0;  // output MLP (replaces the stock projector)
  int64_t total = 0;
  int64_t added = 0;      // feature + segmap; the MLP is not counted as added
  double added_fraction = 0.0;
  double seg_over_feature = 0.0;  // 0 when there is no segmentation branch
};
ParamBudget count_params(const Dims& dims, const FusionVariant& variant,
                         double backbone_params = 7.06e9);

// Registers every allocated tensor as a tape input, preserving order.
struct BoundProjector {
  std::vector<std::pair<std::string, Var>> vars;
  Var at(const std::string& name) const;  // throws if the tensor is absent
};
BoundProjector bind(Tape& tape, const ProjectorParams& params);

// Average-pools each class plane of a mask stack to a g*g grid, flattened
// row-major: [n_cls, g*g]. Requires h >= g and w >= g.
TensorF pool_to_grid(const MaskStack& stack, int64_t g);

// Fusion sub-ops, exposed so each stage is testable in isolation.
// All shapes are as documented on ProjectorParams.
Var stack_features(Tape& t, Var R_row, Var W_R, Var b_R, int64_t T_c);
Var mix_base(Tape& t, Var C, Var R_stack, Var lin1_w, Var lin1_b);
Var fuse_replace(Tape& t, Var C, Var R_stack, Var conv_w, Var conv_b,
                 Var adapt_w);
Var fuse_learned_mixing(Tape& t, Var F_I, Var R_I, Var lin2_w, Var lin2_b);
Var fuse_weighted_addition(Tape& t, Var F_I, Var R_I, Var adapt_w, Var alpha);
Var fuse_concat(Tape& t, Var F_I, Var R_I);
Var pool_segmaps(Tape& t, Var S_grid, Var cls_conv_w, Var cls_conv_b,
                 Var spatial_w, Var spatial_b);
Var fuse_segmap_tokens(Tape& t, Var R_I, Var S_loc, Var seg_lin_w,
                       Var seg_lin_b);
Var apply_output_mlp(Tape& t, Var H, Var p1_w, Var p1_b, Var p2_w, Var p2_b);

// Full forward for one sample: F_I [T_v, D], R_row [1, d_R], and S_grid
// [n_cls, g*g] (required exactly when the variant uses segmaps). Returns
// projected tokens [T_out, D_llm].
Var projector_forward(Tape& t, const ProjectorParams& params,
                      const BoundProjector& bound, Var F_I, Var R_row,
                      std::optional<Var> S_grid = std::nullopt);

// Checkpoint serialization. The format freezes dims, variant, and every
// tensor by name in canonical order; tensor payloads are stored in f32, so
// saving once quantizes and further save/load round trips are bit-exact.
void write_checkpoint(const ProjectorParams& params, std::ostream& out);
ProjectorParams read_checkpoint(std::istream& in);
void save_checkpoint(const ProjectorParams& params, const std::string& path);
ProjectorParams load_checkpoint(const std::string& path);

}  // namespace segfuse
