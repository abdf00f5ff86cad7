#include "segfuse/projector.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "segfuse/errors.hpp"
#include "segfuse/ops.hpp"
#include "segfuse/rng.hpp"

namespace segfuse {

namespace {

std::string dims_str(const Dims& dm) {
  std::ostringstream os;
  os << "{T_v=" << dm.T_v << ", D=" << dm.D << ", T_c=" << dm.T_c
     << ", d=" << dm.d << ", d_R=" << dm.d_R << ", n_cls=" << dm.n_cls
     << ", g=" << dm.g << ", D_llm=" << dm.D_llm << ", d_s=" << dm.d_s << "}";
  return os.str();
}

enum class Init { ClassEmbedding, FanIn, AlphaConst };
enum class Group { Feature, Segmap, Projector };

struct TensorSpec {
  const char* name;
  std::vector<int64_t> shape;
  Init init;
  int64_t fan_in;  // FanIn only
  Group group;
};

// Single source of truth for which tensors a variant owns, their shapes,
// initialization, and canonical (checkpoint) order.
std::vector<TensorSpec> shape_table(const Dims& dm, const FusionVariant& v) {
  const FusionKind k = v.kind;
  const bool has_report = k != FusionKind::Baseline;
  const bool has_mix = k == FusionKind::LearnedMixing ||
                       k == FusionKind::WeightedAddition ||
                       k == FusionKind::Concatenation;

  std::vector<TensorSpec> specs;
  if (has_report) {
    specs.push_back({"C", {dm.T_c, dm.d}, Init::ClassEmbedding, 0, Group::Feature});
    specs.push_back({"W_R", {dm.d_R, dm.d}, Init::FanIn, dm.d_R, Group::Feature});
    specs.push_back({"b_R", {dm.d}, Init::FanIn, dm.d_R, Group::Feature});
  }
  if (k == FusionKind::Replace) {
    specs.push_back({"conv_w", {dm.D, dm.d, 3}, Init::FanIn, dm.d * 3, Group::Feature});
    specs.push_back({"conv_b", {dm.D}, Init::FanIn, dm.d * 3, Group::Feature});
    specs.push_back({"adapt_w", {dm.T_v, dm.T_c}, Init::FanIn, dm.T_c, Group::Feature});
  }
  if (has_mix) {
    specs.push_back({"lin1_w", {2 * dm.d, dm.D}, Init::FanIn, 2 * dm.d, Group::Feature});
    specs.push_back({"lin1_b", {dm.D}, Init::FanIn, 2 * dm.d, Group::Feature});
  }
  if (k == FusionKind::LearnedMixing) {
    specs.push_back({"lin2_w", {dm.D, dm.D}, Init::FanIn, dm.D, Group::Feature});
    specs.push_back({"lin2_b", {dm.D}, Init::FanIn, dm.D, Group::Feature});
  }
  if (k == FusionKind::WeightedAddition) {
    specs.push_back({"adapt_w", {dm.T_v, dm.T_c}, Init::FanIn, dm.T_c, Group::Feature});
    specs.push_back({"alpha", {1}, Init::AlphaConst, 0, Group::Feature});
  }
  if (v.use_segmaps) {
    specs.push_back({"cls_conv_w", {dm.T_c, dm.n_cls, 1}, Init::FanIn, dm.n_cls, Group::Segmap});
    specs.push_back({"cls_conv_b", {dm.T_c}, Init::FanIn, dm.n_cls, Group::Segmap});
    specs.push_back({"spatial_w", {dm.g * dm.g, dm.d_s}, Init::FanIn, dm.g * dm.g, Group::Segmap});
    specs.push_back({"spatial_b", {dm.d_s}, Init::FanIn, dm.g * dm.g, Group::Segmap});
    specs.push_back({"seg_lin_w", {dm.D + dm.d_s, dm.D}, Init::FanIn, dm.D + dm.d_s, Group::Segmap});
    specs.push_back({"seg_lin_b", {dm.D}, Init::FanIn, dm.D + dm.d_s, Group::Segmap});
  }
  specs.push_back({"p1_w", {dm.D, dm.D_llm}, Init::FanIn, dm.D, Group::Projector});
  specs.push_back({"p1_b", {dm.D_llm}, Init::FanIn, dm.D, Group::Projector});
  specs.push_back({"p2_w", {dm.D_llm, dm.D_llm}, Init::FanIn, dm.D_llm, Group::Projector});
  specs.push_back({"p2_b", {dm.D_llm}, Init::FanIn, dm.D_llm, Group::Projector});
  return specs;
}

TensorF* slot(ProjectorParams& p, const std::string& name) {
  if (name == "C") return &p.C;
  if (name == "W_R") return &p.W_R;
  if (name == "b_R") return &p.b_R;
  if (name == "conv_w") return &p.conv_w;
  if (name == "conv_b") return &p.conv_b;
  if (name == "adapt_w") return &p.adapt_w;
  if (name == "lin1_w") return &p.lin1_w;
  if (name == "lin1_b") return &p.lin1_b;
  if (name == "lin2_w") return &p.lin2_w;
  if (name == "lin2_b") return &p.lin2_b;
  if (name == "alpha") return &p.alpha;
  if (name == "cls_conv_w") return &p.cls_conv_w;
  if (name == "cls_conv_b") return &p.cls_conv_b;
  if (name == "spatial_w") return &p.spatial_w;
  if (name == "spatial_b") return &p.spatial_b;
  if (name == "seg_lin_w") return &p.seg_lin_w;
  if (name == "seg_lin_b") return &p.seg_lin_b;
  if (name == "p1_w") return &p.p1_w;
  if (name == "p1_b") return &p.p1_b;
  if (name == "p2_w") return &p.p2_w;
  if (name == "p2_b") return &p.p2_b;
  throw std::logic_error("unknown projector tensor: " + name);
}

void init_tensor(TensorF& t, const TensorSpec& spec, Rng& rng, double alpha_init) {
  t = zeros(spec.shape);
  switch (spec.init) {
    case Init::ClassEmbedding:
      for (double& x : t.data) x = rng.normal(0.0, 0.02);
      break;
    case Init::FanIn: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
      for (double& x : t.data) x = rng.uniform(-bound, bound);
      break;
    }
    case Init::AlphaConst:
      t.data[0] = alpha_init;
      break;
  }
}

int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t s : shape) n *= s;
  return n;
}

}  // namespace

Dims Dims::desk() { return {36, 64, 16, 32, 48, 20, 8, 64, 32}; }
Dims Dims::paper() { return {576, 1024, 256, 512, 2048, 212, 8, 4096, 256}; }

void Dims::validate() const {
  const struct { const char* name; int64_t v; } fields[] = {
      {"T_v", T_v}, {"D", D},         {"T_c", T_c},   {"d", d}, {"d_R", d_R},
      {"n_cls", n_cls}, {"g", g}, {"D_llm", D_llm}, {"d_s", d_s}};
  for (const auto& f : fields)
    if (f.v < 1)
      throw std::invalid_argument(std::string("dims: ") + f.name +
                                  " must be positive in " + dims_str(*this));
  if (T_c < 2)
    throw std::invalid_argument(
        "dims: T_c must be at least 2 (token statistics need two rows) in " +
        dims_str(*this));
}

const char* to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::Baseline: return "baseline";
    case FusionKind::Replace: return "replace";
    case FusionKind::LearnedMixing: return "learned-mixing";
    case FusionKind::WeightedAddition: return "weighted-addition";
    case FusionKind::Concatenation: return "concatenation";
  }
  throw std::logic_error("unreachable fusion kind");
}

FusionKind fusion_kind_from_string(const std::string& name) {
  for (FusionKind k : {FusionKind::Baseline, FusionKind::Replace,
                       FusionKind::LearnedMixing, FusionKind::WeightedAddition,
                       FusionKind::Concatenation})
    if (name == to_string(k)) return k;
  throw std::invalid_argument(
      "unknown fusion kind \"" + name +
      "\" (expected baseline, replace, learned-mixing, weighted-addition, or "
      "concatenation)");
}

void FusionVariant::validate() const {
  if (use_segmaps && kind != FusionKind::Concatenation)
    throw std::invalid_argument(
        std::string("segmentation tokens require the concatenation variant, "
                    "got ") +
        to_string(kind));
  if (!std::isfinite(alpha_init))
    throw std::invalid_argument("alpha_init must be finite");
}

int64_t fused_tokens(const Dims& dims, const FusionVariant& variant) {
  dims.validate();
  variant.validate();
  switch (variant.kind) {
    case FusionKind::Baseline:
    case FusionKind::Replace:
    case FusionKind::WeightedAddition:
      return dims.T_v;
    case FusionKind::LearnedMixing:
      return dims.T_v + dims.T_c;
    case FusionKind::Concatenation:
      return dims.T_v + (variant.use_segmaps ? 2 : 1) * dims.T_c;
  }
  throw std::logic_error("unreachable fusion kind");
}

std::vector<std::pair<std::string, TensorF*>> ProjectorParams::named_tensors() {
  std::vector<std::pair<std::string, TensorF*>> out;
  for (const auto& spec : shape_table(dims, variant))
    out.emplace_back(spec.name, slot(*this, spec.name));
  return out;
}

std::vector<std::pair<std::string, const TensorF*>> ProjectorParams::named_tensors()
    const {
  std::vector<std::pair<std::string, const TensorF*>> out;
  for (const auto& spec : shape_table(dims, variant))
    out.emplace_back(spec.name, slot(*const_cast<ProjectorParams*>(this), spec.name));
  return out;
}

int64_t ProjectorParams::n_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t->numel();
  return n;
}

ProjectorParams make_projector(const Dims& dims, const FusionVariant& variant,
                               std::uint64_t seed) {
  dims.validate();
  variant.validate();
  ProjectorParams p;
  p.dims = dims;
  p.variant = variant;
  Rng rng(seed);
  for (const auto& spec : shape_table(dims, variant))
    init_tensor(*slot(p, spec.name), spec, rng, variant.alpha_init);
  return p;
}

void add_segmap_branch(ProjectorParams& params, std::uint64_t seed) {
  if (params.variant.kind != FusionKind::Concatenation)
    throw std::invalid_argument(
        std::string("segmentation branch requires the concatenation variant, "
                    "got ") +
        to_string(params.variant.kind));
  if (params.variant.use_segmaps)
    throw std::invalid_argument("segmentation branch is already present");
  params.variant.use_segmaps = true;
  Rng rng(seed);
  for (const auto& spec : shape_table(params.dims, params.variant))
    if (spec.group == Group::Segmap)
      init_tensor(*slot(params, spec.name), spec, rng, params.variant.alpha_init);
}

ParamBudget count_params(const Dims& dims, const FusionVariant& variant,
                         double backbone_params) {
  dims.validate();
  variant.validate();
  if (!(backbone_params > 0))
    throw std::invalid_argument("backbone parameter count must be positive");
  ParamBudget budget;
  for (const auto& spec : shape_table(dims, variant)) {
    const int64_t n = numel_of(spec.shape);
    budget.tensors.emplace_back(spec.name, n);
    budget.total += n;
    switch (spec.group) {
      case Group::Feature: budget.feature += n; break;
      case Group::Segmap: budget.segmap += n; break;
      case Group::Projector: budget.projector += n; break;
    }
  }
  budget.added = budget.feature + budget.segmap;
  budget.added_fraction = static_cast<double>(budget.added) / backbone_params;
  budget.seg_over_feature =
      budget.segmap == 0 ? 0.0
                         : static_cast<double>(budget.segmap) /
                               static_cast<double>(budget.feature);
  return budget;
}

Var BoundProjector::at(const std::string& name) const {
  for (const auto& [n, v] : vars)
    if (n == name) return v;
  throw std::logic_error("projector tensor not bound: " + name);
}

BoundProjector bind(Tape& tape, const ProjectorParams& params) {
  BoundProjector bound;
  for (const auto& [name, t] : params.named_tensors())
    bound.vars.emplace_back(name, tape.input(*t));
  return bound;
}

TensorF pool_to_grid(const MaskStack& stack, int64_t g) {
  if (g < 1) throw std::invalid_argument("pool_to_grid: grid side must be positive");
  if (static_cast<int64_t>(stack.h) < g || static_cast<int64_t>(stack.w) < g)
    throw std::invalid_argument(
        "pool_to_grid: mask " + std::to_string(stack.h) + "x" +
        std::to_string(stack.w) + " is smaller than the " + std::to_string(g) +
        "x" + std::to_string(g) + " grid");
  const int64_t n_cls = stack.n_cls;
  TensorF out = zeros({n_cls, g * g});
  TensorF plane = zeros({stack.h, stack.w});
  for (int64_t c = 0; c < n_cls; ++c) {
    for (int y = 0; y < stack.h; ++y)
      for (int x = 0; x < stack.w; ++x)
        plane.data[static_cast<size_t>(y) * static_cast<size_t>(stack.w) + static_cast<size_t>(x)] =
            stack.get(static_cast<int>(c), y, x) ? 1.0 : 0.0;
    TensorF pooled = adaptive_avg_pool2d(plane, g, g);
    std::copy(pooled.data.begin(), pooled.data.end(),
              out.data.begin() + static_cast<size_t>(c * g * g));
  }
  return out;
}

Var stack_features(Tape& t, Var R_row, Var W_R, Var b_R, int64_t T_c) {
  if (T_c < 1)
    throw std::invalid_argument("stack_features: T_c must be positive");
  Var lifted = t.linear(R_row, W_R, b_R);  // [1, d]
  Var ones = t.input(full({T_c, 1}, 1.0));
  return t.matmul(ones, lifted);  // [T_c, d]
}

Var mix_base(Tape& t, Var C, Var R_stack, Var lin1_w, Var lin1_b) {
  return t.linear(t.concat_cols(C, R_stack), lin1_w, lin1_b);
}

Var fuse_replace(Tape& t, Var C, Var R_stack, Var conv_w, Var conv_b,
                 Var adapt_w) {
  Var styled = t.adain(C, R_stack);                              // [T_c, d]
  Var conv = t.conv1d(t.transpose(styled), conv_w, conv_b, 1, 1);  // [D, T_c]
  return t.matmul(adapt_w, t.transpose(conv));                   // [T_v, D]
}

Var fuse_learned_mixing(Tape& t, Var F_I, Var R_I, Var lin2_w, Var lin2_b) {
  return t.linear(t.concat_rows(F_I, R_I), lin2_w, lin2_b);
}

Var fuse_weighted_addition(Tape& t, Var F_I, Var R_I, Var adapt_w, Var alpha) {
  return t.add_scaled(F_I, t.matmul(adapt_w, R_I), alpha);
}

Var fuse_concat(Tape& t, Var F_I, Var R_I) { return t.concat_rows(F_I, R_I); }

Var pool_segmaps(Tape& t, Var S_grid, Var cls_conv_w, Var cls_conv_b,
                 Var spatial_w, Var spatial_b) {
  Var mixed = t.conv1d(S_grid, cls_conv_w, cls_conv_b, 1, 0);  // [T_c, g*g]
  return t.linear(mixed, spatial_w, spatial_b);                // [T_c, d_s]
}

Var fuse_segmap_tokens(Tape& t, Var R_I, Var S_loc, Var seg_lin_w,
                       Var seg_lin_b) {
  return t.linear(t.concat_cols(R_I, S_loc), seg_lin_w, seg_lin_b);
}

Var apply_output_mlp(Tape& t, Var H, Var p1_w, Var p1_b, Var p2_w, Var p2_b) {
  return t.linear(t.gelu(t.linear(H, p1_w, p1_b)), p2_w, p2_b);
}

Var projector_forward(Tape& t, const ProjectorParams& params,
                      const BoundProjector& bound, Var F_I, Var R_row,
                      std::optional<Var> S_grid) {
  params.variant.validate();
  if (params.variant.use_segmaps && !S_grid)
    throw std::invalid_argument(
        "projector_forward: variant uses segmaps but no segmentation grid was "
        "provided");
  if (!params.variant.use_segmaps && S_grid)
    throw std::invalid_argument(
        "projector_forward: segmentation grid provided but the variant does "
        "not consume it");

  Var H = F_I;
  if (params.variant.kind != FusionKind::Baseline) {
    Var R_stack = stack_features(t, R_row, bound.at("W_R"), bound.at("b_R"),
                                 params.dims.T_c);
    switch (params.variant.kind) {
      case FusionKind::Replace:
        H = fuse_replace(t, bound.at("C"), R_stack, bound.at("conv_w"),
                         bound.at("conv_b"), bound.at("adapt_w"));
        break;
      case FusionKind::LearnedMixing: {
        Var R_I = mix_base(t, bound.at("C"), R_stack, bound.at("lin1_w"),
                           bound.at("lin1_b"));
        H = fuse_learned_mixing(t, F_I, R_I, bound.at("lin2_w"),
                                bound.at("lin2_b"));
        break;
      }
      case FusionKind::WeightedAddition: {
        Var R_I = mix_base(t, bound.at("C"), R_stack, bound.at("lin1_w"),
                           bound.at("lin1_b"));
        H = fuse_weighted_addition(t, F_I, R_I, bound.at("adapt_w"),
                                   bound.at("alpha"));
        break;
      }
      case FusionKind::Concatenation: {
        Var R_I = mix_base(t, bound.at("C"), R_stack, bound.at("lin1_w"),
                           bound.at("lin1_b"));
        H = fuse_concat(t, F_I, R_I);
        if (params.variant.use_segmaps) {
          Var S_loc = pool_segmaps(t, *S_grid, bound.at("cls_conv_w"),
                                   bound.at("cls_conv_b"), bound.at("spatial_w"),
                                   bound.at("spatial_b"));
          Var S_I = fuse_segmap_tokens(t, R_I, S_loc, bound.at("seg_lin_w"),
                                       bound.at("seg_lin_b"));
          H = t.concat_rows(H, S_I);
        }
        break;
      }
      case FusionKind::Baseline:
        break;  // handled above
    }
  }
  return apply_output_mlp(t, H, bound.at("p1_w"), bound.at("p1_b"),
                          bound.at("p2_w"), bound.at("p2_b"));
}

namespace {

constexpr char kCkptMagic[4] = {'A', 'S', 'R', 'G'};
constexpr uint32_t kCkptVersion = 1;

uint32_t kind_to_wire(FusionKind k) {
  switch (k) {
    case FusionKind::Replace: return 0;
    case FusionKind::LearnedMixing: return 1;
    case FusionKind::WeightedAddition: return 2;
    case FusionKind::Concatenation: return 3;
    case FusionKind::Baseline: return 4;
  }
  throw std::logic_error("unreachable fusion kind");
}

FusionKind kind_from_wire(uint32_t w) {
  switch (w) {
    case 0: return FusionKind::Replace;
    case 1: return FusionKind::LearnedMixing;
    case 2: return FusionKind::WeightedAddition;
    case 3: return FusionKind::Concatenation;
    case 4: return FusionKind::Baseline;
  }
  throw IoError("checkpoint: unknown fusion kind code " + std::to_string(w));
}

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i)
    b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t take_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw IoError(std::string("checkpoint: truncated reading ") + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

double take_f64(std::istream& in, const char* what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw IoError(std::string("checkpoint: truncated reading ") + what);
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

uint32_t checked_u32_dim(int64_t v, const char* name) {
  if (v < 0 || v > static_cast<int64_t>(UINT32_MAX))
    throw std::invalid_argument(std::string("checkpoint: dimension ") + name +
                                " does not fit the format");
  return static_cast<uint32_t>(v);
}

}  // namespace

void write_checkpoint(const ProjectorParams& params, std::ostream& out) {
  params.dims.validate();
  params.variant.validate();
  out.write(kCkptMagic, 4);
  put_u32(out, kCkptVersion);
  const Dims& dm = params.dims;
  const struct { const char* name; int64_t v; } fields[] = {
      {"T_v", dm.T_v}, {"D", dm.D},         {"T_c", dm.T_c},   {"d", dm.d},
      {"d_R", dm.d_R}, {"n_cls", dm.n_cls}, {"g", dm.g},
      {"D_llm", dm.D_llm}, {"d_s", dm.d_s}};
  for (const auto& f : fields) put_u32(out, checked_u32_dim(f.v, f.name));
  put_u32(out, kind_to_wire(params.variant.kind));
  put_u32(out, params.variant.use_segmaps ? 1u : 0u);
  put_f64(out, params.variant.alpha_init);
  const auto named = params.named_tensors();
  put_u32(out, static_cast<uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tnsr(out, *t);
  }
  if (!out) throw IoError("checkpoint: write failed");
}

ProjectorParams read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4))
    throw IoError("checkpoint: truncated reading magic");
  if (std::memcmp(magic, kCkptMagic, 4) != 0)
    throw IoError("checkpoint: bad magic at byte offset 0");
  const uint32_t version = take_u32(in, "version");
  if (version != kCkptVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));

  Dims dm{};
  dm.T_v = take_u32(in, "T_v");
  dm.D = take_u32(in, "D");
  dm.T_c = take_u32(in, "T_c");
  dm.d = take_u32(in, "d");
  dm.d_R = take_u32(in, "d_R");
  dm.n_cls = take_u32(in, "n_cls");
  dm.g = take_u32(in, "g");
  dm.D_llm = take_u32(in, "D_llm");
  dm.d_s = take_u32(in, "d_s");

  FusionVariant variant;
  variant.kind = kind_from_wire(take_u32(in, "fusion kind"));
  const uint32_t seg = take_u32(in, "segmap flag");
  if (seg > 1)
    throw IoError("checkpoint: segmap flag must be 0 or 1, got " +
                  std::to_string(seg));
  variant.use_segmaps = seg == 1;
  variant.alpha_init = take_f64(in, "alpha_init");
  try {
    dm.validate();
    variant.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("checkpoint: invalid configuration: ") + e.what());
  }

  ProjectorParams params;
  params.dims = dm;
  params.variant = variant;
  const auto specs = shape_table(dm, variant);
  const uint32_t n_tensors = take_u32(in, "tensor count");
  if (n_tensors != specs.size())
    throw IoError("checkpoint: expected " + std::to_string(specs.size()) +
                  " tensors for this configuration, found " +
                  std::to_string(n_tensors));
  for (size_t i = 0; i < specs.size(); ++i) {
    const uint32_t name_len = take_u32(in, "tensor name length");
    if (name_len > 256)
      throw IoError("checkpoint: implausible tensor name length " +
                    std::to_string(name_len));
    std::string name(name_len, '\0');
    if (name_len > 0 && !in.read(name.data(), name_len))
      throw IoError("checkpoint: truncated reading tensor name");
    if (name != specs[i].name)
      throw IoError("checkpoint: tensor " + std::to_string(i) + " should be \"" +
                    specs[i].name + "\", found \"" + name + "\"");
    TensorF t = read_tnsr(in);
    if (t.shape != specs[i].shape)
      throw IoError("checkpoint: tensor \"" + name + "\" has unexpected shape");
    *slot(params, name) = std::move(t);
  }
  return params;
}

void save_checkpoint(const ProjectorParams& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing [" + path + "]");
  try {
    write_checkpoint(params, f);
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + " [" + path + "]");
  }
  f.flush();
  if (!f) throw IoError("checkpoint: write failed [" + path + "]");
}

ProjectorParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for reading [" + path + "]");
  try {
    return read_checkpoint(f);
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + " [" + path + "]");
  }
}

}  // namespace segfuse
