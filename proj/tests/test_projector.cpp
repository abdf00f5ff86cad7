#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "segfuse/errors.hpp"
#include "segfuse/grad_check.hpp"
#include "segfuse/projector.hpp"
#include "segfuse/rng.hpp"
#include "segfuse/segstack.hpp"
#include "segfuse/tape.hpp"

using namespace segfuse;

namespace {

TensorF randn(Rng& rng, std::vector<int64_t> shape, double scale = 1.0) {
  TensorF t(std::move(shape));
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

// Small enough that finite differencing every parameter stays fast.
Dims tiny_dims() { return {5, 6, 3, 4, 4, 7, 2, 6, 4}; }

MaskStack varied_stack(int n_cls, int h, int w, std::uint64_t seed) {
  MaskStack stack = MaskStack::zeros(n_cls, h, w);
  Rng rng(seed);
  for (int c = 0; c < n_cls; ++c) {
    const double p = 0.1 + 0.8 * static_cast<double>(c) / n_cls;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (rng.bernoulli(p)) stack.set(c, y, x, true);
  }
  return stack;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("dimension presets validate and fused token counts follow the variant") {
  CHECK_NOTHROW(Dims::desk().validate());
  CHECK_NOTHROW(Dims::paper().validate());

  const Dims dm = Dims::desk();
  CHECK(fused_tokens(dm, {FusionKind::Baseline, false, 0.0}) == 36);
  CHECK(fused_tokens(dm, {FusionKind::Replace, false, 0.0}) == 36);
  CHECK(fused_tokens(dm, {FusionKind::LearnedMixing, false, 0.0}) == 52);
  CHECK(fused_tokens(dm, {FusionKind::WeightedAddition, false, 0.0}) == 36);
  CHECK(fused_tokens(dm, {FusionKind::Concatenation, false, 0.0}) == 52);
  CHECK(fused_tokens(dm, {FusionKind::Concatenation, true, 0.0}) == 68);

  Dims bad = dm;
  bad.T_c = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = dm;
  bad.D = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("segmap tokens are rejected outside the concatenation variant") {
  for (FusionKind k : {FusionKind::Baseline, FusionKind::Replace,
                       FusionKind::LearnedMixing, FusionKind::WeightedAddition}) {
    FusionVariant v{k, true, 0.0};
    CHECK_THROWS_AS(v.validate(), std::invalid_argument);
  }
  CHECK_NOTHROW(FusionVariant{FusionKind::Concatenation, true, 0.0}.validate());
  FusionVariant nan_alpha{FusionKind::WeightedAddition, false,
                          std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(nan_alpha.validate(), std::invalid_argument);
}

TEST_CASE("fusion kind names round-trip and reject unknowns") {
  for (FusionKind k : {FusionKind::Baseline, FusionKind::Replace,
                       FusionKind::LearnedMixing, FusionKind::WeightedAddition,
                       FusionKind::Concatenation})
    CHECK(fusion_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(fusion_kind_from_string("attention"), std::invalid_argument);
}

TEST_CASE("each variant allocates exactly its own tensors") {
  const Dims dm = tiny_dims();
  auto names = [&](const FusionVariant& v) {
    std::vector<std::string> out;
    auto p = make_projector(dm, v, 1);
    for (const auto& [name, t] : p.named_tensors()) {
      CHECK(t->numel() > 0);
      out.push_back(name);
    }
    return out;
  };

  CHECK(names({FusionKind::Baseline, false, 0.0}) ==
        std::vector<std::string>{"p1_w", "p1_b", "p2_w", "p2_b"});
  CHECK(names({FusionKind::Replace, false, 0.0}) ==
        std::vector<std::string>{"C", "W_R", "b_R", "conv_w", "conv_b",
                                 "adapt_w", "p1_w", "p1_b", "p2_w", "p2_b"});
  CHECK(names({FusionKind::LearnedMixing, false, 0.0}) ==
        std::vector<std::string>{"C", "W_R", "b_R", "lin1_w", "lin1_b",
                                 "lin2_w", "lin2_b", "p1_w", "p1_b", "p2_w",
                                 "p2_b"});
  CHECK(names({FusionKind::WeightedAddition, false, 0.0}) ==
        std::vector<std::string>{"C", "W_R", "b_R", "lin1_w", "lin1_b",
                                 "adapt_w", "alpha", "p1_w", "p1_b", "p2_w",
                                 "p2_b"});
  CHECK(names({FusionKind::Concatenation, false, 0.0}) ==
        std::vector<std::string>{"C", "W_R", "b_R", "lin1_w", "lin1_b", "p1_w",
                                 "p1_b", "p2_w", "p2_b"});
  CHECK(names({FusionKind::Concatenation, true, 0.0}) ==
        std::vector<std::string>{"C", "W_R", "b_R", "lin1_w", "lin1_b",
                                 "cls_conv_w", "cls_conv_b", "spatial_w",
                                 "spatial_b", "seg_lin_w", "seg_lin_b", "p1_w",
                                 "p1_b", "p2_w", "p2_b"});
}

TEST_CASE("construction is seeded: same seed bit-identical, alpha stored exactly") {
  const Dims dm = tiny_dims();
  const FusionVariant v{FusionKind::WeightedAddition, false, 0.375};
  auto a = make_projector(dm, v, 42);
  auto b = make_projector(dm, v, 42);
  auto c = make_projector(dm, v, 43);

  auto an = a.named_tensors();
  auto bn = b.named_tensors();
  bool all_equal = true;
  for (size_t i = 0; i < an.size(); ++i)
    all_equal = all_equal && bitwise_equal(*an[i].second, *bn[i].second);
  CHECK(all_equal);
  CHECK(a.alpha.data[0] == 0.375);
  CHECK_FALSE(bitwise_equal(a.C, c.C));

  // Uniform init stays inside the +-1/sqrt(fan_in) bound; W_R has fan_in d_R.
  const double bound = 1.0 / std::sqrt(static_cast<double>(dm.d_R));
  for (double w : a.W_R.data) CHECK(std::abs(w) <= bound);
}

TEST_CASE("report row is lifted and tiled over the class-token axis") {
  Tape t;
  Var r = t.input(from_values({1, 2}, {1.0, 2.0}));
  Var W = t.input(from_values({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  Var b = t.input(from_values({2}, {0.0, 0.0}));
  Var stacked = stack_features(t, r, W, b, 3);
  CHECK(t.val(stacked).shape == std::vector<int64_t>{3, 2});
  for (int row = 0; row < 3; ++row) {
    CHECK(t.val(stacked)(row, 0) == doctest::Approx(1.0));
    CHECK(t.val(stacked)(row, 1) == doctest::Approx(2.0));
  }
}

TEST_CASE("mixing layer on a one-token toy gives the hand-computed value") {
  Tape t;
  Var C = t.input(from_values({1, 1}, {1.0}));
  Var R = t.input(from_values({1, 1}, {2.0}));
  Var W = t.input(from_values({2, 1}, {1.0, 1.0}));
  Var b = t.input(from_values({1}, {0.0}));
  Var out = mix_base(t, C, R, W, b);
  CHECK(t.val(out).shape == std::vector<int64_t>{1, 1});
  CHECK(t.val(out)(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("concatenation fusion keeps the vision tokens bit-exact up front") {
  const Dims dm = tiny_dims();
  auto params = make_projector(dm, {FusionKind::Concatenation, true, 0.0}, 9);
  Rng rng(90);
  TensorF F_I = randn(rng, {dm.T_v, dm.D});
  TensorF R = randn(rng, {1, dm.d_R});
  TensorF S = pool_to_grid(varied_stack(static_cast<int>(dm.n_cls), 8, 8, 4), dm.g);

  Tape t;
  auto bound = bind(t, params);
  Var f = t.input(F_I);
  Var r = t.input(R);
  Var R_stack = stack_features(t, r, bound.at("W_R"), bound.at("b_R"), dm.T_c);
  Var R_I = mix_base(t, bound.at("C"), R_stack, bound.at("lin1_w"),
                     bound.at("lin1_b"));
  Var H = fuse_concat(t, f, R_I);
  Var S_loc = pool_segmaps(t, t.input(S), bound.at("cls_conv_w"),
                           bound.at("cls_conv_b"), bound.at("spatial_w"),
                           bound.at("spatial_b"));
  Var S_I = fuse_segmap_tokens(t, R_I, S_loc, bound.at("seg_lin_w"),
                               bound.at("seg_lin_b"));
  Var H_seg = t.concat_rows(H, S_I);

  CHECK(t.val(H).shape == std::vector<int64_t>{dm.T_v + dm.T_c, dm.D});
  CHECK(t.val(H_seg).shape == std::vector<int64_t>{dm.T_v + 2 * dm.T_c, dm.D});
  CHECK(t.val(S_loc).shape == std::vector<int64_t>{dm.T_c, dm.d_s});

  bool front_exact = true, mid_exact = true, seg_front_exact = true;
  for (int64_t i = 0; i < dm.T_v; ++i)
    for (int64_t j = 0; j < dm.D; ++j)
      front_exact = front_exact && t.val(H)(i, j) == F_I(i, j);
  for (int64_t i = 0; i < dm.T_c; ++i)
    for (int64_t j = 0; j < dm.D; ++j)
      mid_exact = mid_exact && t.val(H)(dm.T_v + i, j) == t.val(R_I)(i, j);
  for (int64_t i = 0; i < dm.T_v + dm.T_c; ++i)
    for (int64_t j = 0; j < dm.D; ++j)
      seg_front_exact = seg_front_exact && t.val(H_seg)(i, j) == t.val(H)(i, j);
  CHECK(front_exact);
  CHECK(mid_exact);
  CHECK(seg_front_exact);
}

TEST_CASE("weighted addition with a zero gate reproduces the vision path bit-exactly") {
  const Dims dm = tiny_dims();
  auto params = make_projector(dm, {FusionKind::WeightedAddition, false, 0.0}, 17);
  REQUIRE(params.alpha.data[0] == 0.0);
  Rng rng(170);
  TensorF F_I = randn(rng, {dm.T_v, dm.D});
  TensorF R = randn(rng, {1, dm.d_R});

  Tape t;
  auto bound = bind(t, params);
  Var f = t.input(F_I);
  Var r = t.input(R);
  Var out = projector_forward(t, params, bound, f, r);
  Var ref = apply_output_mlp(t, f, bound.at("p1_w"), bound.at("p1_b"),
                             bound.at("p2_w"), bound.at("p2_b"));
  CHECK(bitwise_equal(t.val(out), t.val(ref)));
}

TEST_CASE("learned mixing with identity second layer reduces to plain concatenation") {
  const Dims dm = tiny_dims();
  auto params = make_projector(dm, {FusionKind::LearnedMixing, false, 0.0}, 23);
  params.lin2_w = zeros({dm.D, dm.D});
  for (int64_t i = 0; i < dm.D; ++i) params.lin2_w(i, i) = 1.0;
  params.lin2_b = zeros({dm.D});

  Rng rng(230);
  TensorF F_I = randn(rng, {dm.T_v, dm.D});
  TensorF R = randn(rng, {1, dm.d_R});

  Tape t;
  auto bound = bind(t, params);
  Var f = t.input(F_I);
  Var r = t.input(R);
  Var R_stack = stack_features(t, r, bound.at("W_R"), bound.at("b_R"), dm.T_c);
  Var R_I = mix_base(t, bound.at("C"), R_stack, bound.at("lin1_w"),
                     bound.at("lin1_b"));
  Var mixed = fuse_learned_mixing(t, f, R_I, bound.at("lin2_w"),
                                  bound.at("lin2_b"));
  Var plain = fuse_concat(t, f, R_I);
  CHECK(bitwise_equal(t.val(mixed), t.val(plain)));
}

TEST_CASE("replace fusion produces the vision token count from class tokens alone") {
  const Dims dm = tiny_dims();
  auto params = make_projector(dm, {FusionKind::Replace, false, 0.0}, 31);
  Rng rng(310);
  TensorF F_I = randn(rng, {dm.T_v, dm.D});
  TensorF R = randn(rng, {1, dm.d_R});

  Tape t;
  auto bound = bind(t, params);
  Var out = projector_forward(t, params, bound, t.input(F_I), t.input(R));
  CHECK(t.val(out).shape == std::vector<int64_t>{dm.T_v, dm.D_llm});

  // The replaced path never reads F_I, so a different image must not move it.
  Tape t2;
  auto bound2 = bind(t2, params);
  TensorF other = randn(rng, {dm.T_v, dm.D});
  Var out2 = projector_forward(t2, params, bound2, t2.input(other), t2.input(R));
  CHECK(bitwise_equal(t.val(out), t2.val(out2)));
}

TEST_CASE("forward output shapes follow the fused token count for every variant") {
  const Dims dm = tiny_dims();
  Rng rng(55);
  TensorF F_I = randn(rng, {dm.T_v, dm.D});
  TensorF R = randn(rng, {1, dm.d_R});
  TensorF S = pool_to_grid(varied_stack(static_cast<int>(dm.n_cls), 8, 8, 6), dm.g);

  for (const FusionVariant v :
       {FusionVariant{FusionKind::Baseline, false, 0.0},
        FusionVariant{FusionKind::Replace, false, 0.0},
        FusionVariant{FusionKind::LearnedMixing, false, 0.0},
        FusionVariant{FusionKind::WeightedAddition, false, 0.5},
        FusionVariant{FusionKind::Concatenation, false, 0.0},
        FusionVariant{FusionKind::Concatenation, true, 0.0}}) {
    CAPTURE(to_string(v.kind));
    auto params = make_projector(dm, v, 77);
    Tape t;
    auto bound = bind(t, params);
    std::optional<Var> s;
    if (v.use_segmaps) s = t.input(S);
    Var out = projector_forward(t, params, bound, t.input(F_I), t.input(R), s);
    CHECK(t.val(out).shape ==
          std::vector<int64_t>{fused_tokens(dm, v), dm.D_llm});
  }
}

TEST_CASE("forward rejects a mismatched segmentation argument") {
  const Dims dm = tiny_dims();
  Rng rng(66);
  TensorF F_I = randn(rng, {dm.T_v, dm.D});
  TensorF R = randn(rng, {1, dm.d_R});
  TensorF S = pool_to_grid(varied_stack(static_cast<int>(dm.n_cls), 8, 8, 2), dm.g);

  auto seg = make_projector(dm, {FusionKind::Concatenation, true, 0.0}, 5);
  Tape t;
  auto bound = bind(t, seg);
  CHECK_THROWS_AS(
      projector_forward(t, seg, bound, t.input(F_I), t.input(R), std::nullopt),
      std::invalid_argument);

  auto plain = make_projector(dm, {FusionKind::Concatenation, false, 0.0}, 5);
  Tape t2;
  auto bound2 = bind(t2, plain);
  CHECK_THROWS_AS(projector_forward(t2, plain, bound2, t2.input(F_I),
                                    t2.input(R), t2.input(S)),
                  std::invalid_argument);
}

TEST_CASE("samples are independent: evaluation order cannot change results") {
  const Dims dm = tiny_dims();
  auto params = make_projector(dm, {FusionKind::Concatenation, false, 0.0}, 12);
  Rng rng(120);
  TensorF Fa = randn(rng, {dm.T_v, dm.D}), Ra = randn(rng, {1, dm.d_R});
  TensorF Fb = randn(rng, {dm.T_v, dm.D}), Rb = randn(rng, {1, dm.d_R});

  auto forward = [&](const TensorF& F_I, const TensorF& R) {
    Tape t;
    auto bound = bind(t, params);
    Var out = projector_forward(t, params, bound, t.input(F_I), t.input(R));
    return t.val(out);
  };

  TensorF a_first = forward(Fa, Ra), b_second = forward(Fb, Rb);
  TensorF b_first = forward(Fb, Rb), a_second = forward(Fa, Ra);
  CHECK(bitwise_equal(a_first, a_second));
  CHECK(bitwise_equal(b_first, b_second));
}

TEST_CASE("mask pooling averages each class plane onto the grid") {
  MaskStack stack = MaskStack::zeros(1, 4, 4);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) stack.set(0, y, x, true);
  TensorF grid = pool_to_grid(stack, 2);
  CHECK(grid.shape == std::vector<int64_t>{1, 4});
  CHECK(grid.data[0] == doctest::Approx(1.0));
  CHECK(grid.data[1] == doctest::Approx(0.0));
  CHECK(grid.data[2] == doctest::Approx(0.0));
  CHECK(grid.data[3] == doctest::Approx(0.0));

  MaskStack ones = MaskStack::zeros(2, 3, 3);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) ones.set(c, y, x, true);
  TensorF full_grid = pool_to_grid(ones, 2);
  for (double v : full_grid.data) CHECK(v == doctest::Approx(1.0));

  CHECK_THROWS_AS(pool_to_grid(MaskStack::zeros(1, 1, 4), 2),
                  std::invalid_argument);
}

TEST_CASE("shuffling segmentation classes moves the output of a generic projector") {
  const Dims dm = tiny_dims();
  auto params = make_projector(dm, {FusionKind::Concatenation, true, 0.0}, 3);
  Rng rng(33);
  TensorF F_I = randn(rng, {dm.T_v, dm.D});
  TensorF R = randn(rng, {1, dm.d_R});

  MaskStack stack = varied_stack(static_cast<int>(dm.n_cls), 8, 8, 21);
  MaskStack shuffled = shuffle_classes(stack, 3);
  TensorF S = pool_to_grid(stack, dm.g);
  TensorF S_shuffled = pool_to_grid(shuffled, dm.g);
  REQUIRE(max_abs_diff(S, S_shuffled) > 0.0);

  auto forward = [&](const TensorF& grid) {
    Tape t;
    auto bound = bind(t, params);
    Var out = projector_forward(t, params, bound, t.input(F_I), t.input(R),
                                t.input(grid));
    return t.val(out);
  };
  CHECK(max_abs_diff(forward(S), forward(S_shuffled)) > 1e-9);
}

TEST_CASE("gradients of every variant verify against central differences") {
  const Dims dm = tiny_dims();
  for (const FusionVariant v :
       {FusionVariant{FusionKind::Baseline, false, 0.0},
        FusionVariant{FusionKind::Replace, false, 0.0},
        FusionVariant{FusionKind::LearnedMixing, false, 0.0},
        FusionVariant{FusionKind::WeightedAddition, false, 0.25},
        FusionVariant{FusionKind::Concatenation, false, 0.0},
        FusionVariant{FusionKind::Concatenation, true, 0.0}}) {
    CAPTURE(to_string(v.kind));
    CAPTURE(v.use_segmaps);
    auto params = make_projector(dm, v, 101);
    Rng rng(1010);
    TensorF F_I = randn(rng, {dm.T_v, dm.D});
    TensorF R = randn(rng, {1, dm.d_R});
    TensorF S = pool_to_grid(varied_stack(static_cast<int>(dm.n_cls), 8, 8, 8),
                             dm.g);

    auto run = [&](std::vector<TensorF>* grads) {
      Tape t;
      auto bound = bind(t, params);
      Var f = t.input(F_I);
      Var r = t.input(R);
      std::optional<Var> s;
      if (v.use_segmaps) s = t.input(S);
      Var out = projector_forward(t, params, bound, f, r, s);
      Var loss = t.xent(t.mean_rows(out), 1);
      if (grads) {
        t.backward(loss);
        grads->clear();
        for (const auto& [name, var] : bound.vars)
          grads->push_back(t.grad(var));
        grads->push_back(t.grad(f));
        grads->push_back(t.grad(r));
      }
      return t.val(loss).data[0];
    };

    std::vector<ParamRef> refs;
    for (auto& [name, ptr] : params.named_tensors()) refs.push_back({name, ptr});
    refs.push_back({"F_I", &F_I});
    refs.push_back({"R", &R});

    CheckReport report = grad_check(
        [&] { return run(nullptr); },
        [&] {
          std::vector<TensorF> g;
          run(&g);
          return g;
        },
        refs);
    CAPTURE(report.worst_param);
    CAPTURE(report.max_rel_err);
    CHECK(report.pass);
    CHECK(report.entries_checked > 0);
  }
}

TEST_CASE("parameter budget matches what construction actually allocates") {
  const Dims dm = tiny_dims();
  for (const FusionVariant v :
       {FusionVariant{FusionKind::Baseline, false, 0.0},
        FusionVariant{FusionKind::Replace, false, 0.0},
        FusionVariant{FusionKind::LearnedMixing, false, 0.0},
        FusionVariant{FusionKind::WeightedAddition, false, 0.0},
        FusionVariant{FusionKind::Concatenation, false, 0.0},
        FusionVariant{FusionKind::Concatenation, true, 0.0}}) {
    CAPTURE(to_string(v.kind));
    auto params = make_projector(dm, v, 2);
    ParamBudget budget = count_params(dm, v);
    CHECK(budget.total == params.n_params());
    CHECK(budget.total == budget.feature + budget.segmap + budget.projector);
    CHECK(budget.added == budget.feature + budget.segmap);
    auto named = params.named_tensors();
    REQUIRE(named.size() == budget.tensors.size());
    for (size_t i = 0; i < named.size(); ++i) {
      CHECK(named[i].first == budget.tensors[i].first);
      CHECK(named[i].second->numel() == budget.tensors[i].second);
    }
  }
}

TEST_CASE("full-scale parameter budget sits inside the published bands") {
  const Dims dm = Dims::paper();

  ParamBudget features = count_params(dm, {FusionKind::Concatenation, false, 0.0});
  CHECK(features.feature == 2229760);
  CHECK(features.segmap == 0);
  CHECK(features.added == 2229760);
  const double feature_pct = 100.0 * features.added_fraction;
  CHECK(feature_pct == doctest::Approx(0.0315830).epsilon(1e-4));
  CHECK(feature_pct >= 0.02);
  CHECK(feature_pct <= 0.15);

  ParamBudget both = count_params(dm, {FusionKind::Concatenation, true, 0.0});
  CHECK(both.feature == 2229760);
  CHECK(both.segmap == 1382912);
  CHECK(both.added == 3612672);
  const double both_pct = 100.0 * both.added_fraction;
  CHECK(both_pct == doctest::Approx(0.0511710).epsilon(1e-4));
  CHECK(both_pct >= 0.04);
  CHECK(both_pct <= 0.20);
  CHECK(both.seg_over_feature == doctest::Approx(0.6202065).epsilon(1e-6));
  CHECK(both.seg_over_feature >= 0.3);
  CHECK(both.seg_over_feature <= 0.7);

  ParamBudget base = count_params(dm, {FusionKind::Baseline, false, 0.0});
  CHECK(base.added == 0);
  CHECK(base.added_fraction == 0.0);
  CHECK(base.seg_over_feature == 0.0);
}

TEST_CASE("the segmentation branch can be added to a trained concatenation projector") {
  const Dims dm = tiny_dims();
  auto params = make_projector(dm, {FusionKind::Concatenation, false, 0.0}, 5);
  const TensorF C_before = params.C;
  const TensorF lin1_before = params.lin1_w;
  const TensorF p2_before = params.p2_w;

  add_segmap_branch(params, 11);
  CHECK(params.variant.use_segmaps);
  CHECK(bitwise_equal(params.C, C_before));
  CHECK(bitwise_equal(params.lin1_w, lin1_before));
  CHECK(bitwise_equal(params.p2_w, p2_before));
  CHECK(params.cls_conv_w.shape == std::vector<int64_t>{dm.T_c, dm.n_cls, 1});
  CHECK(params.spatial_w.shape == std::vector<int64_t>{dm.g * dm.g, dm.d_s});
  CHECK(params.seg_lin_w.shape == std::vector<int64_t>{dm.D + dm.d_s, dm.D});

  // Branch initialization is itself seeded.
  auto again = make_projector(dm, {FusionKind::Concatenation, false, 0.0}, 5);
  add_segmap_branch(again, 11);
  CHECK(bitwise_equal(again.cls_conv_w, params.cls_conv_w));
  CHECK(bitwise_equal(again.seg_lin_b, params.seg_lin_b));

  CHECK_THROWS_AS(add_segmap_branch(params, 12), std::invalid_argument);
  auto wadd = make_projector(dm, {FusionKind::WeightedAddition, false, 0.0}, 5);
  CHECK_THROWS_AS(add_segmap_branch(wadd, 12), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip through memory and become stable after one save") {
  const Dims dm = tiny_dims();
  auto params = make_projector(dm, {FusionKind::Concatenation, true, 0.0}, 7);

  std::ostringstream first;
  write_checkpoint(params, first);
  std::istringstream in1(first.str());
  ProjectorParams loaded = read_checkpoint(in1);

  CHECK(loaded.variant.kind == FusionKind::Concatenation);
  CHECK(loaded.variant.use_segmaps);
  CHECK(loaded.dims.T_v == dm.T_v);
  CHECK(loaded.dims.d_s == dm.d_s);

  // Payloads are stored in f32, so the first save may round values...
  auto orig = params.named_tensors();
  auto back = loaded.named_tensors();
  REQUIRE(orig.size() == back.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    CHECK(orig[i].first == back[i].first);
    CHECK(max_abs_diff(*orig[i].second, *back[i].second) < 1e-6);
  }

  // ...but a reloaded checkpoint reserializes to identical bytes.
  std::ostringstream second;
  write_checkpoint(loaded, second);
  CHECK(first.str() == second.str());
  std::istringstream in2(second.str());
  ProjectorParams loaded2 = read_checkpoint(in2);
  auto b2 = loaded2.named_tensors();
  bool all_equal = true;
  for (size_t i = 0; i < back.size(); ++i)
    all_equal = all_equal && bitwise_equal(*back[i].second, *b2[i].second);
  CHECK(all_equal);
}

TEST_CASE("checkpoint files round-trip on disk and report path on failure") {
  const Dims dm = tiny_dims();
  auto params = make_projector(dm, {FusionKind::WeightedAddition, false, -0.5}, 19);
  const std::string path = "projector_roundtrip.ckpt";
  const std::string path2 = "projector_roundtrip2.ckpt";
  save_checkpoint(params, path);
  ProjectorParams loaded = load_checkpoint(path);
  CHECK(loaded.variant.kind == FusionKind::WeightedAddition);
  CHECK(loaded.variant.alpha_init == -0.5);
  CHECK(loaded.alpha.data[0] == doctest::Approx(-0.5));
  save_checkpoint(loaded, path2);
  CHECK(slurp(path) == slurp(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());

  CHECK_THROWS_WITH_AS(load_checkpoint("no/such/dir/x.ckpt"),
                       doctest::Contains("no/such/dir/x.ckpt"), IoError);
}

TEST_CASE("corrupt checkpoints are rejected with a reason") {
  const Dims dm = tiny_dims();
  auto params = make_projector(dm, {FusionKind::Concatenation, false, 0.0}, 3);
  std::ostringstream os;
  write_checkpoint(params, os);
  const std::string good = os.str();

  SUBCASE("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    std::istringstream in(bad);
    CHECK_THROWS_WITH_AS(read_checkpoint(in), doctest::Contains("magic"),
                         IoError);
  }
  SUBCASE("unsupported version") {
    std::string bad = good;
    bad[4] = 9;
    std::istringstream in(bad);
    CHECK_THROWS_WITH_AS(read_checkpoint(in), doctest::Contains("version"),
                         IoError);
  }
  SUBCASE("truncated header") {
    std::istringstream in(good.substr(0, 10));
    CHECK_THROWS_AS(read_checkpoint(in), IoError);
  }
  SUBCASE("truncated payload") {
    std::istringstream in(good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(read_checkpoint(in), IoError);
  }
  SUBCASE("tampered tensor name") {
    std::string bad = good;
    const size_t pos = bad.find("lin1_w");
    REQUIRE(pos != std::string::npos);
    bad[pos] = 'q';
    std::istringstream in(bad);
    CHECK_THROWS_WITH_AS(read_checkpoint(in), doctest::Contains("lin1_w"),
                         IoError);
  }
  SUBCASE("segmap flag out of range") {
    std::string bad = good;
    // magic(4) + version(4) + nine dims(36) + kind(4) puts the flag at 48.
    bad[48] = 2;
    std::istringstream in(bad);
    CHECK_THROWS_WITH_AS(read_checkpoint(in), doctest::Contains("segmap flag"),
                         IoError);
  }
}
