#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "segfuse/grad_check.hpp"
#include "segfuse/optim.hpp"
#include "segfuse/rng.hpp"
#include "segfuse/tape.hpp"

using namespace segfuse;

namespace {

TensorF randn(Rng& rng, std::vector<int64_t> shape, double scale = 1.0) {
  TensorF t(std::move(shape));
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("gradients through a linear layer verify on random 3x3 inputs") {
  Rng rng(101);
  TensorF x = randn(rng, {3, 3});
  TensorF W = randn(rng, {3, 3});
  TensorF b = randn(rng, {3});

  auto run = [&](bool back, std::vector<TensorF>* out) {
    Tape t;
    Var vx = t.input(x), vW = t.input(W), vb = t.input(b);
    Var loss = t.xent(t.mean_rows(t.gelu(t.linear(vx, vW, vb))), 1);
    if (back) {
      t.backward(loss);
      *out = {t.grad(vx), t.grad(vW), t.grad(vb)};
    }
    return t.val(loss).data[0];
  };
  auto loss = [&]() { return run(false, nullptr); };
  auto grads = [&]() {
    std::vector<TensorF> g;
    run(true, &g);
    return g;
  };
  CheckReport rep =
      grad_check(loss, grads, {{"x", &x}, {"W", &W}, {"b", &b}});
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-4);
  CHECK(rep.entries_checked == 21);
}

TEST_CASE("gradients through conv1d verify") {
  Rng rng(102);
  TensorF x = randn(rng, {2, 5});
  TensorF K = randn(rng, {3, 2, 3});
  TensorF bias = randn(rng, {3});

  auto run = [&](bool back, std::vector<TensorF>* out) {
    Tape t;
    Var vx = t.input(x), vK = t.input(K), vb = t.input(bias);
    Var y = t.conv1d(vx, vK, vb, 1, 1);
    Var loss = t.xent(t.mean_rows(t.gelu(y)), 0);
    if (back) {
      t.backward(loss);
      *out = {t.grad(vx), t.grad(vK), t.grad(vb)};
    }
    return t.val(loss).data[0];
  };
  auto loss = [&]() { return run(false, nullptr); };
  auto grads = [&]() {
    std::vector<TensorF> g;
    run(true, &g);
    return g;
  };
  CHECK(grad_check(loss, grads, {{"x", &x}, {"K", &K}, {"bias", &bias}}).pass);
}

TEST_CASE("gradients through adain verify for content and style paths") {
  Rng rng(103);
  TensorF content = randn(rng, {4, 2});
  TensorF style = randn(rng, {4, 2});

  auto run = [&](bool back, std::vector<TensorF>* out) {
    Tape t;
    Var vc = t.input(content), vs = t.input(style);
    Var loss = t.xent(t.mean_rows(t.gelu(t.adain(vc, vs))), 1);
    if (back) {
      t.backward(loss);
      *out = {t.grad(vc), t.grad(vs)};
    }
    return t.val(loss).data[0];
  };
  auto loss = [&]() { return run(false, nullptr); };
  auto grads = [&]() {
    std::vector<TensorF> g;
    run(true, &g);
    return g;
  };
  CheckReport rep =
      grad_check(loss, grads, {{"content", &content}, {"style", &style}});
  CHECK(rep.pass);
}

TEST_CASE("gradients through adaptive pooling verify") {
  Rng rng(104);
  TensorF x = randn(rng, {2, 7});
  auto run = [&](bool back, std::vector<TensorF>* out) {
    Tape t;
    Var vx = t.input(x);
    Var loss = t.xent(t.mean_rows(t.gelu(t.pool1d(vx, 3))), 2);
    if (back) {
      t.backward(loss);
      *out = {t.grad(vx)};
    }
    return t.val(loss).data[0];
  };
  auto loss = [&]() { return run(false, nullptr); };
  auto grads = [&]() {
    std::vector<TensorF> g;
    run(true, &g);
    return g;
  };
  CHECK(grad_check(loss, grads, {{"x", &x}}).pass);
}

TEST_CASE("gradients through transpose verify") {
  Rng rng(117);
  TensorF x = randn(rng, {2, 5});
  auto run = [&](bool back, std::vector<TensorF>* out) {
    Tape t;
    Var vx = t.input(x);
    Var loss = t.xent(t.mean_rows(t.gelu(t.transpose(vx))), 1);  // [5, 2]
    if (back) {
      t.backward(loss);
      *out = {t.grad(vx)};
    }
    return t.val(loss).data[0];
  };
  auto loss = [&]() { return run(false, nullptr); };
  auto grads = [&]() {
    std::vector<TensorF> g;
    run(true, &g);
    return g;
  };
  CHECK(grad_check(loss, grads, {{"x", &x}}).pass);
}

TEST_CASE("gradients through concatenation verify") {
  Rng rng(105);
  TensorF a = randn(rng, {2, 3});
  TensorF b = randn(rng, {3, 3});
  TensorF c = randn(rng, {2, 2});
  auto run = [&](bool back, std::vector<TensorF>* out) {
    Tape t;
    Var va = t.input(a), vb = t.input(b), vc = t.input(c);
    Var rows = t.concat_rows(va, vb);       // [5, 3]
    Var cols = t.concat_cols(va, vc);       // [2, 5]
    Var loss0 = t.xent(t.mean_rows(t.gelu(rows)), 0);
    Var loss1 = t.xent(t.mean_rows(t.gelu(cols)), 1);
    Var loss = t.mean_scalars({loss0, loss1});
    if (back) {
      t.backward(loss);
      *out = {t.grad(va), t.grad(vb), t.grad(vc)};
    }
    return t.val(loss).data[0];
  };
  auto loss = [&]() { return run(false, nullptr); };
  auto grads = [&]() {
    std::vector<TensorF> g;
    run(true, &g);
    return g;
  };
  CHECK(grad_check(loss, grads, {{"a", &a}, {"b", &b}, {"c", &c}}).pass);
}

TEST_CASE("gradient of the mixing weight in weighted addition verifies") {
  Rng rng(106);
  TensorF base = randn(rng, {3, 4});
  TensorF extra = randn(rng, {3, 4});
  TensorF alpha = from_values({1}, {0.7});
  auto run = [&](bool back, std::vector<TensorF>* out) {
    Tape t;
    Var vb = t.input(base), ve = t.input(extra), va = t.input(alpha);
    Var loss = t.xent(t.mean_rows(t.gelu(t.add_scaled(vb, ve, va))), 3);
    if (back) {
      t.backward(loss);
      *out = {t.grad(vb), t.grad(ve), t.grad(va)};
    }
    return t.val(loss).data[0];
  };
  auto loss = [&]() { return run(false, nullptr); };
  auto grads = [&]() {
    std::vector<TensorF> g;
    run(true, &g);
    return g;
  };
  CHECK(grad_check(loss, grads,
                   {{"base", &base}, {"extra", &extra}, {"alpha", &alpha}})
            .pass);
}

TEST_CASE("gradients through matmul and embed_mean verify") {
  Rng rng(107);
  TensorF A = randn(rng, {3, 4});
  TensorF B = randn(rng, {4, 2});
  TensorF E = randn(rng, {5, 3});
  auto run = [&](bool back, std::vector<TensorF>* out) {
    Tape t;
    Var vA = t.input(A), vB = t.input(B), vE = t.input(E);
    Var mm = t.matmul(vA, vB);                       // [3, 2]
    Var lossA = t.xent(t.mean_rows(t.gelu(mm)), 0);
    Var em = t.embed_mean(vE, {0, 2, 2, 4});         // [3]
    Var lossB = t.xent(t.gelu(em), 1);
    Var loss = t.mean_scalars({lossA, lossB});
    if (back) {
      t.backward(loss);
      *out = {t.grad(vA), t.grad(vB), t.grad(vE)};
    }
    return t.val(loss).data[0];
  };
  auto loss = [&]() { return run(false, nullptr); };
  auto grads = [&]() {
    std::vector<TensorF> g;
    run(true, &g);
    return g;
  };
  CHECK(grad_check(loss, grads, {{"A", &A}, {"B", &B}, {"E", &E}}).pass);
}

TEST_CASE("a doubled analytic gradient is flagged with the offender named") {
  TensorF p = from_values({1}, {0.3});
  TensorF fixed = from_values({1}, {1.0});
  auto loss = [&]() {
    Tape t;
    Var vp = t.input(p), vc = t.input(fixed);
    return t.val(t.mean_scalars({vp, vc})).data[0];
  };
  // True gradient is 0.5; report it doubled.
  auto grads = [&]() {
    std::vector<TensorF> g;
    g.push_back(from_values({1}, {1.0}));
    return g;
  };
  CheckReport rep = grad_check(loss, grads, {{"p", &p}});
  CHECK(!rep.pass);
  CHECK(rep.max_rel_err == doctest::Approx(0.5).epsilon(1e-4));
  CHECK(rep.worst_param == "p");
  REQUIRE(rep.failures.size() == 1);
  CHECK(rep.failures[0].index == 0);
}

TEST_CASE("perturbed parameters are restored after a check") {
  Rng rng(108);
  TensorF W = randn(rng, {2, 2});
  TensorF W0 = W;
  auto loss = [&]() {
    Tape t;
    Var vW = t.input(W);
    return t.val(t.xent(t.mean_rows(vW), 0)).data[0];
  };
  auto grads = [&]() {
    Tape t;
    Var vW = t.input(W);
    Var l = t.xent(t.mean_rows(vW), 0);
    t.backward(l);
    return std::vector<TensorF>{t.grad(vW)};
  };
  CHECK(grad_check(loss, grads, {{"W", &W}}).pass);
  CHECK(bitwise_equal(W, W0));
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape t;
  Var v = t.input(zeros({2, 2}));
  CHECK_THROWS_AS(t.backward(v), std::invalid_argument);
}

TEST_CASE("tape forward values are bit-identical across replays") {
  Rng rng(109);
  TensorF x = randn(rng, {4, 4});
  TensorF W = randn(rng, {4, 4});
  TensorF b = randn(rng, {4});
  auto once = [&]() {
    Tape t;
    Var y = t.gelu(t.linear(t.input(x), t.input(W), t.input(b)));
    return t.val(y);
  };
  CHECK(bitwise_equal(once(), once()));
}

TEST_CASE("learning rate schedule endpoints") {
  CHECK(cosine_lr(0, 100, 0.03, 2e-5) == 0.0);
  CHECK(cosine_lr(3, 100, 0.03, 2e-5) == doctest::Approx(2e-5).epsilon(1e-12));
  CHECK(cosine_lr(100, 100, 0.03, 2e-5) == 0.0);
}

TEST_CASE("learning rate ramps linearly during warmup then decays") {
  const double base = 1e-3;
  CHECK(cosine_lr(1, 100, 0.03, base) == doctest::Approx(base / 3.0));
  CHECK(cosine_lr(2, 100, 0.03, base) == doctest::Approx(2.0 * base / 3.0));
  CHECK(cosine_lr(10, 100, 0.03, base) > cosine_lr(50, 100, 0.03, base));
  CHECK(cosine_lr(50, 100, 0.03, base) > cosine_lr(90, 100, 0.03, base));
  // past the schedule end: clamped to zero
  CHECK(cosine_lr(101, 100, 0.03, base) == 0.0);
  CHECK(cosine_lr(1000, 100, 0.03, base) == 0.0);
}

TEST_CASE("schedule rejects a warmup shorter than one step") {
  CHECK_THROWS_AS(cosine_lr(0, 10, 0.03, 1e-3), std::invalid_argument);
}

TEST_CASE("first adam step moves each weight by about the learning rate") {
  TensorF w = from_values({3}, {1.0, -2.0, 0.5});
  TensorF g = from_values({3}, {0.4, -0.3, 0.0});
  OptimState st = OptimState::create({&w}, 1e-3, 0.5, 2);
  // warmup = 1 step: the first update runs at lr 0, the second at base rate
  double lr0 = adam_step(st, {&w}, {&g}, {true});
  CHECK(lr0 == 0.0);
  CHECK(w(0) == 1.0);
  double lr = adam_step(st, {&w}, {&g}, {true});
  CHECK(lr == doctest::Approx(1e-3));
  // With constant gradients, a step is roughly -lr * sign(g).
  CHECK(w(0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-4));
  CHECK(w(1) == doctest::Approx(-2.0 + 1e-3).epsilon(1e-4));
  CHECK(w(2) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("frozen slots are untouched by adam") {
  TensorF w = from_values({2}, {1.0, 1.0});
  TensorF g = from_values({2}, {10.0, 10.0});
  OptimState st = OptimState::create({&w}, 1e-2, 0.5, 4);
  adam_step(st, {&w}, {&g}, {false});
  CHECK(w(0) == 1.0);
  CHECK(w(1) == 1.0);
  for (double v : st.m[0].data) CHECK(v == 0.0);
  adam_step(st, {&w}, {&g}, {true});
  CHECK(w(0) != 1.0);
}

TEST_CASE("adam state alignment is validated") {
  TensorF w({2});
  TensorF g({2});
  OptimState st = OptimState::create({&w}, 1e-3, 0.5, 2);
  CHECK_THROWS_AS(adam_step(st, {&w, &w}, {&g, &g}, {true, true}),
                  std::invalid_argument);
}
