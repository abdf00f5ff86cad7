#include <cmath>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "segfuse/ops.hpp"
#include "segfuse/rng.hpp"
#include "segfuse/tensor.hpp"

using namespace segfuse;

namespace {

TensorF randn(Rng& rng, std::vector<int64_t> shape) {
  TensorF t(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("linear with identity weights is the identity") {
  TensorF x = from_values({1, 2}, {1, 2});
  TensorF W = from_values({2, 2}, {1, 0, 0, 1});
  TensorF b = zeros({2});
  TensorF y = linear_forward(x, W, b);
  CHECK(y(0, 0) == 1.0);
  CHECK(y(0, 1) == 2.0);
}

TEST_CASE("linear with zero weights passes the bias through") {
  TensorF x = from_values({1, 2}, {1, 2});
  TensorF W = zeros({2, 2});
  TensorF b = from_values({2}, {3, 4});
  TensorF y = linear_forward(x, W, b);
  CHECK(y(0, 0) == 3.0);
  CHECK(y(0, 1) == 4.0);
}

TEST_CASE("linear hand example") {
  TensorF x = from_values({1, 2}, {1, 2});
  TensorF W = from_values({2, 2}, {1, 0, 1, 1});
  TensorF b = from_values({2}, {0, 1});
  TensorF y = linear_forward(x, W, b);
  CHECK(y(0, 0) == 3.0);
  CHECK(y(0, 1) == 3.0);
}

TEST_CASE("linear shape mismatch names both shapes") {
  TensorF x({2, 3});
  TensorF W({4, 2});
  TensorF b({2});
  try {
    linear_forward(x, W, b);
    FAIL("expected a throw");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
}

TEST_CASE("linear applies per row over leading dimensions") {
  TensorF x = from_values({2, 2, 2}, {1, 0, 0, 1, 2, 0, 0, 2});
  TensorF W = from_values({2, 2}, {1, 2, 3, 4});
  TensorF b = zeros({2});
  TensorF y = linear_forward(x, W, b);
  CHECK(y.shape == std::vector<int64_t>({2, 2, 2}));
  CHECK(y(0, 0, 0) == 1.0);
  CHECK(y(0, 0, 1) == 2.0);
  CHECK(y(1, 1, 0) == 6.0);
  CHECK(y(1, 1, 1) == 8.0);
}

TEST_CASE("conv1d 1x1 identity kernel") {
  TensorF x = from_values({1, 3}, {1, 2, 3});
  TensorF K = from_values({1, 1, 1}, {1});
  TensorF bias = zeros({1});
  TensorF y = conv1d_forward(x, K, bias, 1, 0);
  CHECK(y.shape == std::vector<int64_t>({1, 3}));
  CHECK(y(0, 0) == 1.0);
  CHECK(y(0, 1) == 2.0);
  CHECK(y(0, 2) == 3.0);
}

TEST_CASE("conv1d hand example width 2") {
  TensorF x = from_values({1, 3}, {1, 1, 1});
  TensorF K = from_values({1, 1, 2}, {1, 1});
  TensorF bias = zeros({1});
  TensorF y = conv1d_forward(x, K, bias, 1, 0);
  CHECK(y.shape == std::vector<int64_t>({1, 2}));
  CHECK(y(0, 0) == 2.0);
  CHECK(y(0, 1) == 2.0);
}

TEST_CASE("conv1d zero kernel passes bias") {
  TensorF x = from_values({1, 2}, {1, 2});
  TensorF K = zeros({1, 1, 1});
  TensorF bias = from_values({1}, {5});
  TensorF y = conv1d_forward(x, K, bias, 1, 0);
  CHECK(y(0, 0) == 5.0);
  CHECK(y(0, 1) == 5.0);
}

TEST_CASE("conv1d rejects kernels wider than the padded input") {
  TensorF x({1, 3});
  TensorF K({1, 1, 6});
  TensorF bias({1});
  CHECK_THROWS_AS(conv1d_forward(x, K, bias, 1, 1), std::invalid_argument);
}

TEST_CASE("conv1d padding and stride shape arithmetic") {
  TensorF x = from_values({1, 4}, {1, 2, 3, 4});
  TensorF K = from_values({1, 1, 3}, {1, 1, 1});
  TensorF bias = zeros({1});
  TensorF same = conv1d_forward(x, K, bias, 1, 1);
  CHECK(same.shape == std::vector<int64_t>({1, 4}));
  CHECK(same(0, 0) == 3.0);   // 0+1+2
  CHECK(same(0, 3) == 7.0);   // 3+4+0
  TensorF strided = conv1d_forward(x, K, bias, 2, 1);
  CHECK(strided.shape == std::vector<int64_t>({1, 2}));
  CHECK(strided(0, 0) == 3.0);
  CHECK(strided(0, 1) == 9.0);  // 2+3+4
}

TEST_CASE("adain with itself is the identity") {
  Rng rng(3);
  TensorF x = randn(rng, {5, 4});
  TensorF y = adain(x, x, 1e-9);
  CHECK(max_abs_diff(x, y) < 1e-6);
}

TEST_CASE("adain with constant content broadcasts style channel means") {
  TensorF content = full({3, 2}, 7.0);
  TensorF style = from_values({3, 2}, {1, 10, 2, 20, 3, 30});
  TensorF y = adain(content, style, 1e-5);
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(y(i, 0) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(y(i, 1) == doctest::Approx(20.0).epsilon(1e-9));
  }
}

TEST_CASE("adain hand statistics example") {
  TensorF content = from_values({2, 1}, {0, 2});
  TensorF style = from_values({2, 1}, {10, 14});
  TensorF y = adain(content, style, 1e-5);
  CHECK(y(0, 0) == doctest::Approx(10.0).epsilon(1e-4));
  CHECK(y(1, 0) == doctest::Approx(14.0).epsilon(1e-4));
}

TEST_CASE("adain output channel means match style means tightly") {
  Rng rng(17);
  TensorF content = randn(rng, {6, 3});
  TensorF style = randn(rng, {6, 3});
  TensorF y = adain(content, style, 1e-5);
  for (int64_t j = 0; j < 3; ++j) {
    double my = 0, ms = 0;
    for (int64_t i = 0; i < 6; ++i) {
      my += y(i, j) / 6.0;
      ms += style(i, j) / 6.0;
    }
    CHECK(std::fabs(my - ms) < 1e-9);
  }
}

TEST_CASE("adain needs at least two tokens") {
  TensorF one({1, 3});
  CHECK_THROWS_AS(adain(one, one, 1e-5), std::invalid_argument);
}

TEST_CASE("pool1d with out_len equal to length is identity") {
  TensorF x = from_values({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  TensorF y = adaptive_avg_pool1d(x, 4);
  CHECK(bitwise_equal(x, y));
}

TEST_CASE("pool1d to one value is the per-channel mean") {
  TensorF x = from_values({2, 4}, {1, 2, 3, 4, 4, 4, 4, 4});
  TensorF y = adaptive_avg_pool1d(x, 1);
  CHECK(y(0, 0) == doctest::Approx(2.5));
  CHECK(y(1, 0) == doctest::Approx(4.0));
}

TEST_CASE("pool1d overlapping window example") {
  TensorF x = from_values({1, 5}, {1, 2, 3, 4, 5});
  TensorF y = adaptive_avg_pool1d(x, 3);
  CHECK(y(0, 0) == doctest::Approx(1.5));
  CHECK(y(0, 1) == doctest::Approx(3.0));
  CHECK(y(0, 2) == doctest::Approx(4.5));
}

TEST_CASE("pool1d preserves the global mean when out_len divides L") {
  Rng rng(23);
  TensorF x = randn(rng, {3, 12});
  TensorF y = adaptive_avg_pool1d(x, 4);
  for (int64_t c = 0; c < 3; ++c) {
    double mx = 0, my = 0;
    for (int64_t i = 0; i < 12; ++i) mx += x(c, i) / 12.0;
    for (int64_t i = 0; i < 4; ++i) my += y(c, i) / 4.0;
    CHECK(mx == doctest::Approx(my).epsilon(1e-12));
  }
}

TEST_CASE("pool2d averages quadrants of a 4x4 map") {
  TensorF x({4, 4});
  for (int64_t i = 0; i < 16; ++i) x.data[static_cast<size_t>(i)] = 1.0 + i;
  TensorF y = adaptive_avg_pool2d(x, 2, 2);
  CHECK(y(0, 0) == doctest::Approx(3.5));
  CHECK(y(0, 1) == doctest::Approx(5.5));
  CHECK(y(1, 0) == doctest::Approx(11.5));
  CHECK(y(1, 1) == doctest::Approx(13.5));
}

TEST_CASE("concat_rows restores both halves by slicing") {
  TensorF a = from_values({2, 2}, {1, 2, 3, 4});
  TensorF b = from_values({1, 2}, {5, 6});
  TensorF y = concat_rows(a, b);
  CHECK(y.shape == std::vector<int64_t>({3, 2}));
  CHECK(y(0, 0) == 1.0);
  CHECK(y(2, 1) == 6.0);
  CHECK_THROWS_AS(concat_rows(a, TensorF({1, 3})), std::invalid_argument);
}

TEST_CASE("concat_cols widens tokens") {
  TensorF a = from_values({2, 1}, {1, 2});
  TensorF b = from_values({2, 2}, {3, 4, 5, 6});
  TensorF y = concat_cols(a, b);
  CHECK(y.shape == std::vector<int64_t>({2, 3}));
  CHECK(y(0, 0) == 1.0);
  CHECK(y(0, 2) == 4.0);
  CHECK(y(1, 1) == 5.0);
  CHECK_THROWS_AS(concat_cols(a, TensorF({3, 1})), std::invalid_argument);
}

TEST_CASE("add_scaled with zero alpha returns the base") {
  Rng rng(4);
  TensorF a = randn(rng, {3, 3});
  TensorF b = randn(rng, {3, 3});
  TensorF alpha = zeros({1});
  CHECK(bitwise_equal(add_scaled(a, b, alpha), a));
  alpha.data[0] = 2.0;
  TensorF y = add_scaled(a, b, alpha);
  CHECK(y(1, 1) == doctest::Approx(a(1, 1) + 2.0 * b(1, 1)));
}

TEST_CASE("transpose flips a rank-2 tensor") {
  TensorF x = from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  TensorF y = transpose(x);
  CHECK(y.shape == std::vector<int64_t>({3, 2}));
  CHECK(y(0, 0) == 1.0);
  CHECK(y(0, 1) == 4.0);
  CHECK(y(2, 0) == 3.0);
  CHECK(y(2, 1) == 6.0);
  CHECK(bitwise_equal(transpose(y), x));
  CHECK_THROWS_AS(transpose(TensorF({4})), std::invalid_argument);
}

TEST_CASE("gelu fixed points") {
  TensorF x = from_values({3}, {0.0, 1.0, -10.0});
  TensorF y = gelu(x);
  CHECK(y(0) == 0.0);
  CHECK(y(1) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(y(2) == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
}

TEST_CASE("mean_rows and embed_mean") {
  TensorF x = from_values({2, 3}, {1, 2, 3, 3, 4, 5});
  TensorF m = mean_rows(x);
  CHECK(m(0) == doctest::Approx(2.0));
  CHECK(m(2) == doctest::Approx(4.0));

  TensorF E = from_values({3, 2}, {1, 1, 2, 2, 4, 4});
  TensorF em = embed_mean(E, {0, 2});
  CHECK(em(0) == doctest::Approx(2.5));
  CHECK_THROWS_AS(embed_mean(E, {}), std::invalid_argument);
  CHECK_THROWS_AS(embed_mean(E, {3}), std::invalid_argument);
}

TEST_CASE("softmax cross-entropy fixed values") {
  TensorF uniform = zeros({4});
  CHECK(softmax_xent(uniform, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  TensorF peaked = from_values({3}, {100.0, 0.0, 0.0});
  CHECK(softmax_xent(peaked, 0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(softmax_xent(uniform, 4), std::invalid_argument);
}

TEST_CASE("softmax with temperature sums to one and sharpens") {
  TensorF logits = from_values({3}, {1.0, 2.0, 3.0});
  auto warm = softmax(logits, 1.0);
  auto cold = softmax(logits, 0.2);
  double s = warm[0] + warm[1] + warm[2];
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cold[2] > warm[2]);
  CHECK_THROWS_AS(softmax(logits, 0.0), std::invalid_argument);
}

TEST_CASE("forward ops are bit-deterministic on repeated calls") {
  Rng rng(31);
  TensorF x = randn(rng, {4, 6});
  TensorF W = randn(rng, {6, 5});
  TensorF b = randn(rng, {5});
  CHECK(bitwise_equal(linear_forward(x, W, b), linear_forward(x, W, b)));
  TensorF s = randn(rng, {4, 6});
  CHECK(bitwise_equal(adain(x, s, 1e-5), adain(x, s, 1e-5)));
}
