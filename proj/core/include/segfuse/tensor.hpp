#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace segfuse {

// Dense row-major tensor of doubles. The one value carrier used by every
// numeric module.
struct TensorF {
  std::vector<int64_t> shape;
  std::vector<double> data;

  TensorF() = default;
  explicit TensorF(std::vector<int64_t> s);

  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t numel() const;
  int64_t dim(int64_t i) const { return shape[static_cast<size_t>(i)]; }
  bool same_shape(const TensorF& o) const { return shape == o.shape; }

  double& operator()(int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator()(int64_t i) const { return data[static_cast<size_t>(i)]; }
  double& operator()(int64_t i, int64_t j) {
    return data[static_cast<size_t>(i * dim(1) + j)];
  }
  double operator()(int64_t i, int64_t j) const {
    return data[static_cast<size_t>(i * dim(1) + j)];
  }
  double& operator()(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  double operator()(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
  }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }
};

TensorF zeros(std::vector<int64_t> shape);
TensorF full(std::vector<int64_t> shape, double value);
TensorF from_values(std::vector<int64_t> shape, std::vector<double> values);

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

// Throws std::invalid_argument naming both shapes if they differ.
void require_shape(const TensorF& t, const std::vector<int64_t>& want,
                   const std::string& what);
// Throws std::invalid_argument if any entry is NaN or infinite.
void require_finite(const TensorF& t, const std::string& what);

bool bitwise_equal(const TensorF& a, const TensorF& b);
double max_abs_diff(const TensorF& a, const TensorF& b);

// Fixture codec: "TNSR" magic, u32 version=1, u32 rank, rank u32 dims, then
// an f32 little-endian payload. Values widen to doubles on load.
void write_tnsr(std::ostream& out, const TensorF& t);
TensorF read_tnsr(std::istream& in);
void save_tnsr(const std::string& path, const TensorF& t);
TensorF load_tnsr(const std::string& path);

}  // namespace segfuse
