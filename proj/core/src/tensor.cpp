#include "segfuse/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "segfuse/errors.hpp"

namespace segfuse {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

TensorF::TensorF(std::vector<int64_t> s) : shape(std::move(s)) {
  for (int64_t d : shape) {
    if (d <= 0)
      throw std::invalid_argument("tensor shape must be strictly positive, got " +
                                  shape_str(shape));
  }
  data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
}

int64_t TensorF::numel() const { return static_cast<int64_t>(data.size()); }

TensorF zeros(std::vector<int64_t> shape) { return TensorF(std::move(shape)); }

TensorF full(std::vector<int64_t> shape, double value) {
  TensorF t(std::move(shape));
  for (double& v : t.data) v = value;
  return t;
}

TensorF from_values(std::vector<int64_t> shape, std::vector<double> values) {
  TensorF t(std::move(shape));
  if (static_cast<int64_t>(values.size()) != t.numel())
    throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                " does not fill shape " + shape_str(t.shape));
  t.data = std::move(values);
  return t;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void require_shape(const TensorF& t, const std::vector<int64_t>& want,
                   const std::string& what) {
  if (t.shape != want)
    throw std::invalid_argument(what + ": expected shape " + shape_str(want) +
                                ", got " + shape_str(t.shape));
}

void require_finite(const TensorF& t, const std::string& what) {
  for (double v : t.data) {
    if (!std::isfinite(v))
      throw std::invalid_argument(what + ": non-finite value encountered");
  }
}

bool bitwise_equal(const TensorF& a, const TensorF& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.data.data(), b.data.data(),
                     a.data.size() * sizeof(double)) == 0;
}

double max_abs_diff(const TensorF& a, const TensorF& b) {
  if (a.shape != b.shape)
    throw std::invalid_argument("max_abs_diff: shape mismatch " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

namespace {

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t take_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw IoError(std::string("tensor stream truncated while reading ") + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tnsr(std::ostream& out, const TensorF& t) {
  out.write("TNSR", 4);
  put_u32(out, 1u);
  put_u32(out, static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape) put_u32(out, static_cast<uint32_t>(d));
  for (double v : t.data) {
    float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
  if (!out) throw IoError("tensor stream write failed");
}

TensorF read_tnsr(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "TNSR", 4) != 0)
    throw IoError("bad tensor magic, expected \"TNSR\"");
  uint32_t version = take_u32(in, "version");
  if (version != 1)
    throw IoError("unsupported tensor version " + std::to_string(version));
  uint32_t rank = take_u32(in, "rank");
  if (rank > 8) throw IoError("implausible tensor rank " + std::to_string(rank));
  std::vector<int64_t> shape(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = take_u32(in, "dims");
    if (d == 0) throw IoError("zero dimension in tensor header");
    shape[i] = static_cast<int64_t>(d);
  }
  TensorF t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    uint32_t bits = take_u32(in, "payload");
    float f;
    std::memcpy(&f, &bits, 4);
    t.data[static_cast<size_t>(i)] = static_cast<double>(f);
  }
  return t;
}

void save_tnsr(const std::string& path, const TensorF& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  write_tnsr(f, t);
  if (!f) throw IoError("write failed: " + path);
}

TensorF load_tnsr(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  return read_tnsr(f);
}

}  // namespace segfuse
