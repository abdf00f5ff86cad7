#include "segfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace segfuse {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require_rank(const TensorF& t, int64_t rank, const char* what) {
  if (t.rank() != rank)
    throw std::invalid_argument(std::string(what) + ": expected rank " +
                                std::to_string(rank) + ", got shape " +
                                shape_str(t.shape));
}

// Flatten [..., d] to a row count.
int64_t leading_rows(const TensorF& x) { return x.numel() / x.shape.back(); }

}  // namespace

TensorF matmul(const TensorF& a, const TensorF& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: inner dimensions differ, " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  TensorF out({m, n});
  const double* ap = a.ptr();
  const double* bp = b.ptr();
  double* op = out.ptr();
  for (int64_t r = 0; r < m; ++r) {
    const double* arow = ap + r * k;
    double* orow = op + r * n;
    for (int64_t i = 0; i < k; ++i) {
      const double av = arow[i];
      const double* brow = bp + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

void matmul_backward(const TensorF& a, const TensorF& b, const TensorF& grad_out,
                     TensorF* ga, TensorF* gb) {
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const double* ap = a.ptr();
  const double* bp = b.ptr();
  const double* gp = grad_out.ptr();
  if (ga) {
    double* gap = ga->ptr();
    for (int64_t r = 0; r < m; ++r) {
      const double* grow = gp + r * n;
      double* garow = gap + r * k;
      for (int64_t i = 0; i < k; ++i) {
        const double* brow = bp + i * n;
        double acc = 0.0;
        for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
        garow[i] += acc;
      }
    }
  }
  if (gb) {
    double* gbp = gb->ptr();
    for (int64_t r = 0; r < m; ++r) {
      const double* arow = ap + r * k;
      const double* grow = gp + r * n;
      for (int64_t i = 0; i < k; ++i) {
        const double av = arow[i];
        double* gbrow = gbp + i * n;
        for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
      }
    }
  }
}

TensorF linear_forward(const TensorF& x, const TensorF& W, const TensorF& b) {
  require_rank(W, 2, "linear weight");
  require_rank(b, 1, "linear bias");
  if (x.rank() < 1 || x.shape.back() != W.dim(0))
    throw std::invalid_argument("linear: input shape " + shape_str(x.shape) +
                                " does not match weight " + shape_str(W.shape));
  if (b.dim(0) != W.dim(1))
    throw std::invalid_argument("linear: bias shape " + shape_str(b.shape) +
                                " does not match weight " + shape_str(W.shape));
  const int64_t rows = leading_rows(x);
  const int64_t din = W.dim(0), dout = W.dim(1);
  std::vector<int64_t> oshape = x.shape;
  oshape.back() = dout;
  TensorF out(std::move(oshape));
  const double* xp = x.ptr();
  const double* wp = W.ptr();
  const double* bp = b.ptr();
  double* op = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xrow = xp + r * din;
    double* orow = op + r * dout;
    for (int64_t j = 0; j < dout; ++j) orow[j] = bp[j];
    for (int64_t i = 0; i < din; ++i) {
      const double xv = xrow[i];
      const double* wrow = wp + i * dout;
      for (int64_t j = 0; j < dout; ++j) orow[j] += xv * wrow[j];
    }
  }
  return out;
}

void linear_backward(const TensorF& x, const TensorF& W, const TensorF& grad_out,
                     TensorF* gx, TensorF* gW, TensorF* gb) {
  const int64_t rows = leading_rows(x);
  const int64_t din = W.dim(0), dout = W.dim(1);
  const double* xp = x.ptr();
  const double* wp = W.ptr();
  const double* gp = grad_out.ptr();
  if (gx) {
    double* gxp = gx->ptr();
    for (int64_t r = 0; r < rows; ++r) {
      const double* grow = gp + r * dout;
      double* gxrow = gxp + r * din;
      for (int64_t i = 0; i < din; ++i) {
        const double* wrow = wp + i * dout;
        double acc = 0.0;
        for (int64_t j = 0; j < dout; ++j) acc += grow[j] * wrow[j];
        gxrow[i] += acc;
      }
    }
  }
  if (gW) {
    double* gwp = gW->ptr();
    for (int64_t r = 0; r < rows; ++r) {
      const double* xrow = xp + r * din;
      const double* grow = gp + r * dout;
      for (int64_t i = 0; i < din; ++i) {
        const double xv = xrow[i];
        double* gwrow = gwp + i * dout;
        for (int64_t j = 0; j < dout; ++j) gwrow[j] += xv * grow[j];
      }
    }
  }
  if (gb) {
    double* gbp = gb->ptr();
    for (int64_t r = 0; r < rows; ++r) {
      const double* grow = gp + r * dout;
      for (int64_t j = 0; j < dout; ++j) gbp[j] += grow[j];
    }
  }
}

TensorF conv1d_forward(const TensorF& x, const TensorF& K, const TensorF& bias,
                       int64_t stride, int64_t pad) {
  require_rank(x, 2, "conv1d input");
  require_rank(K, 3, "conv1d kernel");
  require_rank(bias, 1, "conv1d bias");
  const int64_t cin = x.dim(0), L = x.dim(1);
  const int64_t cout = K.dim(0), k = K.dim(2);
  if (K.dim(1) != cin)
    throw std::invalid_argument("conv1d: kernel " + shape_str(K.shape) +
                                " does not match input channels of " +
                                shape_str(x.shape));
  if (bias.dim(0) != cout)
    throw std::invalid_argument("conv1d: bias shape " + shape_str(bias.shape) +
                                " does not match out channels " +
                                std::to_string(cout));
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv1d: pad must be >= 0");
  if (k > L + 2 * pad)
    throw std::invalid_argument(
        "conv1d: kernel width " + std::to_string(k) +
        " exceeds padded length " + std::to_string(L + 2 * pad));
  const int64_t Lout = (L + 2 * pad - k) / stride + 1;
  TensorF out({cout, Lout});
  for (int64_t o = 0; o < cout; ++o) {
    for (int64_t t = 0; t < Lout; ++t) {
      double acc = bias(o);
      const int64_t start = t * stride - pad;
      for (int64_t ci = 0; ci < cin; ++ci) {
        for (int64_t j = 0; j < k; ++j) {
          const int64_t pos = start + j;
          if (pos < 0 || pos >= L) continue;
          acc += x(ci, pos) * K(o, ci, j);
        }
      }
      out(o, t) = acc;
    }
  }
  return out;
}

void conv1d_backward(const TensorF& x, const TensorF& K, const TensorF& grad_out,
                     int64_t stride, int64_t pad, TensorF* gx, TensorF* gK,
                     TensorF* gbias) {
  const int64_t cin = x.dim(0), L = x.dim(1);
  const int64_t cout = K.dim(0), k = K.dim(2);
  const int64_t Lout = grad_out.dim(1);
  for (int64_t o = 0; o < cout; ++o) {
    for (int64_t t = 0; t < Lout; ++t) {
      const double g = grad_out(o, t);
      if (gbias) (*gbias)(o) += g;
      const int64_t start = t * stride - pad;
      for (int64_t ci = 0; ci < cin; ++ci) {
        for (int64_t j = 0; j < k; ++j) {
          const int64_t pos = start + j;
          if (pos < 0 || pos >= L) continue;
          if (gx) (*gx)(ci, pos) += g * K(o, ci, j);
          if (gK) (*gK)(o, ci, j) += g * x(ci, pos);
        }
      }
    }
  }
}

namespace {

struct ChannelStats {
  double mean;
  double sd;  // population standard deviation over the token axis
};

ChannelStats channel_stats(const TensorF& t, int64_t j) {
  const int64_t T = t.dim(0);
  // A channel whose entries are all identical (e.g. a broadcast style row)
  // must report sd exactly 0, not rounding noise from the mean division;
  // the backward keys the degenerate case off sd == 0.
  bool tied = true;
  for (int64_t i = 1; i < T && tied; ++i) tied = t(i, j) == t(0, j);
  if (tied) return {t(0, j), 0.0};
  double mean = 0.0;
  for (int64_t i = 0; i < T; ++i) mean += t(i, j);
  mean /= static_cast<double>(T);
  double var = 0.0;
  for (int64_t i = 0; i < T; ++i) {
    const double d = t(i, j) - mean;
    var += d * d;
  }
  var /= static_cast<double>(T);
  return {mean, std::sqrt(var)};
}

}  // namespace

TensorF adain(const TensorF& content, const TensorF& style, double eps) {
  require_rank(content, 2, "adain content");
  if (!content.same_shape(style))
    throw std::invalid_argument("adain: content " + shape_str(content.shape) +
                                " and style " + shape_str(style.shape) +
                                " must match");
  if (content.dim(0) < 2)
    throw std::invalid_argument(
        "adain: need at least 2 tokens for channel statistics, got " +
        std::to_string(content.dim(0)));
  if (eps <= 0.0) throw std::invalid_argument("adain: eps must be positive");
  const int64_t T = content.dim(0), D = content.dim(1);
  TensorF out({T, D});
  for (int64_t j = 0; j < D; ++j) {
    const ChannelStats c = channel_stats(content, j);
    const ChannelStats s = channel_stats(style, j);
    const double scale = s.sd / (c.sd + eps);
    for (int64_t i = 0; i < T; ++i)
      out(i, j) = scale * (content(i, j) - c.mean) + s.mean;
  }
  return out;
}

void adain_backward(const TensorF& content, const TensorF& style, double eps,
                    const TensorF& grad_out, TensorF* gcontent, TensorF* gstyle) {
  const int64_t T = content.dim(0), D = content.dim(1);
  const double Tf = static_cast<double>(T);
  for (int64_t j = 0; j < D; ++j) {
    const ChannelStats c = channel_stats(content, j);
    const ChannelStats s = channel_stats(style, j);
    const double denom = c.sd + eps;
    const double scale = s.sd / denom;
    double gsum = 0.0;    // sum of incoming grads
    double gdotn = 0.0;   // sum of grad * (content - mean)
    for (int64_t i = 0; i < T; ++i) {
      const double g = grad_out(i, j);
      gsum += g;
      gdotn += g * (content(i, j) - c.mean);
    }
    const double dsd_c = -gdotn * s.sd / (denom * denom);
    const double dsd_s = gdotn / denom;
    if (gcontent) {
      // d sd/d c_i = (c_i - mean)/(T sd); zero-variance channels get a zero
      // subgradient for the sd term.
      const double sd_coef = (c.sd > 0.0) ? dsd_c / (Tf * c.sd) : 0.0;
      for (int64_t i = 0; i < T; ++i) {
        const double n = content(i, j) - c.mean;
        (*gcontent)(i, j) += scale * (grad_out(i, j) - gsum / Tf) + sd_coef * n;
      }
    }
    if (gstyle) {
      const double sd_coef = (s.sd > 0.0) ? dsd_s / (Tf * s.sd) : 0.0;
      for (int64_t i = 0; i < T; ++i) {
        const double n = style(i, j) - s.mean;
        (*gstyle)(i, j) += gsum / Tf + sd_coef * n;
      }
    }
  }
}

namespace {

inline int64_t window_lo(int64_t i, int64_t L, int64_t out) { return i * L / out; }

inline int64_t window_hi(int64_t i, int64_t L, int64_t out) {
  return ((i + 1) * L + out - 1) / out;  // ceil
}

}  // namespace

TensorF adaptive_avg_pool1d(const TensorF& x, int64_t out_len) {
  require_rank(x, 2, "adaptive_avg_pool1d input");
  if (out_len < 1)
    throw std::invalid_argument("adaptive_avg_pool1d: out_len must be >= 1");
  const int64_t C = x.dim(0), L = x.dim(1);
  TensorF out({C, out_len});
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < out_len; ++i) {
      const int64_t lo = window_lo(i, L, out_len), hi = window_hi(i, L, out_len);
      double acc = 0.0;
      for (int64_t p = lo; p < hi; ++p) acc += x(c, p);
      out(c, i) = acc / static_cast<double>(hi - lo);
    }
  }
  return out;
}

void adaptive_avg_pool1d_backward(const TensorF& x, int64_t out_len,
                                  const TensorF& grad_out, TensorF* gx) {
  if (!gx) return;
  const int64_t C = x.dim(0), L = x.dim(1);
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < out_len; ++i) {
      const int64_t lo = window_lo(i, L, out_len), hi = window_hi(i, L, out_len);
      const double g = grad_out(c, i) / static_cast<double>(hi - lo);
      for (int64_t p = lo; p < hi; ++p) (*gx)(c, p) += g;
    }
  }
}

TensorF adaptive_avg_pool2d(const TensorF& x, int64_t out_h, int64_t out_w) {
  require_rank(x, 2, "adaptive_avg_pool2d input");
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("adaptive_avg_pool2d: output dims must be >= 1");
  const int64_t H = x.dim(0), W = x.dim(1);
  TensorF out({out_h, out_w});
  for (int64_t i = 0; i < out_h; ++i) {
    const int64_t rlo = window_lo(i, H, out_h), rhi = window_hi(i, H, out_h);
    for (int64_t j = 0; j < out_w; ++j) {
      const int64_t clo = window_lo(j, W, out_w), chi = window_hi(j, W, out_w);
      double acc = 0.0;
      for (int64_t r = rlo; r < rhi; ++r)
        for (int64_t c = clo; c < chi; ++c) acc += x(r, c);
      out(i, j) = acc / static_cast<double>((rhi - rlo) * (chi - clo));
    }
  }
  return out;
}

TensorF concat_rows(const TensorF& a, const TensorF& b) {
  require_rank(a, 2, "concat_rows lhs");
  require_rank(b, 2, "concat_rows rhs");
  if (a.dim(1) != b.dim(1))
    throw std::invalid_argument("concat_rows: widths differ, " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
  TensorF out({a.dim(0) + b.dim(0), a.dim(1)});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

void concat_rows_backward(const TensorF& a, const TensorF& b,
                          const TensorF& grad_out, TensorF* ga, TensorF* gb) {
  const size_t na = a.data.size(), nb = b.data.size();
  if (ga)
    for (size_t i = 0; i < na; ++i) ga->data[i] += grad_out.data[i];
  if (gb)
    for (size_t i = 0; i < nb; ++i) gb->data[i] += grad_out.data[na + i];
}

TensorF concat_cols(const TensorF& a, const TensorF& b) {
  require_rank(a, 2, "concat_cols lhs");
  require_rank(b, 2, "concat_cols rhs");
  if (a.dim(0) != b.dim(0))
    throw std::invalid_argument("concat_cols: row counts differ, " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
  const int64_t T = a.dim(0), Da = a.dim(1), Db = b.dim(1);
  TensorF out({T, Da + Db});
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t j = 0; j < Da; ++j) out(t, j) = a(t, j);
    for (int64_t j = 0; j < Db; ++j) out(t, Da + j) = b(t, j);
  }
  return out;
}

void concat_cols_backward(const TensorF& a, const TensorF& b,
                          const TensorF& grad_out, TensorF* ga, TensorF* gb) {
  const int64_t T = a.dim(0), Da = a.dim(1), Db = b.dim(1);
  for (int64_t t = 0; t < T; ++t) {
    if (ga)
      for (int64_t j = 0; j < Da; ++j) (*ga)(t, j) += grad_out(t, j);
    if (gb)
      for (int64_t j = 0; j < Db; ++j) (*gb)(t, j) += grad_out(t, Da + j);
  }
}

TensorF transpose(const TensorF& x) {
  if (x.rank() != 2)
    throw std::invalid_argument("transpose: need a rank-2 tensor, got " +
                                shape_str(x.shape));
  const int64_t r = x.dim(0), c = x.dim(1);
  TensorF out = zeros({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out(j, i) = x(i, j);
  return out;
}

void transpose_backward(const TensorF& grad_out, TensorF* gx) {
  if (!gx) return;
  const int64_t c = grad_out.dim(0), r = grad_out.dim(1);
  for (int64_t j = 0; j < c; ++j)
    for (int64_t i = 0; i < r; ++i) (*gx)(i, j) += grad_out(j, i);
}

TensorF add(const TensorF& a, const TensorF& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("add: shapes differ, " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
  TensorF out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

TensorF add_scaled(const TensorF& a, const TensorF& b, const TensorF& alpha) {
  if (!a.same_shape(b))
    throw std::invalid_argument("add_scaled: shapes differ, " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
  if (alpha.numel() != 1)
    throw std::invalid_argument("add_scaled: alpha must be a single scalar");
  const double al = alpha.data[0];
  TensorF out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += al * b.data[i];
  return out;
}

void add_scaled_backward(const TensorF& b, const TensorF& alpha,
                         const TensorF& grad_out, TensorF* ga, TensorF* gb,
                         TensorF* galpha) {
  const double al = alpha.data[0];
  double gdot = 0.0;
  for (size_t i = 0; i < b.data.size(); ++i) {
    const double g = grad_out.data[i];
    if (ga) ga->data[i] += g;
    if (gb) gb->data[i] += al * g;
    gdot += g * b.data[i];
  }
  if (galpha) galpha->data[0] += gdot;
}

TensorF gelu(const TensorF& x) {
  TensorF out = x;
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return out;
}

void gelu_backward(const TensorF& x, const TensorF& grad_out, TensorF* gx) {
  if (!gx) return;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double v = x.data[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
    gx->data[i] += grad_out.data[i] * (cdf + v * pdf);
  }
}

TensorF mean_rows(const TensorF& x) {
  require_rank(x, 2, "mean_rows input");
  const int64_t T = x.dim(0), D = x.dim(1);
  TensorF out({D});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t j = 0; j < D; ++j) out(j) += x(t, j);
  for (int64_t j = 0; j < D; ++j) out(j) /= static_cast<double>(T);
  return out;
}

void mean_rows_backward(const TensorF& x, const TensorF& grad_out, TensorF* gx) {
  if (!gx) return;
  const int64_t T = x.dim(0), D = x.dim(1);
  const double inv = 1.0 / static_cast<double>(T);
  for (int64_t t = 0; t < T; ++t)
    for (int64_t j = 0; j < D; ++j) (*gx)(t, j) += grad_out(j) * inv;
}

TensorF embed_mean(const TensorF& E, const std::vector<int>& ids) {
  require_rank(E, 2, "embed_mean table");
  if (ids.empty())
    throw std::invalid_argument("embed_mean: token id list is empty");
  const int64_t V = E.dim(0), D = E.dim(1);
  TensorF out({D});
  for (int id : ids) {
    if (id < 0 || id >= V)
      throw std::invalid_argument("embed_mean: token id " + std::to_string(id) +
                                  " outside vocabulary of " + std::to_string(V));
    for (int64_t j = 0; j < D; ++j) out(j) += E(id, j);
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (int64_t j = 0; j < D; ++j) out(j) *= inv;
  return out;
}

void embed_mean_backward(const TensorF& E, const std::vector<int>& ids,
                         const TensorF& grad_out, TensorF* gE) {
  if (!gE) return;
  const int64_t D = E.dim(1);
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (int id : ids)
    for (int64_t j = 0; j < D; ++j) (*gE)(id, j) += grad_out(j) * inv;
}

double softmax_xent(const TensorF& logits, int target) {
  require_rank(logits, 1, "softmax_xent logits");
  const int64_t V = logits.dim(0);
  if (target < 0 || target >= V)
    throw std::invalid_argument("softmax_xent: target " + std::to_string(target) +
                                " outside vocabulary of " + std::to_string(V));
  double mx = logits(0);
  for (int64_t v = 1; v < V; ++v) mx = std::max(mx, logits(v));
  double sum = 0.0;
  for (int64_t v = 0; v < V; ++v) sum += std::exp(logits(v) - mx);
  return mx + std::log(sum) - logits(target);
}

void softmax_xent_backward(const TensorF& logits, int target, double grad_loss,
                           TensorF* glogits) {
  if (!glogits) return;
  const int64_t V = logits.dim(0);
  double mx = logits(0);
  for (int64_t v = 1; v < V; ++v) mx = std::max(mx, logits(v));
  double sum = 0.0;
  for (int64_t v = 0; v < V; ++v) sum += std::exp(logits(v) - mx);
  for (int64_t v = 0; v < V; ++v) {
    const double p = std::exp(logits(v) - mx) / sum;
    (*glogits)(v) += grad_loss * (p - (v == target ? 1.0 : 0.0));
  }
}

std::vector<double> softmax(const TensorF& logits, double temperature) {
  require_rank(logits, 1, "softmax logits");
  if (temperature <= 0.0)
    throw std::invalid_argument("softmax: temperature must be positive");
  const int64_t V = logits.dim(0);
  std::vector<double> p(static_cast<size_t>(V));
  double mx = logits(0) / temperature;
  for (int64_t v = 1; v < V; ++v) mx = std::max(mx, logits(v) / temperature);
  double sum = 0.0;
  for (int64_t v = 0; v < V; ++v) {
    p[static_cast<size_t>(v)] = std::exp(logits(v) / temperature - mx);
    sum += p[static_cast<size_t>(v)];
  }
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace segfuse
