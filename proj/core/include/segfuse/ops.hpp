#pragma once

#include <cstdint>
#include <vector>

#include "segfuse/tensor.hpp"

namespace segfuse {

// Forward kernels plus matching analytic backwards. Backward functions
// accumulate (+=) into any non-null gradient tensor, which must already be
// allocated at the matching shape; the tape relies on accumulation to sum
// contributions from multiple consumers.

// out = a . b for a [m, k], b [k, n].
TensorF matmul(const TensorF& a, const TensorF& b);
void matmul_backward(const TensorF& a, const TensorF& b, const TensorF& grad_out,
                     TensorF* ga, TensorF* gb);

// x [..., d_in] -> [..., d_out]; leading dimensions are flattened row-wise.
TensorF linear_forward(const TensorF& x, const TensorF& W, const TensorF& b);
void linear_backward(const TensorF& x, const TensorF& W, const TensorF& grad_out,
                     TensorF* gx, TensorF* gW, TensorF* gb);

// Cross-correlation with zero padding: x [c_in, L], K [c_out, c_in, k],
// bias [c_out] -> [c_out, L'] with L' = floor((L + 2 pad - k)/stride) + 1.
TensorF conv1d_forward(const TensorF& x, const TensorF& K, const TensorF& bias,
                       int64_t stride, int64_t pad);
void conv1d_backward(const TensorF& x, const TensorF& K, const TensorF& grad_out,
                     int64_t stride, int64_t pad, TensorF* gx, TensorF* gK,
                     TensorF* gbias);

// Re-statisticize content to style, per feature channel over the token axis
// (population statistics; eps stabilizes the division). Both [T, D], T >= 2.
TensorF adain(const TensorF& content, const TensorF& style, double eps = 1e-5);
void adain_backward(const TensorF& content, const TensorF& style, double eps,
                    const TensorF& grad_out, TensorF* gcontent, TensorF* gstyle);

// Window i of adaptive pooling covers [floor(i L / out), ceil((i+1) L / out)).
TensorF adaptive_avg_pool1d(const TensorF& x, int64_t out_len);
void adaptive_avg_pool1d_backward(const TensorF& x, int64_t out_len,
                                  const TensorF& grad_out, TensorF* gx);

// Same window rule applied to both axes of a single [H, W] map.
TensorF adaptive_avg_pool2d(const TensorF& x, int64_t out_h, int64_t out_w);

// Concatenation along rows ([Ta, D] + [Tb, D]) and along the trailing axis
// ([T, Da] + [T, Db]).
TensorF concat_rows(const TensorF& a, const TensorF& b);
void concat_rows_backward(const TensorF& a, const TensorF& b,
                          const TensorF& grad_out, TensorF* ga, TensorF* gb);
TensorF concat_cols(const TensorF& a, const TensorF& b);
void concat_cols_backward(const TensorF& a, const TensorF& b,
                          const TensorF& grad_out, TensorF* ga, TensorF* gb);

// [r, c] -> [c, r].
TensorF transpose(const TensorF& x);
void transpose_backward(const TensorF& grad_out, TensorF* gx);

TensorF add(const TensorF& a, const TensorF& b);

// out = a + alpha * b with alpha a [1] tensor participating in gradients.
TensorF add_scaled(const TensorF& a, const TensorF& b, const TensorF& alpha);
void add_scaled_backward(const TensorF& b, const TensorF& alpha,
                         const TensorF& grad_out, TensorF* ga, TensorF* gb,
                         TensorF* galpha);

// Exact (erf-based) GELU.
TensorF gelu(const TensorF& x);
void gelu_backward(const TensorF& x, const TensorF& grad_out, TensorF* gx);

// Mean over rows: [T, D] -> [D].
TensorF mean_rows(const TensorF& x);
void mean_rows_backward(const TensorF& x, const TensorF& grad_out, TensorF* gx);

// Mean of embedding rows E[i] over ids: E [V, D] -> [D]. ids must be nonempty.
TensorF embed_mean(const TensorF& E, const std::vector<int>& ids);
void embed_mean_backward(const TensorF& E, const std::vector<int>& ids,
                         const TensorF& grad_out, TensorF* gE);

// Numerically stable log-softmax cross-entropy of logits [V] against target.
double softmax_xent(const TensorF& logits, int target);
void softmax_xent_backward(const TensorF& logits, int target, double grad_loss,
                           TensorF* glogits);

std::vector<double> softmax(const TensorF& logits, double temperature);

}  // namespace segfuse
