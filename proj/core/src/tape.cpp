#include "segfuse/tape.hpp"

#include <stdexcept>
#include <string>
#include <utility>

namespace segfuse {

size_t Tape::check(Var v) const {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
    throw std::invalid_argument("tape: variable id " + std::to_string(v.id) +
                                " is not on this tape");
  return static_cast<size_t>(v.id);
}

Var Tape::push(TensorF value, std::function<void(Tape&, Var)> back) {
  nodes_.push_back(Node{std::move(value), std::move(back)});
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::input(TensorF value) { return push(std::move(value), {}); }

Var Tape::linear(Var x, Var W, Var b) {
  TensorF out = linear_forward(val(x), val(W), val(b));
  return push(std::move(out), [=](Tape& t, Var self) {
    linear_backward(t.val(x), t.val(W), t.grad(self), t.gptr(x), t.gptr(W),
                    t.gptr(b));
  });
}

Var Tape::conv1d(Var x, Var K, Var bias, int64_t stride, int64_t pad) {
  TensorF out = conv1d_forward(val(x), val(K), val(bias), stride, pad);
  return push(std::move(out), [=](Tape& t, Var self) {
    conv1d_backward(t.val(x), t.val(K), t.grad(self), stride, pad, t.gptr(x),
                    t.gptr(K), t.gptr(bias));
  });
}

Var Tape::adain(Var content, Var style, double eps) {
  TensorF out = segfuse::adain(val(content), val(style), eps);
  return push(std::move(out), [=](Tape& t, Var self) {
    adain_backward(t.val(content), t.val(style), eps, t.grad(self),
                   t.gptr(content), t.gptr(style));
  });
}

Var Tape::pool1d(Var x, int64_t out_len) {
  TensorF out = adaptive_avg_pool1d(val(x), out_len);
  return push(std::move(out), [=](Tape& t, Var self) {
    adaptive_avg_pool1d_backward(t.val(x), out_len, t.grad(self), t.gptr(x));
  });
}

Var Tape::concat_rows(Var a, Var b) {
  TensorF out = segfuse::concat_rows(val(a), val(b));
  return push(std::move(out), [=](Tape& t, Var self) {
    concat_rows_backward(t.val(a), t.val(b), t.grad(self), t.gptr(a), t.gptr(b));
  });
}

Var Tape::concat_cols(Var a, Var b) {
  TensorF out = segfuse::concat_cols(val(a), val(b));
  return push(std::move(out), [=](Tape& t, Var self) {
    concat_cols_backward(t.val(a), t.val(b), t.grad(self), t.gptr(a), t.gptr(b));
  });
}

Var Tape::add(Var a, Var b) {
  TensorF out = segfuse::add(val(a), val(b));
  return push(std::move(out), [=](Tape& t, Var self) {
    const TensorF& g = t.grad(self);
    TensorF* ga = t.gptr(a);
    TensorF* gb = t.gptr(b);
    for (size_t i = 0; i < g.data.size(); ++i) {
      ga->data[i] += g.data[i];
      gb->data[i] += g.data[i];
    }
  });
}

Var Tape::add_scaled(Var a, Var b, Var alpha) {
  TensorF out = segfuse::add_scaled(val(a), val(b), val(alpha));
  return push(std::move(out), [=](Tape& t, Var self) {
    add_scaled_backward(t.val(b), t.val(alpha), t.grad(self), t.gptr(a),
                        t.gptr(b), t.gptr(alpha));
  });
}

Var Tape::transpose(Var x) {
  TensorF out = segfuse::transpose(val(x));
  return push(std::move(out), [=](Tape& t, Var self) {
    transpose_backward(t.grad(self), t.gptr(x));
  });
}

Var Tape::matmul(Var a, Var b) {
  TensorF out = segfuse::matmul(val(a), val(b));
  return push(std::move(out), [=](Tape& t, Var self) {
    matmul_backward(t.val(a), t.val(b), t.grad(self), t.gptr(a), t.gptr(b));
  });
}

Var Tape::gelu(Var x) {
  TensorF out = segfuse::gelu(val(x));
  return push(std::move(out), [=](Tape& t, Var self) {
    gelu_backward(t.val(x), t.grad(self), t.gptr(x));
  });
}

Var Tape::mean_rows(Var x) {
  TensorF out = segfuse::mean_rows(val(x));
  return push(std::move(out), [=](Tape& t, Var self) {
    mean_rows_backward(t.val(x), t.grad(self), t.gptr(x));
  });
}

Var Tape::embed_mean(Var E, std::vector<int> ids) {
  TensorF out = segfuse::embed_mean(val(E), ids);
  return push(std::move(out), [=, ids = std::move(ids)](Tape& t, Var self) {
    embed_mean_backward(t.val(E), ids, t.grad(self), t.gptr(E));
  });
}

Var Tape::xent(Var logits, int target) {
  TensorF out({1});
  out.data[0] = softmax_xent(val(logits), target);
  return push(std::move(out), [=](Tape& t, Var self) {
    softmax_xent_backward(t.val(logits), target, t.grad(self).data[0],
                          t.gptr(logits));
  });
}

Var Tape::mean_scalars(const std::vector<Var>& xs) {
  if (xs.empty())
    throw std::invalid_argument("tape: mean_scalars over an empty list");
  TensorF out({1});
  for (Var v : xs) {
    if (val(v).numel() != 1)
      throw std::invalid_argument("tape: mean_scalars inputs must be scalars");
    out.data[0] += val(v).data[0];
  }
  out.data[0] /= static_cast<double>(xs.size());
  std::vector<Var> deps = xs;
  return push(std::move(out), [=, deps = std::move(deps)](Tape& t, Var self) {
    const double g = t.grad(self).data[0] / static_cast<double>(deps.size());
    for (Var v : deps) t.gptr(v)->data[0] += g;
  });
}

void Tape::backward(Var loss) {
  const size_t li = check(loss);
  if (nodes_[li].value.numel() != 1)
    throw std::invalid_argument(
        "tape: backward requires a scalar loss, got shape " +
        shape_str(nodes_[li].value.shape));
  grads_.clear();
  grads_.reserve(nodes_.size());
  for (const Node& n : nodes_) grads_.push_back(zeros(n.value.shape));
  grads_[li].data[0] = 1.0;
  for (size_t i = li + 1; i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back(*this, Var{static_cast<int32_t>(i)});
  }
}

}  // namespace segfuse
