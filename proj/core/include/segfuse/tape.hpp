#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "segfuse/ops.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse {

struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over the kernels in ops.hpp. Values are computed eagerly
// on record; backward() replays the recorded closures in reverse, summing
// gradient contributions per node. One tape instance describes one forward
// pass; build a fresh tape per evaluation.
class Tape {
 public:
  Var input(TensorF value);

  const TensorF& val(Var v) const { return nodes_[check(v)].value; }
  // Gradient of the last backward()'s loss w.r.t. this node.
  const TensorF& grad(Var v) const { return grads_[check(v)]; }

  Var linear(Var x, Var W, Var b);
  Var conv1d(Var x, Var K, Var bias, int64_t stride, int64_t pad);
  Var adain(Var content, Var style, double eps = 1e-5);
  Var pool1d(Var x, int64_t out_len);
  Var concat_rows(Var a, Var b);
  Var concat_cols(Var a, Var b);
  Var add(Var a, Var b);
  Var add_scaled(Var a, Var b, Var alpha);
  Var transpose(Var x);
  Var matmul(Var a, Var b);
  Var gelu(Var x);
  Var mean_rows(Var x);
  Var embed_mean(Var E, std::vector<int> ids);
  Var xent(Var logits, int target);
  Var mean_scalars(const std::vector<Var>& xs);

  void backward(Var loss);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    TensorF value;
    std::function<void(Tape&, Var self)> back;  // empty for leaves
  };

  size_t check(Var v) const;
  Var push(TensorF value, std::function<void(Tape&, Var)> back);
  TensorF* gptr(Var v) { return &grads_[static_cast<size_t>(v.id)]; }

  std::vector<Node> nodes_;
  std::vector<TensorF> grads_;
};

}  // namespace segfuse
