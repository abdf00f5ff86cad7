#include "segfuse/optim.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace segfuse {

double cosine_lr(int64_t step, int64_t total, double warmup_ratio,
                 double base_lr) {
  if (total < 1) throw std::invalid_argument("cosine_lr: total must be >= 1");
  if (warmup_ratio < 0.0 || warmup_ratio > 1.0)
    throw std::invalid_argument("cosine_lr: warmup ratio outside [0, 1]");
  if (static_cast<double>(total) * warmup_ratio < 1.0)
    throw std::invalid_argument(
        "cosine_lr: warmup covers less than one step (total " +
        std::to_string(total) + ", ratio " + std::to_string(warmup_ratio) + ")");
  if (step > total) {
    static bool warned = false;
    if (!warned) {
      std::fprintf(stderr,
                   "cosine_lr: step %lld past schedule end %lld, lr clamped "
                   "to 0\n",
                   static_cast<long long>(step), static_cast<long long>(total));
      warned = true;
    }
    return 0.0;
  }
  if (step < 0) step = 0;
  const int64_t warmup = static_cast<int64_t>(
      std::ceil(warmup_ratio * static_cast<double>(total)));
  if (step < warmup)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total) return 0.0;
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

OptimState OptimState::create(const std::vector<const TensorF*>& params,
                              double base_lr, double warmup_ratio,
                              int64_t total_steps) {
  OptimState st;
  st.base_lr = base_lr;
  st.warmup_ratio = warmup_ratio;
  st.total_steps = total_steps;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const TensorF* p : params) {
    st.m.push_back(zeros(p->shape));
    st.v.push_back(zeros(p->shape));
  }
  return st;
}

double adam_step(OptimState& st, const std::vector<TensorF*>& params,
                 const std::vector<const TensorF*>& grads,
                 const std::vector<bool>& trainable) {
  if (params.size() != st.m.size() || grads.size() != st.m.size() ||
      trainable.size() != st.m.size())
    throw std::invalid_argument(
        "adam_step: params/grads/trainable must align with optimizer state (" +
        std::to_string(st.m.size()) + " slots)");
  const double lr =
      cosine_lr(st.step, st.total_steps, st.warmup_ratio, st.base_lr);
  st.step += 1;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(st.beta1, t);
  const double bc2 = 1.0 - std::pow(st.beta2, t);
  for (size_t p = 0; p < params.size(); ++p) {
    if (!trainable[p]) continue;
    TensorF& w = *params[p];
    const TensorF& g = *grads[p];
    if (g.shape != w.shape)
      throw std::invalid_argument("adam_step: grad shape " + shape_str(g.shape) +
                                  " does not match param " + shape_str(w.shape));
    TensorF& m = st.m[p];
    TensorF& v = st.v[p];
    for (size_t i = 0; i < w.data.size(); ++i) {
      const double gi = g.data[i];
      m.data[i] = st.beta1 * m.data[i] + (1.0 - st.beta1) * gi;
      v.data[i] = st.beta2 * v.data[i] + (1.0 - st.beta2) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      w.data[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
  return lr;
}

}  // namespace segfuse
