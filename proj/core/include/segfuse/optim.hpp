#pragma once

#include <cstdint>
#include <vector>

#include "segfuse/tensor.hpp"

namespace segfuse {

// Schedule: linear ramp 0 -> base_lr over the first ceil(warmup_ratio * total)
// steps, then a half-cosine from base_lr down to 0 at step == total. Steps
// past total clamp to 0 (warned once per process).
double cosine_lr(int64_t step, int64_t total, double warmup_ratio,
                 double base_lr);

struct OptimState {
  double base_lr;
  double warmup_ratio;
  int64_t total_steps;
  int64_t step = 0;  // completed updates
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<TensorF> m;  // first moments, aligned with the param list
  std::vector<TensorF> v;  // second moments

  static OptimState create(const std::vector<const TensorF*>& params,
                           double base_lr, double warmup_ratio,
                           int64_t total_steps);
};

// One Adam update at the scheduled learning rate. Slots with
// trainable[i] == false are skipped entirely (values and moments untouched).
// Returns the learning rate that was applied.
double adam_step(OptimState& st, const std::vector<TensorF*>& params,
                 const std::vector<const TensorF*>& grads,
                 const std::vector<bool>& trainable);

}  // namespace segfuse
