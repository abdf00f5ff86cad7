#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "segfuse/tensor.hpp"

namespace segfuse {

struct ParamRef {
  std::string name;
  TensorF* tensor;
};

struct CheckFailure {
  std::string param;
  int64_t index;
  double analytic;
  double numeric;
  double rel_err;
};

struct CheckReport {
  bool pass = true;
  int64_t entries_checked = 0;
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  std::vector<CheckFailure> failures;
};

// Central-difference verification of analytic gradients.
//
// loss_value() evaluates the scalar loss at the params' current contents;
// grad_check perturbs each entry in place (restoring it afterwards) and
// compares (loss(x+eps) - loss(x-eps)) / (2 eps) against the analytic
// gradient, using the relative error |analytic - numeric| / max(1, |numeric|).
// analytic_grads() must return one gradient per ParamRef, shape-matched.
CheckReport grad_check(const std::function<double()>& loss_value,
                       const std::function<std::vector<TensorF>()>& analytic_grads,
                       const std::vector<ParamRef>& params, double eps = 1e-6,
                       double tol = 1e-4, size_t max_failures = 8);

}  // namespace segfuse
