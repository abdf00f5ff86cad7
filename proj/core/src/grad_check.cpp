#include "segfuse/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace segfuse {

CheckReport grad_check(const std::function<double()>& loss_value,
                       const std::function<std::vector<TensorF>()>& analytic_grads,
                       const std::vector<ParamRef>& params, double eps,
                       double tol, size_t max_failures) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
  std::vector<TensorF> grads = analytic_grads();
  if (grads.size() != params.size())
    throw std::invalid_argument(
        "grad_check: got " + std::to_string(grads.size()) +
        " analytic gradients for " + std::to_string(params.size()) + " params");
  for (size_t p = 0; p < params.size(); ++p) {
    if (grads[p].shape != params[p].tensor->shape)
      throw std::invalid_argument("grad_check: gradient shape " +
                                  shape_str(grads[p].shape) + " for param \"" +
                                  params[p].name + "\" of shape " +
                                  shape_str(params[p].tensor->shape));
  }

  CheckReport report;
  for (size_t p = 0; p < params.size(); ++p) {
    TensorF& t = *params[p].tensor;
    for (int64_t i = 0; i < t.numel(); ++i) {
      const size_t ui = static_cast<size_t>(i);
      const double saved = t.data[ui];
      t.data[ui] = saved + eps;
      const double lp = loss_value();
      t.data[ui] = saved - eps;
      const double lm = loss_value();
      t.data[ui] = saved;

      const double numeric = (lp - lm) / (2.0 * eps);
      const double analytic = grads[p].data[ui];
      const double rel =
          std::fabs(analytic - numeric) / std::max(1.0, std::fabs(numeric));
      ++report.entries_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[p].name;
        report.worst_index = i;
      }
      if (rel > tol) {
        report.pass = false;
        if (report.failures.size() < max_failures)
          report.failures.push_back(
              CheckFailure{params[p].name, i, analytic, numeric, rel});
      }
    }
  }
  return report;
}

}  // namespace segfuse
