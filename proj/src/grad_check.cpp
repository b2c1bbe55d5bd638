#include "fedrefine/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace fedrefine {

double grad_check(const std::function<double()>& loss_with_grads, const ParamRefs& params,
                  const ParamRefs& grads, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw std::invalid_argument("grad_check: eps outside [1e-7, 1e-3]");
  if (params.size() != grads.size())
    throw std::invalid_argument("grad_check: param and grad block counts differ");

  double base = loss_with_grads();
  if (!std::isfinite(base)) throw std::invalid_argument("grad_check: non-finite loss");
  std::vector<double> analytic = pack(grads);

  double worst = 0.0;
  size_t flat = 0;
  for (size_t b = 0; b < params.size(); ++b) {
    if (params[b].count != grads[b].count)
      throw std::invalid_argument("grad_check: block shape mismatch");
    for (size_t j = 0; j < params[b].count; ++j, ++flat) {
      double saved = params[b].data[j];
      params[b].data[j] = saved + eps;
      double up = loss_with_grads();
      params[b].data[j] = saved - eps;
      double down = loss_with_grads();
      params[b].data[j] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw std::invalid_argument("grad_check: non-finite loss under perturbation");
      double fd = (up - down) / (2.0 * eps);
      double a = analytic[flat];
      double err = std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
      if (err > worst) worst = err;
    }
  }
  // Restore the analytic gradient for the unperturbed point.
  loss_with_grads();
  return worst;
}

}  // namespace fedrefine
