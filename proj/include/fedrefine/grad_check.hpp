#pragma once

#include <functional>

#include "fedrefine/params.hpp"

namespace fedrefine {

// Central-difference check of an analytic gradient.  `loss_with_grads` must
// recompute the loss at the current parameter values and refresh `grads`
// each time it is called.  Returns
//   max_i |analytic_i - fd_i| / max(1, |analytic_i|, |fd_i|)
// where fd is the two-sided difference at the given eps.  eps is restricted
// to [1e-7, 1e-3]; a non-finite loss is rejected.
double grad_check(const std::function<double()>& loss_with_grads, const ParamRefs& params,
                  const ParamRefs& grads, double eps);

}  // namespace fedrefine
