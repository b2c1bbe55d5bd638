#pragma once

#include <cstddef>
#include <vector>

#include "fedrefine/params.hpp"

namespace fedrefine {

enum class OptKind { Sgd, Adam };

// First-moment / second-moment state is allocated on first use and from then
// on pins the total parameter count; a later mismatch is rejected.
struct OptimizerState {
  OptKind kind = OptKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  size_t step_count = 0;
  std::vector<double> m;
  std::vector<double> v;
};

OptimizerState make_sgd(double lr);
OptimizerState make_adam(double lr);

void optimizer_step(OptimizerState& st, const ParamRefs& params, const ParamRefs& grads);

}  // namespace fedrefine
