#include "fedrefine/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fedrefine {

OptimizerState make_sgd(double lr) {
  OptimizerState st;
  st.kind = OptKind::Sgd;
  st.lr = lr;
  return st;
}

OptimizerState make_adam(double lr) {
  OptimizerState st;
  st.kind = OptKind::Adam;
  st.lr = lr;
  return st;
}

void optimizer_step(OptimizerState& st, const ParamRefs& params, const ParamRefs& grads) {
  if (params.size() != grads.size())
    throw std::invalid_argument("optimizer_step: block count mismatch");
  size_t total = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].count != grads[i].count)
      throw std::invalid_argument("optimizer_step: block shape mismatch");
    total += params[i].count;
  }
  if (st.kind == OptKind::Adam) {
    if (st.m.empty()) {
      st.m.assign(total, 0.0);
      st.v.assign(total, 0.0);
    } else if (st.m.size() != total) {
      throw std::invalid_argument("optimizer_step: state size mismatch");
    }
  }

  st.step_count += 1;
  if (st.kind == OptKind::Sgd) {
    for (size_t i = 0; i < params.size(); ++i) {
      double* p = params[i].data;
      const double* g = grads[i].data;
      for (size_t j = 0; j < params[i].count; ++j) p[j] -= st.lr * g[j];
    }
    return;
  }

  double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
  size_t off = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].data;
    const double* g = grads[i].data;
    for (size_t j = 0; j < params[i].count; ++j) {
      size_t k = off + j;
      st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * g[j];
      st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * g[j] * g[j];
      double mhat = st.m[k] / bc1;
      double vhat = st.v[k] / bc2;
      p[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
    off += params[i].count;
  }
}

}  // namespace fedrefine
