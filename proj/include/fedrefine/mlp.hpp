#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "fedrefine/params.hpp"
#include "fedrefine/tensor.hpp"

namespace fedrefine {

enum class Activation { Linear, Silu };

struct LinearLayer {
  Tensor w;  // [out, in]
  Tensor b;  // [out]
};

// Fully connected stack.  The activation sits between layers, never after
// the last one, so a Linear stack of identity layers is an exact identity.
struct MlpParams {
  std::vector<LinearLayer> layers;
  Activation act = Activation::Silu;

  size_t in_dim() const;
  size_t out_dim() const;
  void validate() const;
  ParamRefs params(const std::string& prefix);
};

// dims = {in, hidden..., out}; one linear layer per adjacent pair.
MlpParams make_mlp(const std::vector<size_t>& dims, Activation act, std::mt19937_64& rng,
                   double last_layer_scale = 1.0);
MlpParams identity_mlp(size_t dim, size_t n_layers = 3);
MlpParams zeros_like(const MlpParams& p);

// x is rank 1 [in] or rank 2 [n, in]; output has the same rank.
Tensor mlp_forward(const MlpParams& p, const Tensor& x);

struct MlpTrace {
  std::vector<Tensor> inputs;  // input to each layer, rank 2 [n, in_l]
  std::vector<Tensor> pre;     // pre-activation output of each layer
};

Tensor mlp_forward_traced(const MlpParams& p, const Tensor& x, MlpTrace& trace);
// Accumulates parameter grads into `grads` (same shapes as p) and returns
// the gradient with respect to x.
Tensor mlp_backward(const MlpParams& p, const MlpTrace& trace, const Tensor& dout,
                    MlpParams& grads);

}  // namespace fedrefine
