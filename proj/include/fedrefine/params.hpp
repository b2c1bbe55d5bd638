#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fedrefine {

// Non-owning view of one named block of trainable scalars.  Collections of
// blocks are the common currency between models, gradients, the optimizer
// and grad_check; the block order produced by a structure's params() is part
// of its contract and must match the order of its gradient counterpart.
struct ParamBlock {
  std::string name;
  double* data = nullptr;
  size_t count = 0;
};

using ParamRefs = std::vector<ParamBlock>;

size_t total_params(const ParamRefs& refs);
std::vector<double> pack(const ParamRefs& refs);
void unpack(std::span<const double> flat, const ParamRefs& refs);
void zero_blocks(const ParamRefs& refs);

}  // namespace fedrefine
