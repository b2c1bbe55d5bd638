#include "fedrefine/params.hpp"

#include <cstring>
#include <stdexcept>

namespace fedrefine {

size_t total_params(const ParamRefs& refs) {
  size_t n = 0;
  for (const ParamBlock& b : refs) n += b.count;
  return n;
}

std::vector<double> pack(const ParamRefs& refs) {
  std::vector<double> flat;
  flat.reserve(total_params(refs));
  for (const ParamBlock& b : refs) flat.insert(flat.end(), b.data, b.data + b.count);
  return flat;
}

void unpack(std::span<const double> flat, const ParamRefs& refs) {
  if (flat.size() != total_params(refs))
    throw std::invalid_argument("unpack: flat size does not match param blocks");
  size_t off = 0;
  for (const ParamBlock& b : refs) {
    std::memcpy(b.data, flat.data() + off, b.count * sizeof(double));
    off += b.count;
  }
}

void zero_blocks(const ParamRefs& refs) {
  for (const ParamBlock& b : refs) std::memset(b.data, 0, b.count * sizeof(double));
}

}  // namespace fedrefine
