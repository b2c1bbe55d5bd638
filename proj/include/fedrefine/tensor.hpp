#pragma once

#include <cstddef>
#include <random>
#include <vector>

namespace fedrefine {

// Dense row-major f64 tensor.  Shapes are explicit; every indexing helper
// bounds-checks its rank against the stored shape.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape_);

  static Tensor zeros(std::vector<size_t> shape);
  static Tensor randn(std::vector<size_t> shape, std::mt19937_64& rng, double stddev);

  size_t size() const { return data.size(); }
  size_t rank() const { return shape.size(); }
  size_t dim(size_t i) const;

  double& at1(size_t i);
  double at1(size_t i) const;
  double& at2(size_t i, size_t j);
  double at2(size_t i, size_t j) const;
  double& at3(size_t i, size_t j, size_t k);
  double at3(size_t i, size_t j, size_t k) const;

  // Pointer to the start of row i of a rank-2 tensor, or of block i of a
  // rank-3 tensor flattened over its trailing two dims.
  double* row(size_t i);
  const double* row(size_t i) const;
  size_t row_elems() const;

  bool same_shape(const Tensor& other) const;
  bool all_finite() const;
  void fill(double v);
};

size_t shape_elems(const std::vector<size_t>& shape);

}  // namespace fedrefine
