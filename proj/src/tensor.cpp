#include "fedrefine/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace fedrefine {

size_t shape_elems(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

Tensor::Tensor(std::vector<size_t> shape_) : shape(std::move(shape_)) {
  for (size_t d : shape) {
    if (d == 0) throw std::invalid_argument("Tensor: zero-sized dimension");
  }
  data.assign(shape_elems(shape), 0.0);
}

Tensor Tensor::zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::randn(std::vector<size_t> shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : t.data) x = dist(rng);
  return t;
}

size_t Tensor::dim(size_t i) const {
  if (i >= shape.size()) throw std::out_of_range("Tensor::dim: axis out of range");
  return shape[i];
}

double& Tensor::at1(size_t i) {
  if (rank() != 1 || i >= shape[0]) throw std::out_of_range("Tensor::at1");
  return data[i];
}
double Tensor::at1(size_t i) const { return const_cast<Tensor*>(this)->at1(i); }

double& Tensor::at2(size_t i, size_t j) {
  if (rank() != 2 || i >= shape[0] || j >= shape[1]) throw std::out_of_range("Tensor::at2");
  return data[i * shape[1] + j];
}
double Tensor::at2(size_t i, size_t j) const { return const_cast<Tensor*>(this)->at2(i, j); }

double& Tensor::at3(size_t i, size_t j, size_t k) {
  if (rank() != 3 || i >= shape[0] || j >= shape[1] || k >= shape[2])
    throw std::out_of_range("Tensor::at3");
  return data[(i * shape[1] + j) * shape[2] + k];
}
double Tensor::at3(size_t i, size_t j, size_t k) const {
  return const_cast<Tensor*>(this)->at3(i, j, k);
}

size_t Tensor::row_elems() const {
  if (rank() == 2) return shape[1];
  if (rank() == 3) return shape[1] * shape[2];
  throw std::out_of_range("Tensor::row_elems: rank must be 2 or 3");
}

double* Tensor::row(size_t i) {
  if (i >= shape.at(0)) throw std::out_of_range("Tensor::row");
  return data.data() + i * row_elems();
}
const double* Tensor::row(size_t i) const { return const_cast<Tensor*>(this)->row(i); }

bool Tensor::same_shape(const Tensor& other) const { return shape == other.shape; }

bool Tensor::all_finite() const {
  for (double x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (double& x : data) x = v;
}

}  // namespace fedrefine
