#include "fedrefine/nn_ops.hpp"

#include <cmath>
#include <stdexcept>

namespace fedrefine {

void softmax_inplace(std::span<double> v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty input");
  double mx = v[0];
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument("softmax: non-finite input");
    if (x > mx) mx = x;
  }
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

std::vector<double> softmax(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  softmax_inplace(out);
  return out;
}

double cross_entropy(std::span<const double> logits, int target) {
  if (logits.empty()) throw std::invalid_argument("cross_entropy: empty logits");
  if (target < 0 || static_cast<size_t>(target) >= logits.size())
    throw std::invalid_argument("cross_entropy: target out of range");
  double mx = logits[0];
  for (double x : logits) {
    if (!std::isfinite(x)) throw std::invalid_argument("cross_entropy: non-finite logits");
    if (x > mx) mx = x;
  }
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - mx);
  return std::log(sum) + mx - logits[target];
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

static constexpr double kNormEps = 1e-5;

void rms_norm(std::span<const double> x, std::span<const double> gain, std::span<double> out) {
  if (x.size() != gain.size() || x.size() != out.size() || x.empty())
    throw std::invalid_argument("rms_norm: size mismatch");
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  double r = 1.0 / std::sqrt(ms + kNormEps);
  for (size_t i = 0; i < x.size(); ++i) out[i] = gain[i] * x[i] * r;
}

void rms_norm_backward(std::span<const double> x, std::span<const double> gain,
                       std::span<const double> dout, std::span<double> dx,
                       std::span<double> dgain) {
  size_t n = x.size();
  if (gain.size() != n || dout.size() != n || dx.size() != n || dgain.size() != n)
    throw std::invalid_argument("rms_norm_backward: size mismatch");
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(n);
  double r = 1.0 / std::sqrt(ms + kNormEps);
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += dout[i] * gain[i] * x[i];
  double coef = r * r * r * s / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    dgain[i] += dout[i] * x[i] * r;
    dx[i] += dout[i] * gain[i] * r - x[i] * coef;
  }
}

size_t argmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax: empty input");
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

void rope_freqs(size_t head_dim, std::vector<double>& freqs) {
  freqs.resize(head_dim / 2);
  for (size_t i = 0; i < freqs.size(); ++i)
    freqs[i] =
        std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(head_dim));
}

void rope_rotate(double* vec, const std::vector<double>& freqs, double pos) {
  for (size_t i = 0; i < freqs.size(); ++i) {
    double ang = pos * freqs[i];
    double c = std::cos(ang), s = std::sin(ang);
    double a = vec[2 * i], b = vec[2 * i + 1];
    vec[2 * i] = a * c - b * s;
    vec[2 * i + 1] = a * s + b * c;
  }
}

void rope_rotate_inverse(double* vec, const std::vector<double>& freqs, double pos) {
  for (size_t i = 0; i < freqs.size(); ++i) {
    double ang = pos * freqs[i];
    double c = std::cos(ang), s = std::sin(ang);
    double a = vec[2 * i], b = vec[2 * i + 1];
    vec[2 * i] = a * c + b * s;
    vec[2 * i + 1] = -a * s + b * c;
  }
}

void matvec(const double* w, size_t rows, size_t cols, const double* x, double* out) {
  for (size_t r = 0; r < rows; ++r) {
    const double* wr = w + r * cols;
    double acc = 0.0;
    for (size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    out[r] = acc;
  }
}

void matvec_backward(const double* w, size_t rows, size_t cols, const double* x,
                     const double* dy, double* dx, double* dw) {
  for (size_t r = 0; r < rows; ++r) {
    const double* wr = w + r * cols;
    double g = dy[r];
    double* dwr = dw ? dw + r * cols : nullptr;
    for (size_t c = 0; c < cols; ++c) {
      if (dx) dx[c] += wr[c] * g;
      if (dwr) dwr[c] += g * x[c];
    }
  }
}

}  // namespace fedrefine
