#pragma once

#include <span>
#include <vector>

namespace fedrefine {

// Max-subtracted softmax.  Rejects empty or non-finite input.
std::vector<double> softmax(std::span<const double> v);
void softmax_inplace(std::span<double> v);

// -log softmax(logits)[target], evaluated via log-sum-exp.
double cross_entropy(std::span<const double> logits, int target);

double silu(double x);
double silu_grad(double x);

// y_i = gain_i * x_i / sqrt(mean(x^2) + eps), eps = 1e-5.
void rms_norm(std::span<const double> x, std::span<const double> gain, std::span<double> out);
// Accumulates into dx and dgain.
void rms_norm_backward(std::span<const double> x, std::span<const double> gain,
                       std::span<const double> dout, std::span<double> dx,
                       std::span<double> dgain);

// First index of the maximum.  Rejects empty input.
size_t argmax(std::span<const double> v);

// Rotary position frequencies, one per even/odd pair: 10000^(-2i/head_dim).
void rope_freqs(size_t head_dim, std::vector<double>& freqs);
// In-place rotation of one head's slice at absolute position `pos`; the
// inverse applies the opposite angle and is the exact adjoint.
void rope_rotate(double* vec, const std::vector<double>& freqs, double pos);
void rope_rotate_inverse(double* vec, const std::vector<double>& freqs, double pos);

// out = W x for row-major W of shape [rows, cols].
void matvec(const double* w, size_t rows, size_t cols, const double* x, double* out);
// dx += W^T dy; dW += dy x^T.
void matvec_backward(const double* w, size_t rows, size_t cols, const double* x,
                     const double* dy, double* dx, double* dw);

}  // namespace fedrefine
