#include "fedrefine/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include "fedrefine/nn_ops.hpp"

namespace fedrefine {

size_t MlpParams::in_dim() const {
  if (layers.empty()) throw std::invalid_argument("MlpParams: no layers");
  return layers.front().w.dim(1);
}

size_t MlpParams::out_dim() const {
  if (layers.empty()) throw std::invalid_argument("MlpParams: no layers");
  return layers.back().w.dim(0);
}

void MlpParams::validate() const {
  if (layers.empty()) throw std::invalid_argument("MlpParams: no layers");
  for (size_t i = 0; i < layers.size(); ++i) {
    const LinearLayer& l = layers[i];
    if (l.w.rank() != 2 || l.b.rank() != 1 || l.b.dim(0) != l.w.dim(0))
      throw std::invalid_argument("MlpParams: malformed layer");
    if (i > 0 && l.w.dim(1) != layers[i - 1].w.dim(0))
      throw std::invalid_argument("MlpParams: layer dims do not chain");
    if (!l.w.all_finite() || !l.b.all_finite())
      throw std::invalid_argument("MlpParams: non-finite weights");
  }
}

ParamRefs MlpParams::params(const std::string& prefix) {
  ParamRefs refs;
  for (size_t i = 0; i < layers.size(); ++i) {
    std::string tag = prefix + ".l" + std::to_string(i);
    refs.push_back({tag + ".w", layers[i].w.data.data(), layers[i].w.size()});
    refs.push_back({tag + ".b", layers[i].b.data.data(), layers[i].b.size()});
  }
  return refs;
}

MlpParams make_mlp(const std::vector<size_t>& dims, Activation act, std::mt19937_64& rng,
                   double last_layer_scale) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least in and out dims");
  MlpParams p;
  p.act = act;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    double scale = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    if (i + 2 == dims.size()) scale *= last_layer_scale;
    LinearLayer l;
    l.w = Tensor::randn({dims[i + 1], dims[i]}, rng, scale);
    l.b = Tensor::zeros({dims[i + 1]});
    p.layers.push_back(std::move(l));
  }
  return p;
}

MlpParams identity_mlp(size_t dim, size_t n_layers) {
  if (dim == 0 || n_layers == 0) throw std::invalid_argument("identity_mlp: bad dims");
  MlpParams p;
  p.act = Activation::Linear;
  for (size_t i = 0; i < n_layers; ++i) {
    LinearLayer l;
    l.w = Tensor::zeros({dim, dim});
    for (size_t j = 0; j < dim; ++j) l.w.at2(j, j) = 1.0;
    l.b = Tensor::zeros({dim});
    p.layers.push_back(std::move(l));
  }
  return p;
}

MlpParams zeros_like(const MlpParams& p) {
  MlpParams g;
  g.act = p.act;
  for (const LinearLayer& l : p.layers) {
    LinearLayer z;
    z.w = Tensor::zeros(l.w.shape);
    z.b = Tensor::zeros(l.b.shape);
    g.layers.push_back(std::move(z));
  }
  return g;
}

static Tensor as_rows(const Tensor& x, size_t expect_cols, bool& was_rank1) {
  was_rank1 = x.rank() == 1;
  if (x.rank() == 1) {
    if (x.dim(0) != expect_cols) throw std::invalid_argument("mlp_forward: input dim mismatch");
    Tensor r({1, expect_cols});
    r.data = x.data;
    return r;
  }
  if (x.rank() != 2 || x.dim(1) != expect_cols)
    throw std::invalid_argument("mlp_forward: input dim mismatch");
  return x;
}

static Tensor run_forward(const MlpParams& p, const Tensor& x, MlpTrace* trace,
                          bool& was_rank1) {
  p.validate();
  Tensor cur = as_rows(x, p.in_dim(), was_rank1);
  size_t n = cur.dim(0);
  for (size_t li = 0; li < p.layers.size(); ++li) {
    const LinearLayer& l = p.layers[li];
    size_t rows = l.w.dim(0), cols = l.w.dim(1);
    if (trace) trace->inputs.push_back(cur);
    Tensor nxt({n, rows});
    for (size_t i = 0; i < n; ++i) {
      matvec(l.w.data.data(), rows, cols, cur.row(i), nxt.row(i));
      for (size_t r = 0; r < rows; ++r) nxt.row(i)[r] += l.b.data[r];
    }
    if (trace) trace->pre.push_back(nxt);
    if (li + 1 < p.layers.size() && p.act == Activation::Silu) {
      for (double& v : nxt.data) v = silu(v);
    }
    cur = std::move(nxt);
  }
  return cur;
}

Tensor mlp_forward(const MlpParams& p, const Tensor& x) {
  bool rank1 = false;
  Tensor out = run_forward(p, x, nullptr, rank1);
  if (rank1) out.shape = {out.dim(1)};
  return out;
}

Tensor mlp_forward_traced(const MlpParams& p, const Tensor& x, MlpTrace& trace) {
  trace.inputs.clear();
  trace.pre.clear();
  bool rank1 = false;
  Tensor out = run_forward(p, x, &trace, rank1);
  if (rank1) out.shape = {out.dim(1)};
  return out;
}

Tensor mlp_backward(const MlpParams& p, const MlpTrace& trace, const Tensor& dout,
                    MlpParams& grads) {
  if (trace.inputs.size() != p.layers.size() || grads.layers.size() != p.layers.size())
    throw std::invalid_argument("mlp_backward: trace or grads mismatch");
  bool rank1 = dout.rank() == 1;
  Tensor d = dout;
  if (rank1) d.shape = {1, dout.dim(0)};
  size_t n = d.dim(0);
  for (size_t li = p.layers.size(); li-- > 0;) {
    const LinearLayer& l = p.layers[li];
    size_t rows = l.w.dim(0), cols = l.w.dim(1);
    if (d.dim(1) != rows) throw std::invalid_argument("mlp_backward: dout dim mismatch");
    if (li + 1 < p.layers.size() && p.act == Activation::Silu) {
      for (size_t i = 0; i < n; ++i) {
        const double* pre = trace.pre[li].row(i);
        double* dr = d.row(i);
        for (size_t r = 0; r < rows; ++r) dr[r] *= silu_grad(pre[r]);
      }
    }
    Tensor dx({n, cols});
    for (size_t i = 0; i < n; ++i) {
      matvec_backward(l.w.data.data(), rows, cols, trace.inputs[li].row(i), d.row(i),
                      dx.row(i), grads.layers[li].w.data.data());
      for (size_t r = 0; r < rows; ++r) grads.layers[li].b.data[r] += d.row(i)[r];
    }
    d = std::move(dx);
  }
  if (rank1) d.shape = {d.dim(1)};
  return d;
}

}  // namespace fedrefine
