#include "fedrefine/model_grad.hpp"

#include <cmath>
#include <stdexcept>

#include "fedrefine/nn_ops.hpp"

namespace fedrefine {

ParamRefs LmGrads::params() {
  ParamRefs refs;
  refs.push_back({"tok_embed", tok_embed.data.data(), tok_embed.size()});
  for (size_t l = 0; l < layers.size(); ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    LayerWeights& w = layers[l];
    refs.push_back({p + "att_norm", w.att_norm.data.data(), w.att_norm.size()});
    refs.push_back({p + "wq", w.wq.data.data(), w.wq.size()});
    refs.push_back({p + "wk", w.wk.data.data(), w.wk.size()});
    refs.push_back({p + "wv", w.wv.data.data(), w.wv.size()});
    refs.push_back({p + "wo", w.wo.data.data(), w.wo.size()});
    refs.push_back({p + "mlp_norm", w.mlp_norm.data.data(), w.mlp_norm.size()});
    refs.push_back({p + "w_gate", w.w_gate.data.data(), w.w_gate.size()});
    refs.push_back({p + "w_up", w.w_up.data.data(), w.w_up.size()});
    refs.push_back({p + "w_down", w.w_down.data.data(), w.w_down.size()});
  }
  refs.push_back({"final_norm", final_norm.data.data(), final_norm.size()});
  refs.push_back({"out_head", out_head.data.data(), out_head.size()});
  return refs;
}

LmGrads zero_grads(const TransformerModel& m) {
  LmGrads g;
  g.tok_embed = Tensor::zeros(m.tok_embed.shape);
  for (const LayerWeights& w : m.layers) {
    LayerWeights z;
    z.att_norm = Tensor::zeros(w.att_norm.shape);
    z.wq = Tensor::zeros(w.wq.shape);
    z.wk = Tensor::zeros(w.wk.shape);
    z.wv = Tensor::zeros(w.wv.shape);
    z.wo = Tensor::zeros(w.wo.shape);
    z.mlp_norm = Tensor::zeros(w.mlp_norm.shape);
    z.w_gate = Tensor::zeros(w.w_gate.shape);
    z.w_up = Tensor::zeros(w.w_up.shape);
    z.w_down = Tensor::zeros(w.w_down.shape);
    g.layers.push_back(std::move(z));
  }
  g.final_norm = Tensor::zeros(m.final_norm.shape);
  g.out_head = Tensor::zeros(m.out_head.shape);
  return g;
}

PastKvGrads zero_past_grads(const ModelConfig& cfg, size_t past_len) {
  cfg.validate();
  PastKvGrads g;
  g.past_len = past_len;
  g.row_elems = cfg.kv_dim();
  g.layers.resize(cfg.n_layers);
  for (PastKvGrads::LayerKv& l : g.layers) {
    l.k.assign(past_len * g.row_elems, 0.0);
    l.v.assign(past_len * g.row_elems, 0.0);
  }
  return g;
}

void backward_batch(const TransformerModel& m, const Trace& trace, const KvCache& result_cache,
                    const std::vector<std::vector<double>>& dlogits, LmGrads* wgrads,
                    PastKvGrads* past_grads) {
  const ModelConfig& cfg = m.config;
  size_t T = trace.tokens.size();
  size_t P = trace.past_len;
  if (T == 0) throw std::invalid_argument("backward_batch: empty trace");
  if (trace.layers.size() != cfg.n_layers || trace.final_in.size() != T ||
      trace.final_normed.size() != T)
    throw std::invalid_argument("backward_batch: trace does not match the model");
  if (!result_cache.geometry_matches(cfg) || result_cache.seq_len != P + T)
    throw std::invalid_argument("backward_batch: cache does not match the trace");
  if (dlogits.size() != T)
    throw std::invalid_argument("backward_batch: one dlogits vector per fed position required");
  for (const std::vector<double>& dl : dlogits) {
    if (dl.size() != cfg.vocab_size)
      throw std::invalid_argument("backward_batch: dlogits width must equal vocab size");
  }
  if (past_grads &&
      (past_grads->past_len != P || past_grads->row_elems != cfg.kv_dim() ||
       past_grads->layers.size() != cfg.n_layers))
    throw std::invalid_argument("backward_batch: past gradient buffer has wrong geometry");

  size_t d = cfg.d_model, H = cfg.n_heads, Hk = cfg.n_kv_heads, hd = cfg.head_dim;
  size_t qd = cfg.q_dim(), kvd = cfg.kv_dim(), ff = cfg.ff_dim();
  size_t group = H / Hk;
  double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> freqs;
  rope_freqs(hd, freqs);

  // Norm-gain gradients are accumulated unconditionally; this buffer absorbs
  // them when no weight gradients were requested.
  std::vector<double> gain_sink(d, 0.0);

  // Gradient with respect to the residual stream, maintained per fed
  // position as the pass walks back through the blocks.
  std::vector<std::vector<double>> dx(T, std::vector<double>(d, 0.0));

  std::vector<double> dfn(d);
  for (size_t t = 0; t < T; ++t) {
    std::fill(dfn.begin(), dfn.end(), 0.0);
    matvec_backward(m.out_head.data.data(), cfg.vocab_size, d, trace.final_normed[t].data(),
                    dlogits[t].data(), dfn.data(),
                    wgrads ? wgrads->out_head.data.data() : nullptr);
    rms_norm_backward(trace.final_in[t], m.final_norm.data, dfn, dx[t],
                      wgrads ? std::span<double>(wgrads->final_norm.data)
                             : std::span<double>(gain_sink));
  }

  std::vector<double> dact(ff), dgate(ff), dup(ff), dn(d), dctx(qd);
  for (size_t li = cfg.n_layers; li-- > 0;) {
    const LayerWeights& w = m.layers[li];
    const LayerTrace& lt = trace.layers[li];
    LayerWeights* gw = wgrads ? &wgrads->layers[li] : nullptr;
    if (lt.x_in.size() != T || lt.probs.size() != T)
      throw std::invalid_argument("backward_batch: layer trace does not match the fed tokens");

    // Feed-forward block; the residual add means dx[t] is both the branch
    // gradient and the pass-through, so the norm backward accumulates into it.
    for (size_t t = 0; t < T; ++t) {
      std::fill(dact.begin(), dact.end(), 0.0);
      matvec_backward(w.w_down.data.data(), d, ff, lt.act_h[t].data(), dx[t].data(), dact.data(),
                      gw ? gw->w_down.data.data() : nullptr);
      for (size_t i = 0; i < ff; ++i) {
        dgate[i] = dact[i] * lt.up_pre[t][i] * silu_grad(lt.gate_pre[t][i]);
        dup[i] = dact[i] * silu(lt.gate_pre[t][i]);
      }
      std::fill(dn.begin(), dn.end(), 0.0);
      matvec_backward(w.w_gate.data.data(), ff, d, lt.x_mid_n[t].data(), dgate.data(), dn.data(),
                      gw ? gw->w_gate.data.data() : nullptr);
      matvec_backward(w.w_up.data.data(), ff, d, lt.x_mid_n[t].data(), dup.data(), dn.data(),
                      gw ? gw->w_up.data.data() : nullptr);
      rms_norm_backward(lt.x_mid[t], w.mlp_norm.data, dn, dx[t],
                        gw ? std::span<double>(gw->mlp_norm.data) : std::span<double>(gain_sink));
    }

    // Attention.  First accumulate query/key/value gradients over every fed
    // position (row u collects from all positions that attend to it), then
    // walk the rows back through the rotation and projections.
    std::vector<std::vector<double>> dq(T, std::vector<double>(qd, 0.0));
    std::vector<std::vector<double>> dk(P + T, std::vector<double>(kvd, 0.0));
    std::vector<std::vector<double>> dv(P + T, std::vector<double>(kvd, 0.0));
    std::vector<double> dprobs, dscores;
    for (size_t t = 0; t < T; ++t) {
      std::fill(dctx.begin(), dctx.end(), 0.0);
      matvec_backward(w.wo.data.data(), d, qd, lt.ctx[t].data(), dx[t].data(), dctx.data(),
                      gw ? gw->wo.data.data() : nullptr);
      size_t ctx_len = P + t + 1;
      dprobs.resize(ctx_len);
      dscores.resize(ctx_len);
      for (size_t h = 0; h < H; ++h) {
        size_t kh = h / group;
        const double* dch = dctx.data() + h * hd;
        const std::vector<double>& pr = lt.probs[t][h];
        if (pr.size() != ctx_len)
          throw std::invalid_argument("backward_batch: attention trace width mismatch");
        for (size_t u = 0; u < ctx_len; ++u) {
          const double* vu = result_cache.v_at(li, u) + kh * hd;
          double acc = 0.0;
          for (size_t i = 0; i < hd; ++i) acc += dch[i] * vu[i];
          dprobs[u] = acc;
        }
        double mixed = 0.0;
        for (size_t u = 0; u < ctx_len; ++u) mixed += pr[u] * dprobs[u];
        for (size_t u = 0; u < ctx_len; ++u) dscores[u] = pr[u] * (dprobs[u] - mixed);
        const double* qh = lt.q_rot[t].data() + h * hd;
        double* dqh = dq[t].data() + h * hd;
        for (size_t u = 0; u < ctx_len; ++u) {
          double g = dscores[u] * inv_sqrt_hd;
          const double* ku = result_cache.k_at(li, u) + kh * hd;
          double* dku = dk[u].data() + kh * hd;
          double* dvu = dv[u].data() + kh * hd;
          double p = pr[u];
          for (size_t i = 0; i < hd; ++i) {
            dqh[i] += g * ku[i];
            dku[i] += g * qh[i];
            dvu[i] += p * dch[i];
          }
        }
      }
    }

    if (past_grads) {
      PastKvGrads::LayerKv& pg = past_grads->layers[li];
      for (size_t u = 0; u < P; ++u) {
        for (size_t i = 0; i < kvd; ++i) {
          pg.k[u * kvd + i] += dk[u][i];
          pg.v[u * kvd + i] += dv[u][i];
        }
      }
    }

    for (size_t j = 0; j < T; ++j) {
      double pos = static_cast<double>(trace.position_base + P + j);
      for (size_t h = 0; h < H; ++h) rope_rotate_inverse(dq[j].data() + h * hd, freqs, pos);
      for (size_t h = 0; h < Hk; ++h)
        rope_rotate_inverse(dk[P + j].data() + h * hd, freqs, pos);
      std::fill(dn.begin(), dn.end(), 0.0);
      matvec_backward(w.wq.data.data(), qd, d, lt.xn[j].data(), dq[j].data(), dn.data(),
                      gw ? gw->wq.data.data() : nullptr);
      matvec_backward(w.wk.data.data(), kvd, d, lt.xn[j].data(), dk[P + j].data(), dn.data(),
                      gw ? gw->wk.data.data() : nullptr);
      matvec_backward(w.wv.data.data(), kvd, d, lt.xn[j].data(), dv[P + j].data(), dn.data(),
                      gw ? gw->wv.data.data() : nullptr);
      rms_norm_backward(lt.x_in[j], w.att_norm.data, dn, dx[j],
                        gw ? std::span<double>(gw->att_norm.data) : std::span<double>(gain_sink));
    }
  }

  if (wgrads) {
    for (size_t t = 0; t < T; ++t) {
      double* row = wgrads->tok_embed.row(static_cast<size_t>(trace.tokens[t]));
      for (size_t i = 0; i < d; ++i) row[i] += dx[t][i];
    }
  }
}

}  // namespace fedrefine
