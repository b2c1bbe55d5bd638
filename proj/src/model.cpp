#include "fedrefine/model.hpp"

#include <cmath>
#include <stdexcept>

#include "fedrefine/model_grad.hpp"
#include "fedrefine/nn_ops.hpp"
#include "fedrefine/rng.hpp"

namespace fedrefine {

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || n_kv_heads == 0 || head_dim == 0 || d_model == 0)
    throw std::invalid_argument("ModelConfig: zero dimension");
  if (vocab_size == 0) throw std::invalid_argument("ModelConfig: vocab_size unset");
  if (max_seq == 0) throw std::invalid_argument("ModelConfig: max_seq unset");
  if (d_model != n_heads * head_dim)
    throw std::invalid_argument("ModelConfig: d_model must equal n_heads * head_dim");
  if (n_heads % n_kv_heads != 0)
    throw std::invalid_argument("ModelConfig: n_heads must be divisible by n_kv_heads");
  if (n_kv_heads > n_heads)
    throw std::invalid_argument("ModelConfig: n_kv_heads exceeds n_heads");
  if (head_dim % 2 != 0)
    throw std::invalid_argument("ModelConfig: head_dim must be even for rotary pairs");
  if (model_id.empty()) throw std::invalid_argument("ModelConfig: model_id unset");
}

bool ModelConfig::same_geometry(const ModelConfig& other) const {
  return n_layers == other.n_layers && n_heads == other.n_heads &&
         n_kv_heads == other.n_kv_heads && head_dim == other.head_dim &&
         d_model == other.d_model && vocab_size == other.vocab_size &&
         max_seq == other.max_seq;
}

uint64_t config_digest(const ModelConfig& cfg) {
  // FNV-1a over the geometry fields and id.
  uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffULL;
      h *= 1099511628211ULL;
    }
  };
  mix(cfg.n_layers);
  mix(cfg.n_heads);
  mix(cfg.n_kv_heads);
  mix(cfg.head_dim);
  mix(cfg.d_model);
  mix(cfg.vocab_size);
  mix(cfg.max_seq);
  for (char c : cfg.model_id) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

KvCache KvCache::empty(const ModelConfig& cfg, size_t position_base) {
  cfg.validate();
  KvCache c;
  c.owner = cfg.model_id;
  c.layers.resize(cfg.n_layers);
  c.n_kv_heads = cfg.n_kv_heads;
  c.head_dim = cfg.head_dim;
  c.seq_len = 0;
  c.position_base = position_base;
  c.max_seq = cfg.max_seq;
  return c;
}

bool KvCache::geometry_matches(const ModelConfig& cfg) const {
  return layers.size() == cfg.n_layers && n_kv_heads == cfg.n_kv_heads &&
         head_dim == cfg.head_dim;
}

void KvCache::append_position() {
  for (LayerKv& l : layers) {
    l.k.resize(l.k.size() + row_elems(), 0.0);
    l.v.resize(l.v.size() + row_elems(), 0.0);
  }
  seq_len += 1;
}

double* KvCache::k_at(size_t layer, size_t pos) {
  if (layer >= layers.size() || pos >= seq_len) throw std::out_of_range("KvCache::k_at");
  return layers[layer].k.data() + pos * row_elems();
}
const double* KvCache::k_at(size_t layer, size_t pos) const {
  return const_cast<KvCache*>(this)->k_at(layer, pos);
}
double* KvCache::v_at(size_t layer, size_t pos) {
  if (layer >= layers.size() || pos >= seq_len) throw std::out_of_range("KvCache::v_at");
  return layers[layer].v.data() + pos * row_elems();
}
const double* KvCache::v_at(size_t layer, size_t pos) const {
  return const_cast<KvCache*>(this)->v_at(layer, pos);
}

ParamRefs TransformerModel::params() {
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

void TransformerModel::validate() const {
  config.validate();
  if (layers.size() != config.n_layers)
    throw std::invalid_argument("TransformerModel: layer count mismatch");
  if (tok_embed.shape != std::vector<size_t>{config.vocab_size, config.d_model})
    throw std::invalid_argument("TransformerModel: tok_embed shape");
  if (out_head.shape != std::vector<size_t>{config.vocab_size, config.d_model})
    throw std::invalid_argument("TransformerModel: out_head shape");
}

TransformerModel init_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  TransformerModel m;
  m.config = cfg;
  auto rng = make_rng(seed);
  double d = static_cast<double>(cfg.d_model);
  m.tok_embed = Tensor::randn({cfg.vocab_size, cfg.d_model}, rng, 0.3);
  for (size_t l = 0; l < cfg.n_layers; ++l) {
    LayerWeights w;
    double s = 1.0 / std::sqrt(d);
    w.att_norm = Tensor::zeros({cfg.d_model});
    w.att_norm.fill(1.0);
    w.wq = Tensor::randn({cfg.q_dim(), cfg.d_model}, rng, s);
    w.wk = Tensor::randn({cfg.kv_dim(), cfg.d_model}, rng, s);
    w.wv = Tensor::randn({cfg.kv_dim(), cfg.d_model}, rng, s);
    w.wo = Tensor::randn({cfg.d_model, cfg.q_dim()}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.q_dim())));
    w.mlp_norm = Tensor::zeros({cfg.d_model});
    w.mlp_norm.fill(1.0);
    w.w_gate = Tensor::randn({cfg.ff_dim(), cfg.d_model}, rng, s);
    w.w_up = Tensor::randn({cfg.ff_dim(), cfg.d_model}, rng, s);
    w.w_down = Tensor::randn({cfg.d_model, cfg.ff_dim()}, rng,
                             1.0 / std::sqrt(static_cast<double>(cfg.ff_dim())));
    m.layers.push_back(std::move(w));
  }
  m.final_norm = Tensor::zeros({cfg.d_model});
  m.final_norm.fill(1.0);
  m.out_head = Tensor::randn({cfg.vocab_size, cfg.d_model}, rng, 1.0 / std::sqrt(d));
  return m;
}

namespace {

void check_tokens(const ModelConfig& cfg, const TokenSeq& tokens) {
  if (tokens.empty()) throw std::invalid_argument("model forward: empty token sequence");
  for (int t : tokens) {
    if (t < 0 || static_cast<size_t>(t) >= cfg.vocab_size)
      throw std::invalid_argument("model forward: token id outside vocabulary");
  }
}

}  // namespace

BatchResult forward_batch(const TransformerModel& m, const TokenSeq& tokens,
                          const KvCache* past, size_t position_base, Trace* trace) {
  const ModelConfig& cfg = m.config;
  check_tokens(cfg, tokens);

  KvCache cache = past ? *past : KvCache::empty(cfg, position_base);
  if (!cache.geometry_matches(cfg))
    throw std::invalid_argument(
        "forward_batch: cache geometry does not match the model (missing or wrong projection?)");
  size_t P = cache.seq_len;
  size_t T = tokens.size();
  if (cache.position_base + P + T > cfg.max_seq)
    throw std::invalid_argument("forward_batch: sequence exceeds max_seq");

  size_t d = cfg.d_model, H = cfg.n_heads, Hk = cfg.n_kv_heads, hd = cfg.head_dim;
  size_t group = H / Hk;
  double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> freqs;
  rope_freqs(hd, freqs);

  for (size_t t = 0; t < T; ++t) cache.append_position();

  if (trace) {
    trace->tokens = tokens;
    trace->past_len = P;
    trace->position_base = cache.position_base;
    trace->layers.assign(cfg.n_layers, {});
    trace->final_in.clear();
    trace->final_normed.clear();
  }

  // Residual stream for every fed position.
  std::vector<std::vector<double>> x(T, std::vector<double>(d));
  for (size_t t = 0; t < T; ++t) {
    const double* e = m.tok_embed.row(static_cast<size_t>(tokens[t]));
    std::copy(e, e + d, x[t].begin());
  }

  std::vector<double> xn(d);
  for (size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& w = m.layers[l];
    LayerTrace* lt = trace ? &trace->layers[l] : nullptr;
    if (lt) {
      lt->x_in.resize(T);
      lt->xn.resize(T);
      lt->q_rot.resize(T);
      lt->ctx.resize(T);
      lt->x_mid.resize(T);
      lt->x_mid_n.resize(T);
      lt->gate_pre.resize(T);
      lt->up_pre.resize(T);
      lt->act_h.resize(T);
      lt->probs.resize(T);
    }

    // QKV for all fed positions; keys and values land in the cache rows.
    std::vector<std::vector<double>> q_all(T, std::vector<double>(cfg.q_dim()));
    for (size_t t = 0; t < T; ++t) {
      double pos = static_cast<double>(cache.position_base + P + t);
      rms_norm(x[t], w.att_norm.data, xn);
      matvec(w.wq.data.data(), cfg.q_dim(), d, xn.data(), q_all[t].data());
      matvec(w.wk.data.data(), cfg.kv_dim(), d, xn.data(), cache.k_at(l, P + t));
      matvec(w.wv.data.data(), cfg.kv_dim(), d, xn.data(), cache.v_at(l, P + t));
      for (size_t h = 0; h < H; ++h) rope_rotate(q_all[t].data() + h * hd, freqs, pos);
      for (size_t h = 0; h < Hk; ++h) rope_rotate(cache.k_at(l, P + t) + h * hd, freqs, pos);
      if (lt) {
        lt->x_in[t] = x[t];
        lt->xn[t] = xn;
        lt->q_rot[t] = q_all[t];
      }
    }

    for (size_t t = 0; t < T; ++t) {
      size_t ctx_len = P + t + 1;
      std::vector<double> ctx(cfg.q_dim(), 0.0);
      if (lt) lt->probs[t].resize(H);
      std::vector<double> scores(ctx_len);
      for (size_t h = 0; h < H; ++h) {
        size_t kh = h / group;
        const double* qh = q_all[t].data() + h * hd;
        for (size_t u = 0; u < ctx_len; ++u) {
          const double* ku = cache.k_at(l, u) + kh * hd;
          double acc = 0.0;
          for (size_t i = 0; i < hd; ++i) acc += qh[i] * ku[i];
          scores[u] = acc * inv_sqrt_hd;
        }
        softmax_inplace(std::span<double>(scores.data(), ctx_len));
        double* ch = ctx.data() + h * hd;
        for (size_t u = 0; u < ctx_len; ++u) {
          const double* vu = cache.v_at(l, u) + kh * hd;
          double pr = scores[u];
          for (size_t i = 0; i < hd; ++i) ch[i] += pr * vu[i];
        }
        if (lt) lt->probs[t][h] = std::vector<double>(scores.begin(), scores.begin() + ctx_len);
      }
      std::vector<double> att(d);
      matvec(w.wo.data.data(), d, cfg.q_dim(), ctx.data(), att.data());
      for (size_t i = 0; i < d; ++i) x[t][i] += att[i];
      if (lt) {
        lt->ctx[t] = ctx;
        lt->x_mid[t] = x[t];
      }
    }

    // SwiGLU feed-forward with its own pre-norm.
    size_t ff = cfg.ff_dim();
    std::vector<double> gate(ff), up(ff), act(ff), down(d);
    for (size_t t = 0; t < T; ++t) {
      rms_norm(x[t], w.mlp_norm.data, xn);
      matvec(w.w_gate.data.data(), ff, d, xn.data(), gate.data());
      matvec(w.w_up.data.data(), ff, d, xn.data(), up.data());
      for (size_t i = 0; i < ff; ++i) act[i] = silu(gate[i]) * up[i];
      matvec(w.w_down.data.data(), d, ff, act.data(), down.data());
      for (size_t i = 0; i < d; ++i) x[t][i] += down[i];
      if (lt) {
        lt->x_mid_n[t] = xn;
        lt->gate_pre[t] = gate;
        lt->up_pre[t] = up;
        lt->act_h[t] = act;
      }
    }
  }

  BatchResult out;
  out.logits.resize(T);
  for (size_t t = 0; t < T; ++t) {
    rms_norm(x[t], m.final_norm.data, xn);
    if (trace) {
      trace->final_in.push_back(x[t]);
      trace->final_normed.push_back(xn);
    }
    out.logits[t].resize(cfg.vocab_size);
    matvec(m.out_head.data.data(), cfg.vocab_size, d, xn.data(), out.logits[t].data());
  }
  out.cache = std::move(cache);
  return out;
}

PrefillResult prefill(const TransformerModel& m, const TokenSeq& tokens,
                      size_t position_base) {
  BatchResult b = forward_batch(m, tokens, nullptr, position_base, nullptr);
  PrefillResult r;
  r.cache = std::move(b.cache);
  r.logits = std::move(b.logits.back());
  return r;
}

// Deliberately separate from forward_batch so the two can cross-check each
// other; keep the math here in plain single-position form.
std::vector<double> decode_step(const TransformerModel& m, KvCache& cache, int token) {
  const ModelConfig& cfg = m.config;
  if (token < 0 || static_cast<size_t>(token) >= cfg.vocab_size)
    throw std::invalid_argument("decode_step: token id outside vocabulary");
  if (!cache.geometry_matches(cfg))
    throw std::invalid_argument(
        "decode_step: cache geometry does not match the model (missing or wrong projection?)");
  if (cache.position_base + cache.seq_len + 1 > cfg.max_seq)
    throw std::invalid_argument("decode_step: no room left before max_seq");

  size_t d = cfg.d_model, H = cfg.n_heads, Hk = cfg.n_kv_heads, hd = cfg.head_dim;
  size_t group = H / Hk;
  double pos = static_cast<double>(cache.position_base + cache.seq_len);
  std::vector<double> freqs;
  rope_freqs(hd, freqs);

  std::vector<double> x(d);
  {
    const double* e = m.tok_embed.row(static_cast<size_t>(token));
    std::copy(e, e + d, x.begin());
  }

  cache.append_position();
  size_t last = cache.seq_len - 1;

  std::vector<double> xn(d), q(cfg.q_dim()), ctx(cfg.q_dim()), att(d);
  for (size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& w = m.layers[l];
    rms_norm(x, w.att_norm.data, xn);
    matvec(w.wq.data.data(), cfg.q_dim(), d, xn.data(), q.data());
    matvec(w.wk.data.data(), cfg.kv_dim(), d, xn.data(), cache.k_at(l, last));
    matvec(w.wv.data.data(), cfg.kv_dim(), d, xn.data(), cache.v_at(l, last));
    for (size_t h = 0; h < H; ++h) rope_rotate(q.data() + h * hd, freqs, pos);
    for (size_t h = 0; h < Hk; ++h) rope_rotate(cache.k_at(l, last) + h * hd, freqs, pos);

    std::fill(ctx.begin(), ctx.end(), 0.0);
    std::vector<double> scores(cache.seq_len);
    for (size_t h = 0; h < H; ++h) {
      size_t kh = h / group;
      const double* qh = q.data() + h * hd;
      for (size_t u = 0; u < cache.seq_len; ++u) {
        const double* ku = cache.k_at(l, u) + kh * hd;
        double acc = 0.0;
        for (size_t i = 0; i < hd; ++i) acc += qh[i] * ku[i];
        scores[u] = acc / std::sqrt(static_cast<double>(hd));
      }
      softmax_inplace(scores);
      double* ch = ctx.data() + h * hd;
      for (size_t u = 0; u < cache.seq_len; ++u) {
        const double* vu = cache.v_at(l, u) + kh * hd;
        for (size_t i = 0; i < hd; ++i) ch[i] += scores[u] * vu[i];
      }
    }
    matvec(w.wo.data.data(), d, cfg.q_dim(), ctx.data(), att.data());
    for (size_t i = 0; i < d; ++i) x[i] += att[i];

    size_t ff = cfg.ff_dim();
    std::vector<double> gate(ff), up(ff), act(ff), down(d);
    rms_norm(x, w.mlp_norm.data, xn);
    matvec(w.w_gate.data.data(), ff, d, xn.data(), gate.data());
    matvec(w.w_up.data.data(), ff, d, xn.data(), up.data());
    for (size_t i = 0; i < ff; ++i) act[i] = silu(gate[i]) * up[i];
    matvec(w.w_down.data.data(), d, ff, act.data(), down.data());
    for (size_t i = 0; i < d; ++i) x[i] += down[i];
  }

  rms_norm(x, m.final_norm.data, xn);
  std::vector<double> logits(cfg.vocab_size);
  matvec(m.out_head.data.data(), cfg.vocab_size, d, xn.data(), logits.data());
  return logits;
}

int greedy_next(const std::vector<double>& logits) {
  return static_cast<int>(argmax(logits));
}

}  // namespace fedrefine
