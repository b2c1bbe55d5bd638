#include "fedrefine/fuser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <stdexcept>

#include "fedrefine/errors.hpp"
#include "fedrefine/rng.hpp"

namespace fedrefine {

AlignmentMap align_layers(const ModelConfig& sender, const ModelConfig& receiver) {
  sender.validate();
  receiver.validate();
  AlignmentMap a;
  a.sender_layer.resize(receiver.n_layers);
  for (size_t r = 0; r < receiver.n_layers; ++r) {
    a.sender_layer[r] =
        sender.n_layers >= receiver.n_layers ? r : r * sender.n_layers / receiver.n_layers;
  }
  return a;
}

double effective_gate(double raw) { return std::clamp(raw, 0.0, 1.0); }

ParamRefs Fuser::params() {
  ParamRefs refs;
  for (size_t r = 0; r < layers.size(); ++r) {
    std::string p = "layer" + std::to_string(r) + ".";
    ParamRefs k = layers[r].k_proj.params(p + "k.");
    ParamRefs v = layers[r].v_proj.params(p + "v.");
    refs.insert(refs.end(), k.begin(), k.end());
    refs.insert(refs.end(), v.begin(), v.end());
    refs.push_back({p + "gate", &layers[r].gate_raw, 1});
  }
  return refs;
}

void Fuser::validate() const {
  sender_cfg.validate();
  receiver_cfg.validate();
  if (alignment.sender_layer.size() != receiver_cfg.n_layers)
    throw std::invalid_argument("Fuser: alignment must cover every receiver layer");
  for (size_t s : alignment.sender_layer) {
    if (s >= sender_cfg.n_layers)
      throw std::invalid_argument("Fuser: alignment points past the sender's layers");
  }
  if (layers.size() != receiver_cfg.n_layers)
    throw std::invalid_argument("Fuser: one projection pair per receiver layer required");
  for (const FuserLayer& l : layers) {
    l.k_proj.validate();
    l.v_proj.validate();
    if (l.k_proj.layers.size() != 3 || l.v_proj.layers.size() != 3)
      throw std::invalid_argument("Fuser: projections must have exactly 3 layers");
    if (l.k_proj.in_dim() != sender_cfg.kv_dim() || l.k_proj.out_dim() != receiver_cfg.kv_dim() ||
        l.v_proj.in_dim() != sender_cfg.kv_dim() || l.v_proj.out_dim() != receiver_cfg.kv_dim())
      throw std::invalid_argument("Fuser: projection dims do not match the two models");
    if (!std::isfinite(l.gate_raw)) throw std::invalid_argument("Fuser: non-finite gate");
  }
}

Fuser make_fuser(const ModelConfig& sender, const ModelConfig& receiver, FuseMode mode,
                 uint64_t seed) {
  Fuser f;
  f.sender_cfg = sender;
  f.receiver_cfg = receiver;
  f.alignment = align_layers(sender, receiver);
  f.mode = mode;
  auto rng = make_rng(seed);
  size_t in = sender.kv_dim(), out = receiver.kv_dim();
  size_t hidden = 2 * std::max(in, out);
  for (size_t r = 0; r < receiver.n_layers; ++r) {
    FuserLayer l;
    l.k_proj = make_mlp({in, hidden, hidden, out}, Activation::Silu, rng);
    l.v_proj = make_mlp({in, hidden, hidden, out}, Activation::Silu, rng);
    l.gate_raw = 0.1;
    f.layers.push_back(std::move(l));
  }
  f.validate();
  return f;
}

Fuser identity_fuser(const ModelConfig& sender, const ModelConfig& receiver) {
  if (!sender.same_geometry(receiver))
    throw std::invalid_argument("identity_fuser: the two configs must share one geometry");
  Fuser f;
  f.sender_cfg = sender;
  f.receiver_cfg = receiver;
  f.alignment = align_layers(sender, receiver);
  f.mode = FuseMode::Mix;
  for (size_t r = 0; r < receiver.n_layers; ++r) {
    FuserLayer l;
    l.k_proj = identity_mlp(receiver.kv_dim());
    l.v_proj = identity_mlp(receiver.kv_dim());
    l.gate_raw = 0.0;
    f.layers.push_back(std::move(l));
  }
  f.validate();
  return f;
}

Fuser identity_fuser(const ModelConfig& cfg) { return identity_fuser(cfg, cfg); }

namespace {

KvCache receiver_shell(const Fuser& f, const KvCache& sender_cache) {
  KvCache out;
  out.owner = "projected:" + f.sender_id() + "->" + f.receiver_id();
  out.layers.resize(f.receiver_cfg.n_layers);
  out.n_kv_heads = f.receiver_cfg.n_kv_heads;
  out.head_dim = f.receiver_cfg.head_dim;
  out.seq_len = sender_cache.seq_len;
  out.position_base = sender_cache.position_base;
  out.max_seq = f.receiver_cfg.max_seq;
  for (KvCache::LayerKv& l : out.layers) {
    l.k.assign(out.seq_len * out.row_elems(), 0.0);
    l.v.assign(out.seq_len * out.row_elems(), 0.0);
  }
  return out;
}

void check_projectable(const Fuser& f, const KvCache& sender_cache) {
  f.validate();
  if (sender_cache.owner != f.sender_id())
    throw std::invalid_argument("project_cache: cache owner " + sender_cache.owner +
                                " does not match this link's sender " + f.sender_id());
  if (!sender_cache.geometry_matches(f.sender_cfg))
    throw std::invalid_argument("project_cache: sender cache geometry mismatch");
}

Tensor rows_tensor(const std::vector<double>& flat, size_t n, size_t width) {
  Tensor t({n, width});
  std::memcpy(t.data.data(), flat.data(), n * width * sizeof(double));
  return t;
}

KvCache project_impl(const Fuser& f, const KvCache& sender_cache, ProjTrace* trace) {
  check_projectable(f, sender_cache);
  KvCache out = receiver_shell(f, sender_cache);
  size_t L = sender_cache.seq_len;
  if (trace) {
    trace->k.assign(f.layers.size(), {});
    trace->v.assign(f.layers.size(), {});
  }
  if (L == 0) return out;
  size_t in_w = f.sender_cfg.kv_dim(), out_w = f.receiver_cfg.kv_dim();
  for (size_t r = 0; r < f.layers.size(); ++r) {
    size_t s = f.alignment.sender_layer[r];
    Tensor kin = rows_tensor(sender_cache.layers[s].k, L, in_w);
    Tensor vin = rows_tensor(sender_cache.layers[s].v, L, in_w);
    Tensor kout = trace ? mlp_forward_traced(f.layers[r].k_proj, kin, trace->k[r])
                        : mlp_forward(f.layers[r].k_proj, kin);
    Tensor vout = trace ? mlp_forward_traced(f.layers[r].v_proj, vin, trace->v[r])
                        : mlp_forward(f.layers[r].v_proj, vin);
    std::memcpy(out.layers[r].k.data(), kout.data.data(), L * out_w * sizeof(double));
    std::memcpy(out.layers[r].v.data(), vout.data.data(), L * out_w * sizeof(double));
  }
  return out;
}

}  // namespace

KvCache project_cache(const Fuser& f, const KvCache& sender_cache) {
  return project_impl(f, sender_cache, nullptr);
}

KvCache project_cache_traced(const Fuser& f, const KvCache& sender_cache, ProjTrace& trace) {
  return project_impl(f, sender_cache, &trace);
}

ParamRefs FuserGrads::params() {
  ParamRefs refs;
  for (size_t r = 0; r < layers.size(); ++r) {
    std::string p = "layer" + std::to_string(r) + ".";
    ParamRefs k = layers[r].k_proj.params(p + "k.");
    ParamRefs v = layers[r].v_proj.params(p + "v.");
    refs.insert(refs.end(), k.begin(), k.end());
    refs.insert(refs.end(), v.begin(), v.end());
    refs.push_back({p + "gate", &layers[r].gate_raw, 1});
  }
  return refs;
}

FuserGrads zero_fuser_grads(const Fuser& f) {
  FuserGrads g;
  for (const FuserLayer& l : f.layers) {
    FuserLayer z;
    z.k_proj = zeros_like(l.k_proj);
    z.v_proj = zeros_like(l.v_proj);
    z.gate_raw = 0.0;
    g.layers.push_back(std::move(z));
  }
  return g;
}

void project_backward(const Fuser& f, const ProjTrace& trace, const PastKvGrads& dproj,
                      FuserGrads& grads) {
  if (trace.k.size() != f.layers.size() || trace.v.size() != f.layers.size() ||
      dproj.layers.size() != f.layers.size() || grads.layers.size() != f.layers.size())
    throw std::invalid_argument("project_backward: trace/gradient layer counts disagree");
  size_t out_w = f.receiver_cfg.kv_dim();
  if (dproj.row_elems != out_w)
    throw std::invalid_argument("project_backward: row width mismatch");
  size_t L = dproj.past_len;
  if (L == 0) return;
  for (size_t r = 0; r < f.layers.size(); ++r) {
    Tensor dk = rows_tensor(dproj.layers[r].k, L, out_w);
    Tensor dv = rows_tensor(dproj.layers[r].v, L, out_w);
    mlp_backward(f.layers[r].k_proj, trace.k[r], dk, grads.layers[r].k_proj);
    mlp_backward(f.layers[r].v_proj, trace.v[r], dv, grads.layers[r].v_proj);
  }
}

namespace {

void check_receiver_cache(const Fuser& f, const KvCache& c, const char* what) {
  if (!c.geometry_matches(f.receiver_cfg))
    throw std::invalid_argument(std::string("fuse: ") + what +
                                " cache is not in receiver geometry");
}

}  // namespace

KvCache fuse_multi(const std::vector<FusedSource>& sources, const KvCache& own) {
  if (sources.empty()) return own;
  const Fuser& first = *sources[0].fuser;
  std::set<std::string> sender_ids;
  for (const FusedSource& s : sources) {
    if (!s.fuser || !s.projected) throw std::invalid_argument("fuse: null source");
    s.fuser->validate();
    if (s.fuser->mode != first.mode)
      throw std::invalid_argument("fuse: sources disagree on mode");
    if (!s.fuser->receiver_cfg.same_geometry(first.receiver_cfg))
      throw std::invalid_argument("fuse: sources disagree on receiver geometry");
    if (!sender_ids.insert(s.fuser->sender_id()).second)
      throw std::invalid_argument("fuse: duplicate sender " + s.fuser->sender_id());
    check_receiver_cache(*s.fuser, *s.projected, "projected");
  }
  check_receiver_cache(first, own, "own");

  size_t width = own.row_elems();
  KvCache out;
  out.owner = own.owner;
  out.n_kv_heads = own.n_kv_heads;
  out.head_dim = own.head_dim;
  out.max_seq = own.max_seq;
  out.layers.resize(own.layers.size());

  if (first.mode == FuseMode::Mix) {
    for (const FusedSource& s : sources) {
      if (s.projected->seq_len != own.seq_len)
        throw std::invalid_argument("fuse: Mix requires equal sequence lengths");
      if (s.projected->position_base != own.position_base)
        throw std::invalid_argument("fuse: Mix requires matching position bases");
    }
    out.seq_len = own.seq_len;
    out.position_base = own.position_base;
    size_t n = own.seq_len * width;
    for (size_t l = 0; l < own.layers.size(); ++l) {
      // Per-layer effective gates, normalized onto the simplex when their
      // sum passes 1 so the result stays a convex combination.
      std::vector<double> g(sources.size());
      double sum = 0.0;
      for (size_t s = 0; s < sources.size(); ++s) {
        g[s] = effective_gate(sources[s].fuser->layers[l].gate_raw);
        sum += g[s];
      }
      double scale = sum > 1.0 ? 1.0 / sum : 1.0;
      for (double& v : g) v *= scale;

      size_t live = 0, live_idx = 0;
      for (size_t s = 0; s < sources.size(); ++s) {
        if (g[s] != 0.0) {
          live += 1;
          live_idx = s;
        }
      }
      KvCache::LayerKv& ol = out.layers[l];
      if (live == 0) {
        ol.k = own.layers[l].k;
        ol.v = own.layers[l].v;
      } else if (live == 1 && g[live_idx] == 1.0) {
        ol.k = sources[live_idx].projected->layers[l].k;
        ol.v = sources[live_idx].projected->layers[l].v;
      } else {
        ol.k = own.layers[l].k;
        ol.v = own.layers[l].v;
        for (size_t s = 0; s < sources.size(); ++s) {
          if (g[s] == 0.0) continue;
          const KvCache::LayerKv& pl = sources[s].projected->layers[l];
          for (size_t i = 0; i < n; ++i) {
            ol.k[i] += g[s] * (pl.k[i] - own.layers[l].k[i]);
            ol.v[i] += g[s] * (pl.v[i] - own.layers[l].v[i]);
          }
        }
      }
    }
    return out;
  }

  // Concat: projected segments in the given order, own segment last, with
  // contiguous absolute positions across the whole prefix.
  size_t expected = sources[0].projected->position_base;
  out.position_base = expected;
  size_t total = 0;
  for (const FusedSource& s : sources) {
    if (s.projected->position_base != expected)
      throw std::invalid_argument("fuse: Concat segments must be contiguous in position");
    expected += s.projected->seq_len;
    total += s.projected->seq_len;
  }
  if (own.position_base != expected)
    throw std::invalid_argument("fuse: own segment must start where the prefix ends");
  total += own.seq_len;
  out.seq_len = total;
  for (size_t l = 0; l < own.layers.size(); ++l) {
    KvCache::LayerKv& ol = out.layers[l];
    ol.k.reserve(total * width);
    ol.v.reserve(total * width);
    for (const FusedSource& s : sources) {
      const KvCache::LayerKv& pl = s.projected->layers[l];
      ol.k.insert(ol.k.end(), pl.k.begin(), pl.k.end());
      ol.v.insert(ol.v.end(), pl.v.begin(), pl.v.end());
    }
    ol.k.insert(ol.k.end(), own.layers[l].k.begin(), own.layers[l].k.end());
    ol.v.insert(ol.v.end(), own.layers[l].v.begin(), own.layers[l].v.end());
  }
  return out;
}

KvCache fuse(const Fuser& f, const KvCache& projected, const KvCache& own) {
  return fuse_multi({{&f, &projected}}, own);
}

FuseBackward fuse_backward(const Fuser& f, const KvCache& projected, const KvCache& own,
                           const PastKvGrads& dfused) {
  f.validate();
  check_receiver_cache(f, projected, "projected");
  check_receiver_cache(f, own, "own");
  size_t width = f.receiver_cfg.kv_dim();
  if (dfused.row_elems != width || dfused.layers.size() != f.receiver_cfg.n_layers)
    throw std::invalid_argument("fuse_backward: gradient geometry mismatch");

  FuseBackward out;
  out.dgate_raw.assign(f.layers.size(), 0.0);
  out.dproj = zero_past_grads(f.receiver_cfg, projected.seq_len);

  if (f.mode == FuseMode::Concat) {
    if (dfused.past_len != projected.seq_len + own.seq_len)
      throw std::invalid_argument("fuse_backward: gradient length mismatch");
    size_t n = projected.seq_len * width;
    for (size_t l = 0; l < f.layers.size(); ++l) {
      // The projected segment is the first block of rows; gates are unused
      // in Concat mode, so their gradient stays zero.
      std::copy(dfused.layers[l].k.begin(), dfused.layers[l].k.begin() + n,
                out.dproj.layers[l].k.begin());
      std::copy(dfused.layers[l].v.begin(), dfused.layers[l].v.begin() + n,
                out.dproj.layers[l].v.begin());
    }
    return out;
  }

  if (projected.seq_len != own.seq_len || dfused.past_len != own.seq_len)
    throw std::invalid_argument("fuse_backward: gradient length mismatch");
  size_t n = own.seq_len * width;
  for (size_t l = 0; l < f.layers.size(); ++l) {
    double g = effective_gate(f.layers[l].gate_raw);
    const KvCache::LayerKv& pl = projected.layers[l];
    const KvCache::LayerKv& wl = own.layers[l];
    const PastKvGrads::LayerKv& dl = dfused.layers[l];
    PastKvGrads::LayerKv& dp = out.dproj.layers[l];
    double dgate = 0.0;
    for (size_t i = 0; i < n; ++i) {
      dp.k[i] = g * dl.k[i];
      dp.v[i] = g * dl.v[i];
      dgate += dl.k[i] * (pl.k[i] - wl.k[i]);
      dgate += dl.v[i] * (pl.v[i] - wl.v[i]);
    }
    out.dgate_raw[l] = dgate;
  }
  return out;
}

void FuserRegistry::add(Fuser f) {
  f.validate();
  std::pair<std::string, std::string> key{f.sender_id(), f.receiver_id()};
  entries.insert_or_assign(std::move(key), std::move(f));
}

bool FuserRegistry::has(const std::string& sender_id, const std::string& receiver_id) const {
  return entries.count({sender_id, receiver_id}) > 0;
}

const Fuser& FuserRegistry::require(const std::string& sender_id,
                                    const std::string& receiver_id) const {
  auto it = entries.find({sender_id, receiver_id});
  if (it == entries.end())
    throw MissingArtifactError("no fuser for link " + sender_id + " -> " + receiver_id);
  return it->second;
}

}  // namespace fedrefine
