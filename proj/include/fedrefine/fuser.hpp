#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedrefine/mlp.hpp"
#include "fedrefine/model.hpp"
#include "fedrefine/model_grad.hpp"

namespace fedrefine {

enum class FuseMode { Mix, Concat };

// Bottom-anchored layer correspondence: receiver layer r reads sender layer
// sender_layer[r].
struct AlignmentMap {
  std::vector<size_t> sender_layer;
};

AlignmentMap align_layers(const ModelConfig& sender, const ModelConfig& receiver);

// Gate squash: clamp to [0,1].  Both endpoints are attainable exactly;
// training treats the clamp as straight-through so no saturation kills the
// gradient.
double effective_gate(double raw);

struct FuserLayer {
  MlpParams k_proj;
  MlpParams v_proj;
  double gate_raw = 0.1;
};

// Directed cache bridge from one model's KV geometry into another's: one
// projection pair and one gate per receiver layer.
struct Fuser {
  ModelConfig sender_cfg;
  ModelConfig receiver_cfg;
  AlignmentMap alignment;
  std::vector<FuserLayer> layers;
  FuseMode mode = FuseMode::Mix;

  const std::string& sender_id() const { return sender_cfg.model_id; }
  const std::string& receiver_id() const { return receiver_cfg.model_id; }
  ParamRefs params();
  void validate() const;
};

Fuser make_fuser(const ModelConfig& sender, const ModelConfig& receiver, FuseMode mode,
                 uint64_t seed);

// Neutral element: identity projections, gate 0, Mix mode.  The two-config
// form allows distinct ids on identical geometry.
Fuser identity_fuser(const ModelConfig& cfg);
Fuser identity_fuser(const ModelConfig& sender, const ModelConfig& receiver);

KvCache project_cache(const Fuser& f, const KvCache& sender_cache);

struct ProjTrace {
  std::vector<MlpTrace> k;  // one per receiver layer
  std::vector<MlpTrace> v;
};
KvCache project_cache_traced(const Fuser& f, const KvCache& sender_cache, ProjTrace& trace);

// Gradient container mirroring Fuser::params() block order; gate_raw holds
// the gate gradient.
struct FuserGrads {
  std::vector<FuserLayer> layers;
  ParamRefs params();
};
FuserGrads zero_fuser_grads(const Fuser& f);

// Row gradients for the projected cache pushed back through the projection
// MLPs; the sender cache itself is frozen, so its gradient is dropped.
void project_backward(const Fuser& f, const ProjTrace& trace, const PastKvGrads& dproj,
                      FuserGrads& grads);

KvCache fuse(const Fuser& f, const KvCache& projected, const KvCache& own);

struct FusedSource {
  const Fuser* fuser = nullptr;
  const KvCache* projected = nullptr;
};
// Sources combine in the given order (a session fixes its sender order).
// Mix blends rows as own + sum_s g_s (proj_s - own), normalizing the gates
// when they sum past 1; Concat lays the projected segments out before the
// own segment with contiguous absolute positions.
KvCache fuse_multi(const std::vector<FusedSource>& sources, const KvCache& own);

// Reverse of single-source fuse: splits the fused-row gradient into
// projected-row gradients plus per-layer gate gradients (straight-through
// at the clamp; zero in Concat mode, where gates are unused).
struct FuseBackward {
  PastKvGrads dproj;
  std::vector<double> dgate_raw;
};
FuseBackward fuse_backward(const Fuser& f, const KvCache& projected, const KvCache& own,
                           const PastKvGrads& dfused);

// Directed (sender, receiver) -> fuser store; require() fails closed.
struct FuserRegistry {
  std::map<std::pair<std::string, std::string>, Fuser> entries;

  void add(Fuser f);
  bool has(const std::string& sender_id, const std::string& receiver_id) const;
  const Fuser& require(const std::string& sender_id, const std::string& receiver_id) const;
};

}  // namespace fedrefine
