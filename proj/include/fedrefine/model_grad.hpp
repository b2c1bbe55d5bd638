#pragma once

#include <vector>

#include "fedrefine/model.hpp"

namespace fedrefine {

// Activations captured by forward_batch for one layer, indexed by fed
// position.  Attention probabilities cover past rows plus the causal new
// rows, so probs[t][h] has past_len + t + 1 entries.
struct LayerTrace {
  std::vector<std::vector<double>> x_in;
  std::vector<std::vector<double>> xn;
  std::vector<std::vector<double>> q_rot;
  std::vector<std::vector<double>> ctx;
  std::vector<std::vector<double>> x_mid;
  std::vector<std::vector<double>> x_mid_n;
  std::vector<std::vector<double>> gate_pre;
  std::vector<std::vector<double>> up_pre;
  std::vector<std::vector<double>> act_h;
  std::vector<std::vector<std::vector<double>>> probs;
};

struct Trace {
  TokenSeq tokens;
  size_t past_len = 0;
  size_t position_base = 0;
  std::vector<LayerTrace> layers;
  std::vector<std::vector<double>> final_in;
  std::vector<std::vector<double>> final_normed;
};

// Gradient container mirroring TransformerModel's tensors; params() ordering
// matches TransformerModel::params().
struct LmGrads {
  Tensor tok_embed;
  std::vector<LayerWeights> layers;
  Tensor final_norm;
  Tensor out_head;
  ParamRefs params();
};

LmGrads zero_grads(const TransformerModel& m);

// Per-layer gradients with respect to a fixed past context.
struct PastKvGrads {
  struct LayerKv {
    std::vector<double> k;
    std::vector<double> v;
  };
  std::vector<LayerKv> layers;
  size_t past_len = 0;
  size_t row_elems = 0;
};

PastKvGrads zero_past_grads(const ModelConfig& cfg, size_t past_len);

// Reverse pass for a traced forward_batch call.  `result_cache` must be the
// cache returned by that call.  dlogits holds one gradient vector per fed
// position.  Either output may be null; weight gradients accumulate.
void backward_batch(const TransformerModel& m, const Trace& trace, const KvCache& result_cache,
                    const std::vector<std::vector<double>>& dlogits, LmGrads* wgrads,
                    PastKvGrads* past_grads);

}  // namespace fedrefine
