#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedrefine/params.hpp"
#include "fedrefine/tensor.hpp"
#include "fedrefine/tokenizer.hpp"

namespace fedrefine {

struct ModelConfig {
  size_t n_layers = 2;
  size_t n_heads = 4;
  size_t n_kv_heads = 2;
  size_t head_dim = 16;
  size_t d_model = 64;
  size_t vocab_size = 0;
  size_t max_seq = 256;
  std::string model_id;

  size_t q_dim() const { return n_heads * head_dim; }
  size_t kv_dim() const { return n_kv_heads * head_dim; }
  size_t ff_dim() const { return 2 * d_model; }
  void validate() const;
  bool same_geometry(const ModelConfig& other) const;
};

uint64_t config_digest(const ModelConfig& cfg);

// Per-layer KV store, one [seq_len, n_kv_heads, head_dim] block for keys and
// one for values.  Keys are kept rotated at the position they were computed
// at; nothing re-rotates entries later, which is what lets a projected
// foreign prefix sit in front of locally computed rows.
struct KvCache {
  std::string owner;
  struct LayerKv {
    std::vector<double> k;
    std::vector<double> v;
  };
  std::vector<LayerKv> layers;
  size_t n_kv_heads = 0;
  size_t head_dim = 0;
  size_t seq_len = 0;
  size_t position_base = 0;
  size_t max_seq = 0;

  static KvCache empty(const ModelConfig& cfg, size_t position_base = 0);
  size_t row_elems() const { return n_kv_heads * head_dim; }
  size_t element_count() const { return layers.size() * 2 * seq_len * row_elems(); }
  bool geometry_matches(const ModelConfig& cfg) const;
  void append_position();
  double* k_at(size_t layer, size_t pos);
  const double* k_at(size_t layer, size_t pos) const;
  double* v_at(size_t layer, size_t pos);
  const double* v_at(size_t layer, size_t pos) const;
};

struct LayerWeights {
  Tensor att_norm;  // [d_model]
  Tensor wq;        // [q_dim, d_model]
  Tensor wk;        // [kv_dim, d_model]
  Tensor wv;        // [kv_dim, d_model]
  Tensor wo;        // [d_model, q_dim]
  Tensor mlp_norm;  // [d_model]
  Tensor w_gate;    // [ff_dim, d_model]
  Tensor w_up;      // [ff_dim, d_model]
  Tensor w_down;    // [d_model, ff_dim]
};

struct TransformerModel {
  ModelConfig config;
  Tensor tok_embed;   // [vocab, d_model]
  std::vector<LayerWeights> layers;
  Tensor final_norm;  // [d_model]
  Tensor out_head;    // [vocab, d_model]

  ParamRefs params();
  void validate() const;
};

TransformerModel init_model(const ModelConfig& cfg, uint64_t seed);

struct PrefillResult {
  KvCache cache;
  std::vector<double> logits;  // last fed position
};

struct BatchResult {
  std::vector<std::vector<double>> logits;  // one vector per fed position
  KvCache cache;
};

struct Trace;  // defined in model_grad.hpp

// Batched pass over `tokens`, optionally continuing an existing context.
// With `past` the new absolute positions start at past->position_base +
// past->seq_len; otherwise they start at `position_base`.
BatchResult forward_batch(const TransformerModel& m, const TokenSeq& tokens,
                          const KvCache* past, size_t position_base = 0,
                          Trace* trace = nullptr);

PrefillResult prefill(const TransformerModel& m, const TokenSeq& tokens,
                      size_t position_base = 0);

// Single-token step with its own straight-line implementation; appends one
// position to the cache and returns logits over the vocabulary.
std::vector<double> decode_step(const TransformerModel& m, KvCache& cache, int token);

int greedy_next(const std::vector<double>& logits);

}  // namespace fedrefine
