#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedrefine/model.hpp"

namespace fedrefine {

enum class Medium { Cache, Token };

std::string medium_name(Medium m);

// One shared link state applied uniformly to every sender-receiver link.
struct NetworkState {
  double bandwidth_bytes_per_s = 1.0;
  double rtt_s = 0.0;

  void validate() const;
};

// Per-token compute costs and wire sizing.  Model rates fall back to the
// defaults unless overridden by id.
struct CostModel {
  double prefill_cost = 0.0;  // seconds per token, default
  double decode_cost = 0.0;   // seconds per token, default
  double fuse_cost = 0.0;     // seconds per projected token
  size_t wire_dtype_bytes = 2;
  size_t text_bytes_per_token = 16;
  std::map<std::string, double> prefill_cost_per_model;
  std::map<std::string, double> decode_cost_per_model;

  double prefill_cost_for(const std::string& model_id) const;
  double decode_cost_for(const std::string& model_id) const;
  void validate() const;
};

struct TimelineSegment {
  std::string phase;
  std::string party;
  double start = 0.0;
  double duration = 0.0;
  size_t tokens = 0;  // token count the segment processed; 0 for transmits
};

struct Timeline {
  std::vector<TimelineSegment> segments;
  double total = 0.0;

  void add(const std::string& phase, const std::string& party, double start, double duration,
           size_t tokens = 0);
  void finalize();  // total = max over segments of (start + duration)
  double party_busy_time(const std::string& party) const;
  void validate() const;
};

// Size of one transplanted cache prefix on the wire.
size_t kv_payload_bytes(const ModelConfig& cfg, size_t n_tokens, size_t dtype_bytes);
size_t text_payload_bytes(size_t n_tokens, const CostModel& cost);

struct RoundSender {
  std::string id;
  Medium medium = Medium::Cache;
  size_t prefill_tokens = 0;  // sender-side prefill over its own query
  size_t kv_bytes = 0;        // wire payload when medium == Cache
  size_t text_tokens = 0;     // generated contribution length when medium == Token
};

// Shape of one collaborative round, enough to price it without running it.
struct RoundDesc {
  std::string receiver_id;
  size_t rephrase_tokens = 0;  // rewrite-decode tokens charged to the receiver
  std::vector<RoundSender> senders;
  size_t receiver_query_tokens = 0;
  size_t decode_tokens = 0;

  void validate() const;
};

// Deterministic latency composition: optional rephrase, then the sender
// chains in parallel (prefill, decode for token senders, transmit), then
// fusion over cache prefixes, receiver prefill (own query plus any text
// contributions), and decode.
Timeline simulate_round(const RoundDesc& desc, const NetworkState& net, const CostModel& cost);

struct MetricsRow {
  std::string scenario;
  std::string protocol;  // standalone | c2c | t2t
  std::string privacy;   // original | rephrased
  size_t n_senders = 0;
  double accuracy = 0.0;
  double latency_s = 0.0;
  double bytes_per_token = 0.0;
};

// Fixed header and fixed numeric formatting so identical rows serialize to
// identical bytes.
std::string metrics_csv_header();
std::string format_metrics_row(const MetricsRow& row);
std::string metrics_to_csv(const std::vector<MetricsRow>& rows);

}  // namespace fedrefine
