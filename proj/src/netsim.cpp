#include "fedrefine/netsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace fedrefine {

std::string medium_name(Medium m) { return m == Medium::Cache ? "cache" : "token"; }

void NetworkState::validate() const {
  if (!(bandwidth_bytes_per_s > 0.0))
    throw std::invalid_argument("bandwidth must be positive");
  if (!(rtt_s >= 0.0)) throw std::invalid_argument("rtt must be non-negative");
  if (!std::isfinite(bandwidth_bytes_per_s) || !std::isfinite(rtt_s))
    throw std::invalid_argument("network state must be finite");
}

double CostModel::prefill_cost_for(const std::string& model_id) const {
  auto it = prefill_cost_per_model.find(model_id);
  return it == prefill_cost_per_model.end() ? prefill_cost : it->second;
}

double CostModel::decode_cost_for(const std::string& model_id) const {
  auto it = decode_cost_per_model.find(model_id);
  return it == decode_cost_per_model.end() ? decode_cost : it->second;
}

void CostModel::validate() const {
  auto nonneg = [](double v, const char* what) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument(std::string(what) + " must be finite and >= 0");
  };
  nonneg(prefill_cost, "prefill_cost");
  nonneg(decode_cost, "decode_cost");
  nonneg(fuse_cost, "fuse_cost");
  for (const auto& [id, v] : prefill_cost_per_model) nonneg(v, "per-model prefill_cost");
  for (const auto& [id, v] : decode_cost_per_model) nonneg(v, "per-model decode_cost");
  if (wire_dtype_bytes == 0) throw std::invalid_argument("wire_dtype_bytes must be positive");
  if (text_bytes_per_token == 0)
    throw std::invalid_argument("text_bytes_per_token must be positive");
}

void Timeline::add(const std::string& phase, const std::string& party, double start,
                   double duration, size_t tokens) {
  if (!(start >= 0.0) || !(duration >= 0.0))
    throw std::invalid_argument("timeline segments must have non-negative start and duration");
  segments.push_back({phase, party, start, duration, tokens});
}

void Timeline::finalize() {
  total = 0.0;
  for (const TimelineSegment& s : segments) total = std::max(total, s.start + s.duration);
}

double Timeline::party_busy_time(const std::string& party) const {
  double sum = 0.0;
  for (const TimelineSegment& s : segments)
    if (s.party == party) sum += s.duration;
  return sum;
}

void Timeline::validate() const {
  double max_end = 0.0;
  for (const TimelineSegment& s : segments) {
    if (!(s.start >= 0.0) || !(s.duration >= 0.0))
      throw std::invalid_argument("timeline segment with negative start or duration");
    max_end = std::max(max_end, s.start + s.duration);
  }
  if (total != max_end)
    throw std::invalid_argument("timeline total does not equal the last segment end");
}

size_t kv_payload_bytes(const ModelConfig& cfg, size_t n_tokens, size_t dtype_bytes) {
  cfg.validate();
  if (dtype_bytes == 0) throw std::invalid_argument("dtype_bytes must be positive");
  return cfg.n_layers * 2 * cfg.n_kv_heads * cfg.head_dim * dtype_bytes * n_tokens;
}

size_t text_payload_bytes(size_t n_tokens, const CostModel& cost) {
  cost.validate();
  return n_tokens * cost.text_bytes_per_token;
}

void RoundDesc::validate() const {
  if (receiver_id.empty()) throw std::invalid_argument("round needs a receiver id");
  if (receiver_query_tokens == 0)
    throw std::invalid_argument("round needs a non-empty receiver query");
  std::set<std::string> ids;
  for (const RoundSender& s : senders) {
    if (s.id.empty()) throw std::invalid_argument("round sender with empty id");
    if (s.id == receiver_id)
      throw std::invalid_argument("sender id equals receiver id: " + s.id);
    if (!ids.insert(s.id).second)
      throw std::invalid_argument("duplicate sender in round: " + s.id);
    if (s.prefill_tokens == 0)
      throw std::invalid_argument("sender " + s.id + " has an empty query");
    if (s.medium == Medium::Cache && s.kv_bytes == 0)
      throw std::invalid_argument("cache sender " + s.id + " declares zero payload bytes");
  }
}

Timeline simulate_round(const RoundDesc& desc, const NetworkState& net, const CostModel& cost) {
  desc.validate();
  net.validate();
  cost.validate();

  Timeline tl;
  double recv_decode = cost.decode_cost_for(desc.receiver_id);
  double t = 0.0;
  if (desc.rephrase_tokens > 0 && !desc.senders.empty()) {
    double dur = recv_decode * static_cast<double>(desc.rephrase_tokens);
    tl.add("rephrase", desc.receiver_id, t, dur, desc.rephrase_tokens);
    t += dur;
  }

  // Each sender runs its chain independently; downstream work waits for the
  // last arrival.
  double arrivals = t;
  size_t fused_tokens = 0;
  size_t text_tokens = 0;
  for (const RoundSender& s : desc.senders) {
    double st = t;
    double prefill_dur = cost.prefill_cost_for(s.id) * static_cast<double>(s.prefill_tokens);
    tl.add("sender_prefill", s.id, st, prefill_dur, s.prefill_tokens);
    st += prefill_dur;
    size_t wire_bytes = 0;
    if (s.medium == Medium::Token) {
      double decode_dur = cost.decode_cost_for(s.id) * static_cast<double>(s.text_tokens);
      tl.add("sender_decode", s.id, st, decode_dur, s.text_tokens);
      st += decode_dur;
      wire_bytes = text_payload_bytes(s.text_tokens, cost);
      text_tokens += s.text_tokens;
    } else {
      wire_bytes = s.kv_bytes;
      fused_tokens += s.prefill_tokens;
    }
    double transmit_dur = static_cast<double>(wire_bytes) / net.bandwidth_bytes_per_s + net.rtt_s;
    tl.add("transmit", s.id, st, transmit_dur);
    st += transmit_dur;
    arrivals = std::max(arrivals, st);
  }
  t = arrivals;

  if (fused_tokens > 0) {
    double dur = cost.fuse_cost * static_cast<double>(fused_tokens);
    tl.add("fuse", desc.receiver_id, t, dur, fused_tokens);
    t += dur;
  }

  size_t prefill_tokens = desc.receiver_query_tokens + text_tokens;
  double prefill_dur =
      cost.prefill_cost_for(desc.receiver_id) * static_cast<double>(prefill_tokens);
  tl.add("receiver_prefill", desc.receiver_id, t, prefill_dur, prefill_tokens);
  t += prefill_dur;

  double decode_dur = recv_decode * static_cast<double>(desc.decode_tokens);
  tl.add("decode", desc.receiver_id, t, decode_dur, desc.decode_tokens);

  tl.finalize();
  return tl;
}

std::string metrics_csv_header() {
  return "scenario,protocol,privacy,n_senders,accuracy,latency_s,bytes_per_token";
}

std::string format_metrics_row(const MetricsRow& row) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.9f,%.3f", row.n_senders, row.accuracy,
                row.latency_s, row.bytes_per_token);
  return row.scenario + "," + row.protocol + "," + row.privacy + "," + buf;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = metrics_csv_header() + "\n";
  for (const MetricsRow& r : rows) out += format_metrics_row(r) + "\n";
  return out;
}

}  // namespace fedrefine
