#include "fedrefine/protocol.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "fedrefine/errors.hpp"
#include "fedrefine/rng.hpp"

namespace fedrefine {

namespace {

constexpr size_t kRequestBytes = 16;  // one task-id token on the wire

// Generation loop shared by every protocol: feed `first_token`, then each
// greedy pick, until the end token appears or `max_new` tokens exist.
struct GenResult {
  TokenSeq raw;     // generated tokens, end token included when reached
  size_t steps = 0;  // decode calls, the unit latency is charged in
};

GenResult generate_from(const TransformerModel& m, KvCache& cache, int first_token,
                        int end_token, size_t max_new) {
  GenResult r;
  int tok = first_token;
  while (r.raw.size() < max_new) {
    std::vector<double> logits = decode_step(m, cache, tok);
    r.steps += 1;
    int next = greedy_next(logits);
    r.raw.push_back(next);
    if (end_token >= 0 && next == end_token) break;
    tok = next;
  }
  return r;
}

TokenSeq strip_end(TokenSeq raw, int end_token) {
  if (end_token >= 0 && !raw.empty() && raw.back() == end_token) raw.pop_back();
  return raw;
}

// Applies the policy and reports how many decode steps the rewrite is
// priced at.  The synonym stand-in is charged as if the receiver decoded
// it, mirroring the model-based rewrite it abbreviates.
TokenSeq rephrase_with_steps(const TokenSeq& query, const RephrasePolicy& policy,
                             size_t party_index, size_t* steps) {
  policy.validate();
  if (steps) *steps = 0;
  if (policy.kind == RephraseKind::None) return query;

  if (policy.kind == RephraseKind::SynonymMap) {
    uint64_t base = derive_seed(policy.seed, 9001) % 64;
    size_t exponent = 1 + static_cast<size_t>((base + party_index) % 64);
    TokenSeq out;
    out.reserve(query.size());
    for (int tok : query) {
      auto it = policy.table.find(tok);
      if (it == policy.table.end())
        throw std::invalid_argument("query token " + std::to_string(tok) +
                                    " is outside the rephrase alphabet");
      int cur = tok;
      for (size_t e = 0; e < exponent; ++e) cur = policy.table.at(cur);
      out.push_back(cur);
    }
    if (steps) *steps = out.size();
    return out;
  }

  // ModelRewrite: greedy generation behind a fixed prompt marker.
  const TransformerModel& m = *policy.rewriter;
  for (int tok : query)
    if (tok < 0 || static_cast<size_t>(tok) >= m.config.vocab_size)
      throw std::invalid_argument("query token " + std::to_string(tok) +
                                  " is outside the rewriter vocabulary");
  TokenSeq prompt;
  prompt.push_back(policy.rewrite_token);
  prompt.insert(prompt.end(), query.begin(), query.end());
  PrefillResult pre = prefill(m, prompt);
  GenResult gen =
      generate_from(m, pre.cache, policy.sep_token, policy.end_token, query.size() + 4);
  if (steps) *steps = gen.steps;
  return strip_end(std::move(gen.raw), policy.end_token);
}

}  // namespace

void RephrasePolicy::validate() const {
  if (kind == RephraseKind::None) return;
  if (kind == RephraseKind::SynonymMap) {
    if (table.empty()) throw std::invalid_argument("synonym rephrasing needs a table");
    std::set<int> values;
    for (const auto& [k, v] : table) {
      if (!values.insert(v).second)
        throw std::invalid_argument("synonym table maps two tokens to " + std::to_string(v));
      if (table.find(v) == table.end())
        throw std::invalid_argument(
            "synonym table is not a permutation: image token " + std::to_string(v) +
            " has no mapping of its own");
    }
    return;
  }
  if (rewriter == nullptr)
    throw std::invalid_argument("model rewriting needs a rewriter model");
  size_t vocab = rewriter->config.vocab_size;
  for (int tok : {rewrite_token, sep_token, end_token})
    if (tok < 0 || static_cast<size_t>(tok) >= vocab)
      throw std::invalid_argument("rewrite prompt tokens must lie in the rewriter vocabulary");
}

TokenSeq rephrase(const TokenSeq& query, const RephrasePolicy& policy, size_t party_index) {
  return rephrase_with_steps(query, policy, party_index, nullptr);
}

void Link::validate() const {
  if (sender_id.empty() || receiver_id.empty())
    throw std::invalid_argument("link endpoints must be named");
  if (sender_id == receiver_id)
    throw std::invalid_argument("link endpoints must be distinct: " + sender_id);
}

void QosSpec::validate() const {
  if (!(deadline_s > 0.0) || !std::isfinite(deadline_s))
    throw std::invalid_argument("deadline must be positive and finite");
  if (!(min_accuracy_hint >= 0.0 && min_accuracy_hint <= 1.0))
    throw std::invalid_argument("min_accuracy_hint must lie in [0,1]");
}

Medium FedSession::medium_for(const std::string& sender_id) const {
  auto it = media.find(sender_id);
  return it == media.end() ? Medium::Cache : it->second;
}

void FedSession::validate(const ModelSet& models) const {
  auto resolve = [&](const std::string& id) -> const TransformerModel& {
    auto it = models.find(id);
    if (it == models.end() || it->second == nullptr)
      throw std::invalid_argument("session references unknown model: " + id);
    return *it->second;
  };
  const TransformerModel& receiver = resolve(receiver_id);
  if (sep_token < 0 || static_cast<size_t>(sep_token) >= receiver.config.vocab_size)
    throw std::invalid_argument("session needs a separator token in the receiver vocabulary");
  if (end_token < 0 || static_cast<size_t>(end_token) >= receiver.config.vocab_size)
    throw std::invalid_argument("session needs an end token in the receiver vocabulary");

  std::set<std::string> seen;
  size_t cache_links = 0, token_links = 0;
  std::set<int> modes;
  for (const std::string& sid : sender_ids) {
    if (sid == receiver_id)
      throw std::invalid_argument("sender equals receiver: " + sid);
    if (!seen.insert(sid).second)
      throw std::invalid_argument("duplicate sender in session: " + sid);
    const TransformerModel& sender = resolve(sid);
    if (medium_for(sid) == Medium::Token) {
      token_links += 1;
      continue;
    }
    cache_links += 1;
    if (registry == nullptr)
      throw MissingArtifactError("session has cache links but no fuser registry");
    const Fuser& f = registry->require(sid, receiver_id);
    if (!f.sender_cfg.same_geometry(sender.config) ||
        !f.receiver_cfg.same_geometry(receiver.config))
      throw std::invalid_argument("registered fuser " + sid + "->" + receiver_id +
                                  " does not match the live model geometries");
    modes.insert(static_cast<int>(f.mode));
  }
  if (modes.size() > 1)
    throw std::invalid_argument("session mixes fuse modes across cache links");
  if (token_links > 0 && cache_links > 0 && modes.count(static_cast<int>(FuseMode::Mix)))
    throw std::invalid_argument(
        "mixing media needs position-contiguous (Concat) fusers; Mix cannot blend caches of "
        "different lengths");
  if (rephrase_policy.kind != RephraseKind::None) rephrase_policy.validate();
}

void MessageLog::append(Message m) { messages.push_back(std::move(m)); }

std::string MessageLog::to_jsonl() const {
  std::string out;
  for (const Message& m : messages) {
    nlohmann::json j{{"time", m.time},
                     {"from", m.from},
                     {"to", m.to},
                     {"medium", medium_name(m.medium)},
                     {"payload_bytes", m.payload_bytes},
                     {"task_id", m.task_id},
                     {"tokens", m.tokens}};
    out += j.dump() + "\n";
  }
  return out;
}

DecodeOutcome standalone_decode(const TransformerModel& receiver, const TokenSeq& query,
                                size_t max_new, int sep_token, int end_token,
                                const NetworkState& net, const CostModel& cost) {
  if (query.empty()) throw std::invalid_argument("query must be non-empty");
  if (sep_token < 0) throw std::invalid_argument("decoding needs a separator token");
  PrefillResult pre = prefill(receiver, query);
  GenResult gen = generate_from(receiver, pre.cache, sep_token, end_token, max_new);

  DecodeOutcome out;
  out.answer = strip_end(std::move(gen.raw), end_token);
  out.round.receiver_id = receiver.config.model_id;
  out.round.receiver_query_tokens = query.size();
  out.round.decode_tokens = gen.steps;
  out.timeline = simulate_round(out.round, net, cost);
  return out;
}

DecodeOutcome federated_decode(const FedSession& session, const ModelSet& models,
                               const NetworkState& net, const CostModel& cost,
                               const TokenSeq& query, size_t max_new,
                               const std::string& task_id) {
  session.validate(models);
  if (query.empty()) throw std::invalid_argument("query must be non-empty");
  const TransformerModel& receiver = *models.at(session.receiver_id);

  // Distinct rephrased surfaces: party 0 is the receiver (which keeps the
  // original query on its own device), senders are parties 1..s.
  size_t rephrase_tokens = 0;
  std::vector<TokenSeq> sender_queries(session.sender_ids.size());
  for (size_t i = 0; i < session.sender_ids.size(); ++i) {
    if (session.rephrase_policy.kind == RephraseKind::None) {
      sender_queries[i] = query;
    } else {
      size_t steps = 0;
      sender_queries[i] = rephrase_with_steps(query, session.rephrase_policy, i + 1, &steps);
      rephrase_tokens += steps;
    }
    if (sender_queries[i].empty())
      throw std::invalid_argument("rephrasing produced an empty query for sender " +
                                  session.sender_ids[i]);
  }

  // Token senders first: their text lands inside the receiver's own
  // context segment, ahead of the query.
  TokenSeq contributions;
  std::vector<TokenSeq> contribution_of(session.sender_ids.size());
  for (size_t i = 0; i < session.sender_ids.size(); ++i) {
    const std::string& sid = session.sender_ids[i];
    if (session.medium_for(sid) != Medium::Token) continue;
    const TransformerModel& sender = *models.at(sid);
    PrefillResult pre = prefill(sender, sender_queries[i]);
    GenResult gen =
        generate_from(sender, pre.cache, session.sep_token, session.end_token, session.t2t_cap);
    contribution_of[i] = gen.raw;  // end token kept: it delimits the segment
    contributions.insert(contributions.end(), gen.raw.begin(), gen.raw.end());
  }

  // Cache senders form the projected prefix, in session order.  Their
  // prefills use the absolute positions their segment will occupy.
  std::vector<KvCache> projections;
  projections.reserve(session.sender_ids.size());
  std::vector<FusedSource> sources;
  size_t prefix_len = 0;
  bool concat = false;
  for (size_t i = 0; i < session.sender_ids.size(); ++i) {
    const std::string& sid = session.sender_ids[i];
    if (session.medium_for(sid) != Medium::Cache) continue;
    const Fuser& f = session.registry->require(sid, session.receiver_id);
    concat = f.mode == FuseMode::Concat;
    size_t base = concat ? prefix_len : 0;
    KvCache sender_cache = prefill(*models.at(sid), sender_queries[i], base).cache;
    projections.push_back(project_cache(f, sender_cache));
    sources.push_back({&f, &projections.back()});
    if (concat) prefix_len += sender_queries[i].size();
  }

  TokenSeq own_segment = contributions;
  own_segment.insert(own_segment.end(), query.begin(), query.end());
  KvCache own = prefill(receiver, own_segment, concat ? prefix_len : 0).cache;
  KvCache fused = fuse_multi(sources, own);
  GenResult gen =
      generate_from(receiver, fused, session.sep_token, session.end_token, max_new);

  DecodeOutcome out;
  out.answer = strip_end(std::move(gen.raw), session.end_token);
  out.round.receiver_id = session.receiver_id;
  out.round.rephrase_tokens = rephrase_tokens;
  out.round.receiver_query_tokens = query.size();
  out.round.decode_tokens = gen.steps;
  for (size_t i = 0; i < session.sender_ids.size(); ++i) {
    const std::string& sid = session.sender_ids[i];
    RoundSender rs;
    rs.id = sid;
    rs.medium = session.medium_for(sid);
    rs.prefill_tokens = sender_queries[i].size();
    if (rs.medium == Medium::Cache)
      rs.kv_bytes = kv_payload_bytes(models.at(sid)->config, sender_queries[i].size(),
                                     cost.wire_dtype_bytes);
    else
      rs.text_tokens = contribution_of[i].size();
    out.round.senders.push_back(rs);
  }
  out.timeline = simulate_round(out.round, net, cost);

  double request_time = 0.0;
  for (const TimelineSegment& s : out.timeline.segments)
    if (s.phase == "rephrase") request_time = s.start + s.duration;
  for (size_t i = 0; i < session.sender_ids.size(); ++i) {
    const std::string& sid = session.sender_ids[i];
    const RoundSender& rs = out.round.senders[i];
    double response_time = request_time;
    for (const TimelineSegment& s : out.timeline.segments)
      if (s.phase == "transmit" && s.party == sid) response_time = s.start;
    out.log.append({request_time, session.receiver_id, sid, rs.medium, kRequestBytes, task_id,
                    {}});
    if (rs.medium == Medium::Cache)
      out.log.append(
          {response_time, sid, session.receiver_id, rs.medium, rs.kv_bytes, task_id, {}});
    else
      out.log.append({response_time, sid, session.receiver_id, rs.medium,
                      text_payload_bytes(rs.text_tokens, cost), task_id, contribution_of[i]});
  }
  return out;
}

namespace {

DecodeOutcome forced_medium_decode(const FedSession& session, const ModelSet& models,
                                   const NetworkState& net, const CostModel& cost,
                                   const TokenSeq& query, size_t max_new,
                                   const std::string& task_id, Medium medium) {
  FedSession forced = session;
  forced.media.clear();
  for (const std::string& sid : forced.sender_ids) forced.media[sid] = medium;
  return federated_decode(forced, models, net, cost, query, max_new, task_id);
}

}  // namespace

DecodeOutcome c2c_decode(const FedSession& session, const ModelSet& models,
                         const NetworkState& net, const CostModel& cost, const TokenSeq& query,
                         size_t max_new, const std::string& task_id) {
  return forced_medium_decode(session, models, net, cost, query, max_new, task_id,
                              Medium::Cache);
}

DecodeOutcome t2t_decode(const FedSession& session, const ModelSet& models,
                         const NetworkState& net, const CostModel& cost, const TokenSeq& query,
                         size_t max_new, const std::string& task_id) {
  return forced_medium_decode(session, models, net, cost, query, max_new, task_id,
                              Medium::Token);
}

BidirectionalResult bidirectional_round(const std::string& id_a, const std::string& id_b,
                                        const ModelSet& models, const FuserRegistry& registry,
                                        const RephrasePolicy& policy, const NetworkState& net,
                                        const CostModel& cost, const TokenSeq& query,
                                        size_t max_new, int sep_token, int end_token) {
  // Both directions must exist before either runs.
  registry.require(id_b, id_a);
  registry.require(id_a, id_b);

  auto one_direction = [&](const std::string& recv, const std::string& send) {
    FedSession s;
    s.receiver_id = recv;
    s.sender_ids = {send};
    s.registry = &registry;
    s.rephrase_policy = policy;
    s.sep_token = sep_token;
    s.end_token = end_token;
    return c2c_decode(s, models, net, cost, query, max_new, recv + "<-" + send);
  };
  BidirectionalResult r;
  r.first = one_direction(id_a, id_b);
  r.second = one_direction(id_b, id_a);
  return r;
}

MediumDecision select_medium(const NetworkState& net, const CostModel& cost,
                             const RoundDesc& cache_variant, const RoundDesc& token_variant,
                             const QosSpec& qos) {
  qos.validate();
  if (cache_variant.receiver_id != token_variant.receiver_id)
    throw std::invalid_argument("medium selection must price the same round both ways");
  MediumDecision d;
  d.latency_cache = simulate_round(cache_variant, net, cost).total;
  d.latency_token = simulate_round(token_variant, net, cost).total;
  bool cache_ok = d.latency_cache <= qos.deadline_s;
  bool token_ok = d.latency_token <= qos.deadline_s;
  if (cache_ok != token_ok) {
    d.medium = cache_ok ? Medium::Cache : Medium::Token;
  } else {
    // Both meet or both miss: lower latency wins, ties go to cache.
    d.medium = d.latency_token < d.latency_cache ? Medium::Token : Medium::Cache;
    d.deadline_miss = !cache_ok;
  }
  return d;
}

}  // namespace fedrefine
