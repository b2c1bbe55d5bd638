#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedrefine/fuser.hpp"
#include "fedrefine/model.hpp"
#include "fedrefine/netsim.hpp"
#include "fedrefine/tokenizer.hpp"

namespace fedrefine {

enum class RephraseKind { None, SynonymMap, ModelRewrite };

// Privacy rephrasing: every party can be handed a distinct, semantically
// equivalent surface form of the query.  SynonymMap applies a fixed token
// bijection, raised to a per-(seed, party) power so parties differ;
// ModelRewrite greedily decodes the rewrite from a model behind a fixed
// prompt marker.
struct RephrasePolicy {
  RephraseKind kind = RephraseKind::None;
  std::map<int, int> table;  // bijection on the task alphabet (SynonymMap)
  const TransformerModel* rewriter = nullptr;  // ModelRewrite
  int rewrite_token = -1;
  int sep_token = -1;
  int end_token = -1;
  uint64_t seed = 0;

  void validate() const;
};

TokenSeq rephrase(const TokenSeq& query, const RephrasePolicy& policy, size_t party_index);

struct Link {
  std::string sender_id;
  std::string receiver_id;
  Medium medium = Medium::Cache;

  void validate() const;
};

struct QosSpec {
  double deadline_s = 1.0;
  double min_accuracy_hint = 0.0;

  void validate() const;
};

using ModelSet = std::map<std::string, const TransformerModel*>;

// One collaborative decoding context: receiver, ordered senders, the fuser
// registry, the privacy policy, and the per-link medium.  The sender order
// is fixed for the session and determines how projected prefixes combine.
struct FedSession {
  std::string receiver_id;
  std::vector<std::string> sender_ids;
  const FuserRegistry* registry = nullptr;
  RephrasePolicy rephrase_policy;
  std::map<std::string, Medium> media;  // keyed by sender id; default Cache
  int sep_token = -1;                   // fed once before generation, if >= 0
  int end_token = -1;                   // stops generation, if >= 0
  size_t t2t_cap = 32;                  // max tokens per text contribution

  Medium medium_for(const std::string& sender_id) const;
  // Fail-closed checks before any compute: ids resolve, no duplicates,
  // every cache link has a registered fuser whose endpoint geometries match
  // the live models, and mixing media is only possible with Concat fusers.
  void validate(const ModelSet& models) const;
};

struct Message {
  double time = 0.0;
  std::string from;
  std::string to;
  Medium medium = Medium::Cache;
  size_t payload_bytes = 0;
  std::string task_id;
  TokenSeq tokens;  // text payloads only; requests and cache payloads carry none
};

// Append-only record of every simulated transmission.
struct MessageLog {
  std::vector<Message> messages;

  void append(Message m);
  std::string to_jsonl() const;
};

struct DecodeOutcome {
  TokenSeq answer;  // generated tokens, end token stripped
  Timeline timeline;
  MessageLog log;
  RoundDesc round;  // the priced shape of this round
};

DecodeOutcome standalone_decode(const TransformerModel& receiver, const TokenSeq& query,
                                size_t max_new, int sep_token, int end_token,
                                const NetworkState& net, const CostModel& cost);

// The general collaborative round honoring each link's configured medium:
// cache senders ship projected KV prefixes through their fusers, token
// senders ship greedy text contributions the receiver must prefill over.
DecodeOutcome federated_decode(const FedSession& session, const ModelSet& models,
                               const NetworkState& net, const CostModel& cost,
                               const TokenSeq& query, size_t max_new,
                               const std::string& task_id);

// Pure-medium forms: every link forced to cache / token respectively.
DecodeOutcome c2c_decode(const FedSession& session, const ModelSet& models,
                         const NetworkState& net, const CostModel& cost, const TokenSeq& query,
                         size_t max_new, const std::string& task_id);
DecodeOutcome t2t_decode(const FedSession& session, const ModelSet& models,
                         const NetworkState& net, const CostModel& cost, const TokenSeq& query,
                         size_t max_new, const std::string& task_id);

struct BidirectionalResult {
  DecodeOutcome first;   // first party receiving, second sending
  DecodeOutcome second;  // roles swapped
};

// Runs the cache protocol in both directions over one pair; each direction
// uses its own fuser and its own fresh caches.
BidirectionalResult bidirectional_round(const std::string& id_a, const std::string& id_b,
                                        const ModelSet& models, const FuserRegistry& registry,
                                        const RephrasePolicy& policy, const NetworkState& net,
                                        const CostModel& cost, const TokenSeq& query,
                                        size_t max_new, int sep_token, int end_token);

struct MediumDecision {
  Medium medium = Medium::Cache;
  bool deadline_miss = false;
  double latency_cache = 0.0;
  double latency_token = 0.0;
};

// Opportunistic pick between the two priced shapes of the same round: lower
// latency wins, a deadline can veto, ties go to cache.
MediumDecision select_medium(const NetworkState& net, const CostModel& cost,
                             const RoundDesc& cache_variant, const RoundDesc& token_variant,
                             const QosSpec& qos);

}  // namespace fedrefine
