#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fedrefine/errors.hpp"
#include "fedrefine/protocol.hpp"
#include "fedrefine/rng.hpp"
#include "fedrefine/scenario.hpp"
#include "fedrefine/task_gen.hpp"
#include "fedrefine/train_lm.hpp"

using namespace fedrefine;

namespace {

ModelConfig tiny_config(const std::string& id, size_t vocab, size_t layers = 2,
                        size_t heads = 2, size_t kv = 1, size_t hd = 8) {
  ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.n_kv_heads = kv;
  c.head_dim = hd;
  c.d_model = heads * hd;
  c.vocab_size = vocab;
  c.max_seq = 24;
  c.model_id = id;
  return c;
}

CostModel dyadic_cost() {
  CostModel c;
  c.prefill_cost = 0.00390625;
  c.decode_cost = 0.0078125;
  c.fuse_cost = 0.0009765625;
  return c;
}

NetworkState dyadic_net() {
  NetworkState n;
  n.bandwidth_bytes_per_s = 1048576.0;
  n.rtt_s = 0.015625;
  return n;
}

TaskSpec spec_of(size_t facts, size_t senders, double share, double overlap, uint64_t seed) {
  TaskSpec s;
  s.n_facts = facts;
  s.n_senders = senders;
  s.receiver_share = share;
  s.overlap = overlap;
  s.seed = seed;
  return s;
}

// Identity bijection over a task's whole alphabet with each key's surface
// variants rotated one step.
std::map<int, int> rotation_table(const GeneratedTask& task) {
  std::map<int, int> t;
  for (size_t i = 0; i < task.vocab.size(); ++i) t[static_cast<int>(i)] = static_cast<int>(i);
  for (const std::vector<int>& group : task.synonym_groups)
    for (size_t i = 0; i < group.size(); ++i) t[group[i]] = group[(i + 1) % group.size()];
  return t;
}

size_t receiver_prefill_tokens(const Timeline& tl) {
  for (const TimelineSegment& s : tl.segments)
    if (s.phase == "receiver_prefill") return s.tokens;
  REQUIRE(false);
  return 0;
}

}  // namespace

TEST_CASE("task generation is deterministic and seed-sensitive") {
  TaskSpec spec = spec_of(12, 3, 0.25, 0.0, 77);
  GeneratedTask a = gen_partitioned_qa(spec);
  GeneratedTask b = gen_partitioned_qa(spec);
  REQUIRE(a.vocab.size() == b.vocab.size());
  for (size_t i = 0; i < a.vocab.size(); ++i) CHECK(a.vocab.word(static_cast<int>(i)) == b.vocab.word(static_cast<int>(i)));
  REQUIRE(a.facts.size() == b.facts.size());
  for (size_t f = 0; f < a.facts.size(); ++f) {
    CHECK(a.facts[f].value_word == b.facts[f].value_word);
    CHECK(a.facts[f].owners == b.facts[f].owners);
  }
  CHECK(a.receiver_corpus == b.receiver_corpus);
  CHECK(a.sender_corpora == b.sender_corpora);

  spec.seed = 78;
  GeneratedTask c = gen_partitioned_qa(spec);
  bool differs = false;
  for (size_t f = 0; f < a.facts.size(); ++f)
    differs |= a.facts[f].value_word != c.facts[f].value_word || a.facts[f].owners != c.facts[f].owners;
  CHECK(differs);
}

TEST_CASE("task alphabet layout: six variants per key, then values, then markers") {
  GeneratedTask task = gen_partitioned_qa(spec_of(5, 2, 0.2, 0.0, 3));
  CHECK(task.n_variants == 6);
  CHECK(task.vocab.size() == 5 * 6 + 5 + 3);
  CHECK(task.vocab.word(task.sep_token) == "?");
  CHECK(task.vocab.word(task.end_token) == ".");
  CHECK(task.vocab.word(task.rewrite_token) == "&");

  for (size_t k = 0; k < 5; ++k)
    for (size_t v = 0; v < 6; ++v) CHECK(task.label_of(task.key_token(k, v)) == static_cast<int>(k));
  CHECK(task.label_of(task.sep_token) == -1);
  CHECK(task.label_of(task.end_token) == -1);
  CHECK(task.label_of(task.vocab.id("v0")) == -1);
  CHECK_THROWS_AS(task.key_token(5, 0), std::out_of_range);
  CHECK_THROWS_AS(task.key_token(0, 6), std::out_of_range);

  // Values form a permutation: every fact answers with a distinct word.
  std::set<std::string> answers;
  for (const EvalItem& e : task.eval_set) answers.insert(e.answer);
  CHECK(answers.size() == 5);
  for (const EvalItem& e : task.eval_set) {
    CHECK(e.query == TokenSeq{task.key_token(e.fact, 0)});
    CHECK(e.answer == task.facts[e.fact].value_word);
  }
}

TEST_CASE("ownership splits facts by the configured shares") {
  GeneratedTask task = gen_partitioned_qa(spec_of(8, 2, 0.25, 0.0, 9));
  size_t receiver_owned = 0;
  for (const Fact& f : task.facts) {
    REQUIRE(!f.owners.empty());
    CHECK(f.owners.size() == 1);  // overlap 0: exactly one party knows each fact
    receiver_owned += f.owners[0] == 0;
  }
  CHECK(receiver_owned == 2);  // llround(0.25 * 8)

  size_t sender_total = 0;
  for (size_t j = 0; j < 2; ++j) {
    size_t owned = 0;
    for (size_t f = 0; f < task.facts.size(); ++f) {
      std::vector<size_t> sched = task.scheduled_senders(f);
      owned += std::count(sched.begin(), sched.end(), j);
    }
    CHECK(owned == 3);  // (8 - 2) facts split evenly across 2 senders
    sender_total += owned;
    CHECK(task.sender_corpora[j].size() == owned * 6);
  }
  CHECK(sender_total + receiver_owned == 8);

  // Receiver corpus: 6 fact lines per owned fact, then hint and rewrite
  // lines for every fact and variant.
  CHECK(task.receiver_corpus.size() == receiver_owned * 6 + 8 * 6 * 2 + 8 * 6);
}

TEST_CASE("overlap grants facts to neighboring senders too") {
  GeneratedTask task = gen_partitioned_qa(spec_of(12, 3, 0.0, 0.5, 11));
  size_t shared = 0;
  for (size_t f = 0; f < task.facts.size(); ++f) shared += task.scheduled_senders(f).size() > 1;
  CHECK(shared > 0);
}

TEST_CASE("degenerate shares behave: full receiver knowledge and unsatisfiable splits") {
  GeneratedTask all_mine = gen_partitioned_qa(spec_of(6, 2, 1.0, 0.0, 5));
  for (const Fact& f : all_mine.facts) CHECK(f.owners == std::vector<int>{0});
  for (const std::vector<TokenSeq>& corpus : all_mine.sender_corpora) CHECK(corpus.empty());

  CHECK_NOTHROW(gen_partitioned_qa(spec_of(4, 0, 1.0, 0.0, 1)));
  CHECK_THROWS_AS(gen_partitioned_qa(spec_of(4, 0, 0.5, 0.0, 1)), std::invalid_argument);
  CHECK_THROWS_AS(gen_partitioned_qa(spec_of(0, 2, 0.5, 0.0, 1)), std::invalid_argument);
  CHECK_THROWS_AS(gen_partitioned_qa(spec_of(4, 2, 1.5, 0.0, 1)), std::invalid_argument);
  CHECK_THROWS_AS(gen_partitioned_qa(spec_of(4, 2, 0.5, -0.1, 1)), std::invalid_argument);
}

TEST_CASE("no rephrasing passes queries through untouched") {
  RephrasePolicy none;
  TokenSeq q{4, 1, 9};
  CHECK(rephrase(q, none, 0) == q);
  CHECK(rephrase(q, none, 3) == q);
}

TEST_CASE("synonym rephrasing preserves task labels across 1000 queries and parties") {
  GeneratedTask task = gen_partitioned_qa(spec_of(10, 2, 0.3, 0.0, 21));
  RephrasePolicy policy;
  policy.kind = RephraseKind::SynonymMap;
  policy.table = rotation_table(task);
  policy.seed = 33;

  auto rng = make_rng(55);
  std::uniform_int_distribution<size_t> pick_fact(0, 9), pick_variant(0, 5), pick_party(1, 6);
  for (int i = 0; i < 1000; ++i) {
    size_t f = pick_fact(rng), v = pick_variant(rng), party = pick_party(rng);
    TokenSeq q{task.key_token(f, v), task.sep_token};
    TokenSeq r = rephrase(q, policy, party);
    REQUIRE(r.size() == 2);
    CHECK(task.label_of(r[0]) == static_cast<int>(f));
    CHECK(r[1] == task.sep_token);  // markers map to themselves
  }

  // The per-party keying rotates one extra step per party, so adjacent
  // parties always see distinct surfaces.
  TokenSeq q{task.key_token(0, 0)};
  for (size_t party = 1; party < 6; ++party)
    CHECK(rephrase(q, policy, party) != rephrase(q, policy, party + 1));
}

TEST_CASE("synonym rephrasing rejects tokens and tables outside its contract") {
  GeneratedTask task = gen_partitioned_qa(spec_of(4, 1, 0.5, 0.0, 2));
  RephrasePolicy policy;
  policy.kind = RephraseKind::SynonymMap;
  policy.table = rotation_table(task);
  CHECK_THROWS_AS(rephrase({static_cast<int>(task.vocab.size()) + 5}, policy, 1),
                  std::invalid_argument);

  RephrasePolicy merging;
  merging.kind = RephraseKind::SynonymMap;
  merging.table = {{0, 1}, {2, 1}, {1, 0}};  // two tokens collapse onto one
  CHECK_THROWS_AS(merging.validate(), std::invalid_argument);

  RephrasePolicy open_image;
  open_image.kind = RephraseKind::SynonymMap;
  open_image.table = {{0, 1}};  // image token 1 has no mapping of its own
  CHECK_THROWS_AS(open_image.validate(), std::invalid_argument);

  RephrasePolicy empty;
  empty.kind = RephraseKind::SynonymMap;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
}

TEST_CASE("model rewriting decodes the next surface variant and ignores the party") {
  GeneratedTask task = gen_partitioned_qa(spec_of(4, 0, 1.0, 0.0, 13));
  ModelConfig cfg = tiny_config("rewriter", task.vocab.size(), 2, 4, 2, 8);
  TransformerModel m = init_model(cfg, 17);
  LmTrainHyper hp;
  hp.seed = 18;
  hp.steps = 800;
  hp.batch = 8;
  hp.lr = 3e-3;
  train_lm(m, task.receiver_corpus, hp);

  RephrasePolicy policy;
  policy.kind = RephraseKind::ModelRewrite;
  policy.rewriter = &m;
  policy.rewrite_token = task.rewrite_token;
  policy.sep_token = task.sep_token;
  policy.end_token = task.end_token;

  size_t exact = 0;
  for (size_t f = 0; f < 4; ++f) {
    TokenSeq q{task.key_token(f, 0)};
    TokenSeq r = rephrase(q, policy, 1);
    CHECK(r == rephrase(q, policy, 3));  // rewrites are party-independent
    REQUIRE(!r.empty());
    exact += r == TokenSeq{task.key_token(f, 1)};
  }
  CHECK(exact == 4);  // the rewrite pattern is fully learnable at this scale

  CHECK_THROWS_AS(rephrase({static_cast<int>(task.vocab.size())}, policy, 1),
                  std::invalid_argument);
  RephrasePolicy no_model = policy;
  no_model.rewriter = nullptr;
  CHECK_THROWS_AS(no_model.validate(), std::invalid_argument);
  RephrasePolicy bad_prompt = policy;
  bad_prompt.rewrite_token = static_cast<int>(task.vocab.size()) + 1;
  CHECK_THROWS_AS(bad_prompt.validate(), std::invalid_argument);
}

TEST_CASE("a session with no senders reduces exactly to standalone decoding") {
  ModelConfig cfg = tiny_config("solo", 12);
  TransformerModel m = init_model(cfg, 8);
  ModelSet models{{"solo", &m}};
  FedSession session;
  session.receiver_id = "solo";
  session.sep_token = 1;
  session.end_token = 2;

  TokenSeq query{5, 3};
  DecodeOutcome fed =
      federated_decode(session, models, dyadic_net(), dyadic_cost(), query, 4, "t0");
  DecodeOutcome alone =
      standalone_decode(m, query, 4, 1, 2, dyadic_net(), dyadic_cost());
  CHECK(fed.answer == alone.answer);
  CHECK(fed.round.receiver_query_tokens == alone.round.receiver_query_tokens);
  CHECK(fed.round.decode_tokens == alone.round.decode_tokens);
  CHECK(fed.round.senders.empty());
  CHECK(fed.timeline.total == alone.timeline.total);
  CHECK(fed.log.messages.empty());
}

TEST_CASE("identity fusers at closed gates reproduce standalone answers") {
  ModelConfig recv_cfg = tiny_config("recv", 12, 2, 2, 2, 8);
  ModelConfig send_cfg = recv_cfg;
  send_cfg.model_id = "send";
  TransformerModel recv = init_model(recv_cfg, 1);
  TransformerModel send = init_model(send_cfg, 2);  // different weights on purpose
  FuserRegistry registry;
  registry.add(identity_fuser(send_cfg, recv_cfg));

  ModelSet models{{"recv", &recv}, {"send", &send}};
  FedSession session;
  session.receiver_id = "recv";
  session.sender_ids = {"send"};
  session.registry = &registry;
  session.sep_token = 1;
  session.end_token = 2;

  for (int t = 3; t < 10; ++t) {
    TokenSeq query{t};
    DecodeOutcome fed = c2c_decode(session, models, dyadic_net(), dyadic_cost(), query, 4, "q");
    DecodeOutcome alone = standalone_decode(recv, query, 4, 1, 2, dyadic_net(), dyadic_cost());
    CHECK(fed.answer == alone.answer);
  }
}

TEST_CASE("sender-bound messages never carry tokens, only sizes and a task id") {
  ModelConfig recv_cfg = tiny_config("recv", 12, 2, 2, 2, 8);
  ModelConfig a_cfg = recv_cfg;
  a_cfg.model_id = "a";
  ModelConfig b_cfg = recv_cfg;
  b_cfg.model_id = "b";
  TransformerModel recv = init_model(recv_cfg, 1);
  TransformerModel a = init_model(a_cfg, 2);
  TransformerModel b = init_model(b_cfg, 3);
  FuserRegistry registry;
  registry.add(identity_fuser(a_cfg, recv_cfg));
  registry.add(identity_fuser(b_cfg, recv_cfg));
  ModelSet models{{"recv", &recv}, {"a", &a}, {"b", &b}};

  FedSession session;
  session.receiver_id = "recv";
  session.sender_ids = {"a", "b"};
  session.registry = &registry;
  session.sep_token = 1;
  session.end_token = 2;
  session.t2t_cap = 3;

  TokenSeq query{5};
  DecodeOutcome c2c = c2c_decode(session, models, dyadic_net(), dyadic_cost(), query, 3, "tid");
  REQUIRE(c2c.log.messages.size() == 4);
  for (const Message& m : c2c.log.messages) {
    CHECK(m.task_id == "tid");
    if (m.to != "recv") {  // request
      CHECK(m.payload_bytes == 16);
      CHECK(m.tokens.empty());
      CHECK(m.from == "recv");
      CHECK(m.time == 0.0);  // no rephrasing configured
    } else {  // cache response: bytes only, never tokens
      CHECK(m.payload_bytes == kv_payload_bytes(a_cfg, 1, 2));
      CHECK(m.tokens.empty());
    }
  }

  DecodeOutcome t2t = t2t_decode(session, models, dyadic_net(), dyadic_cost(), query, 3, "tid");
  REQUIRE(t2t.log.messages.size() == 4);
  for (const Message& m : t2t.log.messages)
    if (m.to != "recv") {
      CHECK(m.payload_bytes == 16);
      CHECK(m.tokens.empty());
    }

  // Rephrasing delays the requests by exactly its decode time.
  GeneratedTask task = gen_partitioned_qa(spec_of(4, 2, 0.5, 0.0, 6));
  RephrasePolicy policy;
  policy.kind = RephraseKind::SynonymMap;
  policy.table = rotation_table(task);
  FedSession rsession = session;
  rsession.rephrase_policy = policy;
  ModelConfig recv12 = recv_cfg;
  // Same geometry but the task vocabulary, so key tokens resolve.
  recv12.vocab_size = task.vocab.size();
  ModelConfig a12 = recv12;
  a12.model_id = "a";
  ModelConfig b12 = recv12;
  b12.model_id = "b";
  TransformerModel recv2 = init_model(recv12, 4);
  TransformerModel a2 = init_model(a12, 5);
  TransformerModel b2 = init_model(b12, 6);
  FuserRegistry reg2;
  reg2.add(identity_fuser(a12, recv12));
  reg2.add(identity_fuser(b12, recv12));
  rsession.registry = &reg2;
  rsession.sep_token = task.sep_token;
  rsession.end_token = task.end_token;
  ModelSet models2{{"recv", &recv2}, {"a", &a2}, {"b", &b2}};
  DecodeOutcome reph = c2c_decode(rsession, models2, dyadic_net(), dyadic_cost(),
                                  {task.key_token(0, 0)}, 3, "tid");
  CHECK(reph.round.rephrase_tokens == 2);  // one token per sender
  for (const Message& m : reph.log.messages)
    if (m.to != "recv") CHECK(m.time == 2 * 0.0078125);
}

TEST_CASE("sessions fail closed before any computation") {
  ModelConfig recv_cfg = tiny_config("recv", 12, 2, 2, 2, 8);
  ModelConfig send_cfg = recv_cfg;
  send_cfg.model_id = "send";
  TransformerModel recv = init_model(recv_cfg, 1);
  TransformerModel send = init_model(send_cfg, 2);
  ModelSet models{{"recv", &recv}, {"send", &send}};
  FuserRegistry registry;
  registry.add(identity_fuser(send_cfg, recv_cfg));

  FedSession good;
  good.receiver_id = "recv";
  good.sender_ids = {"send"};
  good.registry = &registry;
  good.sep_token = 1;
  good.end_token = 2;
  CHECK_NOTHROW(good.validate(models));

  FedSession s = good;
  s.receiver_id = "ghost";
  CHECK_THROWS_AS(s.validate(models), std::invalid_argument);
  s = good;
  s.sender_ids = {"ghost"};
  CHECK_THROWS_AS(s.validate(models), std::invalid_argument);
  s = good;
  s.sender_ids = {"send", "send"};
  CHECK_THROWS_AS(s.validate(models), std::invalid_argument);
  s = good;
  s.sender_ids = {"recv"};
  CHECK_THROWS_AS(s.validate(models), std::invalid_argument);
  s = good;
  s.sep_token = -1;
  CHECK_THROWS_AS(s.validate(models), std::invalid_argument);
  s = good;
  s.end_token = 99;
  CHECK_THROWS_AS(s.validate(models), std::invalid_argument);
  s = good;
  s.registry = nullptr;
  CHECK_THROWS_AS(s.validate(models), MissingArtifactError);

  FuserRegistry empty;
  s = good;
  s.registry = &empty;
  CHECK_THROWS_AS(s.validate(models), MissingArtifactError);

  // A registered fuser whose geometry no longer matches the live model.
  ModelConfig stale = send_cfg;
  stale.n_layers = 1;
  FuserRegistry mismatched;
  Fuser f = make_fuser(stale, recv_cfg, FuseMode::Mix, 3);
  mismatched.add(std::move(f));
  s = good;
  s.registry = &mismatched;
  CHECK_THROWS_AS(s.validate(models), std::invalid_argument);

  // Mixing media requires position-contiguous fusion.
  ModelConfig other_cfg = recv_cfg;
  other_cfg.model_id = "other";
  TransformerModel other = init_model(other_cfg, 9);
  models["other"] = &other;
  FuserRegistry mixed;
  mixed.add(identity_fuser(send_cfg, recv_cfg));
  s = good;
  s.registry = &mixed;
  s.sender_ids = {"send", "other"};
  s.media = {{"other", Medium::Token}};
  CHECK_THROWS_AS(s.validate(models), std::invalid_argument);

  FuserRegistry concat;
  concat.add(make_fuser(send_cfg, recv_cfg, FuseMode::Concat, 4));
  s.registry = &concat;
  CHECK_NOTHROW(s.validate(models));
  CHECK_NOTHROW(
      federated_decode(s, models, dyadic_net(), dyadic_cost(), {5}, 2, "mixed-media"));
}

TEST_CASE("token collaboration pays receiver prefill for every contributed token") {
  ModelConfig recv_cfg = tiny_config("recv", 12, 2, 2, 2, 8);
  ModelConfig a_cfg = recv_cfg;
  a_cfg.model_id = "a";
  ModelConfig b_cfg = recv_cfg;
  b_cfg.model_id = "b";
  TransformerModel recv = init_model(recv_cfg, 1);
  TransformerModel a = init_model(a_cfg, 2);
  TransformerModel b = init_model(b_cfg, 3);
  FuserRegistry registry;
  registry.add(identity_fuser(a_cfg, recv_cfg));
  registry.add(identity_fuser(b_cfg, recv_cfg));
  ModelSet models{{"recv", &recv}, {"a", &a}, {"b", &b}};

  FedSession session;
  session.receiver_id = "recv";
  session.sender_ids = {"a", "b"};
  session.registry = &registry;
  session.sep_token = 1;
  session.end_token = 2;
  session.t2t_cap = 3;

  TokenSeq query{5, 7};
  DecodeOutcome c2c = c2c_decode(session, models, dyadic_net(), dyadic_cost(), query, 3, "t");
  DecodeOutcome t2t = t2t_decode(session, models, dyadic_net(), dyadic_cost(), query, 3, "t");

  CHECK(receiver_prefill_tokens(c2c.timeline) == query.size());
  size_t contributed = 0;
  for (const RoundSender& s : t2t.round.senders) {
    CHECK(s.text_tokens >= 1);
    CHECK(s.text_tokens <= 3);
    contributed += s.text_tokens;
  }
  CHECK(receiver_prefill_tokens(t2t.timeline) == query.size() + contributed);
  // The text on the wire is exactly what the receiver prefills over.
  size_t wired = 0;
  for (const Message& m : t2t.log.messages)
    if (m.to == "recv") wired += m.tokens.size();
  CHECK(wired == contributed);
}

TEST_CASE("bidirectional rounds need both fusers and run each direction independently") {
  ModelConfig a_cfg = tiny_config("a", 12, 2, 2, 2, 8);
  ModelConfig b_cfg = a_cfg;
  b_cfg.model_id = "b";
  TransformerModel a = init_model(a_cfg, 4);
  TransformerModel b = init_model(b_cfg, 5);
  ModelSet models{{"a", &a}, {"b", &b}};

  FuserRegistry both;
  both.add(identity_fuser(b_cfg, a_cfg));
  both.add(identity_fuser(a_cfg, b_cfg));
  RephrasePolicy none;
  TokenSeq query{6};
  BidirectionalResult r = bidirectional_round("a", "b", models, both, none, dyadic_net(),
                                              dyadic_cost(), query, 3, 1, 2);
  CHECK(r.first.log.messages.front().task_id == "a<-b");
  CHECK(r.second.log.messages.front().task_id == "b<-a");
  // Identity bridges at closed gates: each direction answers as if alone.
  CHECK(r.first.answer == standalone_decode(a, query, 3, 1, 2, dyadic_net(), dyadic_cost()).answer);
  CHECK(r.second.answer == standalone_decode(b, query, 3, 1, 2, dyadic_net(), dyadic_cost()).answer);

  FuserRegistry one_way;
  one_way.add(identity_fuser(b_cfg, a_cfg));
  CHECK_THROWS_AS(bidirectional_round("a", "b", models, one_way, none, dyadic_net(),
                                      dyadic_cost(), query, 3, 1, 2),
                  MissingArtifactError);
}

TEST_CASE("medium selection picks the faster viable shape and flips at the crossover") {
  CostModel cost = dyadic_cost();
  cost.text_bytes_per_token = 16;
  auto cache_desc = [](size_t kv_bytes) {
    RoundDesc d;
    d.receiver_id = "recv";
    d.senders = {{"a", Medium::Cache, 1, kv_bytes, 0}};
    d.receiver_query_tokens = 1;
    d.decode_tokens = 2;
    return d;
  };
  auto token_desc = []() {
    RoundDesc d;
    d.receiver_id = "recv";
    d.senders = {{"a", Medium::Token, 1, 0, 2}};
    d.receiver_query_tokens = 1;
    d.decode_tokens = 2;
    return d;
  };

  QosSpec lax;
  lax.deadline_s = 1e9;
  NetworkState net = dyadic_net();

  // Closed-form crossover for this shape: latencies differ by
  // (K - T)/B + fuse - 2*decode - 2*prefill, so the flip sits at
  // B* = (K - T) / (2*(decode + prefill) - fuse).
  size_t K = 1024, T = 2 * 16;
  double bstar = static_cast<double>(K - T) /
                 (2.0 * (cost.decode_cost + cost.prefill_cost) - cost.fuse_cost);
  net.bandwidth_bytes_per_s = bstar * 1.02;
  MediumDecision fast = select_medium(net, cost, cache_desc(K), token_desc(), lax);
  CHECK(fast.medium == Medium::Cache);
  CHECK(!fast.deadline_miss);
  net.bandwidth_bytes_per_s = bstar * 0.98;
  MediumDecision slow = select_medium(net, cost, cache_desc(K), token_desc(), lax);
  CHECK(slow.medium == Medium::Token);
  CHECK(slow.latency_cache > slow.latency_token);

  // Ties go to cache: zero out every term the two shapes differ in.
  CostModel tie = cost;
  tie.fuse_cost = 0.0;
  tie.prefill_cost = 0.0;
  tie.decode_cost_per_model["a"] = 0.0;
  MediumDecision tied = select_medium(net, tie, cache_desc(T), token_desc(), lax);
  CHECK(tied.latency_cache == tied.latency_token);
  CHECK(tied.medium == Medium::Cache);

  // Both over deadline: still pick the faster one, but flag the miss.
  QosSpec strict;
  strict.deadline_s = 1e-6;
  MediumDecision missed = select_medium(net, cost, cache_desc(K), token_desc(), strict);
  CHECK(missed.deadline_miss);
  CHECK(missed.medium == (missed.latency_token < missed.latency_cache ? Medium::Token
                                                                      : Medium::Cache));

  RoundDesc other = token_desc();
  other.receiver_id = "someone-else";
  CHECK_THROWS_AS(select_medium(net, cost, cache_desc(K), other, lax), std::invalid_argument);
  QosSpec bad;
  bad.deadline_s = 0.0;
  CHECK_THROWS_AS(select_medium(net, cost, cache_desc(K), token_desc(), bad),
                  std::invalid_argument);
}

TEST_CASE("scenario files parse strictly: versioned schema, unknown keys rejected") {
  std::string good = R"({
    "version": 1, "name": "t", "seed": 5,
    "receiver": {"model_id": "r", "n_layers": 2, "n_heads": 2, "n_kv_heads": 1, "head_dim": 8, "max_seq": 32},
    "senders": [{"model_id": "s", "n_layers": 1, "n_heads": 2, "n_kv_heads": 2, "head_dim": 4, "max_seq": 32}],
    "task": {"n_facts": 6, "receiver_share": 0.5, "overlap": 0.0},
    "fuse_mode": "concat", "rephrase": "none", "max_new": 3, "t2t_cap": 4,
    "lm_train": {"steps": 10, "batch": 4, "lr": 0.01},
    "fuser_train": {"steps": 10, "batch": 4, "lr": 0.01},
    "network": {"bandwidth_bytes_per_s": 1048576, "rtt_s": 0.015625},
    "cost": {"prefill_cost": 0.00390625, "decode_cost": 0.0078125, "fuse_cost": 0.0009765625,
             "wire_dtype_bytes": 2, "text_bytes_per_token": 16},
    "qos": {"deadline_s": 16.0, "min_accuracy_hint": 0.5}
  })";
  ScenarioConfig cfg = parse_scenario(good);
  CHECK(cfg.name == "t");
  CHECK(cfg.receiver.d_model == 16);  // derived from heads x head_dim
  CHECK(cfg.fuse_mode == FuseMode::Concat);
  CHECK(cfg.senders.size() == 1);
  CHECK(cfg.task.n_senders == 1);

  auto with = [&](const std::string& find, const std::string& replace) {
    std::string s = good;
    s.replace(s.find(find), find.size(), replace);
    return s;
  };
  CHECK_THROWS_AS(parse_scenario(with("\"version\": 1", "\"version\": 2")), ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("\"seed\": 5", "\"seed\": 5, \"extra\": 1")), ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("\"n_facts\": 6", "\"n_facts\": 6, \"junk\": 0")),
                  ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("\"fuse_mode\": \"concat\"", "\"fuse_mode\": \"blend\"")),
                  ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("\"rephrase\": \"none\"", "\"rephrase\": \"scramble\"")),
                  ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("\"name\": \"t\"", "\"name\": \"a,b\"")), ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("\"rtt_s\": 0.015625", "\"rtt_s\": -1.0")), ConfigError);
  CHECK_THROWS_AS(parse_scenario(with("\"max_new\": 3", "\"max_new\": 0")), ConfigError);
  CHECK_THROWS_AS(parse_scenario("not json at all"), ConfigError);
  CHECK_THROWS_AS(parse_scenario("{\"version\": 1}"), ConfigError);
  CHECK_THROWS_AS(load_scenario("/nonexistent/path/scenario.json"), MissingArtifactError);
}
