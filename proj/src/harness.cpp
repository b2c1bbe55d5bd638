#include "fedrefine/harness.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <stdexcept>

#include "fedrefine/checkpoint.hpp"
#include "fedrefine/errors.hpp"
#include "fedrefine/rng.hpp"
#include "fedrefine/train_fuser.hpp"
#include "fedrefine/train_lm.hpp"

namespace fedrefine {

namespace {

// Seed streams for the stages of a run, all derived from the master seed.
constexpr uint64_t kTaskStream = 1;
constexpr uint64_t kPolicyStream = 42;
constexpr uint64_t kInitStream = 100;   // + party index (0 receiver, 1.. senders)
constexpr uint64_t kTrainStream = 200;  // + party index
constexpr uint64_t kFuserStream = 300;  // + sender index

// The task's answers are one value token plus the end token.
constexpr size_t kAnswerSteps = 2;
// Canonical contribution: one-token query on the sender side, two-token
// text contribution (value + end) when shipping text.
constexpr size_t kQueryTokens = 1;
constexpr size_t kContributionTokens = 2;
constexpr size_t kRequestBytes = 16;

std::string fuser_path(const std::string& dir, const std::string& sender,
                       const std::string& receiver) {
  return dir + "/fuser_" + sender + "__" + receiver + ".ckpt";
}

std::string model_path(const std::string& dir, const std::string& id) {
  return dir + "/" + id + ".ckpt";
}

std::vector<FuserSample> fuser_corpus_for(const GeneratedTask& task, size_t sender_index) {
  std::vector<FuserSample> corpus;
  for (size_t f = 0; f < task.facts.size(); ++f) {
    const Fact& fact = task.facts[f];
    bool owned = false;
    for (int o : fact.owners) owned |= o == static_cast<int>(sender_index) + 1;
    if (!owned) continue;
    int value = task.vocab.id(fact.value_word);
    for (size_t a = 0; a < task.n_variants; ++a)
      for (size_t b = 0; b < task.n_variants; ++b)
        corpus.push_back({{task.key_token(f, a)},
                          {task.key_token(f, b)},
                          {task.sep_token, value, task.end_token}});
  }
  return corpus;
}

}  // namespace

TaskSpec task_spec_of(const ScenarioConfig& cfg) {
  TaskSpec spec = cfg.task;
  spec.n_senders = cfg.senders.size();
  spec.seed = derive_seed(cfg.seed, kTaskStream);
  return spec;
}

ModelSet TrainedScenario::model_set() const {
  ModelSet set;
  set[receiver.config.model_id] = &receiver;
  for (const TransformerModel& s : senders) set[s.config.model_id] = &s;
  return set;
}

RephrasePolicy TrainedScenario::make_policy(bool rephrased) const {
  RephrasePolicy p;
  if (!rephrased || cfg.rephrase == RephraseKind::None) return p;
  p.kind = cfg.rephrase;
  p.seed = derive_seed(cfg.seed, kPolicyStream);
  if (p.kind == RephraseKind::SynonymMap) {
    // Bijection on the whole task alphabet: each key's surface variants
    // rotate one step, everything else maps to itself.
    for (size_t t = 0; t < task.vocab.size(); ++t)
      p.table[static_cast<int>(t)] = static_cast<int>(t);
    for (const std::vector<int>& group : task.synonym_groups)
      for (size_t i = 0; i < group.size(); ++i)
        p.table[group[i]] = group[(i + 1) % group.size()];
  } else {
    p.rewriter = &receiver;
    p.rewrite_token = task.rewrite_token;
    p.sep_token = task.sep_token;
    p.end_token = task.end_token;
  }
  return p;
}

TrainedScenario train_models(const ScenarioConfig& cfg) {
  cfg.validate();
  TrainedScenario ts;
  ts.cfg = cfg;
  ts.task = gen_partitioned_qa(task_spec_of(cfg));

  ts.cfg.receiver.vocab_size = ts.task.vocab.size();
  for (ModelConfig& s : ts.cfg.senders) s.vocab_size = ts.task.vocab.size();

  auto train_party = [&](const ModelConfig& mc, const std::vector<TokenSeq>& corpus,
                         size_t party) {
    TransformerModel m = init_model(mc, derive_seed(cfg.seed, kInitStream + party));
    LmTrainHyper hp;
    hp.seed = derive_seed(cfg.seed, kTrainStream + party);
    hp.steps = cfg.lm_train.steps;
    hp.batch = cfg.lm_train.batch;
    hp.lr = cfg.lm_train.lr;
    try {
      train_lm(m, corpus, hp);
    } catch (const DivergenceError& e) {
      throw DivergenceError("lm training for '" + mc.model_id + "' (seed " +
                                std::to_string(hp.seed) + ") diverged: " + e.what(),
                            e.step);
    }
    return m;
  };

  ts.receiver = train_party(ts.cfg.receiver, ts.task.receiver_corpus, 0);
  ts.senders.reserve(ts.cfg.senders.size());
  for (size_t j = 0; j < ts.cfg.senders.size(); ++j)
    ts.senders.push_back(train_party(ts.cfg.senders[j], ts.task.sender_corpora[j], j + 1));
  return ts;
}

void train_fusers(TrainedScenario& ts) {
  const ScenarioConfig& cfg = ts.cfg;
  // Pairwise bridges are independent, so they train in parallel, each pinned
  // to its own derived seed; results join in sender order so the registry
  // fills deterministically.
  std::vector<std::future<FuserTrainResult>> jobs;
  jobs.reserve(ts.senders.size());
  for (size_t j = 0; j < ts.senders.size(); ++j) {
    jobs.push_back(std::async(std::launch::async, [&cfg, &ts, j]() {
      FuserTrainHyper hp;
      hp.seed = derive_seed(cfg.seed, kFuserStream + j);
      hp.steps = cfg.fuser_train.steps;
      hp.batch = cfg.fuser_train.batch;
      hp.lr = cfg.fuser_train.lr;
      hp.mode = cfg.fuse_mode;
      return train_fuser(ts.senders[j], ts.receiver, fuser_corpus_for(ts.task, j), hp);
    }));
  }
  for (size_t j = 0; j < jobs.size(); ++j) {
    try {
      ts.registry.add(std::move(jobs[j].get().fuser));
    } catch (const DivergenceError& e) {
      throw DivergenceError("fuser training for '" + ts.senders[j].config.model_id + "->" +
                                ts.receiver.config.model_id + "' (seed " +
                                std::to_string(derive_seed(cfg.seed, kFuserStream + j)) +
                                ") diverged: " + e.what(),
                            e.step);
    }
  }
}

TrainedScenario train_scenario(const ScenarioConfig& cfg) {
  TrainedScenario ts = train_models(cfg);
  train_fusers(ts);
  return ts;
}

void save_artifacts(const TrainedScenario& ts, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  ts.task.vocab.save(out_dir + "/vocab.json");
  save_model(ts.receiver, model_path(out_dir, ts.receiver.config.model_id));
  for (const TransformerModel& s : ts.senders)
    save_model(s, model_path(out_dir, s.config.model_id));
  for (const auto& [link, fuser] : ts.registry.entries)
    save_fuser(fuser, fuser_path(out_dir, link.first, link.second));
}

TrainedScenario load_models(const ScenarioConfig& cfg, const std::string& artifact_dir) {
  cfg.validate();
  TrainedScenario ts;
  ts.cfg = cfg;
  ts.task = gen_partitioned_qa(task_spec_of(cfg));
  ts.cfg.receiver.vocab_size = ts.task.vocab.size();
  for (ModelConfig& s : ts.cfg.senders) s.vocab_size = ts.task.vocab.size();

  auto load_party = [&](const ModelConfig& expect) {
    TransformerModel m = load_model(model_path(artifact_dir, expect.model_id));
    if (m.config.model_id != expect.model_id || !m.config.same_geometry(expect))
      throw ConfigError("checkpoint " + model_path(artifact_dir, expect.model_id) +
                        " was trained for a different scenario configuration");
    return m;
  };
  ts.receiver = load_party(ts.cfg.receiver);
  ts.senders.reserve(ts.cfg.senders.size());
  for (const ModelConfig& s : ts.cfg.senders) ts.senders.push_back(load_party(s));
  return ts;
}

TrainedScenario load_trained(const ScenarioConfig& cfg, const std::string& artifact_dir) {
  TrainedScenario ts = load_models(cfg, artifact_dir);
  for (const ModelConfig& s : ts.cfg.senders) {
    std::string path = fuser_path(artifact_dir, s.model_id, ts.cfg.receiver.model_id);
    Fuser f = load_fuser(path);
    if (!f.sender_cfg.same_geometry(s) || !f.receiver_cfg.same_geometry(ts.cfg.receiver) ||
        f.mode != ts.cfg.fuse_mode)
      throw ConfigError("fuser checkpoint " + path +
                        " does not match the scenario geometries");
    ts.registry.add(std::move(f));
  }
  return ts;
}

double evaluate_accuracy(const AnswerRunner& runner, const Vocab& vocab,
                         const std::vector<EvalItem>& eval_set) {
  if (eval_set.empty()) throw std::invalid_argument("evaluation needs a non-empty eval set");
  size_t hits = 0;
  for (const EvalItem& item : eval_set) {
    try {
      if (detokenize(vocab, runner(item)) == item.answer) ++hits;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "eval: fact %zu counted incorrect: %s\n", item.fact, e.what());
    }
  }
  return static_cast<double>(hits) / static_cast<double>(eval_set.size());
}

RoundDesc canonical_round(const TrainedScenario& ts, size_t n_senders, Medium medium,
                          bool rephrased) {
  if (n_senders > ts.cfg.senders.size())
    throw std::invalid_argument("canonical round over more senders than the scenario has");
  RoundDesc desc;
  desc.receiver_id = ts.cfg.receiver.model_id;
  desc.receiver_query_tokens = kQueryTokens;
  desc.decode_tokens = kAnswerSteps;
  desc.rephrase_tokens =
      rephrased && ts.cfg.rephrase != RephraseKind::None ? n_senders * kQueryTokens : 0;
  for (size_t j = 0; j < n_senders; ++j) {
    RoundSender s;
    s.id = ts.cfg.senders[j].model_id;
    s.medium = medium;
    s.prefill_tokens = kQueryTokens;
    if (medium == Medium::Cache)
      s.kv_bytes = kv_payload_bytes(ts.cfg.senders[j], kQueryTokens, ts.cfg.cost.wire_dtype_bytes);
    else
      s.text_tokens = kContributionTokens;
    desc.senders.push_back(std::move(s));
  }
  return desc;
}

namespace {

// Request plus response bytes crossing the links of one canonical round,
// amortized over the answer tokens it buys.
double bytes_per_answer_token(const RoundDesc& desc, const CostModel& cost) {
  if (desc.senders.empty()) return 0.0;
  size_t total = 0;
  for (const RoundSender& s : desc.senders) {
    total += kRequestBytes;
    total += s.medium == Medium::Cache ? s.kv_bytes : text_payload_bytes(s.text_tokens, cost);
  }
  return static_cast<double>(total) / static_cast<double>(desc.decode_tokens);
}

MetricsRow priced_row(const TrainedScenario& ts, const std::string& protocol,
                      const std::string& privacy, size_t k) {
  MetricsRow row;
  row.scenario = ts.cfg.name;
  row.protocol = protocol;
  row.privacy = privacy;
  row.n_senders = k;
  Medium medium = protocol == "t2t" ? Medium::Token : Medium::Cache;
  RoundDesc desc = canonical_round(ts, k, medium, privacy == "rephrased");
  row.latency_s = simulate_round(desc, ts.cfg.network, ts.cfg.cost).total;
  row.bytes_per_token = bytes_per_answer_token(desc, ts.cfg.cost);
  return row;
}

}  // namespace

std::vector<MetricsRow> compare_protocols(const TrainedScenario& ts, MessageLog* log) {
  ModelSet models = ts.model_set();
  const GeneratedTask& task = ts.task;

  auto scheduled_prefix = [&](size_t fact, size_t k) {
    std::vector<std::string> ids;
    for (size_t j : task.scheduled_senders(fact))
      if (j < k) ids.push_back(ts.cfg.senders[j].model_id);
    return ids;
  };

  auto protocol_runner = [&](size_t k, bool rephrased, bool token_medium) {
    RephrasePolicy policy = ts.make_policy(rephrased);
    return [&, k, policy, token_medium](const EvalItem& item) {
      std::vector<std::string> ids = scheduled_prefix(item.fact, k);
      DecodeOutcome out;
      if (ids.empty()) {
        out = standalone_decode(ts.receiver, item.query, ts.cfg.max_new, task.sep_token,
                                task.end_token, ts.cfg.network, ts.cfg.cost);
      } else {
        FedSession session;
        session.receiver_id = ts.cfg.receiver.model_id;
        session.sender_ids = ids;
        session.registry = &ts.registry;
        session.rephrase_policy = policy;
        session.sep_token = task.sep_token;
        session.end_token = task.end_token;
        session.t2t_cap = ts.cfg.t2t_cap;
        std::string task_id = "fact" + std::to_string(item.fact);
        out = token_medium ? t2t_decode(session, models, ts.cfg.network, ts.cfg.cost,
                                        item.query, ts.cfg.max_new, task_id)
                           : c2c_decode(session, models, ts.cfg.network, ts.cfg.cost,
                                        item.query, ts.cfg.max_new, task_id);
      }
      if (log)
        for (Message& m : out.log.messages) log->append(std::move(m));
      return out.answer;
    };
  };

  std::vector<MetricsRow> rows;
  MetricsRow standalone = priced_row(ts, "standalone", "original", 0);
  standalone.accuracy =
      evaluate_accuracy(protocol_runner(0, false, false), task.vocab, task.eval_set);
  rows.push_back(standalone);

  for (bool token_medium : {false, true}) {
    std::string protocol = token_medium ? "t2t" : "c2c";
    for (size_t k = 1; k <= ts.cfg.senders.size(); ++k) {
      for (bool rephrased : {false, true}) {
        MetricsRow row = priced_row(ts, protocol, rephrased ? "rephrased" : "original", k);
        row.accuracy = evaluate_accuracy(protocol_runner(k, rephrased, token_medium),
                                         task.vocab, task.eval_set);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

RunResult run_scenario(const ScenarioConfig& cfg, const std::string& out_dir) {
  TrainedScenario ts = train_scenario(cfg);
  save_artifacts(ts, out_dir);

  MessageLog log;
  RunResult result;
  result.rows = compare_protocols(ts, &log);
  result.csv = metrics_to_csv(result.rows);
  result.out_dir = out_dir;

  auto write_file = [&](const std::string& name, const std::string& content) {
    std::string path = out_dir + "/" + name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    f << content;
  };
  write_file("metrics.csv", result.csv);
  write_file("messages.jsonl", log.to_jsonl());

  // One canonical timeline per metrics row, as JSON lines.
  std::string timelines;
  for (const MetricsRow& row : result.rows) {
    Medium medium = row.protocol == "t2t" ? Medium::Token : Medium::Cache;
    RoundDesc desc = canonical_round(ts, row.n_senders, medium, row.privacy == "rephrased");
    Timeline tl = simulate_round(desc, cfg.network, cfg.cost);
    nlohmann::json j;
    j["scenario"] = row.scenario;
    j["protocol"] = row.protocol;
    j["privacy"] = row.privacy;
    j["n_senders"] = row.n_senders;
    j["total"] = tl.total;
    nlohmann::json segs = nlohmann::json::array();
    for (const TimelineSegment& s : tl.segments)
      segs.push_back({{"phase", s.phase},
                      {"party", s.party},
                      {"start", s.start},
                      {"duration", s.duration},
                      {"tokens", s.tokens}});
    j["segments"] = std::move(segs);
    timelines += j.dump();
    timelines += "\n";
  }
  write_file("timelines.jsonl", timelines);
  return result;
}

}  // namespace fedrefine
