// Acceptance gates for the collaborative-decoding stack.  Each gate prints
// exactly one [PASS]/[FAIL] line and the binary exits nonzero if any gate
// fails.  The heavyweight gates train the committed reference scenario
// twice; everything else runs on small seeded instances.
//
// Usage: acceptance [reference-scenario.json] [work-dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fedrefine/errors.hpp"
#include "fedrefine/fuser.hpp"
#include "fedrefine/grad_check.hpp"
#include "fedrefine/harness.hpp"
#include "fedrefine/model.hpp"
#include "fedrefine/model_grad.hpp"
#include "fedrefine/netsim.hpp"
#include "fedrefine/nn_ops.hpp"
#include "fedrefine/params.hpp"
#include "fedrefine/protocol.hpp"
#include "fedrefine/rng.hpp"
#include "fedrefine/scenario.hpp"
#include "fedrefine/task_gen.hpp"

using namespace fedrefine;

namespace {

int g_fails = 0;

class Gate {
 public:
  Gate(int number, const char* label, double budget_s)
      : number_(number), label_(label), budget_s_(budget_s),
        start_(std::chrono::steady_clock::now()) {}

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  void finish(bool ok, const std::string& detail) {
    double t = elapsed();
    bool in_budget = t < budget_s_;
    bool pass = ok && in_budget;
    if (!pass) ++g_fails;
    std::printf("[%s] %02d %s: %s (%.2f s", pass ? "PASS" : "FAIL", number_, label_,
                detail.c_str(), t);
    if (!in_budget) std::printf(", over the %.0f s budget", budget_s_);
    std::printf(")\n");
    std::fflush(stdout);
  }

  void fail_exception(const std::exception& e) { finish(false, std::string("threw: ") + e.what()); }

 private:
  int number_;
  const char* label_;
  double budget_s_;
  std::chrono::steady_clock::time_point start_;
};

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

ModelConfig geometry(const std::string& id, size_t layers, size_t heads, size_t kv, size_t hd,
                     size_t vocab, size_t max_seq = 32) {
  ModelConfig c;
  c.model_id = id;
  c.n_layers = layers;
  c.n_heads = heads;
  c.n_kv_heads = kv;
  c.head_dim = hd;
  c.d_model = heads * hd;
  c.vocab_size = vocab;
  c.max_seq = max_seq;
  return c;
}

TokenSeq random_tokens(std::mt19937_64& rng, size_t len, size_t vocab) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(vocab) - 1);
  TokenSeq t(len);
  for (int& x : t) x = pick(rng);
  return t;
}

// ---------------------------------------------------------------------------
// 01: a same-geometry bridge with identity projections and closed gates must
// leave the receiver's decoding bit-for-bit untouched.

void gate_identity_neutrality() {
  Gate gate(1, "identity-neutrality", 10.0);
  try {
    ModelConfig recv_cfg = geometry("recv", 2, 4, 2, 8, 29);
    ModelConfig send_cfg = recv_cfg;
    send_cfg.model_id = "send";
    TransformerModel recv = init_model(recv_cfg, 1001);
    TransformerModel send = init_model(send_cfg, 1002);  // different weights on purpose
    FuserRegistry registry;
    registry.add(identity_fuser(send_cfg, recv_cfg));
    ModelSet models{{"recv", &recv}, {"send", &send}};

    FedSession session;
    session.receiver_id = "recv";
    session.sender_ids = {"send"};
    session.registry = &registry;
    session.sep_token = 0;
    session.end_token = 1;

    NetworkState net;
    CostModel cost;
    auto rng = make_rng(20260822);
    std::uniform_int_distribution<size_t> len(1, 6);
    size_t matched = 0;
    const size_t n_queries = 50;
    for (size_t q = 0; q < n_queries; ++q) {
      TokenSeq query = random_tokens(rng, len(rng), recv_cfg.vocab_size);
      DecodeOutcome fed = c2c_decode(session, models, net, cost, query, 5, "q");
      DecodeOutcome alone = standalone_decode(recv, query, 5, 0, 1, net, cost);
      if (fed.answer == alone.answer) ++matched;
    }
    gate.finish(matched == n_queries,
                fmt("%zu/%zu fused decodes token-identical to standalone", matched, n_queries));
  } catch (const std::exception& e) {
    gate.fail_exception(e);
  }
}

// ---------------------------------------------------------------------------
// 02: batched prefill and one-token-at-a-time decoding are two independent
// implementations of the same function; their logits must agree everywhere.

void gate_prefill_decode_equivalence() {
  Gate gate(2, "prefill-decode-equivalence", 30.0);
  try {
    auto rng = make_rng(20260823);
    double worst = 0.0;
    const size_t n_models = 20;
    for (size_t i = 0; i < n_models; ++i) {
      std::uniform_int_distribution<size_t> layers(1, 3), kv(1, 3), mult(1, 3);
      std::uniform_int_distribution<size_t> vocab(17, 41), seq_len(3, 12);
      const size_t dims[] = {4, 6, 8, 12, 16};
      size_t n_kv = kv(rng);
      ModelConfig cfg = geometry("m" + std::to_string(i), layers(rng), n_kv * mult(rng), n_kv,
                                 dims[rng() % 5], vocab(rng));
      TransformerModel m = init_model(cfg, 3000 + i);
      TokenSeq input = random_tokens(rng, seq_len(rng), cfg.vocab_size);

      BatchResult batch = forward_batch(m, input, nullptr);
      KvCache cache = KvCache::empty(cfg, 0);
      for (size_t t = 0; t < input.size(); ++t) {
        std::vector<double> step = decode_step(m, cache, input[t]);
        for (size_t v = 0; v < step.size(); ++v)
          worst = std::max(worst, std::fabs(step[v] - batch.logits[t][v]));
      }
    }
    gate.finish(worst <= 1e-9,
                fmt("max |prefill - stepwise| logit gap %.3e over %zu models", worst, n_models));
  } catch (const std::exception& e) {
    gate.fail_exception(e);
  }
}

// ---------------------------------------------------------------------------
// 03: analytic gradients of both training losses agree with central
// differences.

double lm_grad_error() {
  ModelConfig cfg = geometry("g", 2, 2, 1, 4, 9);
  TransformerModel m = init_model(cfg, 4100);
  TokenSeq line{3, 1, 4, 1, 5, 8};
  LmGrads g = zero_grads(m);
  ParamRefs params = m.params();
  ParamRefs grads = g.params();
  Trace trace;
  auto loss = [&]() {
    zero_blocks(grads);
    BatchResult r = forward_batch(m, line, nullptr, 0, &trace);
    size_t n_pred = line.size() - 1;
    double v = 0.0;
    std::vector<std::vector<double>> dlogits(line.size());
    for (size_t t = 0; t < n_pred; ++t) {
      int target = line[t + 1];
      v += cross_entropy(r.logits[t], target);
      std::vector<double> p = softmax(r.logits[t]);
      p[static_cast<size_t>(target)] -= 1.0;
      for (double& d : p) d /= static_cast<double>(n_pred);
      dlogits[t] = std::move(p);
    }
    dlogits[n_pred].assign(cfg.vocab_size, 0.0);
    backward_batch(m, trace, r.cache, dlogits, &g, nullptr);
    return v / static_cast<double>(n_pred);
  };
  return grad_check(loss, params, grads, 1e-5);
}

double fuser_grad_error() {
  ModelConfig s_cfg = geometry("s", 1, 2, 1, 4, 12, 24);
  ModelConfig r_cfg = geometry("r", 2, 2, 2, 4, 12, 24);
  TransformerModel sm = init_model(s_cfg, 4200);
  TransformerModel rm = init_model(r_cfg, 4201);
  auto rng = make_rng(4202);
  KvCache sender_cache = prefill(sm, random_tokens(rng, 3, s_cfg.vocab_size)).cache;
  KvCache own_cache = prefill(rm, random_tokens(rng, 3, r_cfg.vocab_size)).cache;
  TokenSeq continuation = random_tokens(rng, 3, r_cfg.vocab_size);

  Fuser f = make_fuser(s_cfg, r_cfg, FuseMode::Mix, 4203);
  // Interior gate values: the clamp is flat outside [0, 1], and central
  // differences straddle the kink at the boundary.
  for (FuserLayer& l : f.layers) l.gate_raw = 0.3;
  FuserGrads g = zero_fuser_grads(f);
  ParamRefs params = f.params();
  ParamRefs grads = g.params();
  auto loss = [&]() {
    zero_blocks(grads);
    ProjTrace ptrace;
    KvCache proj = project_cache_traced(f, sender_cache, ptrace);
    KvCache fused = fuse(f, proj, own_cache);
    TokenSeq feed(continuation.begin(), continuation.end() - 1);
    Trace trace;
    BatchResult r = forward_batch(rm, feed, &fused, 0, &trace);
    size_t n_pred = feed.size();
    double v = 0.0;
    std::vector<std::vector<double>> dlogits(n_pred);
    for (size_t t = 0; t < n_pred; ++t) {
      int target = continuation[t + 1];
      v += cross_entropy(r.logits[t], target);
      std::vector<double> p = softmax(r.logits[t]);
      p[static_cast<size_t>(target)] -= 1.0;
      for (double& d : p) d /= static_cast<double>(n_pred);
      dlogits[t] = std::move(p);
    }
    PastKvGrads past = zero_past_grads(r_cfg, fused.seq_len);
    backward_batch(rm, trace, r.cache, dlogits, nullptr, &past);
    FuseBackward fb = fuse_backward(f, proj, own_cache, past);
    project_backward(f, ptrace, fb.dproj, g);
    for (size_t l = 0; l < f.layers.size(); ++l) g.layers[l].gate_raw += fb.dgate_raw[l];
    return v / static_cast<double>(n_pred);
  };
  return grad_check(loss, params, grads, 1e-5);
}

void gate_gradient_correctness() {
  Gate gate(3, "gradient-correctness", 60.0);
  try {
    double lm_err = lm_grad_error();
    double fuser_err = fuser_grad_error();
    gate.finish(lm_err < 1e-4 && fuser_err < 1e-4,
                fmt("central-difference error: lm %.3e, fuser %.3e", lm_err, fuser_err));
  } catch (const std::exception& e) {
    gate.fail_exception(e);
  }
}

// ---------------------------------------------------------------------------
// 04: the wire-size formulas are exact, and a text token costs 16 bytes at
// the defaults.

void gate_payload_exactness() {
  Gate gate(4, "payload-exactness", 5.0);
  try {
    auto rng = make_rng(20260824);
    std::uniform_int_distribution<size_t> layers(1, 48), kv(1, 16), half_hd(1, 64),
        tokens(0, 4096);
    const size_t dtypes[] = {1, 2, 4, 8};
    size_t mismatches = 0;
    const size_t n_configs = 1000;
    for (size_t i = 0; i < n_configs; ++i) {
      size_t n_kv = kv(rng);
      ModelConfig cfg = geometry("p", layers(rng), n_kv, n_kv, 2 * half_hd(rng), 7, 8192);
      size_t dtype = dtypes[rng() % 4];
      size_t n = tokens(rng);
      // Independent tally: accumulate one layer at a time, K and V separately.
      size_t expect = 0;
      for (size_t l = 0; l < cfg.n_layers; ++l)
        for (int side = 0; side < 2; ++side) expect += cfg.n_kv_heads * cfg.head_dim * dtype * n;
      if (kv_payload_bytes(cfg, n, dtype) != expect) ++mismatches;
    }
    CostModel defaults;
    bool text_ok = text_payload_bytes(1, defaults) == 16 && text_payload_bytes(7, defaults) == 112;
    gate.finish(mismatches == 0 && text_ok,
                fmt("%zu/%zu cache payloads exact, default text token = %zu bytes", n_configs - mismatches,
                    n_configs, text_payload_bytes(1, defaults)));
  } catch (const std::exception& e) {
    gate.fail_exception(e);
  }
}

// ---------------------------------------------------------------------------
// Reference-scenario gates.

struct RefRun {
  ScenarioConfig cfg;
  RunResult first;
  RunResult second;
  double first_seconds = 0.0;
  double second_seconds = 0.0;
};

const MetricsRow& row_at(const std::vector<MetricsRow>& rows, const std::string& protocol,
                         const std::string& privacy, size_t k) {
  for (const MetricsRow& r : rows)
    if (r.protocol == protocol && r.privacy == privacy && r.n_senders == k) return r;
  throw std::runtime_error("missing row " + protocol + "/" + privacy + "/" + std::to_string(k));
}

// 05: a fused round prefills only the receiver's own query; a text round
// prefills the query plus every shipped contribution.

void gate_prefill_skip(const ScenarioConfig& cfg, const std::string& artifact_dir) {
  Gate gate(5, "prefill-skip-accounting", 10.0);
  try {
    TrainedScenario ts = load_trained(cfg, artifact_dir);
    ModelSet models = ts.model_set();
    FedSession session;
    session.receiver_id = ts.cfg.receiver.model_id;
    for (const ModelConfig& s : ts.cfg.senders) session.sender_ids.push_back(s.model_id);
    session.registry = &ts.registry;
    session.sep_token = ts.task.sep_token;
    session.end_token = ts.task.end_token;
    session.t2t_cap = ts.cfg.t2t_cap;

    auto prefill_tokens = [](const Timeline& tl) -> size_t {
      for (const TimelineSegment& s : tl.segments)
        if (s.phase == "receiver_prefill") return s.tokens;
      return 0;
    };

    bool ok = true;
    std::string detail;
    const TokenSeq& query = ts.task.eval_set.front().query;
    DecodeOutcome c2c =
        c2c_decode(session, models, ts.cfg.network, ts.cfg.cost, query, ts.cfg.max_new, "skip");
    DecodeOutcome t2t =
        t2t_decode(session, models, ts.cfg.network, ts.cfg.cost, query, ts.cfg.max_new, "skip");
    size_t contributed = 0;
    for (const RoundSender& s : t2t.round.senders) contributed += s.text_tokens;
    size_t c2c_fill = prefill_tokens(c2c.timeline);
    size_t t2t_fill = prefill_tokens(t2t.timeline);
    ok &= c2c_fill == query.size();
    ok &= t2t_fill == query.size() + contributed;
    ok &= t2t_fill - c2c_fill == contributed;

    // The priced rounds in the report account the same way.
    RoundDesc cache_rd = canonical_round(ts, ts.cfg.senders.size(), Medium::Cache, false);
    RoundDesc token_rd = canonical_round(ts, ts.cfg.senders.size(), Medium::Token, false);
    size_t canon_contrib = 0;
    for (const RoundSender& s : token_rd.senders) canon_contrib += s.text_tokens;
    size_t canon_cache = prefill_tokens(simulate_round(cache_rd, ts.cfg.network, ts.cfg.cost));
    size_t canon_token = prefill_tokens(simulate_round(token_rd, ts.cfg.network, ts.cfg.cost));
    ok &= canon_cache == cache_rd.receiver_query_tokens;
    ok &= canon_token == token_rd.receiver_query_tokens + canon_contrib;

    gate.finish(ok, fmt("receiver prefill: fused %zu vs text %zu tokens (query %zu + %zu "
                        "contributed); priced rounds %zu vs %zu",
                        c2c_fill, t2t_fill, query.size(), contributed, canon_cache, canon_token));
  } catch (const std::exception& e) {
    gate.fail_exception(e);
  }
}

// 06: partitioned knowledge plus bridges lifts accuracy monotonically, by at
// least 15 points with every sender attached.

void gate_collaboration_uplift(const RefRun& ref) {
  Gate gate(6, "collaboration-uplift", 1200.0 - ref.first_seconds);
  try {
    bool shape_ok = ref.cfg.senders.size() == 4 && ref.cfg.task.receiver_share == 0.2 &&
                    ref.cfg.task.overlap == 0.0;
    std::vector<double> series{row_at(ref.first.rows, "standalone", "original", 0).accuracy};
    for (size_t k = 1; k <= 4; ++k)
      series.push_back(row_at(ref.first.rows, "c2c", "original", k).accuracy);
    size_t inversions = 0;
    double worst_dip = 0.0;
    for (size_t i = 0; i + 1 < series.size(); ++i) {
      if (series[i + 1] < series[i] - 1e-12) {
        ++inversions;
        worst_dip = std::max(worst_dip, series[i] - series[i + 1]);
      }
    }
    double uplift = series.back() - series.front();
    bool ok = shape_ok && inversions <= 1 && worst_dip <= 0.02 + 1e-12 && uplift >= 0.15 - 1e-12;
    gate.finish(ok, fmt("accuracy %.2f -> %.2f -> %.2f -> %.2f -> %.2f, uplift %+.0f points, "
                        "%zu inversion(s), training %.0f s",
                        series[0], series[1], series[2], series[3], series[4], uplift * 100.0,
                        inversions, ref.first_seconds));
  } catch (const std::exception& e) {
    gate.fail_exception(e);
  }
}

// 07: asking through rephrased queries costs at most 5 accuracy points.

void gate_rephrase_accuracy_cost(const RefRun& ref) {
  Gate gate(7, "rephrase-accuracy-cost", 60.0);
  try {
    double worst = 0.0;
    for (const char* protocol : {"c2c", "t2t"})
      for (size_t k = 1; k <= 4; ++k)
        worst = std::max(worst,
                         std::fabs(row_at(ref.first.rows, protocol, "original", k).accuracy -
                                   row_at(ref.first.rows, protocol, "rephrased", k).accuracy));
    gate.finish(worst <= 0.05 + 1e-12, fmt("largest original-vs-rephrased gap %.1f points", worst * 100.0));
  } catch (const std::exception& e) {
    gate.fail_exception(e);
  }
}

// 08: fused rounds beat text rounds, rephrasing sits in between, and its
// price is exactly the rewrite decode time.

void gate_latency_ordering(const RefRun& ref) {
  Gate gate(8, "latency-ordering", 5.0);
  try {
    bool ordered = true;
    bool exact_delta = true;
    for (size_t k = 1; k <= 4; ++k) {
      double c_orig = row_at(ref.first.rows, "c2c", "original", k).latency_s;
      double c_reph = row_at(ref.first.rows, "c2c", "rephrased", k).latency_s;
      double t_orig = row_at(ref.first.rows, "t2t", "original", k).latency_s;
      double t_reph = row_at(ref.first.rows, "t2t", "rephrased", k).latency_s;
      ordered &= c_orig < c_reph && c_reph < t_orig;
      // One rewrite per sender, each a one-token decode on the receiver.
      double rewrite_time = ref.cfg.cost.decode_cost * static_cast<double>(k);
      exact_delta &= c_reph - c_orig == rewrite_time;
      exact_delta &= t_reph - t_orig == rewrite_time;
    }
    double c4 = row_at(ref.first.rows, "c2c", "original", 4).latency_s;
    double r4 = row_at(ref.first.rows, "c2c", "rephrased", 4).latency_s;
    double t4 = row_at(ref.first.rows, "t2t", "original", 4).latency_s;
    gate.finish(ordered && exact_delta,
                fmt("at 4 senders %.4f < %.4f < %.4f s, rephrase delta bit-exact at every k", c4,
                    r4, t4));
  } catch (const std::exception& e) {
    gate.fail_exception(e);
  }
}

// 09: the medium picker flips at the analytic bandwidth crossover.

void gate_medium_crossover(const ScenarioConfig& cfg) {
  Gate gate(9, "medium-crossover", 5.0);
  try {
    TrainedScenario ts;  // pricing only needs the configuration
    ts.cfg = cfg;
    RoundDesc cache_rd = canonical_round(ts, 1, Medium::Cache, false);
    RoundDesc token_rd = canonical_round(ts, 1, Medium::Token, false);

    // Equal-latency bandwidth for the one-sender round: the cache variant
    // moves (K - T) more bytes but saves the sender's decode, the receiver's
    // contribution prefill, and costs the fuse pass.
    double kv_bytes = static_cast<double>(cache_rd.senders[0].kv_bytes);
    double text_bytes = static_cast<double>(text_payload_bytes(token_rd.senders[0].text_tokens, cfg.cost));
    double saved = cfg.cost.decode_cost * static_cast<double>(token_rd.senders[0].text_tokens) +
                   cfg.cost.prefill_cost * static_cast<double>(token_rd.senders[0].text_tokens) -
                   cfg.cost.fuse_cost * static_cast<double>(cache_rd.senders[0].prefill_tokens);
    double analytic = (kv_bytes - text_bytes) / saved;

    auto picks_cache = [&](double bandwidth) {
      NetworkState net = cfg.network;
      net.bandwidth_bytes_per_s = bandwidth;
      return select_medium(net, cfg.cost, cache_rd, token_rd, cfg.qos).medium == Medium::Cache;
    };
    bool flips = !picks_cache(analytic * 0.99) && picks_cache(analytic * 1.01);

    double lo = analytic / 16.0, hi = analytic * 16.0;
    bool bracketed = !picks_cache(lo) && picks_cache(hi);
    for (int i = 0; i < 60; ++i) {
      double mid = (lo + hi) / 2.0;
      (picks_cache(mid) ? hi : lo) = mid;
    }
    double empirical = (lo + hi) / 2.0;
    double rel = std::fabs(empirical - analytic) / analytic;
    gate.finish(flips && bracketed && rel < 0.01,
                fmt("decision flips at %.1f bytes/s, %.4f%% from the derived %.1f", empirical,
                    rel * 100.0, analytic));
  } catch (const std::exception& e) {
    gate.fail_exception(e);
  }
}

// 10: the whole pipeline is a pure function of the scenario file.

void gate_run_determinism(const RefRun& ref, const std::string& dir1, const std::string& dir2) {
  Gate gate(10, "run-determinism", 2400.0 - ref.second_seconds);
  try {
    auto slurp = [](const std::string& path) {
      std::ifstream f(path, std::ios::binary);
      std::ostringstream ss;
      ss << f.rdbuf();
      return ss.str();
    };
    bool csv_equal = ref.first.csv == ref.second.csv;
    bool files_equal = slurp(dir1 + "/metrics.csv") == slurp(dir2 + "/metrics.csv") &&
                       !slurp(dir1 + "/metrics.csv").empty();
    gate.finish(csv_equal && files_equal,
                fmt("two seeded runs, %zu-byte reports byte-identical, second run %.0f s",
                    ref.first.csv.size(), ref.second_seconds));
  } catch (const std::exception& e) {
    gate.fail_exception(e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::string scenario_path = argc > 1 ? argv[1] : "scenarios/reference.json";
  std::string work_root = argc > 2 ? argv[2] : (std::filesystem::temp_directory_path() /
                                                "fedrefine-acceptance").string();

  gate_identity_neutrality();
  gate_prefill_decode_equivalence();
  gate_gradient_correctness();
  gate_payload_exactness();

  RefRun ref;
  std::string dir1 = work_root + "/run1";
  std::string dir2 = work_root + "/run2";
  bool ref_ok = false;
  try {
    ref.cfg = load_scenario(scenario_path);
    auto t0 = std::chrono::steady_clock::now();
    ref.first = run_scenario(ref.cfg, dir1);
    ref.first_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ref_ok = true;
  } catch (const std::exception& e) {
    std::printf("[FAIL] -- reference-run: %s\n", e.what());
    g_fails += 1;
  }

  if (ref_ok) {
    gate_prefill_skip(ref.cfg, dir1);
    gate_collaboration_uplift(ref);
    gate_rephrase_accuracy_cost(ref);
    gate_latency_ordering(ref);
    gate_medium_crossover(ref.cfg);
    try {
      auto t0 = std::chrono::steady_clock::now();
      ref.second = run_scenario(ref.cfg, dir2);
      ref.second_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      gate_run_determinism(ref, dir1, dir2);
    } catch (const std::exception& e) {
      std::printf("[FAIL] 10 run-determinism: second run threw: %s\n", e.what());
      g_fails += 1;
    }
  } else {
    std::printf("[FAIL] 05 prefill-skip-accounting: no reference run\n");
    std::printf("[FAIL] 06 collaboration-uplift: no reference run\n");
    std::printf("[FAIL] 07 rephrase-accuracy-cost: no reference run\n");
    std::printf("[FAIL] 08 latency-ordering: no reference run\n");
    std::printf("[FAIL] 09 medium-crossover: no reference run\n");
    std::printf("[FAIL] 10 run-determinism: no reference run\n");
    g_fails += 6;
  }

  std::error_code ec;
  std::filesystem::remove_all(work_root, ec);

  if (g_fails == 0) {
    std::printf("all 10 acceptance gates passed\n");
    return 0;
  }
  std::printf("%d acceptance gate(s) failed\n", g_fails);
  return 1;
}
