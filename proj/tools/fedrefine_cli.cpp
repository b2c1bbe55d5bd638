// Command-line front end: generate tasks, train artifacts, run scenarios,
// compare protocols on trained artifacts, and plot metrics CSVs as SVG.
//
// Exit codes: 0 success, 2 configuration error (bad flags or scenario file),
// 3 training divergence, 4 missing artifact.  The FEDREFINE_OUT environment
// variable overrides the default output directory; an explicit --out beats
// both.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrefine/errors.hpp"
#include "fedrefine/harness.hpp"
#include "fedrefine/netsim.hpp"
#include "fedrefine/protocol.hpp"
#include "fedrefine/scenario.hpp"
#include "fedrefine/task_gen.hpp"

namespace {

using namespace fedrefine;

// --out > FEDREFINE_OUT > fallback.
std::string resolve_out_dir(const std::string& flag_out, const std::string& fallback) {
  if (!flag_out.empty()) return flag_out;
  if (const char* env = std::getenv("FEDREFINE_OUT"); env && *env) return env;
  return fallback;
}

ScenarioConfig load_config(const std::string& path, const CLI::Option* seed_opt, uint64_t seed) {
  ScenarioConfig cfg = load_scenario(path);
  if (seed_opt->count() > 0) cfg.seed = seed;
  return cfg;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path);
  f << content;
}

// ---------------------------------------------------------------------------
// generate: the partitioned task as readable JSON, plus the vocabulary.

nlohmann::json token_seqs_json(const std::vector<TokenSeq>& seqs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const TokenSeq& s : seqs) arr.push_back(s);
  return arr;
}

int cmd_generate(const ScenarioConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  TaskSpec spec = task_spec_of(cfg);
  GeneratedTask task = gen_partitioned_qa(spec);

  nlohmann::json j;
  j["version"] = 1;
  j["scenario"] = cfg.name;
  j["task_seed"] = spec.seed;
  j["n_facts"] = spec.n_facts;
  j["n_senders"] = spec.n_senders;
  j["receiver_share"] = spec.receiver_share;
  j["overlap"] = spec.overlap;
  j["sep_token"] = task.sep_token;
  j["end_token"] = task.end_token;
  j["rewrite_token"] = task.rewrite_token;
  j["n_variants"] = task.n_variants;
  nlohmann::json facts = nlohmann::json::array();
  for (const Fact& f : task.facts)
    facts.push_back({{"key", f.key}, {"value", f.value_word}, {"owners", f.owners}});
  j["facts"] = std::move(facts);
  j["receiver_corpus"] = token_seqs_json(task.receiver_corpus);
  nlohmann::json senders = nlohmann::json::array();
  for (const auto& corpus : task.sender_corpora) senders.push_back(token_seqs_json(corpus));
  j["sender_corpora"] = std::move(senders);
  nlohmann::json eval = nlohmann::json::array();
  for (const EvalItem& e : task.eval_set)
    eval.push_back({{"fact", e.fact}, {"query", e.query}, {"answer", e.answer}});
  j["eval_set"] = std::move(eval);

  std::filesystem::create_directories(out_dir);
  write_text(out_dir + "/task.json", j.dump(2) + "\n");
  task.vocab.save(out_dir + "/vocab.json");
  std::fprintf(stderr, "generate: %zu facts across %zu parties, vocab %zu -> %s\n",
               task.facts.size(), spec.n_senders + 1, task.vocab.size(), out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train: models, fusers (resuming from saved models), or the whole pipeline.

int cmd_train(const ScenarioConfig& cfg, const std::string& what, const std::string& out_dir) {
  TrainedScenario ts;
  if (what == "models") {
    ts = train_models(cfg);
  } else if (what == "fusers") {
    ts = load_models(cfg, out_dir);
    train_fusers(ts);
  } else {
    ts = train_scenario(cfg);
  }
  save_artifacts(ts, out_dir);
  std::fprintf(stderr, "train %s: %zu models, %zu fusers -> %s\n", what.c_str(),
               ts.senders.size() + 1, ts.registry.entries.size(), out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// run: full pipeline; CSV to stdout, artifacts and reports to the out dir.

int cmd_run(const ScenarioConfig& cfg, const std::string& out_dir) {
  RunResult result = run_scenario(cfg, out_dir);
  std::fputs(result.csv.c_str(), stdout);
  std::fprintf(stderr,
               "run: %zu rows; metrics.csv, messages.jsonl, timelines.jsonl, "
               "checkpoints -> %s\n",
               result.rows.size(), result.out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// compare: evaluate trained artifacts and print the selected rows.

const char* protocol_name(Medium m) { return m == Medium::Cache ? "c2c" : "t2t"; }

int cmd_compare(const ScenarioConfig& cfg, const std::string& out_dir, size_t max_senders,
                bool senders_given, const std::string& medium, const std::string& privacy) {
  TrainedScenario ts = load_trained(cfg, out_dir);
  size_t cap = senders_given ? max_senders : ts.cfg.senders.size();
  if (cap > ts.cfg.senders.size())
    throw ConfigError("--senders " + std::to_string(cap) + " exceeds the scenario's " +
                      std::to_string(ts.cfg.senders.size()) + " senders");

  std::vector<MetricsRow> rows = compare_protocols(ts, nullptr);
  auto row_at = [&](const std::string& proto, const std::string& priv,
                    size_t k) -> const MetricsRow& {
    for (const MetricsRow& r : rows)
      if (r.protocol == proto && r.privacy == priv && r.n_senders == k) return r;
    throw std::logic_error("comparison row missing");  // emitter produces the full grid
  };

  std::vector<std::string> privacies;
  if (privacy.empty() || privacy == "original") privacies.push_back("original");
  if (privacy.empty() || privacy == "rephrased") privacies.push_back("rephrased");

  std::vector<MetricsRow> selected;
  selected.push_back(row_at("standalone", "original", 0));
  if (medium == "auto") {
    // Pick the cheaper shape of each round under the scenario's deadline.
    for (size_t k = 1; k <= cap; ++k) {
      for (const std::string& priv : privacies) {
        bool reph = priv == "rephrased";
        MediumDecision d =
            select_medium(ts.cfg.network, ts.cfg.cost, canonical_round(ts, k, Medium::Cache, reph),
                          canonical_round(ts, k, Medium::Token, reph), ts.cfg.qos);
        std::fprintf(stderr, "compare: k=%zu %s: cache %.9f s, token %.9f s -> %s%s\n", k,
                     priv.c_str(), d.latency_cache, d.latency_token, protocol_name(d.medium),
                     d.deadline_miss ? " (deadline missed)" : "");
        selected.push_back(row_at(protocol_name(d.medium), priv, k));
      }
    }
  } else {
    std::vector<std::string> protocols;
    if (medium.empty() || medium == "cache") protocols.push_back("c2c");
    if (medium.empty() || medium == "token") protocols.push_back("t2t");
    for (const std::string& proto : protocols)
      for (size_t k = 1; k <= cap; ++k)
        for (const std::string& priv : privacies) selected.push_back(row_at(proto, priv, k));
  }
  std::fputs(metrics_to_csv(selected).c_str(), stdout);
  return 0;
}

// ---------------------------------------------------------------------------
// plot: metrics CSV -> SVG line charts (accuracy, latency, bytes).

struct Series {
  std::string label;
  std::string color;
  bool dashed = false;
  std::vector<std::pair<double, double>> points;  // (n_senders, value)
};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

double nice_step(double span, int target_ticks) {
  if (span <= 0) return 1.0;
  double raw = span / target_ticks;
  double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0})
    if (raw <= m * mag * (1 + 1e-12)) return m * mag;
  return 10.0 * mag;
}

std::string line_chart_svg(const std::string& title, const std::string& y_label,
                           const std::vector<Series>& series, double x_max, double y_max) {
  const double w = 760, h = 420;
  const double left = 64, right = w - 190, top = 48, bottom = h - 52;
  const double y_step = nice_step(y_max, 5);
  y_max = std::max(y_step, std::ceil(y_max / y_step - 1e-9) * y_step);
  if (x_max <= 0) x_max = 1;

  auto px = [&](double x) { return left + x / x_max * (right - left); };
  auto py = [&](double y) { return bottom - y / y_max * (bottom - top); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h
      << "\" font-family=\"Helvetica, Arial, sans-serif\">\n";
  svg << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"#ffffff\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"24\" font-size=\"16\" fill=\"#202020\">"
      << xml_escape(title) << "</text>\n";

  for (double y = 0; y <= y_max + 1e-9; y += y_step) {
    double yy = py(y);
    svg << "<line x1=\"" << left << "\" y1=\"" << yy << "\" x2=\"" << right << "\" y2=\"" << yy
        << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << left - 8 << "\" y=\"" << yy + 4
        << "\" font-size=\"11\" text-anchor=\"end\" fill=\"#404040\">" << fmt_num(y)
        << "</text>\n";
  }
  for (double x = 0; x <= x_max + 1e-9; x += 1.0) {
    double xx = px(x);
    svg << "<line x1=\"" << xx << "\" y1=\"" << bottom << "\" x2=\"" << xx << "\" y2=\""
        << bottom + 4 << "\" stroke=\"#404040\"/>\n";
    svg << "<text x=\"" << xx << "\" y=\"" << bottom + 18
        << "\" font-size=\"11\" text-anchor=\"middle\" fill=\"#404040\">" << fmt_num(x)
        << "</text>\n";
  }
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
      << "\" stroke=\"#404040\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\""
      << bottom << "\" stroke=\"#404040\"/>\n";
  svg << "<text x=\"" << (left + right) / 2 << "\" y=\"" << h - 14
      << "\" font-size=\"12\" text-anchor=\"middle\" fill=\"#202020\">participating "
         "senders</text>\n";
  svg << "<text x=\"18\" y=\"" << (top + bottom) / 2 << "\" font-size=\"12\" fill=\"#202020\" "
      << "text-anchor=\"middle\" transform=\"rotate(-90 18 " << (top + bottom) / 2 << ")\">"
      << xml_escape(y_label) << "</text>\n";

  for (const Series& s : series) {
    std::string dash = s.dashed ? " stroke-dasharray=\"6 4\"" : "";
    if (s.points.size() == 1) {
      // A single point (the standalone baseline) doubles as a reference line.
      double yy = py(s.points[0].second);
      svg << "<line x1=\"" << left << "\" y1=\"" << yy << "\" x2=\"" << right << "\" y2=\"" << yy
          << "\" stroke=\"" << s.color << "\" stroke-dasharray=\"2 4\"/>\n";
    } else if (s.points.size() > 1) {
      svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\"" << dash
          << " points=\"";
      for (const auto& [x, y] : s.points) svg << px(x) << "," << py(y) << " ";
      svg << "\"/>\n";
    }
    for (const auto& [x, y] : s.points)
      svg << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3.5\" fill=\"" << s.color
          << "\"/>\n";
  }

  double ly = top + 6;
  for (const Series& s : series) {
    svg << "<line x1=\"" << right + 14 << "\" y1=\"" << ly << "\" x2=\"" << right + 38
        << "\" y2=\"" << ly << "\" stroke=\"" << s.color << "\" stroke-width=\"2\""
        << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
    svg << "<text x=\"" << right + 44 << "\" y=\"" << ly + 4
        << "\" font-size=\"11\" fill=\"#202020\">" << xml_escape(s.label) << "</text>\n";
    ly += 18;
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("metrics file not found: " + path);
  std::string line;
  if (!std::getline(f, line) || line != metrics_csv_header())
    throw ConfigError(path + ": unrecognized metrics header");
  std::vector<MetricsRow> rows;
  size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    auto bad = [&]() {
      return ConfigError(path + ":" + std::to_string(line_no) + ": malformed metrics row");
    };
    if (fields.size() != 7) throw bad();
    auto num = [&](const std::string& s) {
      char* end = nullptr;
      double v = std::strtod(s.c_str(), &end);
      if (end != s.c_str() + s.size() || !std::isfinite(v)) throw bad();
      return v;
    };
    MetricsRow row;
    row.scenario = fields[0];
    row.protocol = fields[1];
    row.privacy = fields[2];
    double k = num(fields[3]);
    if (k < 0 || k != std::floor(k)) throw bad();
    row.n_senders = static_cast<size_t>(k);
    row.accuracy = num(fields[4]);
    row.latency_s = num(fields[5]);
    row.bytes_per_token = num(fields[6]);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(path + ": no metrics rows");
  return rows;
}

int cmd_plot(const std::string& csv_path, const std::string& out_dir) {
  std::vector<MetricsRow> rows = parse_metrics_csv(csv_path);
  std::vector<std::string> scenarios;
  for (const MetricsRow& r : rows)
    if (std::find(scenarios.begin(), scenarios.end(), r.scenario) == scenarios.end())
      scenarios.push_back(r.scenario);

  auto color_of = [](const std::string& protocol) {
    if (protocol == "c2c") return "#1f77b4";
    if (protocol == "t2t") return "#d62728";
    return "#7f7f7f";
  };
  auto build = [&](auto value_of) {
    std::vector<Series> series;
    std::map<std::string, size_t> index;
    double x_max = 1, y_max = 0;
    for (const MetricsRow& r : rows) {
      std::string key = r.scenario + "|" + r.protocol + "|" + r.privacy;
      if (!index.count(key)) {
        Series s;
        s.label = r.protocol == "standalone" ? "standalone"
                                             : r.protocol + (r.privacy == "rephrased"
                                                                 ? " rephrased"
                                                                 : "");
        if (scenarios.size() > 1) s.label = r.scenario + " " + s.label;
        s.color = color_of(r.protocol);
        s.dashed = r.privacy == "rephrased";
        index[key] = series.size();
        series.push_back(std::move(s));
      }
      double v = value_of(r);
      series[index[key]].points.emplace_back(static_cast<double>(r.n_senders), v);
      x_max = std::max(x_max, static_cast<double>(r.n_senders));
      y_max = std::max(y_max, v);
    }
    return std::tuple(series, x_max, y_max);
  };

  std::filesystem::create_directories(out_dir);
  {
    auto [series, x_max, y_max] = build([](const MetricsRow& r) { return r.accuracy; });
    write_text(out_dir + "/accuracy.svg",
               line_chart_svg("Exact-match accuracy vs participating senders",
                              "exact-match accuracy", series, x_max, std::max(1.0, y_max)));
  }
  {
    auto [series, x_max, y_max] = build([](const MetricsRow& r) { return r.latency_s; });
    write_text(out_dir + "/latency.svg",
               line_chart_svg("Round latency vs participating senders", "round latency (s)",
                              series, x_max, y_max));
  }
  {
    auto [series, x_max, y_max] = build([](const MetricsRow& r) { return r.bytes_per_token; });
    write_text(out_dir + "/bytes.svg",
               line_chart_svg("Traffic per answer token vs participating senders",
                              "bytes per answer token", series, x_max, y_max));
  }
  std::fprintf(stderr, "plot: accuracy.svg, latency.svg, bytes.svg -> %s\n", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale federated LM inference: cache-to-cache and text collaboration under "
               "an explicit network and compute cost model"};
  app.require_subcommand(1);

  std::string config_path, out_flag, what = "all", medium, privacy, csv_path;
  uint64_t seed = 0;
  size_t n_senders = 0;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    CLI::Option* cfg_opt =
        sub->add_option("--config", config_path, "scenario configuration file (JSON)");
    if (config_required) cfg_opt->required();
    CLI::Option* seed_opt =
        sub->add_option("--seed", seed, "override the scenario's master seed");
    sub->add_option("--out", out_flag,
                    "output/artifact directory (default: FEDREFINE_OUT or out/<scenario>)");
    return seed_opt;
  };

  CLI::App* gen = app.add_subcommand("generate", "generate the partitioned task");
  CLI::Option* gen_seed = add_common(gen, true);

  CLI::App* train = app.add_subcommand("train", "train models and fusers");
  CLI::Option* train_seed = add_common(train, true);
  train->add_option("what", what, "models, fusers (expects saved models), or all")
      ->check(CLI::IsMember({"models", "fusers", "all"}));

  CLI::App* run = app.add_subcommand("run", "train, evaluate, and report one scenario");
  CLI::Option* run_seed = add_common(run, true);

  CLI::App* compare = app.add_subcommand("compare", "evaluate trained artifacts");
  CLI::Option* compare_seed = add_common(compare, true);
  CLI::Option* senders_opt =
      compare->add_option("--senders", n_senders, "largest sender-count prefix to report");
  compare->add_option("--medium", medium, "restrict the collaboration medium")
      ->check(CLI::IsMember({"cache", "token", "auto"}));
  compare->add_option("--privacy", privacy, "restrict the privacy setting")
      ->check(CLI::IsMember({"original", "rephrased"}));

  CLI::App* plot = app.add_subcommand("plot", "render a metrics CSV as SVG charts");
  plot->add_option("csv", csv_path, "metrics CSV produced by run or compare")->required();
  plot->add_option("--out", out_flag, "figure directory (default: FEDREFINE_OUT or the CSV's)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (plot->parsed()) {
      std::string fallback = std::filesystem::path(csv_path).parent_path().string();
      return cmd_plot(csv_path, resolve_out_dir(out_flag, fallback.empty() ? "." : fallback));
    }
    const CLI::Option* seed_opt = gen->parsed()     ? gen_seed
                                  : train->parsed() ? train_seed
                                  : run->parsed()   ? run_seed
                                                    : compare_seed;
    ScenarioConfig cfg = load_config(config_path, seed_opt, seed);
    std::string out_dir = resolve_out_dir(out_flag, "out/" + cfg.name);
    if (gen->parsed()) return cmd_generate(cfg, out_dir);
    if (train->parsed()) return cmd_train(cfg, what, out_dir);
    if (run->parsed()) return cmd_run(cfg, out_dir);
    return cmd_compare(cfg, out_dir, n_senders, senders_opt->count() > 0, medium, privacy);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const MissingArtifactError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
