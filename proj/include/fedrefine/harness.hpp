#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fedrefine/scenario.hpp"
#include "fedrefine/task_gen.hpp"

namespace fedrefine {

// A scenario with live trained artifacts: models, fuser registry, and the
// generated task they were trained on.
struct TrainedScenario {
  ScenarioConfig cfg;
  GeneratedTask task;
  TransformerModel receiver;
  std::vector<TransformerModel> senders;
  FuserRegistry registry;

  ModelSet model_set() const;  // pointers into this object; keep it alive
  RephrasePolicy make_policy(bool rephrased) const;
};

// Task specification implied by a scenario: sender count comes from the
// model list and the task seed derives from the master seed.
TaskSpec task_spec_of(const ScenarioConfig& cfg);

// Runs the full training pipeline: task generation, every party's language
// model, then one fuser per sender->receiver link (links train in parallel,
// each on its own derived seed).  Any stage failure names the stage and
// seed.
TrainedScenario train_scenario(const ScenarioConfig& cfg);

// The two stages of train_scenario, separable so a pipeline can stop after
// the language models or resume fuser training on loaded ones.
TrainedScenario train_models(const ScenarioConfig& cfg);  // registry left empty
void train_fusers(TrainedScenario& ts);                   // fills the registry

// Checkpoints, vocabulary, and metadata under `out_dir`.
void save_artifacts(const TrainedScenario& ts, const std::string& out_dir);

// Rebuilds a TrainedScenario from saved checkpoints; a missing file raises
// MissingArtifactError naming the absent checkpoint.  load_models stops
// after the language models (no fusers required on disk).
TrainedScenario load_trained(const ScenarioConfig& cfg, const std::string& artifact_dir);
TrainedScenario load_models(const ScenarioConfig& cfg, const std::string& artifact_dir);

using AnswerRunner = std::function<TokenSeq(const EvalItem&)>;

// Exact-match accuracy over detokenized answers; a runner that throws on a
// query counts that query as incorrect (and logs the failure).
double evaluate_accuracy(const AnswerRunner& runner, const Vocab& vocab,
                         const std::vector<EvalItem>& eval_set);

// The priced shape of one full collaborative round with the first
// `n_senders` senders all participating: single-token query, two-step
// answer, canonical contribution sizes.  This is what the latency and
// bytes-per-token columns report.
RoundDesc canonical_round(const TrainedScenario& ts, size_t n_senders, Medium medium,
                          bool rephrased);

// One row per protocol variant and privacy setting: standalone, then each
// sender-count prefix 1..s for the cache and token protocols.  Accuracy
// comes from running the protocols over the eval set with the task's
// sender schedule; latency and bytes are priced on the canonical round.
// Transmissions made during evaluation accumulate into `log` if given.
std::vector<MetricsRow> compare_protocols(const TrainedScenario& ts, MessageLog* log);

struct RunResult {
  std::vector<MetricsRow> rows;
  std::string csv;
  std::string out_dir;
};

// Train, checkpoint, evaluate, and write metrics.csv, messages.jsonl, and
// timelines.jsonl under `out_dir`.  Byte-identical outputs for identical
// configs and seeds.
RunResult run_scenario(const ScenarioConfig& cfg, const std::string& out_dir);

}  // namespace fedrefine
