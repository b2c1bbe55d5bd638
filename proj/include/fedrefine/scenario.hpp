#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedrefine/fuser.hpp"
#include "fedrefine/model.hpp"
#include "fedrefine/netsim.hpp"
#include "fedrefine/protocol.hpp"
#include "fedrefine/task_gen.hpp"

namespace fedrefine {

struct TrainStageConfig {
  size_t steps = 0;
  size_t batch = 8;
  double lr = 1e-3;
};

// Everything one end-to-end run needs, loaded from a versioned JSON file.
// Unknown keys anywhere in the file are configuration errors.
struct ScenarioConfig {
  std::string name;
  uint64_t seed = 0;
  ModelConfig receiver;
  std::vector<ModelConfig> senders;
  TaskSpec task;  // n_senders and seed are filled from the scenario
  FuseMode fuse_mode = FuseMode::Mix;
  RephraseKind rephrase = RephraseKind::None;
  size_t max_new = 4;
  size_t t2t_cap = 8;
  TrainStageConfig lm_train;
  TrainStageConfig fuser_train;
  NetworkState network;
  CostModel cost;
  QosSpec qos;

  void validate() const;
};

ScenarioConfig parse_scenario(const std::string& json_text);
ScenarioConfig load_scenario(const std::string& path);

}  // namespace fedrefine
