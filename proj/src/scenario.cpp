#include "fedrefine/scenario.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

#include "fedrefine/errors.hpp"

namespace fedrefine {

namespace {

using nlohmann::json;

void require_keys(const json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in " + where);
}

ModelConfig parse_model(const json& j, const std::string& where) {
  require_keys(j, where,
               {"model_id", "n_layers", "n_heads", "n_kv_heads", "head_dim", "max_seq"});
  ModelConfig cfg;
  cfg.model_id = j.at("model_id").get<std::string>();
  cfg.n_layers = j.at("n_layers").get<size_t>();
  cfg.n_heads = j.at("n_heads").get<size_t>();
  cfg.n_kv_heads = j.at("n_kv_heads").get<size_t>();
  cfg.head_dim = j.at("head_dim").get<size_t>();
  cfg.d_model = cfg.n_heads * cfg.head_dim;
  cfg.max_seq = j.at("max_seq").get<size_t>();
  cfg.vocab_size = 1;  // placeholder until the task vocabulary is known
  return cfg;
}

TrainStageConfig parse_stage(const json& j, const std::string& where) {
  require_keys(j, where, {"steps", "batch", "lr"});
  TrainStageConfig s;
  s.steps = j.at("steps").get<size_t>();
  s.batch = j.at("batch").get<size_t>();
  s.lr = j.at("lr").get<double>();
  return s;
}

}  // namespace

void ScenarioConfig::validate() const {
  if (name.empty()) throw ConfigError("scenario needs a name");
  if (name.find(',') != std::string::npos || name.find('\n') != std::string::npos)
    throw ConfigError("scenario name must not contain commas or newlines");
  std::set<std::string> ids{receiver.model_id};
  for (const ModelConfig& s : senders)
    if (!ids.insert(s.model_id).second)
      throw ConfigError("duplicate model id in scenario: " + s.model_id);
  try {
    ModelConfig r = receiver;
    r.validate();
    for (ModelConfig s : senders) s.validate();
    TaskSpec t = task;
    t.n_senders = senders.size();
    t.validate();
    network.validate();
    cost.validate();
    qos.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid scenario: ") + e.what());
  }
  if (max_new == 0) throw ConfigError("max_new must be positive");
  if (t2t_cap == 0) throw ConfigError("t2t_cap must be positive");
  if (lm_train.batch == 0 || fuser_train.batch == 0)
    throw ConfigError("training batch sizes must be positive");
}

ScenarioConfig parse_scenario(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario is not valid JSON: ") + e.what());
  }
  try {
    require_keys(j, "scenario",
                 {"version", "name", "seed", "receiver", "senders", "task", "fuse_mode",
                  "rephrase", "max_new", "t2t_cap", "lm_train", "fuser_train", "network",
                  "cost", "qos"});
    if (j.at("version").get<int>() != 1)
      throw ConfigError("unsupported scenario version");

    ScenarioConfig cfg;
    cfg.name = j.at("name").get<std::string>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.receiver = parse_model(j.at("receiver"), "receiver");
    for (size_t i = 0; i < j.at("senders").size(); ++i)
      cfg.senders.push_back(
          parse_model(j.at("senders").at(i), "senders[" + std::to_string(i) + "]"));

    const json& t = j.at("task");
    require_keys(t, "task", {"n_facts", "receiver_share", "overlap"});
    cfg.task.n_facts = t.at("n_facts").get<size_t>();
    cfg.task.receiver_share = t.at("receiver_share").get<double>();
    cfg.task.overlap = t.at("overlap").get<double>();
    cfg.task.n_senders = cfg.senders.size();

    std::string mode = j.at("fuse_mode").get<std::string>();
    if (mode == "mix")
      cfg.fuse_mode = FuseMode::Mix;
    else if (mode == "concat")
      cfg.fuse_mode = FuseMode::Concat;
    else
      throw ConfigError("fuse_mode must be 'mix' or 'concat', got '" + mode + "'");

    std::string reph = j.at("rephrase").get<std::string>();
    if (reph == "none")
      cfg.rephrase = RephraseKind::None;
    else if (reph == "synonym_map")
      cfg.rephrase = RephraseKind::SynonymMap;
    else if (reph == "model_rewrite")
      cfg.rephrase = RephraseKind::ModelRewrite;
    else
      throw ConfigError("rephrase must be 'none', 'synonym_map', or 'model_rewrite', got '" +
                        reph + "'");

    cfg.max_new = j.at("max_new").get<size_t>();
    cfg.t2t_cap = j.at("t2t_cap").get<size_t>();
    cfg.lm_train = parse_stage(j.at("lm_train"), "lm_train");
    cfg.fuser_train = parse_stage(j.at("fuser_train"), "fuser_train");

    const json& n = j.at("network");
    require_keys(n, "network", {"bandwidth_bytes_per_s", "rtt_s"});
    cfg.network.bandwidth_bytes_per_s = n.at("bandwidth_bytes_per_s").get<double>();
    cfg.network.rtt_s = n.at("rtt_s").get<double>();

    const json& c = j.at("cost");
    require_keys(c, "cost",
                 {"prefill_cost", "decode_cost", "fuse_cost", "wire_dtype_bytes",
                  "text_bytes_per_token", "prefill_cost_per_model", "decode_cost_per_model"});
    cfg.cost.prefill_cost = c.at("prefill_cost").get<double>();
    cfg.cost.decode_cost = c.at("decode_cost").get<double>();
    cfg.cost.fuse_cost = c.at("fuse_cost").get<double>();
    cfg.cost.wire_dtype_bytes = c.at("wire_dtype_bytes").get<size_t>();
    cfg.cost.text_bytes_per_token = c.at("text_bytes_per_token").get<size_t>();
    if (c.contains("prefill_cost_per_model"))
      for (const auto& [id, v] : c.at("prefill_cost_per_model").items())
        cfg.cost.prefill_cost_per_model[id] = v.get<double>();
    if (c.contains("decode_cost_per_model"))
      for (const auto& [id, v] : c.at("decode_cost_per_model").items())
        cfg.cost.decode_cost_per_model[id] = v.get<double>();

    const json& q = j.at("qos");
    require_keys(q, "qos", {"deadline_s", "min_accuracy_hint"});
    cfg.qos.deadline_s = q.at("deadline_s").get<double>();
    cfg.qos.min_accuracy_hint = q.at("min_accuracy_hint").get<double>();

    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed scenario: ") + e.what());
  }
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("scenario file not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

}  // namespace fedrefine
