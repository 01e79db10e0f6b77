#include "relocl/cli/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace relocl::cli {

using nlohmann::json;

namespace {

const char* const kSections[] = {"simulator", "model", "training", "output"};

template <typename T>
void read_key(const json& section, const char* section_name, const char* key, T& out) {
  auto it = section.find(key);
  if (it == section.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section_name) + "." + key + ": wrong type (" + it->dump() + ")");
  }
}

void check_keys(const json& section, const char* section_name, std::initializer_list<const char*> allowed) {
  if (!section.is_object()) throw ConfigError(std::string(section_name) + ": expected an object");
  for (const auto& [key, value] : section.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("unknown key '" + std::string(section_name) + "." + key + "'");
    }
  }
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

exp::TrainingConfig ExperimentConfig::training_config(std::uint64_t seed) const {
  exp::TrainingConfig t;
  t.epochs = training.epochs;
  t.batch_size = training.batch_size;
  t.learning_rate = training.learning_rate;
  t.delta = model.horizon_minutes;
  t.hyper.lambda = training.lambda;
  t.hyper.beta = training.beta;
  t.seed = seed;
  t.strategy = training.strategy;
  return t;
}

void ExperimentConfig::validate() const {
  const auto& s = simulator;
  if (s.households < 1) throw ConfigError("simulator.households must be >= 1");
  if (s.days < 1) throw ConfigError("simulator.days must be >= 1");
  if (s.train_days < 0 || s.test_days < 0 || s.train_days + s.test_days > s.days) {
    throw ConfigError("simulator.train_days + simulator.test_days must not exceed simulator.days");
  }
  if (s.interval < 1 || 1440 % s.interval != 0) throw ConfigError("simulator.interval must divide 1440");
  if (model.horizon_minutes % s.interval != 0) {
    throw ConfigError("model.delta must be a multiple of simulator.interval");
  }
  if (training.seeds.empty()) throw ConfigError("training.seeds must list at least one seed");
  for (const auto& f : output.formats) {
    if (f != "csv" && f != "json") throw ConfigError("output.formats: unknown format '" + f + "'");
  }
  try {
    model.validate();
    training_config(training.seeds.front()).validate();
  } catch (const model::ModelError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  } catch (const exp::ExperimentError& e) {
    throw ConfigError(std::string("training: ") + e.what());
  }
}

json to_json(const ExperimentConfig& c) {
  return json{
      {"simulator",
       {{"households", c.simulator.households},
        {"days", c.simulator.days},
        {"train_days", c.simulator.train_days},
        {"test_days", c.simulator.test_days},
        {"interval", c.simulator.interval},
        {"seed", c.simulator.seed}}},
      {"model",
       {{"embedding_dim", c.model.embedding_dim},
        {"rounds", c.model.rounds},
        {"hidden_dim", c.model.hidden_dim},
        {"tau", c.model.move_threshold},
        {"delta", c.model.horizon_minutes}}},
      {"training",
       {{"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"learning_rate", c.training.learning_rate},
        {"lambda", c.training.lambda},
        {"beta", c.training.beta},
        {"strategy", exp::to_string(c.training.strategy)},
        {"seeds", c.training.seeds}}},
      {"output", {{"directory", c.output.directory}, {"formats", c.output.formats}}},
  };
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::none_of(std::begin(kSections), std::end(kSections), [&](const char* s) { return key == s; })) {
      throw ConfigError("unknown section '" + key + "'");
    }
  }
  ExperimentConfig c;
  if (j.contains("simulator")) {
    const auto& s = j["simulator"];
    check_keys(s, "simulator", {"households", "days", "train_days", "test_days", "interval", "seed"});
    read_key(s, "simulator", "households", c.simulator.households);
    read_key(s, "simulator", "days", c.simulator.days);
    read_key(s, "simulator", "train_days", c.simulator.train_days);
    read_key(s, "simulator", "test_days", c.simulator.test_days);
    read_key(s, "simulator", "interval", c.simulator.interval);
    read_key(s, "simulator", "seed", c.simulator.seed);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, "model", {"embedding_dim", "rounds", "hidden_dim", "tau", "delta"});
    read_key(m, "model", "embedding_dim", c.model.embedding_dim);
    read_key(m, "model", "rounds", c.model.rounds);
    read_key(m, "model", "hidden_dim", c.model.hidden_dim);
    read_key(m, "model", "tau", c.model.move_threshold);
    read_key(m, "model", "delta", c.model.horizon_minutes);
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    check_keys(t, "training", {"epochs", "batch_size", "learning_rate", "lambda", "beta", "strategy", "seeds"});
    read_key(t, "training", "epochs", c.training.epochs);
    read_key(t, "training", "batch_size", c.training.batch_size);
    read_key(t, "training", "learning_rate", c.training.learning_rate);
    read_key(t, "training", "lambda", c.training.lambda);
    read_key(t, "training", "beta", c.training.beta);
    std::string strategy = exp::to_string(c.training.strategy);
    read_key(t, "training", "strategy", strategy);
    try {
      c.training.strategy = exp::parse_strategy(strategy);
    } catch (const exp::ExperimentError& e) {
      throw ConfigError(std::string("training.strategy: ") + e.what());
    }
    if (t.contains("seeds") && t["seeds"].is_number_unsigned()) {
      c.training.seeds = {t["seeds"].get<std::uint64_t>()};
    } else {
      read_key(t, "training", "seeds", c.training.seeds);
    }
  }
  if (j.contains("output")) {
    const auto& o = j["output"];
    check_keys(o, "output", {"directory", "formats"});
    read_key(o, "output", "directory", c.output.directory);
    read_key(o, "output", "formats", c.output.formats);
  }
  return c;
}

void apply_env_overrides(json& j, char** env) {
  if (env == nullptr) return;
  const std::string prefix = "RELOCL_";
  for (char** e = env; *e != nullptr; ++e) {
    const std::string entry(*e);
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    const std::string name = entry.substr(prefix.size(), eq - prefix.size());
    const auto sep = name.find("__");
    if (sep == std::string::npos) continue;  // not a config key, e.g. RELOCL_HOME
    const std::string section = lower(name.substr(0, sep));
    const std::string key = lower(name.substr(sep + 2));
    if (section.empty() || key.empty()) throw ConfigError("malformed override '" + entry.substr(0, eq) + "'");
    const std::string raw = entry.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    if (!j.is_object()) j = json::object();
    j[section][key] = std::move(value);
  }
}

ExperimentConfig load_config(const std::filesystem::path& path, char** env) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    j = json::parse(ss.str(), nullptr, false);
    if (j.is_discarded()) throw ConfigError("config '" + path.string() + "' is not valid JSON");
  }
  apply_env_overrides(j, env);
  auto cfg = config_from_json(j);
  cfg.validate();
  return cfg;
}

}  // namespace relocl::cli
