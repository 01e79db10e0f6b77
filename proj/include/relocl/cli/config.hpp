// Structured experiment configuration: a JSON file with four sections,
// every key optional, unknown keys rejected. Environment variables named
// RELOCL_<SECTION>__<KEY> override single keys.
#ifndef RELOCL_CLI_CONFIG_HPP
#define RELOCL_CLI_CONFIG_HPP

#include "relocl/experiment/experiment.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace relocl::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimulatorSection {
  int households = 3;
  int days = 25;
  int train_days = 20;
  int test_days = 5;
  int interval = 10;
  std::uint64_t seed = 7;

  friend bool operator==(const SimulatorSection&, const SimulatorSection&) = default;
};

struct TrainingSection {
  int epochs = 50;
  int batch_size = 1;
  double learning_rate = 0.001;
  double lambda = 200.0;
  double beta = 10.0;
  exp::Strategy strategy = exp::Strategy::Streak;
  std::vector<std::uint64_t> seeds = {0, 1, 2};

  friend bool operator==(const TrainingSection&, const TrainingSection&) = default;
};

struct OutputSection {
  std::string directory = "out";
  std::vector<std::string> formats = {"csv", "json"};

  friend bool operator==(const OutputSection&, const OutputSection&) = default;
};

// model.delta is both the prediction horizon and the training pair offset.
struct ExperimentConfig {
  SimulatorSection simulator;
  model::ModelConfig model;
  TrainingSection training;
  OutputSection output;

  // Training settings for one seed.
  [[nodiscard]] exp::TrainingConfig training_config(std::uint64_t seed) const;
  void validate() const;  // throws ConfigError

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

nlohmann::json to_json(const ExperimentConfig& cfg);

// Starts from the defaults and applies every key present in `j`.
ExperimentConfig config_from_json(const nlohmann::json& j);

// Applies RELOCL_<SECTION>__<KEY>=<value> entries from a null-terminated
// environment block. Values are read as JSON, falling back to a plain string.
void apply_env_overrides(nlohmann::json& j, char** env);

// Reads `path` (empty path = defaults only), applies the environment and validates.
ExperimentConfig load_config(const std::filesystem::path& path, char** env);

}  // namespace relocl::cli

#endif  // RELOCL_CLI_CONFIG_HPP
