// Learning sessions for the three strategies and the evaluation protocol
// around them. Training runs in float.
#ifndef RELOCL_EXPERIMENT_EXPERIMENT_HPP
#define RELOCL_EXPERIMENT_EXPERIMENT_HPP

#include "relocl/clcore/clcore.hpp"
#include "relocl/model/relocnet.hpp"
#include "relocl/numcore/adam.hpp"
#include "relocl/sim/routine.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace relocl::exp {

using Real = float;
using Params = model::ParameterSet<Real>;

class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Strategy { Streak, Finetuned, Joint };

const char* to_string(Strategy s);
Strategy parse_strategy(std::string_view name);  // throws ExperimentError

// Horizons the tooling accepts, in minutes.
inline constexpr int kSupportedDeltas[] = {10, 30, 60, 90, 120};

struct TrainingConfig {
  int epochs = 50;
  int batch_size = 1;
  double learning_rate = 1e-3;
  int delta = 10;
  cl::CLHyperparams hyper;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::Streak;

  void validate() const;
  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

// Every (t, t + delta) pair inside one day, stride = sample interval. With a
// split, only days carrying that label contribute.
std::vector<cl::SnapshotPair> make_pairs(const sim::TaskDataset& ds, int delta,
                                         std::optional<sim::Split> split = std::nullopt);

struct SessionLedger {
  int session = 0;
  std::size_t samples = 0;       // training samples per epoch
  std::size_t steps = 0;         // optimizer steps taken
  double cpu_seconds = 0.0;      // training, Fisher and buffer work
  std::size_t buffer_size = 0;   // |M_k| after the session (streak only)

  friend bool operator==(const SessionLedger&, const SessionLedger&) = default;
};

struct SessionState {
  Strategy strategy = Strategy::Streak;
  int session = 0;  // index of the next session to run
  model::ModelConfig model;
  graph::CatalogPtr catalog;
  std::uint64_t seed = 0;
  Params params;
  num::AdamState<Real> optimizer;
  std::mt19937_64 rng;
  // streak only
  std::optional<cl::ConsolidationAnchor<Real>> anchor;
  std::optional<cl::MemoryBuffer> buffer;
  std::vector<cl::MeanFeatureVector<Real>> feature_means;
  // joint only
  std::vector<std::vector<cl::SnapshotPair>> seen;
  std::vector<SessionLedger> ledger;
};

// Deterministic 64-bit mix of a seed and a stream index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

SessionState initial_state(Strategy strategy, const model::ModelConfig& model, graph::CatalogPtr catalog,
                           std::uint64_t seed);

// Runs session state.session on the train split of `data`.
void run_session(SessionState& state, const sim::TaskDataset& data, const TrainingConfig& cfg);

// True when every field besides the ledger timings matches bit for bit.
bool same_state(const SessionState& a, const SessionState& b);

struct OutcomeCounts {
  std::size_t moved_correct = 0;
  std::size_t moved_wrong = 0;
  std::size_t moved_missed = 0;
  std::size_t unmoved_correct = 0;
  std::size_t unmoved_wrong = 0;

  [[nodiscard]] std::size_t used() const { return moved_correct + moved_wrong + moved_missed; }
  [[nodiscard]] std::size_t unused() const { return unmoved_correct + unmoved_wrong; }
  OutcomeCounts& operator+=(const OutcomeCounts& o);
  friend bool operator==(const OutcomeCounts&, const OutcomeCounts&) = default;
};

// Percentages of the used (moved) and unused objects; 0 when a group is empty.
struct OutcomePercent {
  double moved_correct = 0, moved_wrong = 0, moved_missed = 0;
  double unmoved_correct = 0, unmoved_wrong = 0;
};

OutcomePercent percentages(const OutcomeCounts& c);

// Scores one predicted event list against the truth for a snapshot pair.
OutcomeCounts score_prediction(std::span<const graph::RelocationEvent> predicted,
                               const graph::GraphSnapshot& current, const graph::GraphSnapshot& target);

struct MetricsReport {
  std::string dataset;
  std::size_t pairs = 0;
  OutcomeCounts counts;

  [[nodiscard]] OutcomePercent percent() const { return percentages(counts); }
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport evaluate(const Params& params, const model::ModelConfig& model, const sim::TaskDataset& test,
                       int delta, double tau);

// Row k holds the reports on the test splits of D_0..D_k after session k.
struct RetentionMatrix {
  std::vector<std::vector<MetricsReport>> rows;

  [[nodiscard]] double moved_correct(int row, int col) const;
  // Mean Moved Correct over every test set in the last row.
  [[nodiscard]] double retention() const;
  friend bool operator==(const RetentionMatrix&, const RetentionMatrix&) = default;
};

// Called after every session with the state and the evaluations so far.
using SessionCallback = std::function<void(const SessionState&, const RetentionMatrix&)>;

struct StrategyRun {
  Strategy strategy = Strategy::Streak;
  std::uint64_t seed = 0;
  RetentionMatrix retention;
  std::vector<SessionLedger> ledger;
};

// Trains one strategy over the datasets in order and evaluates after each
// session. on_session, if set, sees the state after every session.
StrategyRun retention_experiment(std::span<const sim::TaskDataset> datasets, const model::ModelConfig& model,
                                 const TrainingConfig& cfg,
                                 const SessionCallback& on_session = {});

// Same as above but continuing from a saved state.
StrategyRun resume_experiment(SessionState state, RetentionMatrix done,
                              std::span<const sim::TaskDataset> datasets, const model::ModelConfig& model,
                              const TrainingConfig& cfg,
                              const SessionCallback& on_session = {});

// Moved Correct on D_k after session k, per k.
std::vector<double> new_task_report(const RetentionMatrix& m);

struct EfficiencyReport {
  std::vector<double> cpu_seconds;
  std::vector<std::size_t> samples;
  double total_seconds = 0.0;
  std::size_t total_samples = 0;
};

EfficiencyReport efficiency_report(std::span<const SessionLedger> ledger);

}  // namespace relocl::exp

#endif  // RELOCL_EXPERIMENT_EXPERIMENT_HPP
