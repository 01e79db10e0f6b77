#include "relocl/experiment/experiment.hpp"

#include <algorithm>
#include <cstring>
#include <ctime>
#include <numeric>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace relocl::exp {

using cl::SnapshotPair;
using num::Matrix;

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Streak: return "streak";
    case Strategy::Finetuned: return "finetuned";
    case Strategy::Joint: return "joint";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "streak") return Strategy::Streak;
  if (name == "finetuned") return Strategy::Finetuned;
  if (name == "joint") return Strategy::Joint;
  throw ExperimentError("unknown strategy '" + std::string(name) + "' (streak, finetuned, joint)");
}

void TrainingConfig::validate() const {
  if (epochs < 1) throw ExperimentError("epochs must be >= 1");
  if (batch_size < 1) throw ExperimentError("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw ExperimentError("learning rate must be > 0");
  if (std::find(std::begin(kSupportedDeltas), std::end(kSupportedDeltas), delta) == std::end(kSupportedDeltas)) {
    throw ExperimentError("delta " + std::to_string(delta) + " is not one of 10, 30, 60, 90, 120");
  }
  try {
    hyper.validate();
  } catch (const cl::CLError& e) {
    throw ExperimentError(e.what());
  }
}

std::vector<SnapshotPair> make_pairs(const sim::TaskDataset& ds, int delta, std::optional<sim::Split> split) {
  if (delta <= 0 || delta % ds.interval != 0) {
    throw ExperimentError("delta " + std::to_string(delta) + " is not a multiple of the " +
                          std::to_string(ds.interval) + "-minute sample interval");
  }
  const std::size_t step = static_cast<std::size_t>(delta / ds.interval);
  std::vector<SnapshotPair> out;
  for (int d = 0; d < ds.day_count(); ++d) {
    if (split && ds.split_of_day(d) != *split) continue;
    const auto day = ds.day(d);
    for (std::size_t i = 0; i + step < day.size(); ++i) out.push_back({day[i], day[i + step]});
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over both words
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(seed) ^ stream);
}

SessionState initial_state(Strategy strategy, const model::ModelConfig& model, graph::CatalogPtr catalog,
                           std::uint64_t seed) {
  if (!catalog) throw ExperimentError("initial_state: no catalog");
  model.validate();
  SessionState s;
  s.strategy = strategy;
  s.model = model;
  s.catalog = std::move(catalog);
  s.seed = seed;
  s.params = model::init_parameters<Real>(model, *s.catalog, derive_seed(seed, 0));
  s.rng.seed(derive_seed(seed, 0x5eed));
  if (strategy == Strategy::Streak) s.buffer = cl::MemoryBuffer{};
  return s;
}

namespace {

// Tiny Adam moments otherwise decay into subnormal floats, which are very
// slow on x86; flushing them keeps step cost flat across sessions.
class FlushSubnormals {
 public:
#if defined(__SSE__)
  FlushSubnormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040); }
  ~FlushSubnormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

double cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_PROCESS_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

std::vector<Matrix<Real>> sample_gradient(const SessionState& state, const SnapshotPair& sample,
                                          const cl::ConsolidationAnchor<Real>* anchor, double lambda) {
  num::Tape<Real> tape;
  auto p = model::bind(tape, state.params, state.model);
  auto pred = model::predict(tape, p, sample.input);
  auto loss = model::model_loss(tape, p, pred, sample.target, sample.input);
  auto grad = num::gradient<Real>(loss.total, p.leaves);
  // The penalty is separable and quadratic, so its exact gradient is added
  // directly instead of being recorded on the tape.
  if (anchor != nullptr) cl::add_consolidation_gradient(grad, state.params, *anchor, lambda);
  return grad;
}

void train(SessionState& state, std::span<const SnapshotPair> samples, const TrainingConfig& cfg,
           const cl::ConsolidationAnchor<Real>* anchor, SessionLedger& ledger) {
  std::vector<std::size_t> order(samples.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.rng);
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      auto grad = sample_gradient(state, samples[order[begin]], anchor, cfg.hyper.lambda);
      for (std::size_t i = begin + 1; i < end; ++i) {
        auto g = sample_gradient(state, samples[order[i]], anchor, cfg.hyper.lambda);
        for (std::size_t t = 0; t < grad.size(); ++t) grad[t] += g[t];
      }
      if (end - begin > 1) {
        for (auto& g : grad) g /= static_cast<Real>(end - begin);
      }
      num::adam_step(state.params.values(), grad, state.optimizer);
      ++ledger.steps;
    }
  }
}

// Fisher, anchor, mean feature vector and buffer at the end of a streak session.
void consolidate(SessionState& state, const std::vector<SnapshotPair>& current, const TrainingConfig& cfg) {
  std::vector<model::EmbeddingBundle<Real>> bundles;
  bundles.reserve(current.size());
  for (const auto& s : current) bundles.push_back(model::encode(s.input, state.params, state.model));
  auto mean = cl::mean_feature_vector<Real>(bundles);
  state.buffer = cl::buffer_update<Real>(*state.buffer, current, bundles, mean, cfg.hyper, state.session);
  state.feature_means.push_back(std::move(mean));

  std::vector<SnapshotPair> kept;
  kept.reserve(state.buffer->size());
  for (const auto& e : state.buffer->entries) kept.push_back(e.sample);
  auto fisher = cl::fisher_diagonal<Real>(state.params, std::span<const SnapshotPair>(kept), [&](const SnapshotPair& s) {
    return model::loss_and_gradient(state.params, state.model, s.input, s.target).gradient;
  });
  state.anchor = cl::ConsolidationAnchor<Real>{state.params, std::move(fisher)};
}

}  // namespace

void run_session(SessionState& state, const sim::TaskDataset& data, const TrainingConfig& cfg) {
  cfg.validate();
  if (!graph::same_catalog(data.catalog, state.catalog)) {
    throw ExperimentError("dataset '" + data.household + "' uses a different catalog than the model");
  }
  if (cfg.strategy != state.strategy) throw ExperimentError("training config strategy differs from the state's");
  auto current = make_pairs(data, cfg.delta, sim::Split::Train);
  if (current.empty()) throw ExperimentError("dataset '" + data.household + "' has no training pairs");

  FlushSubnormals ftz;
  const double start = cpu_seconds();
  SessionLedger ledger;
  ledger.session = state.session;
  state.optimizer.hyper.lr = cfg.learning_rate;

  switch (state.strategy) {
    case Strategy::Finetuned: {
      ledger.samples = current.size();
      train(state, current, cfg, nullptr, ledger);
      break;
    }
    case Strategy::Streak: {
      const auto replay = cl::select_replay(*state.buffer, cfg.hyper.beta, state.session);
      std::vector<SnapshotPair> samples = current;
      for (const auto& e : replay.entries) samples.push_back(e.sample);
      ledger.samples = samples.size();
      const cl::ConsolidationAnchor<Real>* anchor = state.anchor ? &*state.anchor : nullptr;
      train(state, samples, cfg, anchor, ledger);
      consolidate(state, current, cfg);
      ledger.buffer_size = state.buffer->size();
      break;
    }
    case Strategy::Joint: {
      state.seen.push_back(current);
      std::vector<SnapshotPair> samples;
      for (const auto& d : state.seen) samples.insert(samples.end(), d.begin(), d.end());
      ledger.samples = samples.size();
      state.params = model::init_parameters<Real>(state.model, *state.catalog,
                                                  derive_seed(state.seed, static_cast<std::uint64_t>(state.session)));
      state.optimizer = num::AdamState<Real>{};
      state.optimizer.hyper.lr = cfg.learning_rate;
      train(state, samples, cfg, nullptr, ledger);
      break;
    }
  }
  ledger.cpu_seconds = cpu_seconds() - start;
  state.ledger.push_back(ledger);
  ++state.session;
}

namespace {

bool same_vector(const num::Vector<Real>& a, const num::Vector<Real>& b) {
  return a.size() == b.size() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(Real) * static_cast<std::size_t>(a.size())) == 0);
}

}  // namespace

bool same_state(const SessionState& a, const SessionState& b) {
  if (a.strategy != b.strategy || a.session != b.session || !(a.model == b.model) || a.seed != b.seed) return false;
  if (!graph::same_catalog(a.catalog, b.catalog)) return false;
  if (!a.params.same_bits(b.params) || !num::same_bits(a.optimizer, b.optimizer) || !(a.rng == b.rng)) return false;
  if (a.anchor.has_value() != b.anchor.has_value()) return false;
  if (a.anchor && (!a.anchor->theta_prev.same_bits(b.anchor->theta_prev) ||
                   !same_vector(a.anchor->fisher.values, b.anchor->fisher.values))) {
    return false;
  }
  if (a.buffer != b.buffer) return false;
  if (a.feature_means.size() != b.feature_means.size()) return false;
  for (std::size_t i = 0; i < a.feature_means.size(); ++i) {
    const auto& x = a.feature_means[i];
    const auto& y = b.feature_means[i];
    if (!same_vector(x.c, y.c) || x.node_count != y.node_count || x.edge_count != y.edge_count ||
        x.time_count != y.time_count) {
      return false;
    }
  }
  if (a.seen != b.seen || a.ledger.size() != b.ledger.size()) return false;
  for (std::size_t i = 0; i < a.ledger.size(); ++i) {
    auto x = a.ledger[i];
    auto y = b.ledger[i];
    x.cpu_seconds = y.cpu_seconds = 0.0;
    if (!(x == y)) return false;
  }
  return true;
}

OutcomeCounts& OutcomeCounts::operator+=(const OutcomeCounts& o) {
  moved_correct += o.moved_correct;
  moved_wrong += o.moved_wrong;
  moved_missed += o.moved_missed;
  unmoved_correct += o.unmoved_correct;
  unmoved_wrong += o.unmoved_wrong;
  return *this;
}

OutcomePercent percentages(const OutcomeCounts& c) {
  OutcomePercent p;
  if (c.used() > 0) {
    const double u = static_cast<double>(c.used());
    p.moved_correct = 100.0 * static_cast<double>(c.moved_correct) / u;
    p.moved_wrong = 100.0 * static_cast<double>(c.moved_wrong) / u;
    p.moved_missed = 100.0 * static_cast<double>(c.moved_missed) / u;
  }
  if (c.unused() > 0) {
    const double n = static_cast<double>(c.unused());
    p.unmoved_correct = 100.0 * static_cast<double>(c.unmoved_correct) / n;
    p.unmoved_wrong = 100.0 * static_cast<double>(c.unmoved_wrong) / n;
  }
  return p;
}

OutcomeCounts score_prediction(std::span<const graph::RelocationEvent> predicted, const graph::GraphSnapshot& current,
                               const graph::GraphSnapshot& target) {
  if (!graph::same_catalog(current.catalog, target.catalog) || current.parent.size() != target.parent.size()) {
    throw ExperimentError("score_prediction: snapshots do not share a catalog");
  }
  const auto& cat = *current.catalog;
  const int n = cat.object_count();
  std::vector<int> predicted_to(static_cast<std::size_t>(n), -1);
  for (const auto& e : predicted) {
    if (e.object < 0 || e.object >= n) throw ExperimentError("score_prediction: event names an unknown object");
    predicted_to[static_cast<std::size_t>(e.object)] = e.to_location;
  }
  OutcomeCounts c;
  for (int o = 0; o < n; ++o) {
    const int now = current.parent_location(o);
    const int next = target.parent_location(o);
    const int guess = predicted_to[static_cast<std::size_t>(o)];
    const bool moves = guess >= 0 && guess != now;
    if (now != next) {
      if (!moves) {
        ++c.moved_missed;
      } else if (guess == next) {
        ++c.moved_correct;
      } else {
        ++c.moved_wrong;
      }
    } else if (moves) {
      ++c.unmoved_wrong;
    } else {
      ++c.unmoved_correct;
    }
  }
  return c;
}

MetricsReport evaluate(const Params& params, const model::ModelConfig& model, const sim::TaskDataset& test, int delta,
                       double tau) {
  const auto pairs = make_pairs(test, delta, sim::Split::Test);
  if (pairs.empty()) throw ExperimentError("dataset '" + test.household + "' has no test pairs at this horizon");
  MetricsReport r;
  r.dataset = test.household;
  r.pairs = pairs.size();
  for (const auto& p : pairs) {
    const auto pred = model::predict(p.input, params, model);
    const auto events = model::decode_relocations(pred, p.input, tau, delta);
    r.counts += score_prediction(events, p.input, p.target);
  }
  return r;
}

double RetentionMatrix::moved_correct(int row, int col) const {
  const auto& r = rows.at(static_cast<std::size_t>(row));
  return r.at(static_cast<std::size_t>(col)).percent().moved_correct;
}

double RetentionMatrix::retention() const {
  if (rows.empty()) throw ExperimentError("retention: empty matrix");
  const auto& last = rows.back();
  double sum = 0.0;
  for (const auto& r : last) sum += r.percent().moved_correct;
  return sum / static_cast<double>(last.size());
}

StrategyRun resume_experiment(SessionState state, RetentionMatrix done, std::span<const sim::TaskDataset> datasets,
                              const model::ModelConfig& model, const TrainingConfig& cfg,
                              const SessionCallback& on_session) {
  cfg.validate();
  if (datasets.size() < 2) throw ExperimentError("a retention experiment needs at least two datasets");
  if (model.horizon_minutes != cfg.delta) throw ExperimentError("model horizon and training delta differ");
  for (const auto& d : datasets) {
    if (!graph::same_catalog(d.catalog, datasets.front().catalog)) {
      throw ExperimentError("dataset '" + d.household + "' uses a different catalog");
    }
  }
  if (state.session > static_cast<int>(datasets.size()) || done.rows.size() != static_cast<std::size_t>(state.session)) {
    throw ExperimentError("resume state does not match the dataset list");
  }
  while (state.session < static_cast<int>(datasets.size())) {
    const int k = state.session;
    run_session(state, datasets[static_cast<std::size_t>(k)], cfg);
    std::vector<MetricsReport> row;
    for (int j = 0; j <= k; ++j) {
      row.push_back(evaluate(state.params, model, datasets[static_cast<std::size_t>(j)], cfg.delta,
                             model.move_threshold));
    }
    done.rows.push_back(std::move(row));
    if (on_session) on_session(state, done);
  }
  return {state.strategy, state.seed, std::move(done), state.ledger};
}

StrategyRun retention_experiment(std::span<const sim::TaskDataset> datasets, const model::ModelConfig& model,
                                 const TrainingConfig& cfg, const SessionCallback& on_session) {
  return resume_experiment(initial_state(cfg.strategy, model, datasets.front().catalog, cfg.seed), {}, datasets,
                           model, cfg, on_session);
}

std::vector<double> new_task_report(const RetentionMatrix& m) {
  std::vector<double> out;
  for (std::size_t k = 0; k < m.rows.size(); ++k) out.push_back(m.moved_correct(static_cast<int>(k), static_cast<int>(k)));
  return out;
}

EfficiencyReport efficiency_report(std::span<const SessionLedger> ledger) {
  EfficiencyReport r;
  for (const auto& l : ledger) {
    r.cpu_seconds.push_back(l.cpu_seconds);
    r.samples.push_back(l.samples);
    r.total_seconds += l.cpu_seconds;
    r.total_samples += l.samples;
  }
  return r;
}

}  // namespace relocl::exp
