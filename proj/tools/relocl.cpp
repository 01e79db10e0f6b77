// Command-line driver: simulate households, train strategies, evaluate
// checkpoints and render reports.
#include "relocl/cli/config.hpp"
#include "relocl/cli/report.hpp"
#include "relocl/cli/storage.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

extern char** environ;

namespace {

namespace fs = std::filesystem;
using namespace relocl;
using cli::ConfigError;
using cli::DataError;

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeError = 4 };

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoints;
  std::string strategy;
  std::string resume;
  std::string input;
  std::string ledger;
  std::optional<int> delta;
  std::optional<std::uint64_t> seed;
  std::optional<double> mean_size;
  std::optional<double> beta;
  int sessions = 10;
  bool table = false;
};

cli::ExperimentConfig load(const Options& o) {
  auto cfg = cli::load_config(o.config, environ);
  if (!o.out.empty()) cfg.output.directory = o.out;
  if (!o.strategy.empty()) {
    try {
      cfg.training.strategy = exp::parse_strategy(o.strategy);
    } catch (const exp::ExperimentError& e) {
      throw ConfigError(e.what());
    }
  }
  if (o.delta) cfg.model.horizon_minutes = *o.delta;
  cfg.validate();
  return cfg;
}

fs::path data_dir(const Options& o, const cli::ExperimentConfig& cfg) {
  return o.data.empty() ? fs::path(cfg.output.directory) / "data" : fs::path(o.data);
}

fs::path checkpoint_dir(const Options& o, const cli::ExperimentConfig& cfg) {
  return o.checkpoints.empty() ? fs::path(cfg.output.directory) / "checkpoints" : fs::path(o.checkpoints);
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& extension) {
  if (!fs::is_directory(dir)) throw DataError("no such directory '" + dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == extension) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// Loads every dataset in order and checks it can feed the configured run.
std::vector<sim::TaskDataset> load_datasets(const fs::path& dir, const cli::ExperimentConfig& cfg) {
  const auto files = sorted_files(dir, ".jsonl");
  if (files.empty()) throw DataError("no .jsonl datasets in '" + dir.string() + "'");
  std::vector<sim::TaskDataset> out;
  for (const auto& f : files) out.push_back(cli::load_dataset(f));
  const int delta = cfg.model.horizon_minutes;
  for (const auto& d : out) {
    if (!graph::same_catalog(d.catalog, out.front().catalog)) {
      throw DataError("dataset '" + d.household + "' uses a different catalog than '" + out.front().household + "'");
    }
    if (delta % d.interval != 0) {
      throw DataError("delta " + std::to_string(delta) + " is not a multiple of the interval of '" + d.household + "'");
    }
    if (exp::make_pairs(d, delta, sim::Split::Train).empty()) {
      throw DataError("dataset '" + d.household + "' has no training pairs at delta " + std::to_string(delta));
    }
    if (exp::make_pairs(d, delta, sim::Split::Test).empty()) {
      throw DataError("dataset '" + d.household + "' has no test pairs at delta " + std::to_string(delta));
    }
  }
  return out;
}

std::string run_name(exp::Strategy s, std::uint64_t seed) {
  return std::string(exp::to_string(s)) + "_seed" + std::to_string(seed);
}

std::string ledger_csv(const std::vector<exp::SessionLedger>& ledger) {
  std::string out = "session,samples,steps,cpu_seconds,buffer_size\n";
  char buf[64];
  for (const auto& l : ledger) {
    std::snprintf(buf, sizeof buf, "%.6f", l.cpu_seconds);
    out += std::to_string(l.session) + "," + std::to_string(l.samples) + "," + std::to_string(l.steps) + "," + buf +
           "," + std::to_string(l.buffer_size) + "\n";
  }
  return out;
}

int cmd_simulate(const Options& o) {
  auto cfg = load(o);
  if (o.seed) cfg.simulator.seed = *o.seed;
  const auto& s = cfg.simulator;
  const fs::path dir = o.data.empty() ? data_dir(o, cfg) : fs::path(o.data);
  const auto suite = sim::builtin_household_suite(s.households, s.seed);
  for (std::size_t i = 0; i < suite.size(); ++i) {
    auto ds = sim::generate_dataset(suite[i], s.days, s.interval, exp::derive_seed(s.seed, 100 + i),
                                    static_cast<int>(i));
    sim::label_split(ds, s.train_days, s.test_days);
    const fs::path path = dir / ("household_" + std::to_string(i) + ".jsonl");
    cli::save_dataset(path, ds);
    const auto back = cli::load_dataset(path);
    if (back.snapshots != ds.snapshots || back.day_split != ds.day_split) {
      throw std::runtime_error("re-read of '" + path.string() + "' does not match what was written");
    }
    std::cout << path.string() << ": " << ds.day_count() << " days, " << ds.snapshots.size() << " snapshots, "
              << ds.skipped_moves << " skipped moves\n";
  }
  return kOk;
}

int cmd_train(const Options& o) {
  auto cfg = load(o);
  const auto datasets = load_datasets(data_dir(o, cfg), cfg);
  const fs::path out = cfg.output.directory;
  const fs::path ckpt_dir = checkpoint_dir(o, cfg);

  std::vector<std::uint64_t> seeds = cfg.training.seeds;
  if (o.seed) seeds = {*o.seed};
  std::optional<cli::Checkpoint> resume;
  if (!o.resume.empty()) {
    resume = cli::load_checkpoint(o.resume);
    auto expected = cfg.training_config(resume->state.seed);
    if (!o.strategy.empty() && resume->training.strategy != expected.strategy) {
      throw ConfigError("--strategy differs from the checkpoint's strategy");
    }
    expected.strategy = resume->training.strategy;
    if (!(resume->training == expected) || !(resume->state.model == cfg.model)) {
      throw ConfigError("checkpoint was written with different model or training settings");
    }
    if (!graph::same_catalog(resume->state.catalog, datasets.front().catalog)) {
      throw DataError("checkpoint catalog does not match the datasets");
    }
    if (resume->state.session > static_cast<int>(datasets.size())) {
      throw DataError("checkpoint is past the last dataset");
    }
    seeds = {resume->state.seed};
  }

  for (auto seed : seeds) {
    auto tc = resume ? resume->training : cfg.training_config(seed);
    const std::string name = run_name(tc.strategy, seed);
    auto save = [&](const exp::SessionState& state, const exp::RetentionMatrix& m) {
      const int k = state.session - 1;
      cli::save_checkpoint(ckpt_dir / (name + "_ls" + std::to_string(k) + ".ckpt"), {state, m, tc});
      cli::write_atomic(out / ("ledger_" + name + ".csv"), ledger_csv(state.ledger));
      const auto& l = state.ledger.back();
      std::cout << name << " LS" << k << ": " << l.samples << " samples/epoch, " << l.cpu_seconds
                << " cpu s, moved correct on D" << k << " " << m.moved_correct(k, k) << "\n"
                << std::flush;
    };
    exp::StrategyRun run;
    if (resume) {
      run = exp::resume_experiment(resume->state, resume->retention, datasets, cfg.model, tc, save);
    } else {
      run = exp::retention_experiment(datasets, cfg.model, tc, save);
    }
    std::cout << name << " retention " << run.retention.retention() << "\n";
  }
  return kOk;
}

struct LoadedRun {
  exp::Strategy strategy;
  std::uint64_t seed;
  std::map<int, fs::path> sessions;  // trained-through index -> checkpoint
};

std::vector<LoadedRun> scan_checkpoints(const fs::path& dir) {
  std::vector<LoadedRun> runs;
  for (const auto& f : sorted_files(dir, ".ckpt")) {
    const auto m = cli::checkpoint_manifest(f);
    exp::Strategy s;
    std::uint64_t seed = 0;
    int session = 0;
    try {
      s = exp::parse_strategy(m.at("strategy").get<std::string>());
      seed = m.at("seed").get<std::uint64_t>();
      session = m.at("session").get<int>();
    } catch (const std::exception& e) {
      throw DataError(f.filename().string() + ": bad manifest: " + e.what());
    }
    auto it = std::find_if(runs.begin(), runs.end(), [&](const LoadedRun& r) { return r.strategy == s && r.seed == seed; });
    if (it == runs.end()) {
      runs.push_back({s, seed, {}});
      it = std::prev(runs.end());
    }
    it->sessions[session - 1] = f;
  }
  if (runs.empty()) throw DataError("no checkpoints in '" + dir.string() + "'");
  return runs;
}

int cmd_evaluate(const Options& o) {
  auto cfg = load(o);
  const auto datasets = load_datasets(data_dir(o, cfg), cfg);
  const int delta = cfg.model.horizon_minutes;
  const auto runs = scan_checkpoints(checkpoint_dir(o, cfg));

  std::vector<exp::Strategy> order;
  std::map<exp::Strategy, std::vector<exp::RetentionMatrix>> by_strategy;
  for (const auto& r : runs) {
    const int last = r.sessions.rbegin()->first;
    if (last >= static_cast<int>(datasets.size())) throw DataError("checkpoints go beyond the supplied datasets");
    exp::RetentionMatrix m;
    for (int k = 0; k <= last; ++k) {
      auto it = r.sessions.find(k);
      if (it == r.sessions.end()) {
        throw DataError("missing checkpoint for " + run_name(r.strategy, r.seed) + " after session " + std::to_string(k));
      }
      const auto c = cli::load_checkpoint(it->second);
      std::vector<exp::MetricsReport> row;
      for (int j = 0; j <= k; ++j) {
        row.push_back(exp::evaluate(c.state.params, c.state.model, datasets[static_cast<std::size_t>(j)], delta,
                                    cfg.model.move_threshold));
      }
      m.rows.push_back(std::move(row));
    }
    if (!by_strategy.count(r.strategy)) order.push_back(r.strategy);
    auto& ms = by_strategy[r.strategy];
    if (!ms.empty() && ms.front().rows.size() != m.rows.size()) {
      throw DataError(std::string("seeds of ") + exp::to_string(r.strategy) + " reached different sessions");
    }
    ms.push_back(std::move(m));
  }

  std::sort(order.begin(), order.end());
  std::vector<cli::ReportRow> rows;
  std::vector<std::pair<exp::Strategy, exp::RetentionMatrix>> merged;
  for (auto s : order) {
    merged.push_back({s, cli::merge_seeds(by_strategy[s])});
    const auto r = cli::report_rows(s, merged.back().second);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  const fs::path out = cfg.output.directory;
  for (const auto& f : cfg.output.formats) {
    if (f == "csv") cli::write_atomic(out / "report.csv", cli::report_csv(rows));
    if (f == "json") cli::write_atomic(out / "report.json", cli::report_json(rows).dump(2) + "\n");
  }
  if (o.table) std::cout << cli::retention_table(merged) << cli::new_task_table(merged);
  return kOk;
}

int cmd_report(const Options& o) {
  auto cfg = load(o);
  const fs::path in = o.input.empty() ? fs::path(cfg.output.directory) / "report.json" : fs::path(o.input);
  const auto j = nlohmann::json::parse(cli::read_file(in), nullptr, false);
  if (j.is_discarded()) throw DataError("'" + in.string() + "' is not valid JSON");
  const auto rows = cli::rows_from_json(j);
  const auto matrices = cli::matrices_from_rows(rows);
  std::cout << cli::retention_table(matrices) << cli::new_task_table(matrices);

  const fs::path ckpt = checkpoint_dir(o, cfg);
  if (fs::is_directory(ckpt)) {
    // Efficiency from the newest checkpoint of each run; CPU time averaged over seeds.
    std::vector<std::pair<exp::Strategy, exp::EfficiencyReport>> eff;
    std::map<exp::Strategy, int> seeds;
    for (const auto& r : scan_checkpoints(ckpt)) {
      const auto m = cli::checkpoint_manifest(r.sessions.rbegin()->second);
      std::vector<exp::SessionLedger> ledger;
      for (const auto& l : m.at("ledger")) {
        ledger.push_back({l.at("session").get<int>(), l.at("samples").get<std::size_t>(), l.at("steps").get<std::size_t>(),
                          l.at("cpu_seconds").get<double>(), l.at("buffer_size").get<std::size_t>()});
      }
      auto e = exp::efficiency_report(ledger);
      auto it = std::find_if(eff.begin(), eff.end(), [&](const auto& p) { return p.first == r.strategy; });
      if (it == eff.end()) {
        eff.push_back({r.strategy, e});
      } else if (it->second.cpu_seconds.size() == e.cpu_seconds.size()) {
        for (std::size_t k = 0; k < e.cpu_seconds.size(); ++k) it->second.cpu_seconds[k] += e.cpu_seconds[k];
        it->second.total_seconds += e.total_seconds;
      }
      ++seeds[r.strategy];
    }
    for (auto& [s, e] : eff) {
      const double n = seeds[s];
      for (auto& c : e.cpu_seconds) c /= n;
      e.total_seconds /= n;
    }
    std::cout << "\n" << cli::efficiency_table(eff);
  }
  return kOk;
}

std::vector<std::size_t> measured_buffer_sizes(const fs::path& ledger) {
  std::istringstream in(cli::read_file(ledger));
  std::string line;
  std::getline(in, line);
  if (line != "session,samples,steps,cpu_seconds,buffer_size") throw DataError("'" + ledger.string() + "' is not a ledger");
  std::vector<std::size_t> sizes;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comma = line.rfind(',');
    try {
      sizes.push_back(std::stoull(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw DataError(ledger.filename().string() + ":" + std::to_string(line_no) + ": bad buffer_size");
    }
  }
  return sizes;
}

int cmd_project_buffer(const Options& o) {
  auto cfg = load(o);
  if (!o.mean_size || !(*o.mean_size > 0.0)) throw ConfigError("--mean-size must be a positive number");
  if (o.sessions < 1) throw ConfigError("--sessions must be >= 1");
  const double beta = o.beta.value_or(cfg.training.beta);
  if (!(beta > 0.0)) throw ConfigError("--beta must be > 0");
  std::vector<std::size_t> measured;
  if (!o.ledger.empty()) measured = measured_buffer_sizes(o.ledger);
  const auto csv = cli::buffer_projection_csv(*o.mean_size, beta, o.sessions, measured);
  if (!o.out.empty() && o.out != "-") {
    cli::write_atomic(o.out, csv);
  } else {
    std::cout << csv;
  }
  return kOk;
}

int guarded(int (*cmd)(const Options&), const Options& o) {
  try {
    return cmd(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relocl: continual learning of household object relocations"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON experiment config");
    c->add_option("--out", o.out, "output directory");
  };
  auto with_data = [&](CLI::App* c) { c->add_option("--data", o.data, "directory of household .jsonl files"); };
  auto with_checkpoints = [&](CLI::App* c) {
    c->add_option("--checkpoints", o.checkpoints, "checkpoint directory (default <out>/checkpoints)");
  };

  auto* simulate = app.add_subcommand("simulate", "generate household datasets");
  common(simulate);
  simulate->add_option("--data", o.data, "where to write the datasets (default <out>/data)");
  simulate->add_option("--seed", o.seed, "simulator seed");

  auto* train = app.add_subcommand("train", "train one strategy over the datasets in order");
  common(train);
  with_data(train);
  with_checkpoints(train);
  train->add_option("--strategy", o.strategy, "streak, finetuned or joint");
  train->add_option("--delta", o.delta, "prediction horizon in minutes");
  train->add_option("--seed", o.seed, "train a single seed");
  train->add_option("--resume", o.resume, "continue from this checkpoint");

  auto* evaluate = app.add_subcommand("evaluate", "score checkpoints on the test splits");
  common(evaluate);
  with_data(evaluate);
  with_checkpoints(evaluate);
  evaluate->add_option("--delta", o.delta, "prediction horizon in minutes");
  evaluate->add_flag("--table", o.table, "print the retention and new-task tables");

  auto* report = app.add_subcommand("report", "render tables from an evaluation report");
  common(report);
  with_checkpoints(report);
  report->add_option("--in", o.input, "report.json (default <out>/report.json)");

  auto* project = app.add_subcommand("project-buffer", "projected memory buffer sizes");
  project->add_option("--config", o.config, "JSON experiment config");
  project->add_option("--out", o.out, "CSV output file (default stdout)");
  project->add_option("--mean-size", o.mean_size, "mean dataset size")->required();
  project->add_option("--beta", o.beta, "buffer decay factor (default from config)");
  project->add_option("--sessions", o.sessions, "number of sessions");
  project->add_option("--ledger", o.ledger, "ledger CSV with measured buffer sizes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  if (*simulate) return guarded(cmd_simulate, o);
  if (*train) return guarded(cmd_train, o);
  if (*evaluate) return guarded(cmd_evaluate, o);
  if (*report) return guarded(cmd_report, o);
  return guarded(cmd_project_buffer, o);
}
