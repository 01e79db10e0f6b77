#include "relocl/cli/config.hpp"
#include "relocl/cli/report.hpp"
#include "relocl/cli/storage.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace relocl;
using cli::ConfigError;
using cli::DataError;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("relocl_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

sim::TaskDataset small_dataset(int task = 0) {
  auto suite = sim::builtin_household_suite(2, 3);
  auto ds = sim::generate_dataset(suite[static_cast<std::size_t>(task)], 3, 10, 11 + task, task);
  sim::label_split(ds, 2, 1);
  return ds;
}

void expect_same_dataset(const sim::TaskDataset& a, const sim::TaskDataset& b) {
  EXPECT_EQ(a.task, b.task);
  EXPECT_EQ(a.household, b.household);
  EXPECT_EQ(*a.catalog, *b.catalog);
  EXPECT_EQ(a.interval, b.interval);
  EXPECT_EQ(a.first_day, b.first_day);
  EXPECT_EQ(a.snapshots, b.snapshots);
  EXPECT_EQ(a.day_start, b.day_start);
  EXPECT_EQ(a.day_split, b.day_split);
  EXPECT_EQ(a.activity_fires, b.activity_fires);
  EXPECT_EQ(a.skipped_moves, b.skipped_moves);
}

model::ModelConfig small_model() {
  model::ModelConfig m;
  m.embedding_dim = 4;
  m.rounds = 1;
  m.hidden_dim = 8;
  return m;
}

cli::Checkpoint trained_checkpoint(exp::Strategy strategy) {
  std::vector<sim::TaskDataset> tasks{small_dataset(0), small_dataset(1)};
  exp::TrainingConfig tc;
  tc.epochs = 1;
  tc.strategy = strategy;
  tc.seed = 5;
  cli::Checkpoint out;
  auto run = exp::retention_experiment(tasks, small_model(), tc, [&](const exp::SessionState& s,
                                                                     const exp::RetentionMatrix& m) {
    out = {s, m, tc};
  });
  return out;
}

std::vector<char*> env_block(std::vector<std::string>& storage) {
  std::vector<char*> env;
  for (auto& s : storage) env.push_back(s.data());
  env.push_back(nullptr);
  return env;
}

exp::OutcomeCounts counts(std::size_t mc, std::size_t mw, std::size_t mm, std::size_t uc, std::size_t uw) {
  return {mc, mw, mm, uc, uw};
}

}  // namespace

TEST(Config, DefaultsAreTheDocumentedOnes) {
  const auto c = cli::config_from_json(json::object());
  EXPECT_EQ(c.training.epochs, 50);
  EXPECT_EQ(c.training.batch_size, 1);
  EXPECT_DOUBLE_EQ(c.training.learning_rate, 0.001);
  EXPECT_DOUBLE_EQ(c.training.lambda, 200.0);
  EXPECT_DOUBLE_EQ(c.training.beta, 10.0);
  EXPECT_EQ(c.training.strategy, exp::Strategy::Streak);
  EXPECT_EQ(c.simulator.households, 3);
  EXPECT_EQ(c.simulator.train_days, 20);
  EXPECT_EQ(c.simulator.test_days, 5);
  EXPECT_EQ(c.simulator.interval, 10);
  EXPECT_EQ(c.model.horizon_minutes, 10);
  EXPECT_DOUBLE_EQ(c.model.move_threshold, 0.5);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTrip) {
  auto c = cli::config_from_json(json::object());
  c.training.epochs = 7;
  c.training.seeds = {4, 9};
  c.model.horizon_minutes = 30;
  c.output.formats = {"csv"};
  EXPECT_EQ(cli::config_from_json(cli::to_json(c)), c);
}

TEST(Config, UnknownKeysAndSectionsAreRejected) {
  EXPECT_THROW((void)cli::config_from_json(json::parse(R"({"training": {"epoch": 3}})")), ConfigError);
  EXPECT_THROW((void)cli::config_from_json(json::parse(R"({"optimizer": {}})")), ConfigError);
  EXPECT_THROW((void)cli::config_from_json(json::parse(R"({"training": {"epochs": "many"}})")), ConfigError);
}

TEST(Config, InvalidValuesFailValidation) {
  auto c = cli::config_from_json(json::parse(R"({"training": {"epochs": 0}})"));
  EXPECT_THROW(c.validate(), ConfigError);
  c = cli::config_from_json(json::parse(R"({"simulator": {"days": 10, "train_days": 8, "test_days": 5}})"));
  EXPECT_THROW(c.validate(), ConfigError);
  c = cli::config_from_json(json::parse(R"({"model": {"delta": 45}})"));
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, EnvironmentOverridesSingleKeys) {
  std::vector<std::string> vars{"PATH=/bin", "RELOCL_TRAINING__EPOCHS=5", "RELOCL_TRAINING__STRATEGY=joint",
                                "RELOCL_OUTPUT__DIRECTORY=/tmp/x", "RELOCL_TRAINING__SEEDS=[3,4]"};
  auto env = env_block(vars);
  json j = json::parse(R"({"training": {"epochs": 9, "lambda": 20}})");
  cli::apply_env_overrides(j, env.data());
  const auto c = cli::config_from_json(j);
  EXPECT_EQ(c.training.epochs, 5);
  EXPECT_DOUBLE_EQ(c.training.lambda, 20.0);
  EXPECT_EQ(c.training.strategy, exp::Strategy::Joint);
  EXPECT_EQ(c.output.directory, "/tmp/x");
  EXPECT_EQ(c.training.seeds, (std::vector<std::uint64_t>{3, 4}));
}

TEST(Config, LoadReadsFileThenEnvironment) {
  const auto dir = scratch("config");
  cli::write_atomic(dir / "c.json", R"({"training": {"epochs": 2}, "model": {"delta": 30}})");
  std::vector<std::string> vars{"RELOCL_TRAINING__EPOCHS=3"};
  auto env = env_block(vars);
  const auto c = cli::load_config(dir / "c.json", env.data());
  EXPECT_EQ(c.training.epochs, 3);
  EXPECT_EQ(c.model.horizon_minutes, 30);
  EXPECT_EQ(c.training_config(1).delta, 30);
  EXPECT_EQ(c.training_config(1).seed, 1u);
  cli::write_atomic(dir / "bad.json", "{ not json");
  EXPECT_THROW((void)cli::load_config(dir / "bad.json", env.data()), ConfigError);
  EXPECT_THROW((void)cli::load_config(dir / "missing.json", env.data()), ConfigError);
}

TEST(Storage, AtomicWriteReplacesWholeFilesAndLeavesNoTemps) {
  const auto dir = scratch("atomic");
  cli::write_atomic(dir / "sub" / "f.txt", "first");
  cli::write_atomic(dir / "sub" / "f.txt", "second");
  EXPECT_EQ(cli::read_file(dir / "sub" / "f.txt"), "second");
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "sub")) files += e.is_regular_file() ? 1 : 0;
  EXPECT_EQ(files, 1);
  EXPECT_THROW((void)cli::read_file(dir / "nothing"), DataError);
}

TEST(Storage, DatasetRoundTripsThroughJsonLines) {
  const auto ds = small_dataset();
  const auto dir = scratch("jsonl");
  cli::save_dataset(dir / "h.jsonl", ds);
  expect_same_dataset(cli::load_dataset(dir / "h.jsonl"), ds);
  EXPECT_EQ(cli::read_file(dir / "h.jsonl"), cli::dataset_to_jsonl(small_dataset()));
}

TEST(Storage, CorruptLineIsReportedWithItsNumber) {
  auto text = cli::dataset_to_jsonl(small_dataset());
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  lines[4] = lines[4].substr(0, lines[4].size() / 2);
  std::string broken;
  for (const auto& l : lines) broken += l + "\n";
  std::istringstream bad(broken);
  try {
    (void)cli::dataset_from_jsonl(bad, "h.jsonl");
    FAIL() << "corrupt stream was accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("h.jsonl:5:"), std::string::npos) << e.what();
  }
}

TEST(Storage, TruncatedDatasetIsRejected) {
  const auto text = cli::dataset_to_jsonl(small_dataset());
  std::istringstream cut(text.substr(0, text.size() * 2 / 3));
  EXPECT_THROW((void)cli::dataset_from_jsonl(cut, "cut"), DataError);
  std::istringstream headless(text.substr(text.find('\n') + 1));
  EXPECT_THROW((void)cli::dataset_from_jsonl(headless, "headless"), DataError);
}

TEST(Storage, UnknownParentIdIsRejected) {
  auto text = cli::dataset_to_jsonl(small_dataset());
  const auto pos = text.find("\"cabinet\"", text.find('\n'));
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 9, "\"garage\"");
  std::istringstream in(text);
  EXPECT_THROW((void)cli::dataset_from_jsonl(in, "x"), DataError);
}

TEST(Checkpoint, RoundTripIsBitwiseForEveryStrategy) {
  for (auto s : {exp::Strategy::Streak, exp::Strategy::Finetuned, exp::Strategy::Joint}) {
    const auto c = trained_checkpoint(s);
    const auto bytes = cli::encode_checkpoint(c);
    const auto back = cli::decode_checkpoint(bytes, "mem");
    EXPECT_TRUE(exp::same_state(c.state, back.state)) << exp::to_string(s);
    EXPECT_TRUE(c.state.rng == back.state.rng);
    EXPECT_EQ(c.retention, back.retention);
    EXPECT_EQ(c.training, back.training);
    EXPECT_EQ(cli::encode_checkpoint(back), bytes);
    for (std::size_t i = 0; i < c.state.ledger.size(); ++i) {
      EXPECT_EQ(c.state.ledger[i].cpu_seconds, back.state.ledger[i].cpu_seconds);
    }
  }
}

TEST(Checkpoint, FinetunedCarriesNoAnchorOrBuffer) {
  const auto dir = scratch("ckpt_manifest");
  cli::save_checkpoint(dir / "f.ckpt", trained_checkpoint(exp::Strategy::Finetuned));
  const auto m = cli::checkpoint_manifest(dir / "f.ckpt");
  EXPECT_FALSE(m.at("has_anchor").get<bool>());
  EXPECT_FALSE(m.at("has_buffer").get<bool>());
  EXPECT_EQ(m.at("strategy"), "finetuned");
  EXPECT_EQ(m.at("session"), 2);
}

TEST(Checkpoint, ResumedRngContinuesTheSameStream) {
  auto c = trained_checkpoint(exp::Strategy::Streak);
  auto back = cli::decode_checkpoint(cli::encode_checkpoint(c), "mem");
  for (int i = 0; i < 5; ++i) EXPECT_EQ(c.state.rng(), back.state.rng());
}

TEST(Checkpoint, VersionMismatchIsAnExplicitError) {
  auto bytes = cli::encode_checkpoint(trained_checkpoint(exp::Strategy::Finetuned));
  bytes[8] = static_cast<char>(cli::kCheckpointVersion + 1);
  try {
    (void)cli::decode_checkpoint(bytes, "v.ckpt");
    FAIL() << "wrong version was accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, DamageIsDetected) {
  const auto bytes = cli::encode_checkpoint(trained_checkpoint(exp::Strategy::Streak));
  EXPECT_THROW((void)cli::decode_checkpoint(bytes.substr(0, bytes.size() - 9), "cut"), DataError);
  EXPECT_THROW((void)cli::decode_checkpoint(bytes.substr(0, 20), "cut"), DataError);
  auto flipped = bytes;
  flipped[flipped.size() - 100] ^= 0x10;
  EXPECT_THROW((void)cli::decode_checkpoint(flipped, "flip"), DataError);
  EXPECT_THROW((void)cli::decode_checkpoint("NOTACKPT" + bytes.substr(8), "magic"), DataError);
}

TEST(Report, CsvAndJsonMatchTheGoldenOutput) {
  exp::RetentionMatrix m;
  m.rows = {{{"h0", 4, counts(1, 1, 0, 2, 1)}},
            {{"h0", 4, counts(0, 0, 3, 6, 0)}, {"h1", 4, counts(2, 0, 1, 5, 0)}}};
  const auto rows = cli::report_rows(exp::Strategy::Finetuned, m);
  EXPECT_EQ(cli::report_csv(rows),
            "strategy,trained_through,test_dataset,moved_correct,moved_wrong,moved_missed,unmoved_correct,"
            "unmoved_wrong\n"
            "finetuned,D0,D0,50.00,50.00,0.00,66.67,33.33\n"
            "finetuned,D1,D0,0.00,0.00,100.00,100.00,0.00\n"
            "finetuned,D1,D1,66.67,0.00,33.33,100.00,0.00\n");
  const auto j = cli::report_json(rows);
  EXPECT_EQ(j.dump(),
            R"({"format":"relocl-report","rows":[)"
            R"({"moved_correct":1,"moved_missed":0,"moved_wrong":1,"pairs":4,"strategy":"finetuned","test_dataset":0,)"
            R"("trained_through":0,"unmoved_correct":2,"unmoved_wrong":1},)"
            R"({"moved_correct":0,"moved_missed":3,"moved_wrong":0,"pairs":4,"strategy":"finetuned","test_dataset":0,)"
            R"("trained_through":1,"unmoved_correct":6,"unmoved_wrong":0},)"
            R"({"moved_correct":2,"moved_missed":1,"moved_wrong":0,"pairs":4,"strategy":"finetuned","test_dataset":1,)"
            R"("trained_through":1,"unmoved_correct":5,"unmoved_wrong":0}],"version":1})");
  EXPECT_EQ(cli::rows_from_json(j), rows);
  const auto back = cli::matrices_from_rows(rows);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].second.moved_correct(1, 1), m.moved_correct(1, 1));
}

TEST(Report, RowCountIsStrategiesTimesTriangle) {
  exp::RetentionMatrix m;
  for (int k = 0; k < 3; ++k) m.rows.push_back(std::vector<exp::MetricsReport>(static_cast<std::size_t>(k + 1)));
  std::vector<cli::ReportRow> rows;
  for (auto s : {exp::Strategy::Streak, exp::Strategy::Finetuned, exp::Strategy::Joint}) {
    for (const auto& r : cli::report_rows(s, m)) rows.push_back(r);
  }
  EXPECT_EQ(rows.size(), 3u * (1 + 2 + 3));
  EXPECT_EQ(cli::matrices_from_rows(rows).size(), 3u);
}

TEST(Report, MergingSeedsSumsCounts) {
  exp::RetentionMatrix a, b;
  a.rows = {{{"h0", 2, counts(1, 0, 1, 3, 0)}}};
  b.rows = {{{"h0", 3, counts(0, 1, 1, 2, 1)}}};
  const std::vector<exp::RetentionMatrix> runs{a, b};
  const auto m = cli::merge_seeds(runs);
  EXPECT_EQ(m.rows[0][0].pairs, 5u);
  EXPECT_EQ(m.rows[0][0].counts, counts(1, 1, 2, 5, 1));
  b.rows.push_back({});
  const std::vector<exp::RetentionMatrix> uneven{a, b};
  EXPECT_THROW((void)cli::merge_seeds(uneven), exp::ExperimentError);
}

TEST(Report, MalformedRowsAreRejected) {
  EXPECT_THROW((void)cli::rows_from_json(json::parse(R"({"format":"other","rows":[]})")), DataError);
  cli::ReportRow gap{exp::Strategy::Streak, 1, 1, 1, {}};
  const std::vector<cli::ReportRow> rows{gap};
  EXPECT_THROW((void)cli::matrices_from_rows(rows), DataError);
}

TEST(Report, TablesShowEveryStrategy) {
  exp::RetentionMatrix m;
  m.rows = {{{"h0", 4, counts(1, 1, 0, 2, 1)}}, {{"h0", 4, counts(0, 0, 3, 6, 0)}, {"h1", 4, counts(2, 0, 1, 5, 0)}}};
  const std::vector<std::pair<exp::Strategy, exp::RetentionMatrix>> runs{{exp::Strategy::Streak, m},
                                                                         {exp::Strategy::Joint, m}};
  const auto table = cli::retention_table(runs);
  EXPECT_NE(table.find("Moved Correct (%), streak"), std::string::npos);
  EXPECT_NE(table.find("Moved Correct (%), joint"), std::string::npos);
  EXPECT_NE(table.find("66.67"), std::string::npos);
  EXPECT_NE(cli::new_task_table(runs).find("50.00   66.67"), std::string::npos);
}

TEST(Projection, HarmonicGrowthAtOneAndTenSessions) {
  const auto csv = cli::buffer_projection_csv(1000.0, 10.0, 10);
  EXPECT_NE(csv.find("\n1,1100.0000\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("\n10,1292.8968\n"), std::string::npos) << csv;
  EXPECT_EQ(csv.rfind("session,projected\n", 0), 0u);
}

TEST(Projection, MeasuredColumnAlignsOnSession) {
  const std::vector<std::size_t> measured{1000, 1100};
  const auto csv = cli::buffer_projection_csv(1000.0, 10.0, 3, measured);
  EXPECT_EQ(csv, "session,projected,measured\n0,1000.0000,1000\n1,1100.0000,1100\n2,1150.0000,\n3,1183.3333,\n");
}

#ifdef RELOCL_TOOL

namespace {

int run_tool(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(RELOCL_TOOL) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Tool, TinyPipelineResumesAndReports) {
  const auto dir = scratch("tool");
  const auto cfg = dir / "tiny.json";
  cli::write_atomic(cfg, R"({"simulator": {"households": 2, "days": 3, "train_days": 2, "test_days": 1},
                             "model": {"embedding_dim": 4, "rounds": 1, "hidden_dim": 8},
                             "training": {"epochs": 1, "seeds": [0]}})");
  const std::string base = "--config " + cfg.string() + " --out " + (dir / "out").string();
  const auto log = dir / "log.txt";
  ASSERT_EQ(run_tool("simulate " + base, log), 0) << cli::read_file(log);
  const auto first = cli::read_file(dir / "out" / "data" / "household_0.jsonl");
  ASSERT_EQ(run_tool("simulate " + base, log), 0);
  EXPECT_EQ(cli::read_file(dir / "out" / "data" / "household_0.jsonl"), first);

  for (const char* s : {"streak", "finetuned", "joint"}) {
    ASSERT_EQ(run_tool("train " + base + " --strategy " + s, log), 0) << cli::read_file(log);
  }
  const auto ckpts = dir / "out" / "checkpoints";
  ASSERT_TRUE(fs::exists(ckpts / "streak_seed0_ls1.ckpt"));

  const auto resumed = dir / "resumed";
  ASSERT_EQ(run_tool("train " + base + " --checkpoints " + resumed.string() + " --resume " +
                         (ckpts / "streak_seed0_ls0.ckpt").string(),
                     log),
            0)
      << cli::read_file(log);
  const auto a = cli::load_checkpoint(ckpts / "streak_seed0_ls1.ckpt");
  const auto b = cli::load_checkpoint(resumed / "streak_seed0_ls1.ckpt");
  EXPECT_TRUE(exp::same_state(a.state, b.state));
  EXPECT_EQ(a.retention, b.retention);

  ASSERT_EQ(run_tool("evaluate " + base + " --table", log), 0) << cli::read_file(log);
  const auto csv = cli::read_file(dir / "out" / "report.csv");
  EXPECT_EQ(line_count(csv), 1 + 3 * (1 + 2));
  const auto rows = cli::rows_from_json(json::parse(cli::read_file(dir / "out" / "report.json")));
  EXPECT_EQ(rows.size(), 9u);
  EXPECT_EQ(cli::report_csv(rows), csv);
  EXPECT_NE(cli::read_file(log).find("Moved Correct (%), streak"), std::string::npos);

  ASSERT_EQ(run_tool("report " + base, log), 0) << cli::read_file(log);
  EXPECT_NE(cli::read_file(log).find("total"), std::string::npos);

  ASSERT_EQ(run_tool("project-buffer --mean-size 1000 --sessions 10 --ledger " +
                         (dir / "out" / "ledger_streak_seed0.csv").string(),
                     log),
            0)
      << cli::read_file(log);
  EXPECT_NE(cli::read_file(log).find("1,1100.0000,"), std::string::npos);
}

TEST(Tool, ExitCodesFollowTheErrorKind) {
  const auto dir = scratch("tool_errors");
  const auto log = dir / "log.txt";
  cli::write_atomic(dir / "bad.json", R"({"training": {"epoch": 3}})");
  EXPECT_EQ(run_tool("simulate --config " + (dir / "bad.json").string(), log), 2);
  EXPECT_EQ(run_tool("train --strategy complete --out " + dir.string(), log), 2);
  EXPECT_EQ(run_tool("no-such-command", log), 2);
  EXPECT_EQ(run_tool("train --out " + dir.string() + " --data " + (dir / "empty").string(), log), 3);
  cli::write_atomic(dir / "data" / "household_0.jsonl", "{\"format\": \"relocl-snapshots\"}\nnot json\n");
  EXPECT_EQ(run_tool("train --out " + dir.string(), log), 3);
  EXPECT_EQ(run_tool("evaluate --out " + dir.string() + " --checkpoints " + (dir / "none").string(), log), 3);
  EXPECT_EQ(run_tool("project-buffer --mean-size 1000 --sessions 3", log), 0);
  EXPECT_EQ(cli::read_file(log), "session,projected\n0,1000.0000\n1,1100.0000\n2,1150.0000\n3,1183.3333\n");
}

#endif
