// Report rendering: retention CSV/JSON, plain-text tables and buffer
// projection data.
#ifndef RELOCL_CLI_REPORT_HPP
#define RELOCL_CLI_REPORT_HPP

#include "relocl/experiment/experiment.hpp"

#include "json.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace relocl::cli {

// One cell of a retention matrix: the model trained through session
// `trained_through`, scored on the test split of dataset `test_dataset`.
struct ReportRow {
  exp::Strategy strategy = exp::Strategy::Streak;
  int trained_through = 0;
  int test_dataset = 0;
  std::size_t pairs = 0;
  exp::OutcomeCounts counts;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

// Cell-wise sum of outcome counts over seeds; all matrices must share a shape.
exp::RetentionMatrix merge_seeds(std::span<const exp::RetentionMatrix> runs);

std::vector<ReportRow> report_rows(exp::Strategy strategy, const exp::RetentionMatrix& m);

// Columns: strategy, trained_through, test_dataset, then the five outcome
// percentages with two decimals.
std::string report_csv(std::span<const ReportRow> rows);
nlohmann::json report_json(std::span<const ReportRow> rows);
std::vector<ReportRow> rows_from_json(const nlohmann::json& j);  // throws DataError

// Rebuilds per-strategy matrices from report rows, in first-seen strategy order.
std::vector<std::pair<exp::Strategy, exp::RetentionMatrix>> matrices_from_rows(std::span<const ReportRow> rows);

// Moved Correct per (trained through D_k, tested on D_j) for each strategy.
std::string retention_table(std::span<const std::pair<exp::Strategy, exp::RetentionMatrix>> runs);
// Moved Correct on the newest dataset after each session, one line per strategy.
std::string new_task_table(std::span<const std::pair<exp::Strategy, exp::RetentionMatrix>> runs);
// Per-session CPU seconds and training samples, one block per strategy.
std::string efficiency_table(std::span<const std::pair<exp::Strategy, exp::EfficiencyReport>> runs);

// CSV "session,projected[,measured]" for sessions 0..n.
std::string buffer_projection_csv(double mean_size, double beta, int sessions,
                                  std::span<const std::size_t> measured = {});

}  // namespace relocl::cli

#endif  // RELOCL_CLI_REPORT_HPP
