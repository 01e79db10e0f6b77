#include "relocl/cli/report.hpp"

#include "relocl/cli/config.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace relocl::cli {

using nlohmann::json;

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string dataset_label(int j) { return "D" + std::to_string(j); }

}  // namespace

exp::RetentionMatrix merge_seeds(std::span<const exp::RetentionMatrix> runs) {
  if (runs.empty()) throw exp::ExperimentError("merge_seeds: no runs");
  exp::RetentionMatrix out = runs.front();
  for (std::size_t r = 1; r < runs.size(); ++r) {
    const auto& m = runs[r];
    if (m.rows.size() != out.rows.size()) throw exp::ExperimentError("merge_seeds: matrices differ in shape");
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
      if (m.rows[i].size() != out.rows[i].size()) throw exp::ExperimentError("merge_seeds: matrices differ in shape");
      for (std::size_t j = 0; j < m.rows[i].size(); ++j) {
        out.rows[i][j].pairs += m.rows[i][j].pairs;
        out.rows[i][j].counts += m.rows[i][j].counts;
      }
    }
  }
  return out;
}

std::vector<ReportRow> report_rows(exp::Strategy strategy, const exp::RetentionMatrix& m) {
  std::vector<ReportRow> rows;
  for (std::size_t k = 0; k < m.rows.size(); ++k) {
    for (std::size_t j = 0; j < m.rows[k].size(); ++j) {
      rows.push_back({strategy, static_cast<int>(k), static_cast<int>(j), m.rows[k][j].pairs, m.rows[k][j].counts});
    }
  }
  return rows;
}

std::string report_csv(std::span<const ReportRow> rows) {
  std::string out =
      "strategy,trained_through,test_dataset,moved_correct,moved_wrong,moved_missed,unmoved_correct,unmoved_wrong\n";
  for (const auto& r : rows) {
    const auto p = exp::percentages(r.counts);
    out += std::string(exp::to_string(r.strategy)) + "," + dataset_label(r.trained_through) + "," +
           dataset_label(r.test_dataset) + "," + fixed(p.moved_correct, 2) + "," + fixed(p.moved_wrong, 2) + "," +
           fixed(p.moved_missed, 2) + "," + fixed(p.unmoved_correct, 2) + "," + fixed(p.unmoved_wrong, 2) + "\n";
  }
  return out;
}

json report_json(std::span<const ReportRow> rows) {
  json a = json::array();
  for (const auto& r : rows) {
    a.push_back({{"strategy", exp::to_string(r.strategy)},
                 {"trained_through", r.trained_through},
                 {"test_dataset", r.test_dataset},
                 {"pairs", r.pairs},
                 {"moved_correct", r.counts.moved_correct},
                 {"moved_wrong", r.counts.moved_wrong},
                 {"moved_missed", r.counts.moved_missed},
                 {"unmoved_correct", r.counts.unmoved_correct},
                 {"unmoved_wrong", r.counts.unmoved_wrong}});
  }
  return {{"format", "relocl-report"}, {"version", 1}, {"rows", a}};
}

std::vector<ReportRow> rows_from_json(const json& j) {
  std::vector<ReportRow> rows;
  try {
    if (j.at("format").get<std::string>() != "relocl-report") throw DataError("not a report file");
    for (const auto& r : j.at("rows")) {
      ReportRow x;
      x.strategy = exp::parse_strategy(r.at("strategy").get<std::string>());
      x.trained_through = r.at("trained_through").get<int>();
      x.test_dataset = r.at("test_dataset").get<int>();
      x.pairs = r.at("pairs").get<std::size_t>();
      x.counts.moved_correct = r.at("moved_correct").get<std::size_t>();
      x.counts.moved_wrong = r.at("moved_wrong").get<std::size_t>();
      x.counts.moved_missed = r.at("moved_missed").get<std::size_t>();
      x.counts.unmoved_correct = r.at("unmoved_correct").get<std::size_t>();
      x.counts.unmoved_wrong = r.at("unmoved_wrong").get<std::size_t>();
      rows.push_back(x);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad report: ") + e.what());
  } catch (const exp::ExperimentError& e) {
    throw DataError(std::string("bad report: ") + e.what());
  }
  return rows;
}

std::vector<std::pair<exp::Strategy, exp::RetentionMatrix>> matrices_from_rows(std::span<const ReportRow> rows) {
  std::vector<std::pair<exp::Strategy, exp::RetentionMatrix>> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == r.strategy; });
    if (it == out.end()) {
      out.push_back({r.strategy, {}});
      it = std::prev(out.end());
    }
    auto& m = it->second;
    if (r.trained_through < 0 || r.test_dataset < 0 || r.test_dataset > r.trained_through) {
      throw DataError("report row outside the lower triangle");
    }
    const auto k = static_cast<std::size_t>(r.trained_through);
    if (m.rows.size() <= k) m.rows.resize(k + 1);
    auto& row = m.rows[k];
    if (row.size() != static_cast<std::size_t>(r.test_dataset)) throw DataError("report rows are out of order");
    row.push_back({dataset_label(r.test_dataset), r.pairs, r.counts});
  }
  for (const auto& [s, m] : out) {
    for (std::size_t k = 0; k < m.rows.size(); ++k) {
      if (m.rows[k].size() != k + 1) throw DataError(std::string("incomplete retention matrix for ") + exp::to_string(s));
    }
  }
  return out;
}

std::string retention_table(std::span<const std::pair<exp::Strategy, exp::RetentionMatrix>> runs) {
  std::ostringstream out;
  for (const auto& [strategy, m] : runs) {
    const std::size_t n = m.rows.size();
    out << "Moved Correct (%), " << exp::to_string(strategy) << "\n";
    out << pad("trained up to", 14);
    for (std::size_t j = 0; j < n; ++j) out << pad(dataset_label(static_cast<int>(j)), 8);
    out << "\n";
    for (std::size_t k = 0; k < n; ++k) {
      out << pad(dataset_label(static_cast<int>(k)), 14);
      for (std::size_t j = 0; j < n; ++j) {
        out << pad(j <= k ? fixed(m.moved_correct(static_cast<int>(k), static_cast<int>(j)), 2) : "-", 8);
      }
      out << "\n";
    }
    if (n > 0) out << "retention " << fixed(m.retention(), 2) << "\n";
    out << "\n";
  }
  return out.str();
}

std::string new_task_table(std::span<const std::pair<exp::Strategy, exp::RetentionMatrix>> runs) {
  std::size_t n = 0;
  for (const auto& r : runs) n = std::max(n, r.second.rows.size());
  std::ostringstream out;
  out << "Moved Correct (%) on the newest dataset\n" << pad("strategy", 10);
  for (std::size_t k = 0; k < n; ++k) out << pad(dataset_label(static_cast<int>(k)), 8);
  out << "\n";
  for (const auto& [strategy, m] : runs) {
    out << pad(exp::to_string(strategy), 10);
    for (double v : exp::new_task_report(m)) out << pad(fixed(v, 2), 8);
    out << "\n";
  }
  return out.str();
}

std::string efficiency_table(std::span<const std::pair<exp::Strategy, exp::EfficiencyReport>> runs) {
  std::ostringstream out;
  out << pad("strategy", 10) << pad("session", 9) << pad("cpu_s", 10) << pad("samples", 10) << "\n";
  for (const auto& [strategy, e] : runs) {
    for (std::size_t k = 0; k < e.samples.size(); ++k) {
      out << pad(exp::to_string(strategy), 10) << pad("LS" + std::to_string(k), 9) << pad(fixed(e.cpu_seconds[k], 2), 10)
          << pad(std::to_string(e.samples[k]), 10) << "\n";
    }
    out << pad(exp::to_string(strategy), 10) << pad("total", 9) << pad(fixed(e.total_seconds, 2), 10)
        << pad(std::to_string(e.total_samples), 10) << "\n";
  }
  return out.str();
}

std::string buffer_projection_csv(double mean_size, double beta, int sessions, std::span<const std::size_t> measured) {
  const auto projected = cl::buffer_size_forecast(mean_size, beta, sessions);
  std::string out = measured.empty() ? "session,projected\n" : "session,projected,measured\n";
  for (std::size_t k = 0; k < projected.size(); ++k) {
    out += std::to_string(k) + "," + fixed(projected[k], 4);
    if (!measured.empty()) out += "," + (k < measured.size() ? std::to_string(measured[k]) : std::string());
    out += "\n";
  }
  return out;
}

}  // namespace relocl::cli
