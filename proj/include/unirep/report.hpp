#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "unirep/metrics.hpp"

namespace unirep {

struct TableColumn {
  std::string task;
  std::string metric;
  bool lower_is_better = false;
};

struct TableRow {
  std::string method;
  std::vector<double> values;  // aligned with columns
  std::optional<double> delta;  // aggregate score versus the baseline row
};

/// Per-task metrics with one aggregate column, baseline row first.
struct ResultsTable {
  std::string title;
  std::vector<TableColumn> columns;
  std::vector<TableRow> rows;
  std::string delta_name = "dMTL";

  /// Fills `delta` of every row against the row named `baseline`.
  void compute_deltas(const std::string& baseline);
  const TableRow& row(const std::string& method) const;
};

/// Fixture / results document: {"title", "tasks": [{id, metric,
/// lower_is_better}], "baseline": name, "rows": [{name, values}]}.
ResultsTable table_from_json(const nlohmann::json& j);
nlohmann::json table_to_json(const ResultsTable& t);

std::string format_signed(double v, int decimals = 2);
std::string format_text_table(const ResultsTable& t);
std::string format_csv(const ResultsTable& t);

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Static SVG documents (no external renderer needed).
std::string svg_line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label, bool log_y = false);
std::string svg_bar_chart(const std::vector<std::pair<std::string, double>>& bars, const std::string& title,
                          const std::string& y_label);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace unirep
