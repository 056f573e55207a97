#include "unirep/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "unirep/errors.hpp"

namespace unirep {

using nlohmann::json;

void ResultsTable::compute_deltas(const std::string& baseline) {
  const TableRow& base = row(baseline);
  std::vector<TaskResult> b;
  for (std::size_t i = 0; i < columns.size(); ++i) b.push_back({columns[i].task, base.values.at(i), columns[i].lower_is_better});
  for (auto& r : rows) {
    if (r.values.size() != columns.size()) throw ConfigError("row '" + r.method + "' has the wrong number of values");
    std::vector<TaskResult> res;
    for (std::size_t i = 0; i < columns.size(); ++i) res.push_back({columns[i].task, r.values[i], columns[i].lower_is_better});
    r.delta = delta_mtl(res, b);
  }
}

const TableRow& ResultsTable::row(const std::string& method) const {
  for (const auto& r : rows)
    if (r.method == method) return r;
  throw ConfigError("table has no row '" + method + "'");
}

ResultsTable table_from_json(const json& j) {
  ResultsTable t;
  t.title = j.value("title", "");
  t.delta_name = j.value("delta_name", "dMTL");
  for (const auto& c : j.at("tasks")) {
    t.columns.push_back({c.at("id").get<std::string>(), c.value("metric", ""), c.at("lower_is_better").get<bool>()});
  }
  for (const auto& r : j.at("rows")) t.rows.push_back({r.at("name").get<std::string>(), r.at("values").get<std::vector<double>>(), {}});
  if (j.contains("baseline")) t.compute_deltas(j.at("baseline").get<std::string>());
  return t;
}

json table_to_json(const ResultsTable& t) {
  json tasks = json::array(), rows = json::array();
  for (const auto& c : t.columns) tasks.push_back({{"id", c.task}, {"metric", c.metric}, {"lower_is_better", c.lower_is_better}});
  for (const auto& r : t.rows) {
    json jr = {{"name", r.method}, {"values", r.values}};
    if (r.delta) jr["delta"] = *r.delta;
    rows.push_back(jr);
  }
  return {{"title", t.title}, {"delta_name", t.delta_name}, {"tasks", tasks}, {"rows", rows}};
}

std::string format_signed(double v, int decimals) {
  std::ostringstream os;
  const double r = std::round(v * std::pow(10.0, decimals)) / std::pow(10.0, decimals);
  os << (r >= 0 ? "+" : "-") << std::fixed << std::setprecision(decimals) << std::abs(r);
  return os.str();
}

namespace {

std::string format_value(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(std::abs(v) < 1.0 ? 4 : 2) << v;
  return os.str();
}

std::string header_of(const TableColumn& c) {
  return c.task + (c.metric.empty() ? "" : " " + c.metric) + (c.lower_is_better ? " (lower)" : " (higher)");
}

}  // namespace

std::string format_text_table(const ResultsTable& t) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> head{"method"};
  for (const auto& c : t.columns) head.push_back(header_of(c));
  head.push_back(t.delta_name + " (%)");
  cells.push_back(head);
  for (const auto& r : t.rows) {
    std::vector<std::string> line{r.method};
    for (double v : r.values) line.push_back(format_value(v));
    line.push_back(r.delta ? format_signed(*r.delta) : "");
    cells.push_back(line);
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream os;
  if (!t.title.empty()) os << t.title << '\n';
  for (std::size_t li = 0; li < cells.size(); ++li) {
    for (std::size_t i = 0; i < cells[li].size(); ++i) {
      if (i == 0) os << std::left << std::setw(static_cast<int>(width[i])) << cells[li][i];
      else os << "  " << std::right << std::setw(static_cast<int>(width[i])) << cells[li][i];
    }
    os << '\n';
    if (li == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

std::string format_csv(const ResultsTable& t) {
  std::ostringstream os;
  os << "method";
  for (const auto& c : t.columns) os << ',' << c.task;
  os << ',' << t.delta_name << '\n';
  os << std::setprecision(10);
  for (const auto& r : t.rows) {
    os << r.method;
    for (double v : r.values) os << ',' << v;
    os << ',';
    if (r.delta) os << *r.delta;
    os << '\n';
  }
  return os.str();
}

namespace {

constexpr int kW = 720, kH = 420, kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

std::string svg_line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label, bool log_y) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  auto ty = [&](double y) { return log_y ? std::log10(std::max(y, 1e-12)) : y; };
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, ty(y));
      y1 = std::max(y1, ty(y));
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n";
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fy = y0 + (y1 - y0) * i / 4.0, fx = x0 + (x1 - x0) * i / 4.0;
    const double yy = kTop + (1.0 - i / 4.0) * ph, xx = kLeft + i / 4.0 * pw;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << yy + 4 << "\" text-anchor=\"end\">" << num(log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
    os << "<text x=\"" << xx << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << num(fx) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">" << esc(x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << kTop + ph / 2 << ")\">"
     << esc(y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % (sizeof kColors / sizeof *kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
    for (const auto& [x, y] : series[i].points)
      if (std::isfinite(y)) os << num(px(x)) << ',' << num(py(y)) << ' ';
    os << "\"/>\n";
    const double ly = kTop + 14 + 18.0 * static_cast<double>(i);
    os << "<line x1=\"" << kW - kRight + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << kW - kRight + 32 << "\" y2=\"" << ly - 4
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kW - kRight + 38 << "\" y=\"" << ly << "\">" << esc(series[i].name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_bar_chart(const std::vector<std::pair<std::string, double>>& bars, const std::string& title,
                          const std::string& y_label) {
  double lo = 0.0, hi = 0.0;
  for (const auto& [n, v] : bars) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) hi = lo + 1;
  const double pad = 0.1 * (hi - lo);
  hi += pad;
  lo -= lo < 0 ? pad : 0.0;
  const double pw = kW - kLeft - 40, ph = kH - kTop - kBottom;
  auto py = [&](double v) { return kTop + (hi - v) / (hi - lo) * ph; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << py(0) << "\" x2=\"" << kLeft + pw << "\" y2=\"" << py(0) << "\" stroke=\"black\"/>\n";
  os << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << kTop + ph / 2 << ")\">"
     << esc(y_label) << "</text>\n";
  const double slot = bars.empty() ? pw : pw / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& [name, v] = bars[i];
    const double x = kLeft + slot * static_cast<double>(i) + slot * 0.15;
    const double top = std::min(py(v), py(0)), h = std::abs(py(v) - py(0));
    os << "<rect x=\"" << num(x) << "\" y=\"" << num(top) << "\" width=\"" << num(slot * 0.7) << "\" height=\"" << num(h)
       << "\" fill=\"" << (v >= 0 ? "#2ca02c" : "#d62728") << "\"/>\n";
    os << "<text x=\"" << num(x + slot * 0.35) << "\" y=\"" << num(v >= 0 ? top - 4 : top + h + 14)
       << "\" text-anchor=\"middle\">" << format_signed(v) << "</text>\n";
    os << "<text x=\"" << num(x + slot * 0.35) << "\" y=\"" << kH - 18 << "\" text-anchor=\"middle\">" << esc(name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace unirep
