#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "einrel/config.hpp"

namespace einrel {

using Cell = std::variant<std::string, double, std::int64_t>;

/// Quotes a field when it holds a comma, quote or line break.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) o += c == '"' ? std::string("\"\"") : std::string(1, c);
  return o + "\"";
}

/// Splits one CSV record written by Table::csv.
inline std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cells.back() += '"', ++i;
      else if (c == '"') quoted = false;
      else cells.back() += c;
    } else if (c == '"') quoted = true;
    else if (c == ',') cells.emplace_back();
    else cells.back() += c;
  }
  return cells;
}

inline std::string format_cell(const Cell& c) {
  if (const auto* s = std::get_if<std::string>(&c)) return csv_field(*s);
  if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  const double d = std::get<double>(c);
  if (std::isnan(d)) return "nan";
  if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", d);
  return buf;
}

inline bool cell_less(const Cell& a, const Cell& b) {
  auto num = [](const Cell& c, double& out) {
    if (const auto* d = std::get_if<double>(&c)) return out = *d, true;
    if (const auto* i = std::get_if<std::int64_t>(&c)) return out = static_cast<double>(*i), true;
    return false;
  };
  double x, y;
  const bool nx = num(a, x), ny = num(b, y);
  if (nx && ny) {
    if (std::isnan(x) || std::isnan(y)) return !std::isnan(x) && std::isnan(y);
    return x < y;
  }
  if (nx != ny) return nx;
  return std::get<std::string>(a) < std::get<std::string>(b);
}

/// CSV table. Rows are sorted before writing and every row gets the config
/// hash as its last column.
struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != columns.size())
      throw std::logic_error("table " + name + ": row has " + std::to_string(row.size()) + " cells, expected " +
                             std::to_string(columns.size()));
    rows.push_back(std::move(row));
  }

  void sort() {
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), cell_less);
    });
  }

  std::string csv(std::uint64_t config_hash) const {
    Table t = *this;
    t.sort();
    std::ostringstream o;
    for (const auto& c : columns) o << c << ",";
    o << "config_hash\n";
    for (const auto& r : t.rows) {
      for (const auto& c : r) o << format_cell(c) << ",";
      o << hex64(config_hash) << "\n";
    }
    return o.str();
  }

  friend bool operator==(const Table&, const Table&) = default;
};

struct Check {
  std::string name;
  bool pass = false;
  double value = std::nan("");
  double threshold = std::nan("");
  std::string detail;

  friend bool operator==(const Check& a, const Check& b) {
    auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    return a.name == b.name && a.pass == b.pass && same(a.value, b.value) && same(a.threshold, b.threshold) &&
           a.detail == b.detail;
  }
};

struct Series {
  std::string label;
  std::vector<double> x, y, err;  // err may be empty

  friend bool operator==(const Series&, const Series&) = default;
};

struct Plot {
  std::string name;
  std::string title;
  std::string xlabel;
  std::string ylabel;
  bool log_y = false;
  std::vector<Series> series;
  std::vector<std::pair<std::string, double>> hlines;

  friend bool operator==(const Plot&, const Plot&) = default;
};

struct SuiteResult {
  std::string suite;
  std::uint64_t config_hash = 0;
  std::uint64_t total_samples = 0;  // simulated paths or draws behind the result
  std::vector<Table> tables;
  std::vector<Check> checks;
  std::vector<Plot> plots;
  std::vector<std::string> warnings;
  bool from_cache = false;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }

  Table summary() const {
    Table t{"summary", {"check", "pass", "value", "threshold", "detail"}, {}};
    for (const auto& c : checks)
      t.add({c.name, std::int64_t{c.pass}, c.value, c.threshold, c.detail});
    return t;
  }
};

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

/// Scatter/line chart with optional error bars and horizontal reference lines.
inline std::string render_svg(const Plot& p) {
  const double W = 640, H = 420, ml = 70, mr = 160, mt = 40, mb = 55;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto ty = [&](double v) { return p.log_y ? std::log10(v) : v; };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : p.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double e = s.err.empty() ? 0.0 : s.err[i];
      const double lo = p.log_y ? std::max(s.y[i] - e, s.y[i] * 0.5) : s.y[i] - e;
      if (!std::isfinite(s.x[i]) || !std::isfinite(ty(s.y[i]))) continue;
      x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(lo)), y1 = std::max(y1, ty(s.y[i] + e));
    }
  for (const auto& [label, v] : p.hlines)
    if (std::isfinite(ty(v))) y0 = std::min(y0, ty(v)), y1 = std::max(y1, ty(v));
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double xpad = 0.05 * (x1 - x0), ypad = 0.08 * (y1 - y0);
  x0 -= xpad, x1 += xpad, y0 -= ypad, y1 += ypad;
  auto sx = [&](double v) { return ml + (v - x0) / (x1 - x0) * pw; };
  auto sy = [&](double v) { return mt + ph - (ty(v) - y0) / (y1 - y0) * ph; };
  auto syt = [&](double t) { return mt + ph - (t - y0) / (y1 - y0) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  std::ostringstream o;
  char buf[256];
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(p.title) << "</text>\n";
  std::snprintf(buf, sizeof buf, "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"black\"/>\n", ml, mt, pw, ph);
  o << buf;
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yt = y0 + (y1 - y0) * k / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.3g</text>\n", sx(xv), mt + ph + 18, xv);
    o << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.3g</text>\n", ml - 6, syt(yt) + 4,
                  p.log_y ? std::pow(10.0, yt) : yt);
    o << buf;
  }
  o << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xml_escape(p.xlabel) << "</text>\n";
  std::snprintf(buf, sizeof buf, "<text transform=\"translate(16,%.1f) rotate(-90)\" text-anchor=\"middle\">", mt + ph / 2);
  o << buf << xml_escape(p.ylabel) << "</text>\n";
  double ly = mt + 10;
  for (std::size_t h = 0; h < p.hlines.size(); ++h) {
    const auto& [label, v] = p.hlines[h];
    if (!std::isfinite(ty(v))) continue;
    std::snprintf(buf, sizeof buf, "<line x1=\"%g\" x2=\"%g\" y1=\"%.1f\" y2=\"%.1f\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n", ml,
                  ml + pw, sy(v), sy(v));
    o << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%.1f\" fill=\"gray\">", ml + pw + 10, ly + 4);
    o << buf << "- - " << xml_escape(label) << "</text>\n";
    ly += 18;
  }
  for (std::size_t si = 0; si < p.series.size(); ++si) {
    const auto& s = p.series[si];
    const char* col = colors[si % 7];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(ty(s.y[i]))) continue;
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", sx(s.x[i]), sy(s.y[i]));
      pts += buf;
      if (!s.err.empty() && s.err[i] > 0) {
        const double lo = p.log_y ? std::max(s.y[i] - s.err[i], s.y[i] * 0.5) : s.y[i] - s.err[i];
        std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" x2=\"%.1f\" y1=\"%.1f\" y2=\"%.1f\" stroke=\"%s\"/>\n", sx(s.x[i]),
                      sx(s.x[i]), sy(lo), sy(s.y[i] + s.err[i]), col);
        o << buf;
      }
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3.5\" fill=\"%s\"/>\n", sx(s.x[i]), sy(s.y[i]), col);
      o << buf;
    }
    o << "<polyline fill=\"none\" stroke=\"" << col << "\" points=\"" << pts << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%.1f\" fill=\"%s\">", ml + pw + 10, ly + 4, col);
    o << buf << "&#9679; " << xml_escape(s.label) << "</text>\n";
    ly += 18;
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

/// Writes <dir>/<table>.csv, <dir>/<plot>.svg, <dir>/summary.csv and the
/// canonical config next to them.
inline void write_suite_outputs(const std::filesystem::path& dir, const SuiteResult& r, const ExperimentConfig& cfg) {
  std::filesystem::create_directories(dir);
  for (const auto& t : r.tables) write_text(dir / (t.name + ".csv"), t.csv(r.config_hash));
  for (const auto& p : r.plots) write_text(dir / (p.name + ".svg"), render_svg(p));
  write_text(dir / "summary.csv", r.summary().csv(r.config_hash));
  write_text(dir / "config.ini", serialize_config(cfg));
}

}  // namespace einrel
