#include "ptrm/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ptrm {

namespace {

constexpr double kWidth = 720, kHeight = 440;
constexpr double kLeft = 70, kRight = 70, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct Range {
  double lo = 0, hi = 1;
};

Range data_range(const std::vector<const std::vector<double>*>& values) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* v : values)
    for (double x : *v)
      if (std::isfinite(x)) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
  if (!std::isfinite(lo)) return {};
  if (hi - lo < 1e-12) {
    const double pad = std::max(std::abs(lo) * 0.1, 0.5);
    return {lo - pad, hi + pad};
  }
  return {lo, hi};
}

double nice_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  const double nice = f < 1.5 ? 1 : f < 3 ? 2 : f < 7 ? 5 : 10;
  return nice * mag;
}

// Expands the range to tick boundaries and returns the ticks.
std::vector<double> ticks_for(Range& r) {
  const double step = nice_step(r.hi - r.lo, 5);
  r.lo = std::floor(r.lo / step) * step;
  r.hi = std::ceil(r.hi / step) * step;
  std::vector<double> out;
  for (double t = r.lo; t <= r.hi + step * 1e-9; t += step) out.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
  return out;
}

std::string tick_label(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

struct Frame {
  Range x, y, y2;
  bool has_y2 = false;
  double px(double v) const { return kLeft + (v - x.lo) / (x.hi - x.lo) * (kWidth - kLeft - kRight); }
  double py(double v, bool secondary = false) const {
    const Range& r = secondary ? y2 : y;
    return kHeight - kBottom - (v - r.lo) / (r.hi - r.lo) * (kHeight - kTop - kBottom);
  }
};

void open_svg(std::ostringstream& s, const std::string& title) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
    << "</text>\n";
}

void draw_axes(std::ostringstream& s, Frame& f, const std::string& xl, const std::string& yl,
               const std::string& y2l) {
  const auto xt = ticks_for(f.x);
  const auto yt = ticks_for(f.y);
  std::vector<double> y2t;
  if (f.has_y2) y2t = ticks_for(f.y2);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  s << "<g stroke=\"#999\" stroke-width=\"1\">\n";
  s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\"/>\n";
  s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\"/>\n";
  if (f.has_y2) s << "<line x1=\"" << x1 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y1 << "\"/>\n";
  s << "</g>\n<g fill=\"#333\">\n";
  for (double t : xt) {
    const double x = f.px(t);
    s << "<line x1=\"" << fmt(x) << "\" y1=\"" << y0 << "\" x2=\"" << fmt(x) << "\" y2=\"" << y0 + 5
      << "\" stroke=\"#999\"/>";
    s << "<text x=\"" << fmt(x) << "\" y=\"" << y0 + 18 << "\" text-anchor=\"middle\">" << tick_label(t)
      << "</text>\n";
  }
  for (double t : yt) {
    const double y = f.py(t);
    s << "<line x1=\"" << x0 << "\" y1=\"" << fmt(y) << "\" x2=\"" << x1 << "\" y2=\"" << fmt(y)
      << "\" stroke=\"#eee\"/>";
    s << "<text x=\"" << x0 - 8 << "\" y=\"" << fmt(y + 4) << "\" text-anchor=\"end\">" << tick_label(t)
      << "</text>\n";
  }
  for (double t : y2t) {
    const double y = f.py(t, true);
    s << "<text x=\"" << x1 + 8 << "\" y=\"" << fmt(y + 4) << "\" text-anchor=\"start\">" << tick_label(t)
      << "</text>\n";
  }
  s << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 18 << "\" text-anchor=\"middle\">" << escape(xl)
    << "</text>\n";
  s << "<text transform=\"translate(18," << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(yl) << "</text>\n";
  if (f.has_y2)
    s << "<text transform=\"translate(" << kWidth - 14 << ',' << (y0 + y1) / 2
      << ") rotate(90)\" text-anchor=\"middle\">" << escape(y2l) << "</text>\n";
  s << "</g>\n";
}

void draw_legend(std::ostringstream& s, const std::vector<std::pair<std::string, std::string>>& entries,
                 const std::vector<bool>& dashed, bool markers) {
  double y = kTop + 8;
  const double x = kLeft + 12;
  s << "<g class=\"legend\">\n";
  for (std::size_t i = 0; i < entries.size(); ++i, y += 16) {
    const auto& [name, color] = entries[i];
    if (markers)
      s << "<rect x=\"" << x + 5 << "\" y=\"" << y - 4 << "\" width=\"8\" height=\"8\" fill=\"" << color << "\"/>";
    else
      s << "<line x1=\"" << x << "\" y1=\"" << y << "\" x2=\"" << x + 18 << "\" y2=\"" << y << "\" stroke=\""
        << color << "\" stroke-width=\"2\"" << (dashed[i] ? " stroke-dasharray=\"5,3\"" : "") << "/>";
    s << "<text x=\"" << x + 24 << "\" y=\"" << y + 4 << "\">" << escape(name) << "</text>\n";
  }
  s << "</g>\n";
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header.size()) throw std::invalid_argument("csv: row width does not match header");
  // Cells are written unquoted, so delimiters inside a cell are refused.
  for (const auto& cell : row)
    if (cell.find_first_of(",\"\r\n") != std::string::npos)
      throw std::invalid_argument("csv: cell '" + cell + "' contains a delimiter");
  rows.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::ostringstream s;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) s << (i ? "," : "") << cells[i];
    s << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return s.str();
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::runtime_error("csv: missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!std::getline(in, line)) throw std::runtime_error("csv: " + path.string() + " is empty");
  t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.add_row(split(line));
  return t;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) { write_text_file(path, table.str()); }

std::string render_svg(const LineChart& chart) {
  Frame f;
  std::vector<const std::vector<double>*> xs, ys, y2s;
  for (const auto& s : chart.series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("chart: series '" + s.name + "' has ragged data");
    xs.push_back(&s.x);
    (s.secondary_axis ? y2s : ys).push_back(&s.y);
    f.has_y2 = f.has_y2 || s.secondary_axis;
  }
  f.x = data_range(xs);
  f.y = data_range(ys);
  if (f.has_y2) f.y2 = data_range(y2s);
  std::ostringstream s;
  open_svg(s, chart.title);
  draw_axes(s, f, chart.x_label, chart.y_label, chart.y2_label);
  std::vector<std::pair<std::string, std::string>> legend;
  std::vector<bool> dashed;
  for (std::size_t i = 0; i < chart.series.size(); ++i) {
    const auto& se = chart.series[i];
    const std::string color = kPalette[i % std::size(kPalette)];
    s << "<polyline class=\"series\" data-name=\"" << escape(se.name) << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2\"" << (se.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (std::size_t k = 0; k < se.x.size(); ++k)
      s << (k ? " " : "") << fmt(f.px(se.x[k])) << ',' << fmt(f.py(se.y[k], se.secondary_axis));
    s << "\"/>\n";
    for (std::size_t k = 0; k < se.x.size(); ++k)
      s << "<circle cx=\"" << fmt(f.px(se.x[k])) << "\" cy=\"" << fmt(f.py(se.y[k], se.secondary_axis))
        << "\" r=\"2.5\" fill=\"" << color << "\"/>";
    s << '\n';
    legend.emplace_back(se.name, color);
    dashed.push_back(se.dashed);
  }
  draw_legend(s, legend, dashed, false);
  s << "</svg>\n";
  return s.str();
}

std::string render_svg(const ScatterChart& chart) {
  Frame f;
  std::vector<const std::vector<double>*> xs, ys;
  for (const auto& g : chart.groups) {
    if (g.x.size() != g.y.size()) throw std::invalid_argument("chart: group '" + g.name + "' has ragged data");
    xs.push_back(&g.x);
    ys.push_back(&g.y);
  }
  f.x = data_range(xs);
  f.y = data_range(ys);
  std::ostringstream s;
  open_svg(s, chart.title);
  draw_axes(s, f, chart.x_label, chart.y_label, "");
  std::vector<std::pair<std::string, std::string>> legend;
  for (std::size_t i = 0; i < chart.groups.size(); ++i) {
    const auto& g = chart.groups[i];
    const std::string color = g.color.empty() ? kPalette[i % std::size(kPalette)] : g.color;
    s << "<g class=\"group\" data-name=\"" << escape(g.name) << "\" fill=\"" << color << "\" fill-opacity=\"0.7\">\n";
    for (std::size_t k = 0; k < g.x.size(); ++k)
      s << "<circle cx=\"" << fmt(f.px(g.x[k])) << "\" cy=\"" << fmt(f.py(g.y[k])) << "\" r=\"3\"/>";
    s << "\n</g>\n";
    legend.emplace_back(g.name, color);
  }
  draw_legend(s, legend, std::vector<bool>(legend.size(), false), true);
  s << "</svg>\n";
  return s.str();
}

}  // namespace ptrm
