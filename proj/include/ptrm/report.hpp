#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ptrm {

/// Shortest round-trip decimal form of a double; identical bytes for
/// identical values.
std::string format_number(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::string str() const;
  std::size_t column(const std::string& name) const;  // throws if absent
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
void write_text_file(const std::filesystem::path& path, const std::string& text);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
  bool secondary_axis = false;  // plotted against the right-hand axis
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::string y2_label;  // only drawn when some series uses the secondary axis
  std::vector<Series> series;
};

struct ScatterGroup {
  std::string name;
  std::string color;  // empty: palette
  std::vector<double> x;
  std::vector<double> y;
};

struct ScatterChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<ScatterGroup> groups;
};

/// Self-contained SVG documents with axes, ticks and a legend.
std::string render_svg(const LineChart& chart);
std::string render_svg(const ScatterChart& chart);

}  // namespace ptrm
