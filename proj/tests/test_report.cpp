#include <doctest.h>

#include <fstream>
#include <regex>

#include "ptrm/report.hpp"
#include "test_util.hpp"

using namespace ptrm;
using ptrm::testing::TempDir;

namespace {

std::size_t count(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_SUITE("report") {
  TEST_CASE("numbers print in shortest round-trip form") {
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(3.0) == "3");
    CHECK(format_number(-0.25) == "-0.25");
    CHECK(format_number(1e-20) == "1e-20");
    CHECK(std::stod(format_number(2.0 / 3.0)) == 2.0 / 3.0);
    CHECK(format_number(std::nan("")) == "nan");
  }

  TEST_CASE("csv round trip and column lookup") {
    CsvTable t;
    t.header = {"sigma", "pass", "note"};
    t.add_row({"0.1", "0.5", ""});
    t.add_row({"0.2", "0.75", "x"});
    CHECK(t.str() == "sigma,pass,note\n0.1,0.5,\n0.2,0.75,x\n");
    TempDir tmp("csv");
    write_csv(tmp / "t.csv", t);
    const auto back = read_csv(tmp / "t.csv");
    CHECK(back.header == t.header);
    CHECK(back.rows == t.rows);
    CHECK(back.column("pass") == 1);
    CHECK_THROWS(back.column("missing"));
    CHECK_THROWS_AS(t.add_row({"1"}), std::invalid_argument);
    CHECK_THROWS_AS(t.add_row({"1", "2,3", "x"}), std::invalid_argument);
  }

  TEST_CASE("line chart has one polyline per series and escapes labels") {
    LineChart chart{"A & B", "sigma", "accuracy", "", {}};
    chart.series.push_back({"pass@K", {0, 0.5, 1}, {0.2, 0.4, 0.3}});
    chart.series.push_back({"best-Q<K>", {0, 0.5, 1}, {0.1, 0.3, 0.2}, true});
    chart.series.push_back({"mode@K", {0, 0.5, 1}, {0.1, 0.2, 0.2}, false, true});
    const auto svg = render_svg(chart);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(count(svg, "class=\"series\"") == 3);
    CHECK(svg.find("A &amp; B") != std::string::npos);
    CHECK(svg.find("best-Q&lt;K&gt;") != std::string::npos);
    CHECK(svg.find("stroke-dasharray") != std::string::npos);
    CHECK(svg == render_svg(chart));
  }

  TEST_CASE("scatter chart groups points and tolerates degenerate data") {
    ScatterChart chart{"pca", "PC1", "PC2", {}};
    chart.groups.push_back({"correct", "#2ca02c", {1, 2}, {3, 4}});
    chart.groups.push_back({"incorrect", "", {1}, {1}});
    const auto svg = render_svg(chart);
    CHECK(count(svg, "class=\"group\"") == 2);
    CHECK(count(svg, "<circle") == 3);
    ScatterChart empty{"empty", "x", "y", {}};
    CHECK_NOTHROW(render_svg(empty));
    LineChart flat{"flat", "x", "y", "", {{"s", {1, 1}, {2, 2}}}};
    CHECK(render_svg(flat).find("nan") == std::string::npos);
  }
}
