#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "circuitprobe/error.hpp"
#include "circuitprobe/report.hpp"
#include "circuitprobe/text_io.hpp"

using namespace circuitprobe;

namespace {

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("run header and csv") {
  RunHeader h{"patch --mode path", 7, "abc", "def", {{"pairs", "3"}}};
  const auto text = render_header(h);
  CHECK(text == "# command=patch --mode path\n# seed=7\n# config_hash=abc\n# weights_checksum=def\n# pairs=3\n");

  CsvTable t({"name", "value"});
  t.add_row({"plain", "1"});
  t.add_row({"with,comma", "say \"hi\""});
  CHECK(t.str() == "name,value\nplain,1\n\"with,comma\",\"say \"\"hi\"\"\"\n");
  CHECK_THROWS_AS(t.add_row({"one"}), ShapeError);

  const auto path = std::filesystem::temp_directory_path() / "cp_report.csv";
  t.write(path, h);
  const auto lines = read_lines(path);
  CHECK(lines[0] == "# command=patch --mode path");
  CHECK(read_data_lines(path).size() == 3);
}

TEST_CASE("number formatting round-trips") {
  CHECK(fmt(0.1) == "0.1");
  CHECK(std::stod(fmt(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(fmt(std::nan("")) == "nan");
  CHECK(fmt(-2.0) == "-2");
}

TEST_CASE("svg output") {
  HeatmapSpec spec{"effects", {"r0", "r1"}, {"c0", "c1", "c2"}, {{1, -1, 0}, {0.5, std::nan(""), 2}}, true};
  const auto svg = heatmap_svg(spec);
  CHECK(svg.starts_with("<svg"));
  CHECK(count(svg, "<rect") >= 6);
  CHECK(svg.find("effects") != std::string::npos);
  HeatmapSpec bad = spec;
  bad.values.pop_back();
  CHECK_THROWS(heatmap_svg(bad));

  const auto chart = line_chart_svg("curve <k>", {"0", "1", "2"}, {{"a", {0, 1, 2}}, {"b", {2, 1, 0}}});
  CHECK(count(chart, "<polyline") == 2);
  CHECK(chart.find("curve &lt;k&gt;") != std::string::npos);
}

TEST_CASE("text helpers") {
  CHECK(split("a\tb\t", '\t').size() == 3);
  CHECK(trim("  x y \n") == "x y");
  CHECK(to_lower_ascii("QuEbEc") == "quebec");
  CHECK(fnv1a("") == kFnvOffset);
  CHECK(fnv1a("a") != fnv1a("b"));
  CHECK(hex64(255) == "00000000000000ff");
}
