#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace circuitprobe {

/// Provenance block written as `# key=value` lines at the top of every
/// output file.
struct RunHeader {
  std::string command;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string weights_checksum;
  std::vector<std::pair<std::string, std::string>> extra;
};

std::string render_header(const RunHeader& header);

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns);

  void add_row(std::vector<std::string> cells);
  std::size_t rows() const noexcept { return rows_.size(); }
  const std::vector<std::string>& columns() const noexcept { return columns_; }

  std::string str() const;
  /// Header comment block followed by the table.
  void write(const std::filesystem::path& path, const RunHeader& header) const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

/// Shortest round-trip formatting; "nan" for non-finite values.
std::string fmt(double value);

struct HeatmapSpec {
  std::string title;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<double>> values;  // [row][col]; NaN cells drawn grey
  bool diverging = true;                    // blue-white-red around 0
};

std::string heatmap_svg(const HeatmapSpec& spec);

struct LineSeries {
  std::string name;
  std::vector<double> ys;
};

std::string line_chart_svg(const std::string& title, const std::vector<std::string>& x_labels,
                           const std::vector<LineSeries>& series);

}  // namespace circuitprobe
