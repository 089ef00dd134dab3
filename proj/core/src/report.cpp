#include "circuitprobe/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "circuitprobe/error.hpp"
#include "circuitprobe/text_io.hpp"

namespace circuitprobe {

namespace {

std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string rgb(double r, double g, double b) {
  auto c = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255)); };
  std::ostringstream s;
  s << "rgb(" << c(r) << ',' << c(g) << ',' << c(b) << ')';
  return s.str();
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string render_header(const RunHeader& h) {
  std::ostringstream out;
  out << "# command=" << h.command << '\n'
      << "# seed=" << h.seed << '\n'
      << "# config_hash=" << h.config_hash << '\n'
      << "# weights_checksum=" << h.weights_checksum << '\n';
  for (const auto& [k, v] : h.extra) out << "# " << k << '=' << v << '\n';
  return out.str();
}

CsvTable::CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

void CsvTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != columns_.size())
    throw ShapeError("csv: row has " + std::to_string(cells.size()) + " cells, expected " +
                     std::to_string(columns_.size()));
  rows_.push_back(std::move(cells));
}

std::string CsvTable::str() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(cells[i]);
    }
    out += '\n';
  };
  line(columns_);
  for (const auto& r : rows_) line(r);
  return out;
}

void CsvTable::write(const std::filesystem::path& path, const RunHeader& header) const {
  write_text_file(path, render_header(header) + str());
}

std::string fmt(double value) {
  if (!std::isfinite(value)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string heatmap_svg(const HeatmapSpec& spec) {
  constexpr int kCell = 28, kLeft = 70, kTop = 50, kRight = 90;
  const int rows = static_cast<int>(spec.values.size());
  const int cols = rows ? static_cast<int>(spec.values.front().size()) : 0;
  for (const auto& r : spec.values)
    if (static_cast<int>(r.size()) != cols) throw ShapeError("heatmap: ragged value grid");
  if ((!spec.row_labels.empty() && static_cast<int>(spec.row_labels.size()) != rows) ||
      (!spec.col_labels.empty() && static_cast<int>(spec.col_labels.size()) != cols))
    throw ShapeError("heatmap: labels do not match the value grid");
  double lo = 0.0, hi = 0.0;
  for (const auto& r : spec.values)
    for (double v : r)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  const double span = std::max(std::abs(lo), std::abs(hi));
  auto color = [&](double v) {
    if (!std::isfinite(v)) return std::string("#cccccc");
    if (spec.diverging) {
      const double t = span > 0 ? v / span : 0.0;
      return t >= 0 ? rgb(1.0, 1.0 - t, 1.0 - t) : rgb(1.0 + t, 1.0 + t, 1.0);
    }
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    return rgb(1.0 - 0.8 * t, 1.0 - 0.6 * t, 1.0 - 0.2 * t);
  };

  const int width = kLeft + cols * kCell + kRight;
  const int height = kTop + rows * kCell + 20;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  s << "<text x=\"" << width / 2 << "\" y=\"16\" text-anchor=\"middle\" font-size=\"13\">"
    << xml_escape(spec.title) << "</text>\n";
  for (int c = 0; c < cols; ++c) {
    const std::string label = c < static_cast<int>(spec.col_labels.size()) ? spec.col_labels[c] : "";
    s << "<text x=\"" << kLeft + c * kCell + kCell / 2 << "\" y=\"" << kTop - 6
      << "\" text-anchor=\"middle\">" << xml_escape(label) << "</text>\n";
  }
  for (int r = 0; r < rows; ++r) {
    const std::string label = r < static_cast<int>(spec.row_labels.size()) ? spec.row_labels[r] : "";
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << kTop + r * kCell + kCell / 2 + 4
      << "\" text-anchor=\"end\">" << xml_escape(label) << "</text>\n";
    for (int c = 0; c < cols; ++c) {
      const double v = spec.values[r][c];
      s << "<rect x=\"" << kLeft + c * kCell << "\" y=\"" << kTop + r * kCell << "\" width=\""
        << kCell << "\" height=\"" << kCell << "\" fill=\"" << color(v)
        << "\" stroke=\"#ffffff\"><title>" << xml_escape(label) << ' '
        << (c < static_cast<int>(spec.col_labels.size()) ? xml_escape(spec.col_labels[c]) : "")
        << ": " << fmt(v) << "</title></rect>\n";
    }
  }
  const int lx = kLeft + cols * kCell + 20;
  s << "<text x=\"" << lx << "\" y=\"" << kTop + 10 << "\">max " << fmt(spec.diverging ? span : hi)
    << "</text>\n<text x=\"" << lx << "\" y=\"" << kTop + 24 << "\">min "
    << fmt(spec.diverging ? -span : lo) << "</text>\n</svg>\n";
  return s.str();
}

std::string line_chart_svg(const std::string& title, const std::vector<std::string>& x_labels,
                           const std::vector<LineSeries>& series) {
  constexpr int kW = 640, kH = 360, kL = 60, kR = 150, kT = 40, kB = 40;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  std::size_t npts = x_labels.size();
  for (const auto& ser : series) {
    npts = std::max(npts, ser.ys.size());
    for (double v : ser.ys) {
      if (!std::isfinite(v)) continue;
      if (first) lo = hi = v, first = false;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi <= lo) hi = lo + 1.0;
  const double plot_w = kW - kL - kR, plot_h = kH - kT - kB;
  auto px = [&](std::size_t i) {
    return kL + (npts > 1 ? plot_w * static_cast<double>(i) / static_cast<double>(npts - 1) : 0.0);
  };
  auto py = [&](double v) { return kT + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  s << "<text x=\"" << kW / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
    << xml_escape(title) << "</text>\n";
  s << "<line x1=\"" << kL << "\" y1=\"" << kT + plot_h << "\" x2=\"" << kL + plot_w << "\" y2=\""
    << kT + plot_h << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kT + plot_h
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << kL - 4 << "\" y=\"" << kT + 4 << "\" text-anchor=\"end\">" << fmt(hi)
    << "</text>\n<text x=\"" << kL - 4 << "\" y=\"" << kT + plot_h << "\" text-anchor=\"end\">"
    << fmt(lo) << "</text>\n";
  for (std::size_t i = 0; i < x_labels.size(); ++i)
    s << "<text x=\"" << px(i) << "\" y=\"" << kT + plot_h + 14 << "\" text-anchor=\"middle\">"
      << xml_escape(x_labels[i]) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* colour = kPalette[k % std::size(kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[k].ys.size(); ++i)
      if (std::isfinite(series[k].ys[i])) s << px(i) << ',' << py(series[k].ys[i]) << ' ';
    s << "\"/>\n<text x=\"" << kL + plot_w + 10 << "\" y=\"" << kT + 12 * static_cast<int>(k) + 8
      << "\" fill=\"" << colour << "\">" << xml_escape(series[k].name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace circuitprobe
