#pragma once

#include "volume.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace calibless::report {

inline std::string fmt(double v, int precision = 6)
{
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

inline std::string xml_escape(std::string const &s)
{
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

inline void write_text(std::filesystem::path const &p, std::string const &text)
{
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

/// Vertical bar chart; bars are clipped to [lo, hi].
inline std::string svg_bars(std::string const &title, std::vector<std::string> const &labels,
                            std::vector<double> const &values, double lo, double hi)
{
  require(labels.size() == values.size(), "svg_bars: labels and values differ in length");
  require(hi > lo, "svg_bars: empty value range");
  double const bw = 36, gap = 12, left = 56, top = 40, ph = 220;
  double const width = left + static_cast<double>(values.size()) * (bw + gap) + gap + 20;
  double const height = top + ph + 90;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" + fmt(height) +
                  "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(left) + "\" y=\"22\" font-size=\"14\">" + xml_escape(title) + "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    double const v = lo + (hi - lo) * t / 4.0;
    double const y = top + ph - ph * t / 4.0;
    s += "<line x1=\"" + fmt(left) + "\" x2=\"" + fmt(width - 10) + "\" y1=\"" + fmt(y) + "\" y2=\"" + fmt(y) +
         "\" stroke=\"#ddd\"/>\n";
    s += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(y + 4) + "\" text-anchor=\"end\">" + fmt(v, 3) + "</text>\n";
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    double const v = std::clamp(std::isfinite(values[i]) ? values[i] : hi, lo, hi);
    double const h = ph * (v - lo) / (hi - lo);
    double const x = left + gap + static_cast<double>(i) * (bw + gap);
    s += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(top + ph - h) + "\" width=\"" + fmt(bw) + "\" height=\"" + fmt(h) +
         "\" fill=\"#4a78b5\"><title>" + xml_escape(labels[i]) + ": " + fmt(values[i], 4) + "</title></rect>\n";
    s += "<text transform=\"translate(" + fmt(x + bw / 2) + "," + fmt(top + ph + 12) +
         ") rotate(40)\">" + xml_escape(labels[i]) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

/// Grayscale raster of one (slice, channel) plane; 0 maps to black and vmax to white.
template <class Tag>
std::string svg_image(std::string const &title, Volume<double, Tag> const &v, Index slice, Index channel, double vmax,
                      int cell = 8)
{
  auto const &d = v.dims();
  require(slice < d.slices && channel < d.channels, "svg_image: plane out of range");
  if (!(vmax > 0.0)) vmax = 1.0;
  double const top = 30;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(d.nx * cell) + "\" height=\"" +
                  std::to_string(d.ny * cell + 30) + "\" font-family=\"sans-serif\" font-size=\"12\" shape-rendering=\"crispEdges\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"4\" y=\"18\">" + xml_escape(title) + " (max " + fmt(vmax, 3) + ")</text>\n";
  auto p = v.plane(slice, channel);
  for (Index y = 0; y < d.ny; ++y)
    for (Index x = 0; x < d.nx; ++x) {
      int const g = static_cast<int>(std::lround(255.0 * std::clamp(p[y * d.nx + x] / vmax, 0.0, 1.0)));
      char col[8];
      std::snprintf(col, sizeof col, "#%02x%02x%02x", g, g, g);
      s += "<rect x=\"" + std::to_string(x * cell) + "\" y=\"" + fmt(top + static_cast<double>(y * cell)) + "\" width=\"" +
           std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" + col + "\"/>\n";
    }
  s += "</svg>\n";
  return s;
}

} // namespace calibless::report
