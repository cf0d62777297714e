#include "mapo/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace mapo::svgplot {

namespace {

constexpr double kWidth = 640, kHeight = 440;
constexpr double kLeft = 64, kRight = 24, kTop = 40, kBottom = 48;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf"};

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Round the raw step to 1/2/5 x 10^k for readable ticks.
double nice_step(double span, int target_ticks) {
  const double raw = span / std::max(1, target_ticks);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  const double n = r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0;
  return n * mag;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_line_chart(const std::string& title, const std::string& xlabel,
                              const std::string& ylabel, const std::vector<Series>& series) {
  if (series.empty()) throw std::invalid_argument("render_line_chart: no series");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    if (s.points.empty())
      throw std::invalid_argument("render_line_chart: empty series " + s.label);
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax == ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  // pad the y range a little so lines stay off the frame
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return kTop + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"440\" "
         "viewBox=\"0 0 640 440\" font-family=\"sans-serif\">\n";
  out += "<rect width=\"640\" height=\"440\" fill=\"white\"/>\n";
  out += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         escape(title) + "</text>\n";

  // frame
  out += "<rect x=\"" + fmt(kLeft) + "\" y=\"" + fmt(kTop) + "\" width=\"" + fmt(pw) +
         "\" height=\"" + fmt(ph) + "\" fill=\"none\" stroke=\"#333333\"/>\n";

  // ticks and grid
  const double xstep = nice_step(xmax - xmin, 5);
  for (double x = std::ceil(xmin / xstep) * xstep; x <= xmax + 1e-9 * xstep; x += xstep) {
    const double px = sx(x);
    out += "<line x1=\"" + fmt(px) + "\" y1=\"" + fmt(kTop) + "\" x2=\"" + fmt(px) +
           "\" y2=\"" + fmt(kTop + ph) + "\" stroke=\"#dddddd\"/>\n";
    out += "<text x=\"" + fmt(px) + "\" y=\"" + fmt(kTop + ph + 18) +
           "\" text-anchor=\"middle\" font-size=\"11\">" + fmt_tick(x) + "</text>\n";
  }
  const double ystep = nice_step(ymax - ymin, 5);
  for (double y = std::ceil(ymin / ystep) * ystep; y <= ymax + 1e-9 * ystep; y += ystep) {
    const double py = sy(y);
    out += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(py) + "\" x2=\"" +
           fmt(kLeft + pw) + "\" y2=\"" + fmt(py) + "\" stroke=\"#dddddd\"/>\n";
    out += "<text x=\"" + fmt(kLeft - 6) + "\" y=\"" + fmt(py + 4) +
           "\" text-anchor=\"end\" font-size=\"11\">" + fmt_tick(y) + "</text>\n";
  }

  // axis labels
  out += "<text x=\"" + fmt(kLeft + pw / 2) + "\" y=\"" + fmt(kHeight - 10) +
         "\" text-anchor=\"middle\" font-size=\"12\">" + escape(xlabel) + "</text>\n";
  out += "<text x=\"16\" y=\"" + fmt(kTop + ph / 2) +
         "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
         fmt(kTop + ph / 2) + ")\">" + escape(ylabel) + "</text>\n";

  // series
  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = kPalette[si % (sizeof kPalette / sizeof kPalette[0])];
    std::string pts;
    for (const auto& [x, y] : series[si].points) {
      if (!pts.empty()) pts += " ";
      pts += fmt(sx(x)) + "," + fmt(sy(y));
    }
    out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    for (const auto& [x, y] : series[si].points)
      out += "<circle cx=\"" + fmt(sx(x)) + "\" cy=\"" + fmt(sy(y)) +
             "\" r=\"3\" fill=\"" + color + "\"/>\n";
    // legend entry
    const double ly = kTop + 14 + 16 * static_cast<double>(si);
    out += "<line x1=\"" + fmt(kLeft + pw - 130) + "\" y1=\"" + fmt(ly - 4) + "\" x2=\"" +
           fmt(kLeft + pw - 110) + "\" y2=\"" + fmt(ly - 4) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt(kLeft + pw - 104) + "\" y=\"" + fmt(ly) +
           "\" font-size=\"11\">" + escape(series[si].label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace mapo::svgplot
