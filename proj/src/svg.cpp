#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "maskft/experiment.hpp"

namespace maskft {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

// Distinct glyph per method, cycling.
std::string glyph(std::size_t style, double x, double y, const std::string& color) {
  std::string s;
  switch (style % 5) {
    case 0:
      s = "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"4.5\" fill=\"" + color + "\"/>";
      break;
    case 1:
      s = "<rect x=\"" + num(x - 4) + "\" y=\"" + num(y - 4) +
          "\" width=\"8\" height=\"8\" fill=\"" + color + "\"/>";
      break;
    case 2:
      s = "<polygon points=\"" + num(x) + "," + num(y - 5) + " " + num(x - 4.5) + "," +
          num(y + 4) + " " + num(x + 4.5) + "," + num(y + 4) + "\" fill=\"" + color + "\"/>";
      break;
    case 3:
      s = "<polygon points=\"" + num(x) + "," + num(y - 5.5) + " " + num(x + 5.5) + "," + num(y) +
          " " + num(x) + "," + num(y + 5.5) + " " + num(x - 5.5) + "," + num(y) + "\" fill=\"" +
          color + "\"/>";
      break;
    default:
      s = "<path d=\"M " + num(x - 4) + " " + num(y - 4) + " L " + num(x + 4) + " " + num(y + 4) +
          " M " + num(x - 4) + " " + num(y + 4) + " L " + num(x + 4) + " " + num(y - 4) +
          "\" stroke=\"" + color + "\" stroke-width=\"2\" fill=\"none\"/>";
      break;
  }
  return s;
}

std::string star(double x, double y, const std::string& color) {
  std::string pts;
  for (int i = 0; i < 10; ++i) {
    const double r = i % 2 == 0 ? 7.0 : 3.0;
    const double a = -1.5707963267948966 + i * 0.6283185307179586;
    pts += num(x + r * std::cos(a)) + "," + num(y + r * std::sin(a));
    if (i < 9) pts += " ";
  }
  return "<polygon points=\"" + pts + "\" fill=\"" + color + "\"/>";
}

std::string xml_escape(const std::string& s) {
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

}  // namespace

std::string render_frontier_svg(const std::vector<FrontierPoint>& points,
                                const std::string& x_label, const std::string& y_label) {
  if (points.empty()) throw std::invalid_argument("render_frontier_svg: no points");

  const double width = 640, height = 480;
  const double ml = 72, mr = 24, mt = 24, mb = 56;  // margins
  const double pw = width - ml - mr, ph = height - mt - mb;

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& p : points) {
    xmin = std::min(xmin, p.x - p.dx);
    xmax = std::max(xmax, p.x + p.dx);
    ymin = std::min(ymin, p.y - p.dy);
    ymax = std::max(ymax, p.y + p.dy);
  }
  // 5% padding on each side; degenerate spans get an absolute floor
  double xspan = xmax - xmin, yspan = ymax - ymin;
  if (xspan <= 0.0) xspan = std::max(std::abs(xmin) * 0.2, 0.1);
  if (yspan <= 0.0) yspan = std::max(std::abs(ymin) * 0.2, 0.1);
  xmin -= 0.05 * xspan;
  xmax += 0.05 * xspan;
  ymin -= 0.05 * yspan;
  ymax += 0.05 * yspan;

  auto sx = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double v) { return mt + ph - (v - ymin) / (ymax - ymin) * ph; };

  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
         num(height) + "\" viewBox=\"0 0 " + num(width) + " " + num(height) + "\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"" + num(width) + "\" height=\"" + num(height) +
         "\" fill=\"white\"/>\n";
  svg += "<rect x=\"" + num(ml) + "\" y=\"" + num(mt) + "\" width=\"" + num(pw) + "\" height=\"" +
         num(ph) + "\" fill=\"none\" stroke=\"#333333\"/>\n";

  // ticks
  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    const double px = sx(fx), py = sy(fy);
    svg += "<line x1=\"" + num(px) + "\" y1=\"" + num(mt + ph) + "\" x2=\"" + num(px) +
           "\" y2=\"" + num(mt + ph + 5) + "\" stroke=\"#333333\"/>\n";
    svg += "<text x=\"" + num(px) + "\" y=\"" + num(mt + ph + 18) +
           "\" font-size=\"11\" text-anchor=\"middle\">" + tick_label(fx) + "</text>\n";
    svg += "<line x1=\"" + num(ml - 5) + "\" y1=\"" + num(py) + "\" x2=\"" + num(ml) + "\" y2=\"" +
           num(py) + "\" stroke=\"#333333\"/>\n";
    svg += "<text x=\"" + num(ml - 8) + "\" y=\"" + num(py + 4) +
           "\" font-size=\"11\" text-anchor=\"end\">" + tick_label(fy) + "</text>\n";
  }
  svg += "<text x=\"" + num(ml + pw / 2) + "\" y=\"" + num(height - 16) +
         "\" font-size=\"13\" text-anchor=\"middle\">" + xml_escape(x_label) + "</text>\n";
  svg += "<text x=\"16\" y=\"" + num(mt + ph / 2) +
         "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num(mt + ph / 2) + ")\">" + xml_escape(y_label) + "</text>\n";

  // stable style assignment in input order
  std::vector<std::string> order;
  std::map<std::string, std::size_t> style;
  for (const auto& p : points) {
    if (!style.count(p.method)) {
      style[p.method] = order.size();
      order.push_back(p.method);
    }
  }

  for (const auto& p : points) {
    const std::size_t k = style[p.method];
    const std::string color = kPalette[k % 8];
    const double px = sx(p.x), py = sy(p.y);
    if (p.dx > 0.0) {
      svg += "<line x1=\"" + num(sx(p.x - p.dx)) + "\" y1=\"" + num(py) + "\" x2=\"" +
             num(sx(p.x + p.dx)) + "\" y2=\"" + num(py) + "\" stroke=\"" + color + "\"/>\n";
    }
    if (p.dy > 0.0) {
      svg += "<line x1=\"" + num(px) + "\" y1=\"" + num(sy(p.y - p.dy)) + "\" x2=\"" + num(px) +
             "\" y2=\"" + num(sy(p.y + p.dy)) + "\" stroke=\"" + color + "\"/>\n";
    }
    if (p.method == "zeroshot") {
      // dashed crosshair through the robustness reference point
      svg += "<line x1=\"" + num(ml) + "\" y1=\"" + num(py) + "\" x2=\"" + num(ml + pw) +
             "\" y2=\"" + num(py) + "\" stroke=\"" + color +
             "\" stroke-dasharray=\"5,4\" opacity=\"0.6\"/>\n";
      svg += "<line x1=\"" + num(px) + "\" y1=\"" + num(mt) + "\" x2=\"" + num(px) + "\" y2=\"" +
             num(mt + ph) + "\" stroke=\"" + color +
             "\" stroke-dasharray=\"5,4\" opacity=\"0.6\"/>\n";
      svg += star(px, py, color) + "\n";
    } else {
      svg += glyph(k, px, py, color) + "\n";
    }
  }

  // legend
  double ly = mt + 14;
  for (const auto& name : order) {
    const std::size_t k = style[name];
    const std::string color = kPalette[k % 8];
    const double lx = ml + pw - 130;
    svg += (name == "zeroshot" ? star(lx, ly - 4, color) : glyph(k, lx, ly - 4, color)) + "\n";
    svg += "<text x=\"" + num(lx + 12) + "\" y=\"" + num(ly) + "\" font-size=\"12\">" +
           xml_escape(name) + "</text>\n";
    ly += 18;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace maskft
