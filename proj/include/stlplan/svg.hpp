#ifndef STLPLAN_SVG_HPP
#define STLPLAN_SVG_HPP

#include "stlplan/env.hpp"
#include "stlplan/io.hpp"
#include "stlplan/sdf.hpp"

#include <string>
#include <vector>

namespace stlplan::svg {

using Vec2 = Eigen::Vector2d;

// Hand-emitted SVG: map raster, task regions, planned waypoints, robot
// trace. All geometry in world meters, y up.
struct PlotSpec {
  const sdf::OccupancyMask* mask = nullptr;
  std::vector<std::pair<std::string, sim::Disc>> regions;
  std::vector<Vec2> waypoints;
  std::vector<Vec2> trace;
  std::string title;
};

namespace detail {
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}
}  // namespace detail

inline std::string render(const PlotSpec& spec, double px_per_m = 220.0) {
  if (!spec.mask) throw std::invalid_argument("plot needs a mask");
  const auto& m = *spec.mask;
  double W = m.extent_x * px_per_m, H = m.extent_y * px_per_m;
  double header = 24.0;
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt(W) + "\" height=\"" +
         detail::fmt(H + header) + "\" viewBox=\"0 0 " + detail::fmt(W) + " " +
         detail::fmt(H + header) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!spec.title.empty())
    out += "<text x=\"6\" y=\"16\" font-family=\"monospace\" font-size=\"13\">" + spec.title +
           "</text>\n";

  // world (x, y up) -> svg pixels, map drawn below the header line
  auto X = [&](double wx) { return wx * px_per_m; };
  auto Y = [&](double wy) { return header + (m.extent_y - wy) * px_per_m; };

  // obstacle pixels merged into per-row runs
  double sx = m.extent_x / m.width, sy = m.extent_y / m.height;
  out += "<g fill=\"#444444\">\n";
  for (int iy = 0; iy < m.height; ++iy) {
    int run = -1;
    for (int ix = 0; ix <= m.width; ++ix) {
      bool occ = ix < m.width && m.occupied(ix, iy);
      if (occ && run < 0) run = ix;
      if (!occ && run >= 0) {
        double wx = run * sx, wy = (m.height - iy - 1) * sy;
        out += "<rect x=\"" + detail::fmt(X(wx)) + "\" y=\"" + detail::fmt(Y(wy + sy)) +
               "\" width=\"" + detail::fmt((ix - run) * sx * px_per_m) + "\" height=\"" +
               detail::fmt(sy * px_per_m) + "\"/>\n";
        run = -1;
      }
    }
  }
  out += "</g>\n";

  for (const auto& [name, d] : spec.regions) {
    out += "<circle cx=\"" + detail::fmt(X(d.center.x())) + "\" cy=\"" + detail::fmt(Y(d.center.y())) +
           "\" r=\"" + detail::fmt(d.radius * px_per_m) +
           "\" fill=\"#3b7fc422\" stroke=\"#3b7fc4\"/>\n";
    out += "<text x=\"" + detail::fmt(X(d.center.x()) - 4) + "\" y=\"" +
           detail::fmt(Y(d.center.y()) + 4) + "\" font-family=\"monospace\" font-size=\"12\">" +
           name + "</text>\n";
  }

  auto polyline = [&](const std::vector<Vec2>& pts, const char* color, double width) {
    if (pts.size() < 2) return;
    out += "<polyline fill=\"none\" stroke=\"";
    out += color;
    out += "\" stroke-width=\"" + detail::fmt(width) + "\" points=\"";
    for (const auto& p : pts) out += detail::fmt(X(p.x())) + "," + detail::fmt(Y(p.y())) + " ";
    out += "\"/>\n";
  };
  polyline(spec.trace, "#d99a00", 1.5);
  polyline(spec.waypoints, "#55a045", 2.0);
  for (const auto& p : spec.waypoints)
    out += "<circle cx=\"" + detail::fmt(X(p.x())) + "\" cy=\"" + detail::fmt(Y(p.y())) +
           "\" r=\"3\" fill=\"#55a045\"/>\n";
  if (!spec.waypoints.empty())
    out += "<circle cx=\"" + detail::fmt(X(spec.waypoints.front().x())) + "\" cy=\"" +
           detail::fmt(Y(spec.waypoints.front().y())) + "\" r=\"5\" fill=\"#c43b3b\"/>\n";

  out += "</svg>\n";
  return out;
}

// Minimal line chart for training curves: one polyline per series.
inline std::string line_chart(const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series,
                              const std::string& title) {
  double W = 640, H = 360, ml = 50, mb = 30, mt = 28, mr = 12;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& [name, pts] : series)
    for (auto [x, y] : pts) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (ymin == ymax) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  auto X = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto Y = [&](double y) { return mt + (ymax - y) / (ymax - ymin) * (H - mt - mb); };

  const char* colors[] = {"#3b7fc4", "#c43b3b", "#55a045", "#d99a00", "#8153b5"};
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt(W) +
                    "\" height=\"" + detail::fmt(H) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"8\" y=\"18\" font-family=\"monospace\" font-size=\"13\">" + title + "</text>\n";
  out += "<line x1=\"" + detail::fmt(ml) + "\" y1=\"" + detail::fmt(H - mb) + "\" x2=\"" +
         detail::fmt(W - mr) + "\" y2=\"" + detail::fmt(H - mb) + "\" stroke=\"#888\"/>\n";
  out += "<line x1=\"" + detail::fmt(ml) + "\" y1=\"" + detail::fmt(mt) + "\" x2=\"" + detail::fmt(ml) +
         "\" y2=\"" + detail::fmt(H - mb) + "\" stroke=\"#888\"/>\n";
  out += "<text x=\"" + detail::fmt(ml - 42) + "\" y=\"" + detail::fmt(mt + 8) +
         "\" font-family=\"monospace\" font-size=\"10\">" + detail::fmt(ymax) + "</text>\n";
  out += "<text x=\"" + detail::fmt(ml - 42) + "\" y=\"" + detail::fmt(H - mb) +
         "\" font-family=\"monospace\" font-size=\"10\">" + detail::fmt(ymin) + "</text>\n";
  out += "<text x=\"" + detail::fmt(W - mr - 60) + "\" y=\"" + detail::fmt(H - 8) +
         "\" font-family=\"monospace\" font-size=\"10\">" + detail::fmt(xmax) + "</text>\n";

  int ci = 0;
  double ly = mt + 10;
  for (const auto& [name, pts] : series) {
    const char* color = colors[ci % 5];
    std::string poly = "<polyline fill=\"none\" stroke=\"";
    poly += color;
    poly += "\" stroke-width=\"1.5\" points=\"";
    for (auto [x, y] : pts) poly += detail::fmt(X(x)) + "," + detail::fmt(Y(y)) + " ";
    poly += "\"/>\n";
    out += poly;
    out += "<text x=\"" + detail::fmt(W - mr - 150) + "\" y=\"" + detail::fmt(ly) +
           "\" font-family=\"monospace\" font-size=\"11\" fill=\"";
    out += color;
    out += "\">" + name + "</text>\n";
    ly += 14;
    ++ci;
  }
  out += "</svg>\n";
  return out;
}

inline void write_svg(const std::filesystem::path& path, const std::string& content) {
  io::write_file_atomic(path, content);
}

}  // namespace stlplan::svg

#endif
