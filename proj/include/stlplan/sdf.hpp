#ifndef STLPLAN_SDF_HPP
#define STLPLAN_SDF_HPP

#include "stlplan/errors.hpp"
#include "stlplan/image.hpp"
#include "stlplan/kdtree.hpp"
#include "stlplan/stl_ast.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <limits>
#include <memory>
#include <vector>

namespace stlplan::sdf {

using Vec2 = Eigen::Vector2d;

// Binary obstacle raster: 1 = obstacle, 0 = free. Row 0 is the top image
// row; the attached world extent is in meters.
struct OccupancyMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> occ;
  double extent_x = 0.0;
  double extent_y = 0.0;

  bool occupied(int ix, int iy) const {
    return occ[static_cast<std::size_t>(iy) * static_cast<std::size_t>(width) +
               static_cast<std::size_t>(ix)] != 0;
  }

  void set(int ix, int iy, bool v) {
    occ[static_cast<std::size_t>(iy) * static_cast<std::size_t>(width) +
        static_cast<std::size_t>(ix)] = v ? 1 : 0;
  }

  std::size_t obstacle_count() const {
    std::size_t n = 0;
    for (auto v : occ) n += v;
    return n;
  }
};

// Grayscale >= 128 is free space, < 128 is obstacle.
inline OccupancyMask mask_from_image(const img::GrayImage& im, double extent_x, double extent_y) {
  if (im.width < 1 || im.height < 1) throw IoError("zero-size mask image");
  OccupancyMask m;
  m.width = im.width;
  m.height = im.height;
  m.extent_x = extent_x;
  m.extent_y = extent_y;
  m.occ.resize(im.pixels.size());
  for (std::size_t i = 0; i < im.pixels.size(); ++i) m.occ[i] = im.pixels[i] < 128 ? 1 : 0;
  return m;
}

inline OccupancyMask load_mask(const std::filesystem::path& path, double extent_x, double extent_y) {
  return mask_from_image(img::read_gray_image(path), extent_x, extent_y);
}

inline img::GrayImage mask_to_image(const OccupancyMask& m) {
  img::GrayImage im;
  im.width = m.width;
  im.height = m.height;
  im.pixels.resize(m.occ.size());
  for (std::size_t i = 0; i < m.occ.size(); ++i) im.pixels[i] = m.occ[i] ? 0 : 255;
  return im;
}

// Pixel index <-> world meters. World origin is the image bottom-left,
// x right, y up; pixel centers are the geometric sample points.
struct WorldTransform {
  int width = 0, height = 0;
  double sx = 1.0, sy = 1.0;  // meters per pixel

  static WorldTransform from(const OccupancyMask& m) {
    WorldTransform t;
    t.width = m.width;
    t.height = m.height;
    t.sx = m.extent_x / m.width;
    t.sy = m.extent_y / m.height;
    return t;
  }

  Vec2 pixel_center(int ix, int iy) const {
    return {(ix + 0.5) * sx, (height - iy - 0.5) * sy};
  }

  // Pixel containing a world point (may be out of range).
  std::pair<int, int> pixel_of(const Vec2& g) const {
    int ix = static_cast<int>(std::floor(g.x() / sx));
    int iy = height - 1 - static_cast<int>(std::floor(g.y() / sy));
    return {ix, iy};
  }

  bool in_bounds(int ix, int iy) const { return ix >= 0 && ix < width && iy >= 0 && iy < height; }

  double pitch() const { return std::min(sx, sy); }
};

// Nearest-outline-point index. Outline pixels are obstacle pixels with a
// free 4-neighbor or lying on the image border. Stored keys are world
// coordinates of pixel centers, so queries are exact in the world metric.
class OutlineIndex {
 public:
  void build(const OccupancyMask& m, const WorldTransform& tf) {
    std::vector<Vec2> pts;
    std::vector<int> payloads;
    for (int iy = 0; iy < m.height; ++iy) {
      for (int ix = 0; ix < m.width; ++ix) {
        if (!m.occupied(ix, iy)) continue;
        bool outline = ix == 0 || iy == 0 || ix == m.width - 1 || iy == m.height - 1 ||
                       !m.occupied(ix - 1, iy) || !m.occupied(ix + 1, iy) ||
                       !m.occupied(ix, iy - 1) || !m.occupied(ix, iy + 1);
        if (outline) {
          pts.push_back(tf.pixel_center(ix, iy));
          payloads.push_back(iy * m.width + ix);
        }
      }
    }
    count_ = pts.size();
    tree_.build(std::move(pts), std::move(payloads));
  }

  bool empty() const { return tree_.empty(); }
  std::size_t size() const { return count_; }

  // Nearest outline pixel center in world coordinates.
  bool nearest(const Vec2& g, Vec2& out, double& dist2) const {
    if (tree_.empty()) return false;
    auto hit = tree_.nearest(g);
    out = tree_.point(hit.payload);
    dist2 = hit.dist2;
    return true;
  }

 private:
  geo::KdTree2d tree_;
  std::size_t count_ = 0;
};

inline bool point_in_obstacle_or_outside(const Vec2& g, const OccupancyMask& m,
                                         const WorldTransform& tf) {
  auto [ix, iy] = tf.pixel_of(g);
  if (!tf.in_bounds(ix, iy)) return true;
  return m.occupied(ix, iy);
}

// Signed distance to the nearest obstacle outline: positive outside
// obstacles, negative inside or out of bounds, +inf when the map has no
// obstacles at all.
inline double sdf(const Vec2& g, const OccupancyMask& m, const OutlineIndex& idx,
                  const WorldTransform& tf) {
  Vec2 p;
  double d2;
  if (!idx.nearest(g, p, d2)) return std::numeric_limits<double>::infinity();
  double d = std::sqrt(d2);
  if (d == 0.0) return 0.0;
  return point_in_obstacle_or_outside(g, m, tf) ? -d : d;
}

// Exact gradient of the signed distance wherever the nearest outline point
// is unique; zero subgradient at zero distance.
inline Vec2 sdf_grad(const Vec2& g, const OccupancyMask& m, const OutlineIndex& idx,
                     const WorldTransform& tf) {
  Vec2 p;
  double d2;
  if (!idx.nearest(g, p, d2)) return Vec2::Zero();
  double d = std::sqrt(d2);
  if (d == 0.0) return Vec2::Zero();
  Vec2 u = (g - p) / d;
  return point_in_obstacle_or_outside(g, m, tf) ? Vec2(-u) : u;
}

// Map bundle shared by the planner, simulator, and predicate bindings.
// cell_sdf caches the signed distance at every pixel center; the ray caster
// needs it, so simulation maps are built with it and planner-only maps can
// skip it.
struct MapData {
  OccupancyMask mask;
  WorldTransform tf;
  OutlineIndex index;
  std::vector<double> cell_sdf;

  static std::shared_ptr<const MapData> build(OccupancyMask m, bool with_cell_grid = true) {
    auto md = std::make_shared<MapData>();
    md->mask = std::move(m);
    md->tf = WorldTransform::from(md->mask);
    md->index.build(md->mask, md->tf);
    if (with_cell_grid) {
      md->cell_sdf.resize(md->mask.occ.size());
      for (int iy = 0; iy < md->mask.height; ++iy)
        for (int ix = 0; ix < md->mask.width; ++ix)
          md->cell_sdf[static_cast<std::size_t>(iy) * md->mask.width + ix] =
              sdf(md->tf.pixel_center(ix, iy), md->mask, md->index, md->tf);
    }
    return md;
  }

  double value(const Vec2& g) const { return sdf(g, mask, index, tf); }
  Vec2 grad(const Vec2& g) const { return sdf_grad(g, mask, index, tf); }

  bool has_cell_grid() const { return !cell_sdf.empty(); }

  double cell_value(int ix, int iy) const {
    return cell_sdf[static_cast<std::size_t>(iy) * static_cast<std::size_t>(mask.width) +
                    static_cast<std::size_t>(ix)];
  }
};

// The obstacle-avoidance predicate: robustness at a waypoint is the signed
// distance there, so G[0,T] over it is positive iff the whole path is
// collision-free.
inline stl::PredicateBinding avoid_predicate(std::shared_ptr<const MapData> map) {
  stl::PredicateBinding b;
  b.name = "avoid_map";
  b.differentiable = true;
  b.eval = [map](const Vec2& g, int) { return map->value(g); };
  // the hard semantics keep the +inf empty-map sentinel; the soft path caps
  // it so log-sum-exp stays finite (gradient is zero there anyway)
  b.eval_diff = [map](ad::Tape& tp, ad::Var x, ad::Var y, int) {
    Vec2 g(x.scalar(), y.scalar());
    double v = map->value(g);
    if (!std::isfinite(v)) return tp.custom_scalar(1e6, {x, y}, {0.0, 0.0});
    Vec2 gr = map->grad(g);
    return tp.custom_scalar(v, {x, y}, {gr.x(), gr.y()});
  };
  return b;
}

}  // namespace stlplan::sdf

#endif
