#pragma once

// Pixel-grid geometry shared by the phantom generator, the oracle tools and
// the IoU scorer. Pixel (x, y) covers [x, x+1) x [y, y+1) and is inside a
// shape iff its centre (x + 0.5, y + 0.5) is; polygons use the even-odd rule.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <variant>
#include <vector>

namespace radgym::geom {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct Circle {
  Point center;
  double radius = 0.0;
  bool operator==(const Circle&) const = default;
};

/// Axis-aligned, corners in pixel coordinates.
struct Rectangle {
  Point top_left;
  Point bottom_right;
  bool operator==(const Rectangle&) const = default;
};

struct Polygon {
  std::vector<Point> points;
  bool operator==(const Polygon&) const = default;
};

/// Rectangle with arbitrary orientation: the set {p : lo_u <= p.u <= hi_u, lo_v <= p.v <= hi_v}.
struct OrientedBox {
  Point u{1, 0};
  Point v{0, 1};
  double lo_u = 0, hi_u = 0, lo_v = 0, hi_v = 0;

  double area() const { return (hi_u - lo_u) * (hi_v - lo_v); }
  std::array<Point, 4> corners() const {
    auto at = [&](double s, double t) { return Point{s * u.x + t * v.x, s * u.y + t * v.y}; };
    return {at(lo_u, lo_v), at(hi_u, lo_v), at(hi_u, hi_v), at(lo_u, hi_v)};
  }
};

using Shape = std::variant<Circle, Rectangle, Polygon>;

inline constexpr double kBoundaryEps = 1e-9;

struct Mask2D {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Mask2D() = default;
  Mask2D(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

  bool operator==(const Mask2D&) const = default;

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  std::uint8_t at(int x, int y) const { return in_bounds(x, y) ? data[static_cast<std::size_t>(y) * width + x] : 0; }
  void set(int x, int y, std::uint8_t v = 1) { data[static_cast<std::size_t>(y) * width + x] = v; }

  std::size_t count() const { return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; })); }
  bool empty() const { return count() == 0; }
};

/// Dense 3-D grid. z_origin places local slice 0 at a global slice index, so
/// reader masks covering different z ranges can be combined.
template <typename T>
struct Volume {
  int width = 0;
  int height = 0;
  int depth = 0;
  int z_origin = 0;
  std::vector<T> data;

  Volume() = default;
  Volume(int w, int h, int d, int z0 = 0)
      : width(w), height(h), depth(d), z_origin(z0), data(static_cast<std::size_t>(w) * h * d, T{}) {}

  bool operator==(const Volume&) const = default;

  std::size_t offset(int x, int y, int local_z) const {
    return (static_cast<std::size_t>(local_z) * height + y) * width + x;
  }
  bool contains_slice(int z) const { return z >= z_origin && z < z_origin + depth; }
  T& at(int x, int y, int z) { return data[offset(x, y, z - z_origin)]; }
  const T& at(int x, int y, int z) const { return data[offset(x, y, z - z_origin)]; }
  T get(int x, int y, int z) const {
    if (x < 0 || y < 0 || x >= width || y >= height || !contains_slice(z)) return T{};
    return at(x, y, z);
  }
};

using BinaryVolume = Volume<std::uint8_t>;

inline Mask2D slice_of(const BinaryVolume& v, int z) {
  Mask2D m(v.width, v.height);
  if (!v.contains_slice(z)) return m;
  std::copy_n(v.data.begin() + static_cast<std::ptrdiff_t>(v.offset(0, 0, z - v.z_origin)),
              static_cast<std::ptrdiff_t>(v.width) * v.height, m.data.begin());
  return m;
}

/// Global slice indices with at least one set voxel, ascending.
inline std::vector<int> occupied_slices(const BinaryVolume& v) {
  std::vector<int> out;
  const auto plane = static_cast<std::size_t>(v.width) * v.height;
  for (int z = 0; z < v.depth; ++z) {
    auto begin = v.data.begin() + static_cast<std::ptrdiff_t>(z * plane);
    if (std::any_of(begin, begin + static_cast<std::ptrdiff_t>(plane), [](auto b) { return b != 0; }))
      out.push_back(z + v.z_origin);
  }
  return out;
}

inline std::size_t voxel_count(const BinaryVolume& v) {
  return static_cast<std::size_t>(std::count_if(v.data.begin(), v.data.end(), [](auto b) { return b != 0; }));
}

// ---------------------------------------------------------------------------
// Point-in-shape tests at pixel centres

inline bool contains(const Circle& c, Point p) {
  double dx = p.x - c.center.x, dy = p.y - c.center.y;
  return dx * dx + dy * dy <= c.radius * c.radius + kBoundaryEps;
}

inline bool contains(const Rectangle& r, Point p) {
  return p.x >= r.top_left.x - kBoundaryEps && p.x <= r.bottom_right.x + kBoundaryEps &&
         p.y >= r.top_left.y - kBoundaryEps && p.y <= r.bottom_right.y + kBoundaryEps;
}

inline bool contains(const Polygon& poly, Point p) {
  bool inside = false;
  const auto& pts = poly.points;
  for (std::size_t i = 0, j = pts.size() - 1; i < pts.size(); j = i++) {
    const auto& a = pts[i];
    const auto& b = pts[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

inline bool contains(const OrientedBox& box, Point p) {
  double s = p.x * box.u.x + p.y * box.u.y;
  double t = p.x * box.v.x + p.y * box.v.y;
  return s >= box.lo_u - kBoundaryEps && s <= box.hi_u + kBoundaryEps && t >= box.lo_v - kBoundaryEps &&
         t <= box.hi_v + kBoundaryEps;
}

struct BBox {
  double x0, y0, x1, y1;
};

inline BBox bounds(const Circle& c) {
  return {c.center.x - c.radius, c.center.y - c.radius, c.center.x + c.radius, c.center.y + c.radius};
}
inline BBox bounds(const Rectangle& r) { return {r.top_left.x, r.top_left.y, r.bottom_right.x, r.bottom_right.y}; }
inline BBox bounds(const Polygon& p) {
  BBox b{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
         std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};
  for (auto pt : p.points) {
    b.x0 = std::min(b.x0, pt.x);
    b.y0 = std::min(b.y0, pt.y);
    b.x1 = std::max(b.x1, pt.x);
    b.y1 = std::max(b.y1, pt.y);
  }
  return b;
}
inline BBox bounds(const OrientedBox& box) {
  Polygon p;
  for (auto c : box.corners()) p.points.push_back(c);
  return bounds(p);
}

inline BBox bounds(const Shape& s) {
  return std::visit([](const auto& v) { return bounds(v); }, s);
}

/// True when the shape's bounding box overlaps the frame [0,w) x [0,h).
inline bool intersects_frame(const Shape& s, int width, int height) {
  auto b = bounds(s);
  return b.x1 >= 0 && b.y1 >= 0 && b.x0 <= width && b.y0 <= height;
}

template <typename S>
Mask2D rasterize_shape(const S& shape, int width, int height) {
  Mask2D m(width, height);
  auto b = bounds(shape);
  auto clampd = [](double v, int hi) { return static_cast<int>(std::clamp(v, -2.0, hi + 2.0)); };
  int x0 = std::max(0, clampd(std::floor(b.x0), width) - 1);
  int y0 = std::max(0, clampd(std::floor(b.y0), height) - 1);
  int x1 = std::min(width - 1, clampd(std::ceil(b.x1), width) + 1);
  int y1 = std::min(height - 1, clampd(std::ceil(b.y1), height) + 1);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (contains(shape, Point{x + 0.5, y + 0.5})) m.set(x, y);
  return m;
}

inline Mask2D rasterize(const Shape& s, int width, int height) {
  return std::visit([&](const auto& v) { return rasterize_shape(v, width, height); }, s);
}

inline double iou(const Mask2D& a, const Mask2D& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += (x && y);
    uni += (x || y);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Mean of the set pixels' centres.
inline Point centroid(const Mask2D& m) {
  double sx = 0, sy = 0;
  std::size_t n = 0;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y)) {
        sx += x + 0.5;
        sy += y + 0.5;
        ++n;
      }
  return n ? Point{sx / n, sy / n} : Point{};
}

// ---------------------------------------------------------------------------
// Convex hull and minimum-area enclosing rectangle

struct IPoint {
  std::int64_t x = 0;
  std::int64_t y = 0;
  auto operator<=>(const IPoint&) const = default;
};

inline std::int64_t cross(IPoint o, IPoint a, IPoint b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

/// Andrew's monotone chain; collinear points dropped, counter-clockwise order.
inline std::vector<IPoint> convex_hull(std::vector<IPoint> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<IPoint> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

/// Corners of every set pixel; the hull of these encloses each pixel square.
inline std::vector<IPoint> pixel_corners(const Mask2D& m) {
  std::vector<IPoint> pts;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y)) {
        // Interior corners never reach the hull; keep only pixels on the boundary.
        if (m.at(x - 1, y) && m.at(x + 1, y) && m.at(x, y - 1) && m.at(x, y + 1)) continue;
        pts.push_back({x, y});
        pts.push_back({x + 1, y});
        pts.push_back({x, y + 1});
        pts.push_back({x + 1, y + 1});
      }
  return pts;
}

inline OrientedBox box_along(const std::vector<IPoint>& hull, double dx, double dy) {
  double len = std::hypot(dx, dy);
  OrientedBox box;
  box.u = {dx / len, dy / len};
  box.v = {-box.u.y, box.u.x};
  box.lo_u = box.lo_v = std::numeric_limits<double>::max();
  box.hi_u = box.hi_v = std::numeric_limits<double>::lowest();
  for (const auto& p : hull) {
    double s = p.x * box.u.x + p.y * box.u.y;
    double t = p.x * box.v.x + p.y * box.v.y;
    box.lo_u = std::min(box.lo_u, s);
    box.hi_u = std::max(box.hi_u, s);
    box.lo_v = std::min(box.lo_v, t);
    box.hi_v = std::max(box.hi_v, t);
  }
  return box;
}

/// Rotating calipers: a minimum-area enclosing rectangle has one side
/// collinear with a hull edge. Returns every rectangle within relative
/// tolerance of the minimum area (ties resolved by the caller).
inline std::vector<OrientedBox> min_area_boxes(const std::vector<IPoint>& hull, double rel_tol = 1e-9) {
  std::vector<OrientedBox> out;
  if (hull.size() < 3) return out;
  std::vector<OrientedBox> candidates;
  double best = std::numeric_limits<double>::max();
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    auto box = box_along(hull, static_cast<double>(b.x - a.x), static_cast<double>(b.y - a.y));
    best = std::min(best, box.area());
    candidates.push_back(box);
  }
  for (const auto& box : candidates)
    if (box.area() <= best * (1 + rel_tol)) out.push_back(box);
  return out;
}

// ---------------------------------------------------------------------------
// Contour extraction

/// Traces the outer pixel-edge boundary of the largest 4-connected component.
/// Vertices lie on integer pixel corners, so rasterizing the result with the
/// even-odd rule reproduces that component exactly (holes filled).
inline Polygon trace_contour(const Mask2D& m) {
  struct Edge {
    IPoint from, to;
    bool used = false;
  };
  std::vector<Edge> edges;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      if (!m.at(x, y - 1)) edges.push_back({{x, y}, {x + 1, y}});
      if (!m.at(x + 1, y)) edges.push_back({{x + 1, y}, {x + 1, y + 1}});
      if (!m.at(x, y + 1)) edges.push_back({{x + 1, y + 1}, {x, y + 1}});
      if (!m.at(x - 1, y)) edges.push_back({{x, y + 1}, {x, y}});
    }
  std::map<IPoint, std::vector<std::size_t>> outgoing;
  for (std::size_t i = 0; i < edges.size(); ++i) outgoing[edges[i].from].push_back(i);

  auto turn_rank = [](IPoint d_in, IPoint d_out) {
    // Screen coordinates (y down): a right turn keeps the inside pixel adjacent.
    auto c = d_in.x * d_out.y - d_in.y * d_out.x;
    if (c > 0) return 0;   // right
    if (c == 0) return 1;  // straight
    return 2;              // left
  };

  Polygon best;
  double best_area = 0.0;
  for (std::size_t start = 0; start < edges.size(); ++start) {
    if (edges[start].used) continue;
    std::vector<IPoint> loop;
    std::size_t cur = start;
    while (!edges[cur].used) {
      edges[cur].used = true;
      loop.push_back(edges[cur].from);
      IPoint d_in{edges[cur].to.x - edges[cur].from.x, edges[cur].to.y - edges[cur].from.y};
      std::size_t next = edges.size();
      int rank = 3;
      for (auto cand : outgoing[edges[cur].to]) {
        if (edges[cand].used && cand != start) continue;
        IPoint d_out{edges[cand].to.x - edges[cand].from.x, edges[cand].to.y - edges[cand].from.y};
        int r = turn_rank(d_in, d_out);
        if (r < rank) {
          rank = r;
          next = cand;
        }
      }
      if (next == edges.size() || next == start) break;
      cur = next;
    }
    double area2 = 0.0;
    for (std::size_t i = 0; i < loop.size(); ++i) {
      const auto& a = loop[i];
      const auto& b = loop[(i + 1) % loop.size()];
      area2 += static_cast<double>(a.x * b.y - b.x * a.y);
    }
    if (area2 / 2.0 > best_area) {
      best_area = area2 / 2.0;
      best.points.clear();
      for (std::size_t i = 0; i < loop.size(); ++i) {
        const auto& prev = loop[(i + loop.size() - 1) % loop.size()];
        const auto& p = loop[i];
        const auto& nxt = loop[(i + 1) % loop.size()];
        if (cross(prev, p, nxt) == 0) continue;  // collinear
        best.points.push_back({static_cast<double>(p.x), static_cast<double>(p.y)});
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Morphology (disc structuring element)

inline Mask2D dilate(const Mask2D& m, int radius) {
  if (radius <= 0) return m;
  Mask2D out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool hit = false;
      for (int dy = -radius; dy <= radius && !hit; ++dy)
        for (int dx = -radius; dx <= radius && !hit; ++dx)
          if (dx * dx + dy * dy <= radius * radius && m.at(x + dx, y + dy)) hit = true;
      if (hit) out.set(x, y);
    }
  return out;
}

inline Mask2D erode(const Mask2D& m, int radius) {
  if (radius <= 0) return m;
  Mask2D out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      bool keep = true;
      for (int dy = -radius; dy <= radius && keep; ++dy)
        for (int dx = -radius; dx <= radius && keep; ++dx)
          if (dx * dx + dy * dy <= radius * radius && !m.at(x + dx, y + dy)) keep = false;
      if (keep) out.set(x, y);
    }
  return out;
}

}  // namespace radgym::geom
