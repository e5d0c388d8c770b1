#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace psel {

inline double wrap_angle(double a) {
  // normalize to (-pi, pi]
  a = std::fmod(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  if (a > std::numbers::pi) a -= 2.0 * std::numbers::pi;
  return a;
}

// 7-DoF oriented box: center, size (l along heading), yaw about +z.
struct Box7 {
  double cx = 0, cy = 0, cz = 0;
  double l = 1, w = 1, h = 1;
  double yaw = 0;

  bool valid() const {
    return l > 0 && w > 0 && h > 0 && std::isfinite(cx) && std::isfinite(cy) &&
           std::isfinite(cz) && std::isfinite(yaw);
  }
  double distance() const { return std::hypot(cx, cy); }
};

enum class IouMode { Bev, Iou3d };

struct Vec2 {
  double x = 0, y = 0;
};

// BEV footprint corners, counter-clockwise.
inline std::array<Vec2, 4> bev_corners(const Box7& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  std::array<Vec2, 4> out;
  const double dx[4] = {hl, -hl, -hl, hl};
  const double dy[4] = {hw, hw, -hw, -hw};
  for (int i = 0; i < 4; ++i) {
    out[i] = {b.cx + c * dx[i] - s * dy[i], b.cy + s * dx[i] + c * dy[i]};
  }
  return out;
}

inline double polygon_area(const std::vector<Vec2>& p) {
  double a = 0;
  for (std::size_t i = 0, n = p.size(); i < n; ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % n];
    a += u.x * v.y - v.x * u.y;
  }
  return 0.5 * std::abs(a);
}

namespace detail {

constexpr double kClipEps = 1e-9;

// Sutherland-Hodgman: clip subject polygon against the half-plane left of
// edge (a, b). CCW clip polygon keeps interiors on the left.
inline std::vector<Vec2> clip_edge(const std::vector<Vec2>& subject, Vec2 a, Vec2 b) {
  std::vector<Vec2> out;
  out.reserve(subject.size() + 2);
  const auto side = [&](const Vec2& p) {
    return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
  };
  const std::size_t n = subject.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& cur = subject[i];
    const Vec2& nxt = subject[(i + 1) % n];
    const double sc = side(cur);
    const double sn = side(nxt);
    if (sc >= -kClipEps) out.push_back(cur);
    if ((sc > kClipEps && sn < -kClipEps) || (sc < -kClipEps && sn > kClipEps)) {
      const double t = sc / (sc - sn);
      out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
    }
  }
  return out;
}

}  // namespace detail

// Intersection area of the two yaw-rotated BEV rectangles.
inline double bev_intersection_area(const Box7& a, const Box7& b) {
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  std::vector<Vec2> poly(ca.begin(), ca.end());
  for (int i = 0; i < 4 && !poly.empty(); ++i) {
    poly = detail::clip_edge(poly, cb[i], cb[(i + 1) % 4]);
  }
  if (poly.size() < 3) return 0.0;
  return polygon_area(poly);
}

inline double bev_iou(const Box7& a, const Box7& b) {
  const double area_a = a.l * a.w;
  const double area_b = b.l * b.w;
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b);
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// BEV intersection times vertical overlap over union of volumes.
// Boxes are gravity-aligned (yaw only).
inline double iou_3d(const Box7& a, const Box7& b) {
  const double vol_a = a.l * a.w * a.h;
  const double vol_b = b.l * b.w * b.h;
  if (vol_a <= 0.0 || vol_b <= 0.0) return 0.0;
  const double z_lo = std::max(a.cz - 0.5 * a.h, b.cz - 0.5 * b.h);
  const double z_hi = std::min(a.cz + 0.5 * a.h, b.cz + 0.5 * b.h);
  const double dz = z_hi - z_lo;
  if (dz <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * dz;
  const double uni = vol_a + vol_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double box_iou(const Box7& a, const Box7& b, IouMode mode) {
  return mode == IouMode::Bev ? bev_iou(a, b) : iou_3d(a, b);
}

// Greedy descending-score suppression; lower index wins ties.
inline std::vector<std::size_t> nms_bev(const std::vector<std::pair<Box7, double>>& candidates,
                                        double iou_threshold) {
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return candidates[i].second > candidates[j].second;
  });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (bev_iou(candidates[idx].first, candidates[k].first) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

// Weak-augmentation scene transform. Application order: flip across the
// x-axis, then rotate about the origin, then scale.
struct SceneTransform {
  double scale = 1.0;
  double yaw_rotation = 0.0;
  bool flip_x = false;
};

inline SceneTransform invert_transform(const SceneTransform& t) {
  if (t.scale <= 0.0) throw std::invalid_argument("SceneTransform: scale must be > 0");
  SceneTransform inv;
  inv.scale = 1.0 / t.scale;
  inv.yaw_rotation = t.flip_x ? t.yaw_rotation : -t.yaw_rotation;
  inv.flip_x = t.flip_x;
  return inv;
}

inline Box7 apply_transform(const Box7& b, const SceneTransform& t) {
  if (t.scale <= 0.0) throw std::invalid_argument("SceneTransform: scale must be > 0");
  Box7 out = b;
  if (t.flip_x) {
    out.cy = -out.cy;
    out.yaw = -out.yaw;
  }
  const double c = std::cos(t.yaw_rotation), s = std::sin(t.yaw_rotation);
  const double x = out.cx, y = out.cy;
  out.cx = c * x - s * y;
  out.cy = s * x + c * y;
  out.yaw += t.yaw_rotation;
  out.cx *= t.scale;
  out.cy *= t.scale;
  out.cz *= t.scale;
  out.l *= t.scale;
  out.w *= t.scale;
  out.h *= t.scale;
  out.yaw = wrap_angle(out.yaw);
  return out;
}

}  // namespace psel
