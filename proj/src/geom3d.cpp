#include "mmc/geom3d.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mmc {

namespace {

constexpr double kClipEps = 1e-9;
constexpr double kMinPolygonArea = 1e-12;

using Vec2 = Eigen::Vector2d;

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double polygon_area(const std::vector<Vec2>& poly) {
  if (poly.size() < 3) return 0.0;
  double acc = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    acc += cross2(poly[i], poly[(i + 1) % poly.size()]);
  }
  return 0.5 * acc;
}

}  // namespace

double wrap_angle(double a) {
  if (a >= -kPi && a < kPi) return a;
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r < 0.0) r += 2.0 * kPi;
  double out = r - kPi;
  if (out >= kPi) out -= 2.0 * kPi;
  return out;
}

double half_turn_heading(double heading) {
  if (heading >= -kPi / 2 && heading < kPi / 2) return heading;
  double t = wrap_angle(heading);
  if (t >= kPi / 2) t -= kPi;
  if (t < -kPi / 2) t += kPi;
  return t;
}

void validate(const Box3D& b) {
  if (!b.center.allFinite() || !std::isfinite(b.heading)) {
    throw std::invalid_argument("box has non-finite parameters");
  }
  if (!(b.l > 0.0 && b.h > 0.0 && b.w > 0.0)) {
    throw std::invalid_argument("box extents must be positive");
  }
}

Vec3 to_canonical(const Vec3& p, const Box3D& b) {
  const double c = std::cos(b.heading);
  const double s = std::sin(b.heading);
  const Vec3 d = p - b.center;
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z()};
}

Vec3 from_canonical(const Vec3& q, const Box3D& b) {
  const double c = std::cos(b.heading);
  const double s = std::sin(b.heading);
  return b.center + Vec3{c * q.x() - s * q.y(), s * q.x() + c * q.y(), q.z()};
}

std::array<double, 9> GeomFeature::flat() const {
  return {canonical.x(),   canonical.y(),   canonical.z(),
          face_offsets[0], face_offsets[1], face_offsets[2],
          face_offsets[3], face_offsets[4], face_offsets[5]};
}

GeomFeature geometric_features(const Vec3& p, const Box3D& b) {
  GeomFeature f;
  f.canonical = to_canonical(p, b);
  const Vec3 half = 0.5 * b.axis_extents();
  for (int axis = 0; axis < 3; ++axis) {
    f.face_offsets[2 * axis] = half[axis] - f.canonical[axis];
    f.face_offsets[2 * axis + 1] = half[axis] + f.canonical[axis];
  }
  return f;
}

BoxGrad& BoxGrad::operator+=(const BoxGrad& o) {
  center += o.center;
  l += o.l;
  h += o.h;
  w += o.w;
  heading += o.heading;
  return *this;
}

BoxGrad geometric_features_backward(const Vec3& p, const Box3D& b,
                                    std::span<const double, 9> dfeat) {
  const Vec3 q = to_canonical(p, b);
  Vec3 gq{dfeat[0], dfeat[1], dfeat[2]};
  for (int axis = 0; axis < 3; ++axis) {
    gq[axis] += dfeat[3 + 2 * axis + 1] - dfeat[3 + 2 * axis];
  }
  BoxGrad g;
  g.l = 0.5 * (dfeat[3] + dfeat[4]);
  g.w = 0.5 * (dfeat[5] + dfeat[6]);
  g.h = 0.5 * (dfeat[7] + dfeat[8]);
  // q = R(-theta)(p - c): dq/dc = -R(-theta), dq/dtheta = (q_y, -q_x, 0).
  const double c = std::cos(b.heading);
  const double s = std::sin(b.heading);
  g.center = -Vec3{c * gq.x() - s * gq.y(), s * gq.x() + c * gq.y(), gq.z()};
  g.heading = gq.x() * q.y() - gq.y() * q.x();
  return g;
}

bool contains(const Box3D& b, const Vec3& p) {
  const Vec3 q = to_canonical(p, b);
  return std::abs(q.x()) <= 0.5 * b.l && std::abs(q.y()) <= 0.5 * b.w &&
         std::abs(q.z()) <= 0.5 * b.h;
}

Box3D enlarge(const Box3D& b, double factor) {
  if (!(factor >= 1.0)) throw std::invalid_argument("enlarge factor must be >= 1");
  Box3D out = b;
  out.l *= factor;
  out.h *= factor;
  out.w *= factor;
  return out;
}

std::array<Vec2, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(b.heading);
  const double s = std::sin(b.heading);
  const double hl = 0.5 * b.l;
  const double hw = 0.5 * b.w;
  const std::array<Vec2, 4> local{Vec2{hl, hw}, Vec2{-hl, hw}, Vec2{-hl, -hw}, Vec2{hl, -hw}};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) {
    out[i] = Vec2{b.center.x() + c * local[i].x() - s * local[i].y(),
                  b.center.y() + s * local[i].x() + c * local[i].y()};
  }
  return out;
}

double convex_intersection_area(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> poly(subject.begin(), subject.end());
  std::vector<Vec2> next;
  for (size_t e = 0; e < clip.size() && !poly.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % clip.size()];
    const Vec2 edge = b - a;
    next.clear();
    for (size_t i = 0; i < poly.size(); ++i) {
      const Vec2& p = poly[i];
      const Vec2& q = poly[(i + 1) % poly.size()];
      const double dp = cross2(edge, p - a);
      const double dq = cross2(edge, q - a);
      const bool p_in = dp >= -kClipEps;
      const bool q_in = dq >= -kClipEps;
      if (p_in) next.push_back(p);
      if (p_in != q_in) {
        const double t = dp / (dp - dq);
        next.push_back(p + t * (q - p));
      }
    }
    poly.swap(next);
  }
  const double area = polygon_area(poly);
  return area < kMinPolygonArea ? 0.0 : area;
}

double iou3d(const Box3D& a, const Box3D& b) {
  const double za0 = a.center.z() - 0.5 * a.h;
  const double za1 = a.center.z() + 0.5 * a.h;
  const double zb0 = b.center.z() - 0.5 * b.h;
  const double zb1 = b.center.z() + 0.5 * b.h;
  const double dz = std::min(za1, zb1) - std::max(za0, zb0);
  if (dz <= 0.0) return 0.0;
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const double area = convex_intersection_area(ca, cb);
  if (area <= 0.0) return 0.0;
  const double inter = area * dz;
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<int> nms3d(std::span<const Box3D> boxes, std::span<const double> scores,
                       double iou_thresh) {
  if (boxes.size() != scores.size()) {
    throw std::invalid_argument("nms3d: boxes and scores differ in length");
  }
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return scores[i] > scores[j]; });
  std::vector<int> kept;
  for (int i : order) {
    bool suppressed = false;
    for (int k : kept) {
      if (iou3d(boxes[i], boxes[k]) >= iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

}  // namespace mmc
