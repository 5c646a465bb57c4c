#pragma once

#include <Eigen/Core>

#include <array>
#include <span>
#include <vector>

namespace mmc {

/// World coordinates in meters; z is the up axis.
using Vec3 = Eigen::Vector3d;

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle into [-pi, pi).
double wrap_angle(double a);

/// Oriented box with yaw about the up axis. Extents: `l` along canonical x,
/// `w` along canonical y, `h` along canonical z.
struct Box3D {
  Vec3 center = Vec3::Zero();
  double l = 1.0;
  double h = 1.0;
  double w = 1.0;
  double heading = 0.0;

  /// Extents in canonical axis order (x, y, z) = (l, w, h).
  Vec3 axis_extents() const { return {l, w, h}; }
  double volume() const { return l * h * w; }
};

/// Throws std::invalid_argument if an extent is not positive or a value is
/// not finite.
void validate(const Box3D& b);

/// Canonical heading for a yaw-symmetric cuboid: the same box with heading in
/// [-pi/2, pi/2).
double half_turn_heading(double heading);

Vec3 to_canonical(const Vec3& p, const Box3D& b);
Vec3 from_canonical(const Vec3& q, const Box3D& b);

/// Canonical coordinates plus signed distances to the six faces, ordered
/// (+x, -x, +y, -y, +z, -z). Offsets are positive inside the box.
struct GeomFeature {
  Vec3 canonical = Vec3::Zero();
  std::array<double, 6> face_offsets{};

  std::array<double, 9> flat() const;
};

GeomFeature geometric_features(const Vec3& p, const Box3D& b);

/// Gradient of a scalar with respect to the box parameters.
struct BoxGrad {
  Vec3 center = Vec3::Zero();
  double l = 0.0;
  double h = 0.0;
  double w = 0.0;
  double heading = 0.0;

  BoxGrad& operator+=(const BoxGrad& o);
};

/// Backpropagates d(loss)/d(feature) of geometric_features(p, b) into the box.
/// `p` is treated as a constant.
BoxGrad geometric_features_backward(const Vec3& p, const Box3D& b,
                                    std::span<const double, 9> dfeat);

/// Boundary inclusive.
bool contains(const Box3D& b, const Vec3& p);

/// Same center and heading, every extent multiplied by `factor` (>= 1).
Box3D enlarge(const Box3D& b, double factor);

/// Bird's-eye-view corners, counter-clockwise.
std::array<Eigen::Vector2d, 4> bev_corners(const Box3D& b);

/// Area of the intersection of two convex CCW polygons (Sutherland-Hodgman).
double convex_intersection_area(std::span<const Eigen::Vector2d> subject,
                                std::span<const Eigen::Vector2d> clip);

/// Rotated 3D IoU: BEV polygon overlap times vertical overlap.
double iou3d(const Box3D& a, const Box3D& b);

/// Greedy descending-score NMS. Ties in score are broken by lower index.
/// Returns kept indices in processing order.
std::vector<int> nms3d(std::span<const Box3D> boxes,
                       std::span<const double> scores, double iou_thresh);

}  // namespace mmc
