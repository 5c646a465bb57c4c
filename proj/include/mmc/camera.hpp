#pragma once

#include "mmc/geom3d.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>
#include <vector>

namespace mmc {

/// Pinhole intrinsics in pixels.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
};

/// Rigid transform mapping world coordinates (up = +z) into the camera frame
/// (x right, y down, z forward).
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 to_world(const Vec3& cam) const { return rotation.transpose() * (cam - translation); }
  Vec3 camera_position() const { return -rotation.transpose() * translation; }

  /// Composition: (a * b).to_camera(p) == a.to_camera(b.to_camera(p)).
  Pose operator*(const Pose& b) const;

  /// Camera at `position` looking along world +y, pitched down by `tilt`
  /// radians.
  static Pose looking_forward(const Vec3& position, double tilt);

  void validate() const;
};

/// Continuous pixel coordinates. Pixel (u, v) covers [u, u+1) x [v, v+1);
/// floor() selects the raster cell.
struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool in_frame = false;
};

/// Returns std::nullopt when the point is behind the camera (z_c <= 0).
std::optional<Projection> project(const Intrinsics& K, const Pose& T, const Vec3& world);

/// Throws std::invalid_argument when depth <= 0.
Vec3 unproject(const Intrinsics& K, const Pose& T, double u, double v, double depth);

struct Pixel {
  int u = -1;
  int v = -1;
  bool valid() const { return u >= 0 && v >= 0; }
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// The raster cell of a projection, or an invalid pixel if out of frame.
Pixel raster_cell(const Intrinsics& K, const Projection& p);

/// Points with optional per-point pixel correspondence and height above the
/// estimated ground.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Pixel> pixels;
  std::vector<double> heights;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// One point per pixel with valid depth (finite and > 0), unprojected at the
/// pixel center. `depth` is row-major H x W.
PointCloud depth_to_cloud(std::span<const float> depth, const Intrinsics& K, const Pose& T);

/// Ground = nearest-rank 1st percentile of z. Throws on an empty cloud.
double ground_height(std::span<const Vec3> points);

/// Per-point z minus the ground estimate.
std::vector<double> height_feature(const PointCloud& cloud);

}  // namespace mmc
