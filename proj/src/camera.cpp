#include "mmc/camera.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmc {

void Intrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw std::invalid_argument("focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw std::invalid_argument("principal point outside the image");
  }
}

Pose Pose::operator*(const Pose& b) const {
  Pose out;
  out.rotation = rotation * b.rotation;
  out.translation = rotation * b.translation + translation;
  return out;
}

Pose Pose::looking_forward(const Vec3& position, double tilt) {
  const double c = std::cos(tilt);
  const double s = std::sin(tilt);
  Pose p;
  // Rows are the camera axes expressed in world coordinates.
  p.rotation.row(0) = Vec3{1.0, 0.0, 0.0};
  p.rotation.row(1) = Vec3{0.0, -s, -c};
  p.rotation.row(2) = Vec3{0.0, c, -s};
  p.translation = -p.rotation * position;
  return p;
}

void Pose::validate() const {
  const Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
  if (err.cwiseAbs().maxCoeff() > 1e-9) throw std::invalid_argument("rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw std::invalid_argument("rotation determinant is not +1");
  }
  if (!translation.allFinite()) throw std::invalid_argument("translation is not finite");
}

std::optional<Projection> project(const Intrinsics& K, const Pose& T, const Vec3& world) {
  const Vec3 c = T.to_camera(world);
  if (!(c.z() > 0.0)) return std::nullopt;
  Projection p;
  p.u = K.fx * c.x() / c.z() + K.cx;
  p.v = K.fy * c.y() / c.z() + K.cy;
  p.depth = c.z();
  p.in_frame = p.u >= 0.0 && p.u < K.width && p.v >= 0.0 && p.v < K.height;
  return p;
}

Vec3 unproject(const Intrinsics& K, const Pose& T, double u, double v, double depth) {
  if (!(depth > 0.0)) throw std::invalid_argument("unproject: depth must be positive");
  const Vec3 c{(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth};
  return T.to_world(c);
}

Pixel raster_cell(const Intrinsics& K, const Projection& p) {
  if (!p.in_frame) return {};
  const int u = std::min(static_cast<int>(std::floor(p.u)), K.width - 1);
  const int v = std::min(static_cast<int>(std::floor(p.v)), K.height - 1);
  return {u, v};
}

PointCloud depth_to_cloud(std::span<const float> depth, const Intrinsics& K, const Pose& T) {
  if (depth.size() != static_cast<size_t>(K.width) * K.height) {
    throw std::invalid_argument("depth map size does not match intrinsics");
  }
  PointCloud cloud;
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      const double d = depth[static_cast<size_t>(v) * K.width + u];
      if (!(std::isfinite(d) && d > 0.0)) continue;
      cloud.points.push_back(unproject(K, T, u + 0.5, v + 0.5, d));
      cloud.pixels.push_back({u, v});
    }
  }
  return cloud;
}

double ground_height(std::span<const Vec3> points) {
  if (points.empty()) throw std::invalid_argument("ground_height: empty cloud");
  std::vector<double> z(points.size());
  std::transform(points.begin(), points.end(), z.begin(), [](const Vec3& p) { return p.z(); });
  const size_t n = z.size();
  // Nearest rank: ceil(0.01 n), 1-based.
  size_t rank = (n + 99) / 100;
  if (rank < 1) rank = 1;
  std::nth_element(z.begin(), z.begin() + static_cast<long>(rank - 1), z.end());
  return z[rank - 1];
}

std::vector<double> height_feature(const PointCloud& cloud) {
  const double ground = ground_height(cloud.points);
  std::vector<double> h(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) h[i] = cloud.points[i].z() - ground;
  return h;
}

}  // namespace mmc
