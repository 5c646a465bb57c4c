#pragma once

#include "mmc/camera.hpp"
#include "mmc/geom3d.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace mmc {

using Rng = std::mt19937_64;

/// Mixes a master seed with a stream index (splitmix64).
uint64_t derive_seed(uint64_t master, uint64_t index);

/// LabelMap values besides class ids 0..C-1.
inline constexpr int kBackground = -1;
inline constexpr int kIgnore = -2;

struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int> labels;  // row-major

  int at(int u, int v) const { return labels[static_cast<size_t>(v) * width + u]; }
  int& at(int u, int v) { return labels[static_cast<size_t>(v) * width + u]; }
};

struct GtBox {
  Box3D box;
  int cls = 0;
};

/// One RGB-D view with 3D box annotations. `rgbd` holds four row-major H x W
/// float planes: R, G, B in [0, 1] and depth in meters (0 = absent).
/// `cloud` and `seg_gt` are derived from rgbd + K + T by derive().
struct Scene {
  int num_classes = 0;
  Intrinsics K;
  Pose T;
  std::vector<GtBox> boxes;
  std::vector<float> rgbd;
  uint64_t seed = 0;

  PointCloud cloud;
  LabelMap seg_gt;

  int height() const { return K.height; }
  int width() const { return K.width; }
  size_t pixels() const { return static_cast<size_t>(K.width) * K.height; }
  std::span<const float> plane(int c) const {
    return std::span<const float>(rgbd).subspan(static_cast<size_t>(c) * pixels(), pixels());
  }
  std::span<float> plane(int c) {
    return std::span<float>(rgbd).subspan(static_cast<size_t>(c) * pixels(), pixels());
  }
  float depth(int u, int v) const { return plane(3)[static_cast<size_t>(v) * K.width + u]; }

  /// Rebuilds cloud (with pixel map and heights) and seg_gt.
  void derive();
};

struct SynthConfig {
  int num_classes = 3;
  int min_boxes = 2;
  int max_boxes = 6;
  int height = 96;
  int width = 128;
  double focal = 100.0;
  double camera_height = 1.6;
  double camera_height_jitter = 0.1;
  double tilt_deg = 25.0;
  double tilt_jitter_deg = 3.0;
  double near_y = 1.8;
  double far_y = 5.0;
  double side_margin = 0.4;
  double wall_y = 6.5;
  double yaw_range = kPi / 4;
  double size_jitter = 0.1;
  double color_jitter = 0.15;
  double rgb_noise = 0.05;
  double depth_dropout = 0.05;
  double max_bev_iou = 0.05;
  int placement_tries = 200;
  int min_visible_pixels = 30;
  /// Rendered surfaces sit this far inside each annotated box.
  double render_inset = 1e-3;

  void validate() const;
};

/// Mean (l, w, h) of a synthetic class; classes 0..9 are defined.
Vec3 class_mean_size(int cls);
/// Base albedo of a synthetic class.
Vec3 class_albedo(int cls);
inline constexpr int kMaxSynthClasses = 10;

Scene synth_scene(uint64_t seed, const SynthConfig& config);

/// Class id for pixels inside exactly one box, IGNORE inside several boxes or
/// without depth, BACKGROUND otherwise.
LabelMap gen_2d_gt(const Scene& scene);

/// n indices into a cloud of `size` points: without replacement when
/// size >= n, otherwise with replacement.
std::vector<int> sample_indices(size_t size, size_t n, Rng& rng);
PointCloud subset(const PointCloud& cloud, std::span<const int> indices);
/// Throws std::invalid_argument on an empty cloud.
PointCloud sample_points(const PointCloud& cloud, size_t n, Rng& rng);

struct AugmentParams {
  bool flip = false;
  double rotation = 0.0;  // radians about the up axis
  double scale = 1.0;
  double brightness = 1.0;
  double contrast = 1.0;

  static AugmentParams draw(Rng& rng);
};

/// Flip across x = 0, rotate about z, scale uniformly. Applied to points and
/// boxes; pixel correspondences are kept as they were.
Vec3 augment_point(const Vec3& p, const AugmentParams& a);
Box3D augment_box(const Box3D& b, const AugmentParams& a);

Scene apply_augment(const Scene& scene, const AugmentParams& params);
Scene augment(const Scene& scene, uint64_t seed);

}  // namespace mmc
