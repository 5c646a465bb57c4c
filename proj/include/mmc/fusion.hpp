#pragma once

#include "mmc/conv.hpp"
#include "mmc/data.hpp"

#include <span>
#include <vector>

namespace mmc {

struct Proposal {
  Box3D box;
  std::vector<double> class_probs;  // C-simplex
  double objectness = 0.0;
  double pred_iou = -1.0;  // < 0 before refinement
};

/// 2D segmenter input: [RGB(3), depth(1), semantic(C), geometric(9)] per
/// pixel, plus a flag for pixels that received a 3D feature.
struct FusionMap {
  static constexpr int kRgbd = 4;
  static constexpr int kGeom = 9;

  int num_classes = 0;
  nn::Image channels;
  std::vector<uint8_t> valid;

  int num_channels() const { return num_classes + kRgbd + kGeom; }
};

inline int fusion_channels(int num_classes) { return num_classes + FusionMap::kRgbd + FusionMap::kGeom; }

/// The scene's RGB-D planes as an H x W x 4 image.
nn::Image rgbd_image(const Scene& scene);

/// Projects proposal features onto the image through `scene.cloud`'s pixel
/// map. Up to `n_per_box` contained points are sampled per proposal; a point
/// inside several proposals takes the highest-objectness one (lower index on
/// ties). Pixel collisions go to higher objectness, then nearer depth, then
/// lower point index.
FusionMap build_3d_to_2d_map(std::span<const Proposal> proposals, const Scene& scene, int n_per_box,
                             Rng& rng);

/// Points with [height, C appended probabilities] features.
struct PaintedCloud {
  std::vector<Vec3> points;
  std::vector<double> heights;
  nn::Mat probs;                     // n x C
  std::vector<uint8_t> uncorresponded;  // painted uniform

  size_t size() const { return points.size(); }
  int num_classes() const { return static_cast<int>(probs.cols()); }
  /// n x (1 + C): height then probabilities.
  nn::Mat features() const;
};

/// Appends segmap[pixel] (H x W x C) to each point. Points without a pixel get
/// the uniform distribution.
PaintedCloud paint(const PointCloud& cloud, const nn::Image& segmap);
/// Same shape with an all-zero 2D block (no 2D predictions fused).
PaintedCloud paint_zeros(const PointCloud& cloud, int num_classes);

/// Refinement input for one (already enlarged) box.
struct RefineInput {
  Box3D box;
  nn::Mat rows;  // n x (9 + C); a single zero row when degenerate
  std::vector<int> points;
  bool degenerate = false;
};

/// Samples n points inside `box` (with replacement when fewer exist). Rows
/// are geometric features in the box frame followed by segmap at the point's
/// pixel. A null segmap leaves the C block at zero.
RefineInput assemble_refine_features(const Box3D& box, const PointCloud& cloud, const nn::Image* segmap,
                                     int num_classes, int n, Rng& rng);

/// Gradient of the rows' geometric block with respect to the box that was
/// enlarged by `factor` to build `input`.
BoxGrad refine_features_backward(const RefineInput& input, const PointCloud& cloud, const nn::Mat& drows,
                                 double factor);

}  // namespace mmc
