#include "mmc/fusion.hpp"

#include <stdexcept>
#include <tuple>

namespace mmc {

using nn::Image;
using nn::Mat;

namespace {

// Indices of up to n points drawn without replacement from `pool`.
std::vector<int> draw(const std::vector<int>& pool, size_t n, Rng& rng) {
  if (pool.size() <= n) return pool;
  const auto picks = sample_indices(pool.size(), n, rng);
  std::vector<int> out;
  out.reserve(picks.size());
  for (int i : picks) out.push_back(pool[static_cast<size_t>(i)]);
  return out;
}

// Bounding-sphere rejection before the exact test.
bool inside(const Box3D& b, const Vec3& p) {
  const double r2 = 0.25 * (b.l * b.l + b.w * b.w + b.h * b.h);
  return (p - b.center).squaredNorm() <= r2 && contains(b, p);
}

}  // namespace

Image rgbd_image(const Scene& scene) {
  Image img(scene.height(), scene.width(), 4);
  for (int c = 0; c < 4; ++c) {
    const auto plane = scene.plane(c);
    for (size_t i = 0; i < plane.size(); ++i) img.data(static_cast<Eigen::Index>(i), c) = plane[i];
  }
  return img;
}

FusionMap build_3d_to_2d_map(std::span<const Proposal> proposals, const Scene& scene, int n_per_box,
                             Rng& rng) {
  const int C = scene.num_classes;
  FusionMap map;
  map.num_classes = C;
  map.channels = Image(scene.height(), scene.width(), fusion_channels(C));
  map.channels.data.leftCols(4) = rgbd_image(scene).data;
  map.valid.assign(scene.pixels(), 0);

  const PointCloud& cloud = scene.cloud;
  // Owner of each point: highest-objectness containing proposal.
  std::vector<int> owner(cloud.size(), -1);
  std::vector<std::vector<int>> members(proposals.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (!cloud.pixels[i].valid()) continue;
    for (size_t k = 0; k < proposals.size(); ++k) {
      if (!inside(proposals[k].box, cloud.points[i])) continue;
      members[k].push_back(static_cast<int>(i));
      if (owner[i] < 0 || proposals[k].objectness > proposals[static_cast<size_t>(owner[i])].objectness) {
        owner[i] = static_cast<int>(k);
      }
    }
  }

  // Current writer per pixel, compared by (objectness desc, depth asc, index asc).
  struct Writer {
    double objectness;
    double depth;
    int point;
  };
  std::vector<Writer> writer(scene.pixels(), Writer{-1.0, 0.0, -1});
  auto better = [](const Writer& a, const Writer& b) {
    return std::make_tuple(-a.objectness, a.depth, a.point) < std::make_tuple(-b.objectness, b.depth, b.point);
  };
  for (size_t k = 0; k < proposals.size(); ++k) {
    if (static_cast<int>(proposals[k].class_probs.size()) != C) {
      throw std::invalid_argument("proposal class_probs width differs from scene classes");
    }
    for (int i : draw(members[k], static_cast<size_t>(n_per_box), rng)) {
      const Proposal& src = proposals[static_cast<size_t>(owner[static_cast<size_t>(i)])];
      const Pixel px = cloud.pixels[static_cast<size_t>(i)];
      const size_t cell = static_cast<size_t>(px.v) * scene.width() + px.u;
      const Writer cand{src.objectness, scene.depth(px.u, px.v), i};
      if (writer[cell].point >= 0 && !better(cand, writer[cell])) continue;
      writer[cell] = cand;
      map.valid[cell] = 1;
      auto row = map.channels.data.row(static_cast<Eigen::Index>(cell));
      for (int c = 0; c < C; ++c) row(4 + c) = src.class_probs[static_cast<size_t>(c)];
      const auto g = geometric_features(cloud.points[static_cast<size_t>(i)], src.box).flat();
      for (int j = 0; j < 9; ++j) row(4 + C + j) = g[static_cast<size_t>(j)];
    }
  }
  return map;
}

Mat PaintedCloud::features() const {
  Mat f(static_cast<Eigen::Index>(size()), 1 + num_classes());
  for (size_t i = 0; i < size(); ++i) f(static_cast<Eigen::Index>(i), 0) = heights[i];
  f.rightCols(num_classes()) = probs;
  return f;
}

PaintedCloud paint(const PointCloud& cloud, const Image& segmap) {
  const int C = segmap.channels();
  PaintedCloud out;
  out.points = cloud.points;
  out.heights = cloud.heights.empty() ? height_feature(cloud) : cloud.heights;
  out.probs = Mat::Constant(static_cast<Eigen::Index>(cloud.size()), C, 1.0 / C);
  out.uncorresponded.assign(cloud.size(), 1);
  for (size_t i = 0; i < cloud.size() && !cloud.pixels.empty(); ++i) {
    const Pixel px = cloud.pixels[i];
    if (!px.valid() || px.u >= segmap.w || px.v >= segmap.h) continue;
    out.probs.row(static_cast<Eigen::Index>(i)) = segmap.data.row(px.v * segmap.w + px.u);
    out.uncorresponded[i] = 0;
  }
  return out;
}

PaintedCloud paint_zeros(const PointCloud& cloud, int num_classes) {
  PaintedCloud out;
  out.points = cloud.points;
  out.heights = cloud.heights.empty() ? height_feature(cloud) : cloud.heights;
  out.probs = Mat::Zero(static_cast<Eigen::Index>(cloud.size()), num_classes);
  out.uncorresponded.assign(cloud.size(), 0);
  return out;
}

RefineInput assemble_refine_features(const Box3D& box, const PointCloud& cloud, const Image* segmap,
                                     int num_classes, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("assemble_refine_features: n must be >= 1");
  RefineInput in;
  in.box = box;
  std::vector<int> pool;
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (inside(box, cloud.points[i])) pool.push_back(static_cast<int>(i));
  }
  if (pool.empty()) {
    in.degenerate = true;
    in.rows = Mat::Zero(1, 9 + num_classes);
    return in;
  }
  for (int j : sample_indices(pool.size(), static_cast<size_t>(n), rng)) in.points.push_back(pool[static_cast<size_t>(j)]);
  in.rows = Mat::Zero(n, 9 + num_classes);
  for (int r = 0; r < n; ++r) {
    const size_t i = static_cast<size_t>(in.points[static_cast<size_t>(r)]);
    const auto g = geometric_features(cloud.points[i], box).flat();
    for (int j = 0; j < 9; ++j) in.rows(r, j) = g[static_cast<size_t>(j)];
    if (!segmap) continue;
    const Pixel px = cloud.pixels.empty() ? Pixel{} : cloud.pixels[i];
    if (px.valid()) {
      in.rows.block(r, 9, 1, num_classes) = segmap->data.row(px.v * segmap->w + px.u);
    } else {
      in.rows.block(r, 9, 1, num_classes).setConstant(1.0 / num_classes);
    }
  }
  return in;
}

BoxGrad refine_features_backward(const RefineInput& input, const PointCloud& cloud, const Mat& drows,
                                 double factor) {
  BoxGrad total;
  if (input.degenerate) return total;
  for (size_t r = 0; r < input.points.size(); ++r) {
    std::array<double, 9> d;
    for (int j = 0; j < 9; ++j) d[static_cast<size_t>(j)] = drows(static_cast<Eigen::Index>(r), j);
    total += geometric_features_backward(cloud.points[static_cast<size_t>(input.points[r])], input.box, d);
  }
  total.l *= factor;
  total.h *= factor;
  total.w *= factor;
  return total;
}

}  // namespace mmc
