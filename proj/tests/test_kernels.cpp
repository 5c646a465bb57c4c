#include "mmc/kernels.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <limits>

namespace mmc {
namespace {

std::vector<Vec3> random_points(int n, nn::Rng& rng, double spread = 1.0) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) {
    pts.emplace_back(test::uniform(rng, -spread, spread), test::uniform(rng, -spread, spread),
                     test::uniform(rng, -spread, spread));
  }
  return pts;
}

// O(nm): recompute every point's distance to the chosen set from scratch.
std::vector<int> brute_fps(const std::vector<Vec3>& pts, int m, int start) {
  std::vector<int> out{start};
  while (static_cast<int>(out.size()) < m) {
    int best = -1;
    double best_d = -1;
    for (size_t i = 0; i < pts.size(); ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (int j : out) d = std::min(d, (pts[i] - pts[static_cast<size_t>(j)]).squaredNorm());
      if (d > best_d) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    out.push_back(best);
  }
  return out;
}

std::vector<int> brute_ball(const std::vector<Vec3>& pts, const std::vector<Vec3>& centers, double r, int k) {
  std::vector<int> out;
  for (const Vec3& c : centers) {
    std::vector<std::pair<double, int>> all;
    for (size_t i = 0; i < pts.size(); ++i) all.emplace_back((pts[i] - c).squaredNorm(), static_cast<int>(i));
    std::sort(all.begin(), all.end());
    std::vector<int> in;
    for (const auto& [d, i] : all) {
      if (d <= r * r && static_cast<int>(in.size()) < k) in.push_back(i);
    }
    if (in.empty()) in.push_back(all.front().second);
    while (static_cast<int>(in.size()) < k) in.push_back(in.front());
    out.insert(out.end(), in.begin(), in.end());
  }
  return out;
}

TEST(Kernels, FpsMatchesBruteForce) {
  nn::Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 10 + trial * 12;
    const auto pts = random_points(n, rng);
    const int m = std::min(n, 32);
    const int start = trial % n;
    const auto want = brute_fps(pts, m, start);
    EXPECT_EQ(kernels::serial::farthest_point_sample(pts, m, start), want);
    EXPECT_EQ(kernels::omp::farthest_point_sample(pts, m, start), want);
  }
}

TEST(Kernels, FpsTiesGoToLowestIndex) {
  const std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0)};
  EXPECT_EQ(kernels::serial::farthest_point_sample(pts, 2, 0), (std::vector<int>{0, 1}));
}

TEST(Kernels, BallQueryMatchesBruteForce) {
  nn::Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pts = random_points(200, rng);
    auto centers = random_points(30, rng, 1.5);
    const double r = 0.2 + 0.02 * trial;
    const auto want = brute_ball(pts, centers, r, 8);
    EXPECT_EQ(kernels::serial::ball_query(pts, centers, r, 8), want);
    EXPECT_EQ(kernels::omp::ball_query(pts, centers, r, 8), want);
  }
}

TEST(Kernels, Im2colAdjoint) {
  nn::Rng rng(3);
  for (int stride : {1, 2}) {
    for (int k : {1, 3}) {
      const int h = 7;
      const int w = 9;
      const int c = 3;
      const int ho = kernels::conv_out_size(h, stride);
      const int wo = kernels::conv_out_size(w, stride);
      const nn::Mat x = test::random_mat(h * w, c, rng);
      const nn::Mat y = test::random_mat(ho * wo, k * k * c, rng);
      nn::Mat cols(ho * wo, k * k * c);
      kernels::serial::im2col(x.data(), h, w, c, k, stride, cols.data());
      nn::Mat back = nn::Mat::Zero(h * w, c);
      kernels::serial::col2im(y.data(), h, w, c, k, stride, back.data());
      EXPECT_NEAR(cols.cwiseProduct(y).sum(), x.cwiseProduct(back).sum(), 1e-10);

      nn::Mat cols2(ho * wo, k * k * c);
      kernels::omp::im2col(x.data(), h, w, c, k, stride, cols2.data());
      EXPECT_EQ(cols, cols2);
      nn::Mat back2 = nn::Mat::Zero(h * w, c);
      kernels::omp::col2im(y.data(), h, w, c, k, stride, back2.data());
      EXPECT_EQ(back, back2);
    }
  }
}

TEST(Kernels, Im2colCenterColumnIsInput) {
  nn::Rng rng(4);
  const nn::Mat x = test::random_mat(5 * 6, 2, rng);
  nn::Mat cols(30, 18);
  kernels::serial::im2col(x.data(), 5, 6, 2, 3, 1, cols.data());
  EXPECT_EQ(nn::Mat(cols.middleCols(8, 2)), x);
  EXPECT_EQ(cols(0, 0), 0.0);
}

TEST(Kernels, PairwiseIouSerialEqualsParallel) {
  nn::Rng rng(5);
  std::vector<Box3D> a;
  std::vector<Box3D> b;
  for (int i = 0; i < 40; ++i) a.push_back(test::random_box(rng, 0.5));
  for (int i = 0; i < 25; ++i) b.push_back(test::random_box(rng, 0.5));
  const auto s = kernels::serial::pairwise_iou3d(a, b);
  EXPECT_EQ(s, kernels::omp::pairwise_iou3d(a, b));
  EXPECT_EQ(s[3 * b.size() + 7], iou3d(a[3], b[7]));
}

TEST(Kernels, RenderSerialEqualsParallel) {
  Intrinsics K;
  K.fx = K.fy = 40;
  K.cx = 20;
  K.cy = 15;
  K.width = 40;
  K.height = 30;
  const Pose T = Pose::looking_forward(Vec3(0, 0, 1.5), 0.3);
  nn::Rng rng(6);
  std::vector<Box3D> boxes;
  for (int i = 0; i < 4; ++i) {
    Box3D b = test::random_box(rng, 0.8);
    b.center.y() += 3.0;
    boxes.push_back(b);
  }
  const std::vector<kernels::RenderPlane> planes{{Vec3::UnitZ(), 0.0, -2}};
  std::vector<kernels::RayHit> s(40 * 30);
  std::vector<kernels::RayHit> p(40 * 30);
  kernels::serial::render(K, T, boxes, planes, s);
  kernels::omp::render(K, T, boxes, planes, p);
  int hits = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s[i].id, p[i].id);
    EXPECT_EQ(s[i].depth, p[i].depth);
    if (s[i].id >= 0) ++hits;
  }
  EXPECT_GT(hits, 0);
}

TEST(Kernels, RenderFrontoParallelFaceDepth) {
  Intrinsics K;
  K.fx = K.fy = 60;
  K.cx = 16;
  K.cy = 12;
  K.width = 32;
  K.height = 24;
  const Pose T = Pose::looking_forward(Vec3(0, 0, 1.0), 0.0);
  Box3D b;
  b.center = Vec3(0.1, 4.0, 1.05);
  b.l = 2.0;
  b.w = 1.0;
  b.h = 2.0;
  std::vector<kernels::RayHit> hits(32 * 24);
  kernels::serial::render(K, T, std::span<const Box3D>(&b, 1), {}, hits);
  int checked = 0;
  for (const auto& h : hits) {
    if (h.id != 0) continue;
    EXPECT_NEAR(h.depth, 3.5, 1e-6);
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

}  // namespace
}  // namespace mmc
