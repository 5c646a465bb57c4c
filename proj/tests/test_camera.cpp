#include "mmc/camera.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

namespace mmc {
namespace {

Intrinsics small_camera() {
  Intrinsics K;
  K.fx = 50.0;
  K.fy = 55.0;
  K.cx = 15.5;
  K.cy = 11.0;
  K.width = 32;
  K.height = 24;
  return K;
}

TEST(Camera, ProjectUnprojectRoundTrip) {
  const Intrinsics K = small_camera();
  const Pose T = Pose::looking_forward(Vec3(0.2, -0.1, 1.5), 0.4);
  nn::Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const double u = test::uniform(rng, 0, K.width);
    const double v = test::uniform(rng, 0, K.height);
    const double d = test::uniform(rng, 0.5, 8.0);
    const Vec3 p = unproject(K, T, u, v, d);
    const auto q = project(K, T, p);
    ASSERT_TRUE(q);
    EXPECT_NEAR(q->u, u, 1e-9);
    EXPECT_NEAR(q->v, v, 1e-9);
    EXPECT_NEAR(q->depth, d, 1e-9);
    EXPECT_TRUE(q->in_frame);
  }
}

TEST(Camera, BehindCameraIsRejected) {
  const Intrinsics K = small_camera();
  const Pose T = Pose::looking_forward(Vec3(0, 0, 1), 0.0);
  EXPECT_FALSE(project(K, T, Vec3(0, -1, 1)));
  EXPECT_TRUE(project(K, T, Vec3(0, 1, 1)));
  EXPECT_THROW(unproject(K, T, 1, 1, 0.0), std::invalid_argument);
}

TEST(Camera, LookingForwardAxes) {
  const Pose T = Pose::looking_forward(Vec3(1, 2, 3), 0.0);
  EXPECT_LT((T.camera_position() - Vec3(1, 2, 3)).norm(), 1e-12);
  const Vec3 ahead = T.to_camera(Vec3(1, 5, 3));
  EXPECT_NEAR(ahead.z(), 3.0, 1e-12);
  EXPECT_NEAR(ahead.x(), 0.0, 1e-12);
  const Vec3 up = T.to_camera(Vec3(1, 2, 4));
  EXPECT_NEAR(up.y(), -1.0, 1e-12);
}

TEST(Camera, PoseComposition) {
  const Pose a = Pose::looking_forward(Vec3(1, 0, 2), 0.3);
  const Pose b = Pose::looking_forward(Vec3(0, -1, 1), -0.2);
  const Vec3 p(0.3, 0.7, -0.2);
  EXPECT_LT(((a * b).to_camera(p) - a.to_camera(b.to_camera(p))).norm(), 1e-12);
}

TEST(Camera, RasterCellUsesFloor) {
  const Intrinsics K = small_camera();
  Projection p;
  p.u = 3.999;
  p.v = 0.0;
  p.in_frame = true;
  EXPECT_EQ(raster_cell(K, p), (Pixel{3, 0}));
  p.u = 32.0;
  p.in_frame = false;
  EXPECT_FALSE(raster_cell(K, p).valid());
}

TEST(Camera, DepthToCloudUsesPixelCenters) {
  const Intrinsics K = small_camera();
  const Pose T = Pose::looking_forward(Vec3(0, 0, 1.2), 0.2);
  std::vector<float> depth(static_cast<size_t>(K.width * K.height), 2.0f);
  depth[5] = 0.0f;
  depth[7] = std::numeric_limits<float>::quiet_NaN();
  const PointCloud cloud = depth_to_cloud(depth, K, T);
  EXPECT_EQ(cloud.size(), depth.size() - 2);
  ASSERT_EQ(cloud.pixels.size(), cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    const auto q = project(K, T, cloud.points[i]);
    ASSERT_TRUE(q);
    EXPECT_NEAR(q->u, cloud.pixels[i].u + 0.5, 1e-6);
    EXPECT_NEAR(q->v, cloud.pixels[i].v + 0.5, 1e-6);
    EXPECT_EQ(raster_cell(K, *q), cloud.pixels[i]);
  }
}

TEST(Camera, GroundHeightNearestRank) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 200; ++i) pts.emplace_back(0, 0, 0.01 * i);
  // ceil(0.01 * 200) = 2nd smallest
  EXPECT_NEAR(ground_height(pts), 0.01, 1e-15);
  EXPECT_THROW(ground_height(std::vector<Vec3>{}), std::invalid_argument);
  PointCloud c;
  c.points = pts;
  const auto h = height_feature(c);
  EXPECT_NEAR(h[0], -0.01, 1e-15);
  EXPECT_NEAR(h[199], 1.98, 1e-12);
}

}  // namespace
}  // namespace mmc
