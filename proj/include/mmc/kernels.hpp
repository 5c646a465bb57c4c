#pragma once

// Data-parallel inner loops. Every kernel exists twice: a plain serial
// reference (kept for tests and benchmarks) and an OpenMP version. Each
// OpenMP kernel writes disjoint outputs in a fixed reduction order, so its
// result does not depend on the thread count.

#include "mmc/camera.hpp"
#include "mmc/geom3d.hpp"

#include <span>
#include <vector>

namespace mmc::kernels {

/// Plane n . p = offset, tagged with a surface id for hit reporting.
struct RenderPlane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  int id = -1;
};

/// First surface along a pixel-center ray. `id` is the box index, a plane id,
/// or kNoHit. `depth` is the camera-frame z of the hit.
struct RayHit {
  double depth = 0.0;
  int id = -1;
  Vec3 normal = Vec3::Zero();
};
inline constexpr int kNoHit = -1000;

namespace serial {

/// Greedy farthest-point sampling; ties broken by lowest index.
std::vector<int> farthest_point_sample(std::span<const Vec3> points, int m, int start);

/// For each center, up to k indices within `radius` ordered by (distance,
/// index), padded by repeating the nearest. A center with no neighbor in
/// range gets its nearest point overall. Result is centers x k, row-major.
std::vector<int> ball_query(std::span<const Vec3> points, std::span<const Vec3> centers,
                            double radius, int k);

/// Row-major (h*w) x c input, zero padding (ksize-1)/2. cols is
/// (ho*wo) x (ksize*ksize*c) with column order (ky, kx, channel).
void im2col(const double* in, int h, int w, int c, int ksize, int stride, double* cols);
/// Adjoint of im2col: accumulates into in_grad.
void col2im(const double* cols, int h, int w, int c, int ksize, int stride, double* in_grad);

/// a.size() x b.size() row-major IoU matrix.
std::vector<double> pairwise_iou3d(std::span<const Box3D> a, std::span<const Box3D> b);

/// Ray-casts every pixel center; out has K.width*K.height entries.
void render(const Intrinsics& K, const Pose& T, std::span<const Box3D> boxes,
            std::span<const RenderPlane> planes, std::span<RayHit> out);

}  // namespace serial

namespace omp {

std::vector<int> farthest_point_sample(std::span<const Vec3> points, int m, int start);
std::vector<int> ball_query(std::span<const Vec3> points, std::span<const Vec3> centers,
                            double radius, int k);
void im2col(const double* in, int h, int w, int c, int ksize, int stride, double* cols);
void col2im(const double* cols, int h, int w, int c, int ksize, int stride, double* in_grad);
std::vector<double> pairwise_iou3d(std::span<const Box3D> a, std::span<const Box3D> b);
void render(const Intrinsics& K, const Pose& T, std::span<const Box3D> boxes,
            std::span<const RenderPlane> planes, std::span<RayHit> out);

}  // namespace omp

inline int conv_out_size(int n, int stride) { return (n - 1) / stride + 1; }

/// Number of OpenMP threads available to the kernels.
int max_threads();

// The library calls the parallel versions.
using omp::ball_query;
using omp::col2im;
using omp::farthest_point_sample;
using omp::im2col;
using omp::pairwise_iou3d;
using omp::render;

}  // namespace mmc::kernels
