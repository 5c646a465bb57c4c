#include "mmc/data.hpp"
#include "mmc/kernels.hpp"

#include <benchmark/benchmark.h>

#include <array>
#include <random>

namespace {

using namespace mmc;

const Scene& scene() {
  static const Scene s = synth_scene(1, SynthConfig{});
  return s;
}

std::vector<Vec3> cloud(size_t n) {
  const auto& p = scene().cloud.points;
  std::vector<Vec3> out;
  for (size_t i = 0; i < n; ++i) out.push_back(p[(i * 7919) % p.size()]);
  return out;
}

template <auto Fn>
void BM_fps(benchmark::State& st) {
  const auto pts = cloud(4096);
  for (auto _ : st) benchmark::DoNotOptimize(Fn(pts, static_cast<int>(st.range(0)), 0));
}

template <auto Fn>
void BM_ball_query(benchmark::State& st) {
  const auto pts = cloud(4096);
  const auto centers = cloud(1024);
  for (auto _ : st) benchmark::DoNotOptimize(Fn(pts, centers, 0.2, 16));
}

std::vector<double> feature_map(int h, int w, int c) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> v(static_cast<size_t>(h) * w * c);
  for (double& x : v) x = d(rng);
  return v;
}

template <auto Fn>
void BM_im2col(benchmark::State& st) {
  const int h = 96, w = 128, c = static_cast<int>(st.range(0));
  const auto in = feature_map(h, w, c);
  std::vector<double> cols(static_cast<size_t>(h) * w * 9 * c);
  for (auto _ : st) {
    Fn(in.data(), h, w, c, 3, 1, cols.data());
    benchmark::ClobberMemory();
  }
}

template <auto Fn>
void BM_col2im(benchmark::State& st) {
  const int h = 96, w = 128, c = static_cast<int>(st.range(0));
  const auto cols = feature_map(h * w * 9, 1, c);
  std::vector<double> grad(static_cast<size_t>(h) * w * c);
  for (auto _ : st) {
    Fn(cols.data(), h, w, c, 3, 1, grad.data());
    benchmark::ClobberMemory();
  }
}

template <auto Fn>
void BM_pairwise_iou(benchmark::State& st) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<Box3D> boxes(static_cast<size_t>(st.range(0)));
  for (Box3D& b : boxes) {
    b.center = Vec3(d(rng), d(rng), d(rng));
    b.heading = d(rng) * kPi;
  }
  for (auto _ : st) benchmark::DoNotOptimize(Fn(boxes, boxes));
}

template <auto Fn>
void BM_render(benchmark::State& st) {
  const Scene& s = scene();
  std::vector<Box3D> boxes;
  for (const GtBox& g : s.boxes) boxes.push_back(g.box);
  const std::array<kernels::RenderPlane, 1> planes{kernels::RenderPlane{Vec3::UnitZ(), 0.0, 0}};
  std::vector<kernels::RayHit> hits(s.pixels());
  for (auto _ : st) {
    Fn(s.K, s.T, boxes, planes, hits);
    benchmark::ClobberMemory();
  }
}

BENCHMARK(BM_fps<kernels::serial::farthest_point_sample>)->Name("fps/serial")->Arg(1024);
BENCHMARK(BM_fps<kernels::omp::farthest_point_sample>)->Name("fps/omp")->Arg(1024);
BENCHMARK(BM_ball_query<kernels::serial::ball_query>)->Name("ball_query/serial");
BENCHMARK(BM_ball_query<kernels::omp::ball_query>)->Name("ball_query/omp");
BENCHMARK(BM_im2col<kernels::serial::im2col>)->Name("im2col/serial")->Arg(16);
BENCHMARK(BM_im2col<kernels::omp::im2col>)->Name("im2col/omp")->Arg(16);
BENCHMARK(BM_col2im<kernels::serial::col2im>)->Name("col2im/serial")->Arg(16);
BENCHMARK(BM_col2im<kernels::omp::col2im>)->Name("col2im/omp")->Arg(16);
BENCHMARK(BM_pairwise_iou<kernels::serial::pairwise_iou3d>)->Name("pairwise_iou3d/serial")->Arg(64);
BENCHMARK(BM_pairwise_iou<kernels::omp::pairwise_iou3d>)->Name("pairwise_iou3d/omp")->Arg(64);
BENCHMARK(BM_render<kernels::serial::render>)->Name("render/serial");
BENCHMARK(BM_render<kernels::omp::render>)->Name("render/omp");

}  // namespace

BENCHMARK_MAIN();
