#include "mmc/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace mmc::kernels {

namespace {

void check_fps_args(std::span<const Vec3> points, int m, int start) {
  if (m < 0 || static_cast<size_t>(m) > points.size()) {
    throw std::invalid_argument("farthest_point_sample: m out of range");
  }
  if (m > 0 && (start < 0 || static_cast<size_t>(start) >= points.size())) {
    throw std::invalid_argument("farthest_point_sample: start out of range");
  }
}

std::vector<int> query_one(std::span<const Vec3> points, const Vec3& center, double r2, int k,
                           std::vector<std::pair<double, int>>& scratch) {
  scratch.clear();
  double best_d = std::numeric_limits<double>::infinity();
  int best_i = 0;
  for (size_t j = 0; j < points.size(); ++j) {
    const double d = (points[j] - center).squaredNorm();
    if (d <= r2) scratch.emplace_back(d, static_cast<int>(j));
    if (d < best_d) {
      best_d = d;
      best_i = static_cast<int>(j);
    }
  }
  std::vector<int> out(static_cast<size_t>(k), best_i);
  if (scratch.empty()) return out;
  const size_t take = std::min(scratch.size(), static_cast<size_t>(k));
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<long>(take), scratch.end());
  for (size_t i = 0; i < take; ++i) out[i] = scratch[i].second;
  for (size_t i = take; i < out.size(); ++i) out[i] = scratch[0].second;
  return out;
}

// Slab test in the box frame. Returns entry distance along the ray, or +inf.
double ray_box(const Vec3& origin, const Vec3& dir, const Box3D& b, Vec3* normal) {
  const Vec3 o = to_canonical(origin, b);
  const double c = std::cos(b.heading);
  const double s = std::sin(b.heading);
  const Vec3 d{c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z()};
  const Vec3 half = 0.5 * b.axis_extents();
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  int enter_axis = -1;
  double enter_sign = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < -half[a] || o[a] > half[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double t0 = (-half[a] - o[a]) / d[a];
    double t1 = (half[a] - o[a]) / d[a];
    double sign = -1.0;  // entering through the -face
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1.0;
    }
    if (t0 > t_enter) {
      t_enter = t0;
      enter_axis = a;
      enter_sign = sign;
    }
    t_exit = std::min(t_exit, t1);
  }
  if (enter_axis < 0 || t_enter > t_exit || t_enter <= 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  Vec3 n_local = Vec3::Zero();
  n_local[enter_axis] = enter_sign;
  *normal = Vec3{c * n_local.x() - s * n_local.y(), s * n_local.x() + c * n_local.y(), n_local.z()};
  return t_enter;
}

RayHit cast_pixel(const Intrinsics& K, const Pose& T, const Vec3& origin, int u, int v,
                  std::span<const Box3D> boxes, std::span<const RenderPlane> planes) {
  // Unnormalized direction with unit camera-frame z, so t equals depth.
  const Vec3 dir_cam{(u + 0.5 - K.cx) / K.fx, (v + 0.5 - K.cy) / K.fy, 1.0};
  const Vec3 dir = T.rotation.transpose() * dir_cam;
  RayHit hit;
  hit.id = kNoHit;
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < boxes.size(); ++i) {
    Vec3 n;
    const double t = ray_box(origin, dir, boxes[i], &n);
    if (t < best) {
      best = t;
      hit.id = static_cast<int>(i);
      hit.normal = n;
    }
  }
  for (const RenderPlane& pl : planes) {
    const double denom = pl.normal.dot(dir);
    if (std::abs(denom) < 1e-15) continue;
    const double t = (pl.offset - pl.normal.dot(origin)) / denom;
    if (t > 0.0 && t < best) {
      best = t;
      hit.id = pl.id;
      hit.normal = denom < 0.0 ? pl.normal : Vec3(-pl.normal);
    }
  }
  hit.depth = std::isfinite(best) ? best : 0.0;
  return hit;
}

void check_render(const Intrinsics& K, std::span<RayHit> out) {
  if (out.size() != static_cast<size_t>(K.width) * K.height) {
    throw std::invalid_argument("render: output size does not match image");
  }
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }

namespace serial {

std::vector<int> farthest_point_sample(std::span<const Vec3> points, int m, int start) {
  check_fps_args(points, m, start);
  std::vector<int> out;
  if (m == 0) return out;
  out.reserve(static_cast<size_t>(m));
  std::vector<double> dist(points.size(), std::numeric_limits<double>::infinity());
  int last = start;
  out.push_back(last);
  for (int i = 1; i < m; ++i) {
    int best = 0;
    double best_d = -1.0;
    for (size_t j = 0; j < points.size(); ++j) {
      dist[j] = std::min(dist[j], (points[j] - points[last]).squaredNorm());
      if (dist[j] > best_d) {
        best_d = dist[j];
        best = static_cast<int>(j);
      }
    }
    last = best;
    out.push_back(last);
  }
  return out;
}

std::vector<int> ball_query(std::span<const Vec3> points, std::span<const Vec3> centers,
                            double radius, int k) {
  if (points.empty() || k <= 0) throw std::invalid_argument("ball_query: empty input");
  const double r2 = std::isinf(radius) ? radius : radius * radius;
  std::vector<int> out;
  out.reserve(centers.size() * static_cast<size_t>(k));
  std::vector<std::pair<double, int>> scratch;
  for (const Vec3& c : centers) {
    const auto row = query_one(points, c, r2, k, scratch);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

void im2col(const double* in, int h, int w, int c, int ksize, int stride, double* cols) {
  const int pad = (ksize - 1) / 2;
  const int ho = conv_out_size(h, stride);
  const int wo = conv_out_size(w, stride);
  const int width = ksize * ksize * c;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* row = cols + static_cast<size_t>(oy * wo + ox) * width;
      for (int ky = 0; ky < ksize; ++ky) {
        for (int kx = 0; kx < ksize; ++kx) {
          const int y = oy * stride + ky - pad;
          const int x = ox * stride + kx - pad;
          double* dst = row + (ky * ksize + kx) * c;
          if (y < 0 || y >= h || x < 0 || x >= w) {
            std::fill(dst, dst + c, 0.0);
          } else {
            const double* src = in + static_cast<size_t>(y * w + x) * c;
            std::copy(src, src + c, dst);
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int h, int w, int c, int ksize, int stride, double* in_grad) {
  const int pad = (ksize - 1) / 2;
  const int ho = conv_out_size(h, stride);
  const int wo = conv_out_size(w, stride);
  const int width = ksize * ksize * c;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const double* row = cols + static_cast<size_t>(oy * wo + ox) * width;
      for (int ky = 0; ky < ksize; ++ky) {
        for (int kx = 0; kx < ksize; ++kx) {
          const int y = oy * stride + ky - pad;
          const int x = ox * stride + kx - pad;
          if (y < 0 || y >= h || x < 0 || x >= w) continue;
          double* dst = in_grad + static_cast<size_t>(y * w + x) * c;
          const double* src = row + (ky * ksize + kx) * c;
          for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

std::vector<double> pairwise_iou3d(std::span<const Box3D> a, std::span<const Box3D> b) {
  std::vector<double> out(a.size() * b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t j = 0; j < b.size(); ++j) out[i * b.size() + j] = iou3d(a[i], b[j]);
  }
  return out;
}

void render(const Intrinsics& K, const Pose& T, std::span<const Box3D> boxes,
            std::span<const RenderPlane> planes, std::span<RayHit> out) {
  check_render(K, out);
  const Vec3 origin = T.camera_position();
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      out[static_cast<size_t>(v) * K.width + u] = cast_pixel(K, T, origin, u, v, boxes, planes);
    }
  }
}

}  // namespace serial

namespace omp {

std::vector<int> farthest_point_sample(std::span<const Vec3> points, int m, int start) {
  check_fps_args(points, m, start);
  std::vector<int> out;
  if (m == 0) return out;
  out.reserve(static_cast<size_t>(m));
  const long n = static_cast<long>(points.size());
  std::vector<double> dist(points.size(), std::numeric_limits<double>::infinity());
  int last = start;
  out.push_back(last);
  for (int i = 1; i < m; ++i) {
    int best = 0;
    double best_d = -1.0;
    const Vec3 anchor = points[last];
#pragma omp parallel
    {
      int local_best = 0;
      double local_d = -1.0;
#pragma omp for schedule(static)
      for (long j = 0; j < n; ++j) {
        const double d = std::min(dist[j], (points[j] - anchor).squaredNorm());
        dist[j] = d;
        if (d > local_d) {
          local_d = d;
          local_best = static_cast<int>(j);
        }
      }
#pragma omp critical
      {
        if (local_d > best_d || (local_d == best_d && local_best < best)) {
          best_d = local_d;
          best = local_best;
        }
      }
    }
    last = best;
    out.push_back(last);
  }
  return out;
}

std::vector<int> ball_query(std::span<const Vec3> points, std::span<const Vec3> centers,
                            double radius, int k) {
  if (points.empty() || k <= 0) throw std::invalid_argument("ball_query: empty input");
  const double r2 = std::isinf(radius) ? radius : radius * radius;
  std::vector<int> out(centers.size() * static_cast<size_t>(k));
  const long nc = static_cast<long>(centers.size());
#pragma omp parallel
  {
    std::vector<std::pair<double, int>> scratch;
#pragma omp for schedule(static)
    for (long i = 0; i < nc; ++i) {
      const auto row = query_one(points, centers[i], r2, k, scratch);
      std::copy(row.begin(), row.end(), out.begin() + i * k);
    }
  }
  return out;
}

void im2col(const double* in, int h, int w, int c, int ksize, int stride, double* cols) {
  const int pad = (ksize - 1) / 2;
  const int ho = conv_out_size(h, stride);
  const int wo = conv_out_size(w, stride);
  const int width = ksize * ksize * c;
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* row = cols + static_cast<size_t>(oy * wo + ox) * width;
      for (int ky = 0; ky < ksize; ++ky) {
        const int y = oy * stride + ky - pad;
        for (int kx = 0; kx < ksize; ++kx) {
          const int x = ox * stride + kx - pad;
          double* dst = row + (ky * ksize + kx) * c;
          if (y < 0 || y >= h || x < 0 || x >= w) {
            std::fill(dst, dst + c, 0.0);
          } else {
            const double* src = in + static_cast<size_t>(y * w + x) * c;
            std::copy(src, src + c, dst);
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int h, int w, int c, int ksize, int stride, double* in_grad) {
  // Gather form. Descending (ky, kx) visits outputs in the serial scatter order.
  const int pad = (ksize - 1) / 2;
  const int ho = conv_out_size(h, stride);
  const int wo = conv_out_size(w, stride);
  const int width = ksize * ksize * c;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* dst = in_grad + static_cast<size_t>(y * w + x) * c;
      for (int ky = ksize - 1; ky >= 0; --ky) {
        const int ny = y + pad - ky;
        if (ny < 0 || ny % stride != 0) continue;
        const int oy = ny / stride;
        if (oy >= ho) continue;
        for (int kx = ksize - 1; kx >= 0; --kx) {
          const int nx = x + pad - kx;
          if (nx < 0 || nx % stride != 0) continue;
          const int ox = nx / stride;
          if (ox >= wo) continue;
          const double* src = cols + static_cast<size_t>(oy * wo + ox) * width + (ky * ksize + kx) * c;
          for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

std::vector<double> pairwise_iou3d(std::span<const Box3D> a, std::span<const Box3D> b) {
  std::vector<double> out(a.size() * b.size());
  const long na = static_cast<long>(a.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (long i = 0; i < na; ++i) {
    for (size_t j = 0; j < b.size(); ++j) out[i * b.size() + j] = iou3d(a[i], b[j]);
  }
  return out;
}

void render(const Intrinsics& K, const Pose& T, std::span<const Box3D> boxes,
            std::span<const RenderPlane> planes, std::span<RayHit> out) {
  check_render(K, out);
  const Vec3 origin = T.camera_position();
#pragma omp parallel for schedule(static)
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      out[static_cast<size_t>(v) * K.width + u] = cast_pixel(K, T, origin, u, v, boxes, planes);
    }
  }
}

}  // namespace omp

}  // namespace mmc::kernels
