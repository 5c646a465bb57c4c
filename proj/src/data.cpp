#include "mmc/data.hpp"

#include "mmc/errors.hpp"
#include "mmc/kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mmc {

namespace {

// (l, w, h) in meters, l >= w.
constexpr std::array<std::array<double, 3>, kMaxSynthClasses> kClassSizes{{
    {1.40, 0.80, 0.75},  // table
    {0.55, 0.50, 0.90},  // chair
    {1.00, 0.45, 1.25},  // cabinet
    {1.90, 0.90, 0.80},  // sofa
    {2.00, 1.50, 0.55},  // bed
    {1.20, 0.65, 0.72},  // desk
    {0.90, 0.50, 0.95},  // dresser
    {0.45, 0.40, 0.55},  // night stand
    {0.95, 0.35, 1.80},  // bookshelf
    {1.60, 0.75, 0.50},  // bathtub
}};

constexpr std::array<std::array<double, 3>, kMaxSynthClasses> kClassAlbedo{{
    {0.75, 0.30, 0.25},
    {0.30, 0.65, 0.30},
    {0.30, 0.35, 0.75},
    {0.70, 0.65, 0.25},
    {0.65, 0.30, 0.65},
    {0.25, 0.65, 0.65},
    {0.85, 0.55, 0.30},
    {0.45, 0.30, 0.20},
    {0.55, 0.75, 0.45},
    {0.90, 0.90, 0.85},
}};

constexpr int kGroundId = -2;
constexpr int kWallId = -3;

double uniform(Rng& rng, double a, double b) {
  return std::uniform_real_distribution<double>(a, b)(rng);
}

double bev_iou(const Box3D& a, const Box3D& b) {
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const double inter = convex_intersection_area(ca, cb);
  const double uni = a.l * a.w + b.l * b.w - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Box3D inset_box(const Box3D& b, double inset) {
  Box3D r = b;
  r.l = std::max(b.l - 2.0 * inset, 1e-4);
  r.w = std::max(b.w - 2.0 * inset, 1e-4);
  r.h = std::max(b.h - 2.0 * inset, 1e-4);
  return r;
}

}  // namespace

uint64_t derive_seed(uint64_t master, uint64_t index) {
  uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Vec3 class_mean_size(int cls) {
  if (cls < 0 || cls >= kMaxSynthClasses) throw std::invalid_argument("class id out of range");
  const auto& s = kClassSizes[static_cast<size_t>(cls)];
  return {s[0], s[1], s[2]};
}

Vec3 class_albedo(int cls) {
  if (cls < 0 || cls >= kMaxSynthClasses) throw std::invalid_argument("class id out of range");
  const auto& a = kClassAlbedo[static_cast<size_t>(cls)];
  return {a[0], a[1], a[2]};
}

void SynthConfig::validate() const {
  if (num_classes < 1 || num_classes > kMaxSynthClasses) {
    throw ConfigError("synthetic scenes support 1.." + std::to_string(kMaxSynthClasses) + " classes");
  }
  if (min_boxes < 0 || max_boxes < min_boxes) throw ConfigError("invalid box count range");
  if (height < 8 || width < 8) throw ConfigError("image too small");
  if (!(depth_dropout >= 0.0 && depth_dropout < 1.0)) throw ConfigError("depth_dropout out of range");
  if (!(near_y > 0.0 && far_y > near_y && wall_y > far_y)) throw ConfigError("invalid placement range");
}

void Scene::derive() {
  cloud = depth_to_cloud(plane(3), K, T);
  if (!cloud.empty()) cloud.heights = height_feature(cloud);
  seg_gt = gen_2d_gt(*this);
}

Scene synth_scene(uint64_t seed, const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  Scene scene;
  scene.seed = seed;
  scene.num_classes = cfg.num_classes;
  scene.K = Intrinsics{cfg.focal, cfg.focal, 0.5 * cfg.width, 0.5 * cfg.height, cfg.width, cfg.height};
  const double cam_h = cfg.camera_height + uniform(rng, -1.0, 1.0) * cfg.camera_height_jitter;
  const double tilt = (cfg.tilt_deg + uniform(rng, -1.0, 1.0) * cfg.tilt_jitter_deg) * kPi / 180.0;
  scene.T = Pose::looking_forward(Vec3{0.0, 0.0, cam_h}, tilt);

  // Placement on the ground plane inside the horizontal field of view.
  const double half_fov = std::atan(0.5 * cfg.width / cfg.focal);
  std::uniform_int_distribution<int> count_dist(cfg.min_boxes, cfg.max_boxes);
  std::uniform_int_distribution<int> class_dist(0, cfg.num_classes - 1);
  const int wanted = count_dist(rng);
  std::vector<Vec3> albedo;
  for (int i = 0; i < wanted; ++i) {
    const int cls = class_dist(rng);
    const Vec3 mean = class_mean_size(cls);
    GtBox g;
    g.cls = cls;
    g.box.l = mean.x() * (1.0 + uniform(rng, -1.0, 1.0) * cfg.size_jitter);
    g.box.w = mean.y() * (1.0 + uniform(rng, -1.0, 1.0) * cfg.size_jitter);
    g.box.h = mean.z() * (1.0 + uniform(rng, -1.0, 1.0) * cfg.size_jitter);
    g.box.heading = uniform(rng, -cfg.yaw_range, cfg.yaw_range);
    bool placed = false;
    for (int attempt = 0; attempt < cfg.placement_tries && !placed; ++attempt) {
      const double y = uniform(rng, cfg.near_y, cfg.far_y);
      const double half_width = std::max(0.0, y * std::tan(half_fov) - cfg.side_margin);
      const double x = uniform(rng, -half_width, half_width);
      g.box.center = Vec3{x, y, 0.5 * g.box.h};
      placed = std::all_of(scene.boxes.begin(), scene.boxes.end(), [&](const GtBox& o) {
        return bev_iou(o.box, g.box) < cfg.max_bev_iou;
      });
    }
    Vec3 color = class_albedo(cls);
    for (int c = 0; c < 3; ++c) {
      color[c] = std::clamp(color[c] + uniform(rng, -1.0, 1.0) * cfg.color_jitter, 0.0, 1.0);
    }
    if (placed) {
      scene.boxes.push_back(g);
      albedo.push_back(color);
    }
  }
  Vec3 ground_color{0.55, 0.50, 0.45};
  Vec3 wall_color{0.72, 0.72, 0.70};
  for (int c = 0; c < 3; ++c) {
    ground_color[c] += uniform(rng, -1.0, 1.0) * cfg.color_jitter;
    wall_color[c] += uniform(rng, -1.0, 1.0) * cfg.color_jitter;
  }

  const std::array<kernels::RenderPlane, 2> planes{
      kernels::RenderPlane{Vec3::UnitZ(), 0.0, kGroundId},
      kernels::RenderPlane{Vec3::UnitY(), cfg.wall_y, kWallId}};
  std::vector<kernels::RayHit> hits(static_cast<size_t>(cfg.width) * cfg.height);
  // Drop boxes that end up (almost) invisible, then re-render.
  for (;;) {
    std::vector<Box3D> rendered;
    for (const GtBox& g : scene.boxes) rendered.push_back(inset_box(g.box, cfg.render_inset));
    kernels::render(scene.K, scene.T, rendered, planes, hits);
    std::vector<int> visible(scene.boxes.size(), 0);
    for (const auto& h : hits) {
      if (h.id >= 0) ++visible[static_cast<size_t>(h.id)];
    }
    bool dropped = false;
    for (size_t i = scene.boxes.size(); i-- > 0;) {
      if (visible[i] < cfg.min_visible_pixels) {
        scene.boxes.erase(scene.boxes.begin() + static_cast<long>(i));
        albedo.erase(albedo.begin() + static_cast<long>(i));
        dropped = true;
      }
    }
    if (!dropped) break;
  }

  const Vec3 light = Vec3{0.3, -0.6, 0.75}.normalized();
  std::normal_distribution<double> noise(0.0, cfg.rgb_noise);
  std::bernoulli_distribution drop(cfg.depth_dropout);
  const size_t n = static_cast<size_t>(cfg.width) * cfg.height;
  scene.rgbd.assign(4 * n, 0.0f);
  for (size_t i = 0; i < n; ++i) {
    const auto& h = hits[i];
    Vec3 base = h.id >= 0 ? albedo[static_cast<size_t>(h.id)] : (h.id == kGroundId ? ground_color : wall_color);
    const double shade = h.id == kernels::kNoHit ? 0.0 : 0.55 + 0.45 * std::max(0.0, h.normal.dot(light));
    for (int c = 0; c < 3; ++c) {
      const double value = std::clamp(base[c] * shade + noise(rng), 0.0, 1.0);
      scene.rgbd[static_cast<size_t>(c) * n + i] = static_cast<float>(value);
    }
    const bool dropped = drop(rng);
    scene.rgbd[3 * n + i] = (h.id == kernels::kNoHit || dropped) ? 0.0f : static_cast<float>(h.depth);
  }
  scene.derive();
  return scene;
}

LabelMap gen_2d_gt(const Scene& scene) {
  LabelMap m;
  m.height = scene.height();
  m.width = scene.width();
  m.labels.assign(scene.pixels(), kIgnore);
  const PointCloud& cloud = scene.cloud;
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Pixel px = cloud.pixels[i];
    int inside = 0;
    int cls = kBackground;
    for (const GtBox& g : scene.boxes) {
      if (contains(g.box, cloud.points[i])) {
        ++inside;
        cls = g.cls;
      }
    }
    m.at(px.u, px.v) = inside == 0 ? kBackground : (inside == 1 ? cls : kIgnore);
  }
  return m;
}

std::vector<int> sample_indices(size_t size, size_t n, Rng& rng) {
  if (size == 0) throw std::invalid_argument("sample_points: empty cloud");
  std::vector<int> out;
  if (size >= n) {
    std::vector<int> idx(size);
    std::iota(idx.begin(), idx.end(), 0);
    for (size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<size_t> pick(i, size - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    out.assign(idx.begin(), idx.begin() + static_cast<long>(n));
  } else {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(size) - 1);
    out.resize(n);
    for (int& v : out) v = pick(rng);
  }
  return out;
}

PointCloud subset(const PointCloud& cloud, std::span<const int> indices) {
  PointCloud out;
  out.points.reserve(indices.size());
  for (int i : indices) out.points.push_back(cloud.points[static_cast<size_t>(i)]);
  if (!cloud.pixels.empty()) {
    for (int i : indices) out.pixels.push_back(cloud.pixels[static_cast<size_t>(i)]);
  }
  if (!cloud.heights.empty()) {
    for (int i : indices) out.heights.push_back(cloud.heights[static_cast<size_t>(i)]);
  }
  return out;
}

PointCloud sample_points(const PointCloud& cloud, size_t n, Rng& rng) {
  const auto idx = sample_indices(cloud.size(), n, rng);
  return subset(cloud, idx);
}

AugmentParams AugmentParams::draw(Rng& rng) {
  AugmentParams a;
  a.flip = std::bernoulli_distribution(0.5)(rng);
  a.rotation = uniform(rng, -kPi / 6, kPi / 6);
  a.scale = uniform(rng, 0.85, 1.15);
  a.brightness = uniform(rng, 0.9, 1.1);
  a.contrast = uniform(rng, 0.9, 1.1);
  return a;
}

Vec3 augment_point(const Vec3& p, const AugmentParams& a) {
  const double x = a.flip ? -p.x() : p.x();
  const double c = std::cos(a.rotation);
  const double s = std::sin(a.rotation);
  return a.scale * Vec3{c * x - s * p.y(), s * x + c * p.y(), p.z()};
}

Box3D augment_box(const Box3D& b, const AugmentParams& a) {
  Box3D r = b;
  r.center = augment_point(b.center, a);
  // Mirroring maps heading t to pi - t, the same cuboid as -t.
  double heading = a.flip ? -b.heading : b.heading;
  heading += a.rotation;
  r.heading = half_turn_heading(heading);
  r.l *= a.scale;
  r.h *= a.scale;
  r.w *= a.scale;
  return r;
}

Scene apply_augment(const Scene& scene, const AugmentParams& a) {
  Scene out = scene;
  for (GtBox& g : out.boxes) g.box = augment_box(g.box, a);
  for (Vec3& p : out.cloud.points) p = augment_point(p, a);
  if (!out.cloud.empty()) out.cloud.heights = height_feature(out.cloud);
  const double offset = 0.5 - 0.5 * a.contrast;
  for (int c = 0; c < 3; ++c) {
    for (float& v : out.plane(c)) {
      const double jittered = (v * a.contrast + offset) * a.brightness;
      v = static_cast<float>(std::clamp(jittered, 0.0, 1.0));
    }
  }
  return out;
}

Scene augment(const Scene& scene, uint64_t seed) {
  Rng rng(seed);
  return apply_augment(scene, AugmentParams::draw(rng));
}

}  // namespace mmc
