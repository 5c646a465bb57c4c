#pragma once

#include "mmc/data.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mmc {

/// Final or intermediate detection.
struct Detection {
  Box3D box;
  int cls = 0;
  double score = 0.0;
};

inline constexpr int kSceneFormatVersion = 1;

/// Scene container: "MMCSCENE", uint64 LE header length, JSON header, then
/// four raw little-endian float32 planes (R, G, B, depth). Derived fields
/// are rebuilt on load.
void save_scene(const std::filesystem::path& path, const Scene& scene);
Scene load_scene(const std::filesystem::path& path);

/// JSON list of {box: [x, y, z, l, h, w, heading], class, score}.
void save_detections(const std::filesystem::path& path, const std::vector<Detection>& dets);
std::vector<Detection> load_detections(const std::filesystem::path& path);

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> rgb;  // interleaved, row-major

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), rgb(static_cast<size_t>(h) * w * 3, 0) {}
  void set(int u, int v, const Vec3& color);
};

/// Binary P6.
void write_ppm(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_ppm(const std::filesystem::path& path);

/// Label maps as binary P5: class id, 254 = background, 255 = ignore.
void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_pgm(const std::filesystem::path& path);

/// Display color of a class id (background and ignore included).
Vec3 class_color(int cls);

RgbImage rgb_preview(const Scene& scene);
RgbImage label_preview(const LabelMap& labels);
/// Projects the 12 edges of each box onto the image.
void draw_box(RgbImage& img, const Intrinsics& K, const Pose& T, const Box3D& box, const Vec3& color);

/// Sorted *.scene files of a directory.
std::vector<std::filesystem::path> list_scenes(const std::filesystem::path& dir);

}  // namespace mmc
