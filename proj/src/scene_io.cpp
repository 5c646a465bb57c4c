#include "mmc/scene_io.hpp"

#include "mmc/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mmc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kSceneMagic[8] = {'M', 'M', 'C', 'S', 'C', 'E', 'N', 'E'};
constexpr int kBackgroundPgm = 254;
constexpr int kIgnorePgm = 255;

template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

json box_to_json(const Box3D& b) {
  return json::array({b.center.x(), b.center.y(), b.center.z(), b.l, b.h, b.w, b.heading});
}

Box3D box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 7) throw IoError("box must be a list of 7 numbers");
  Box3D b;
  b.center = Vec3{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  b.l = j[3].get<double>();
  b.h = j[4].get<double>();
  b.w = j[5].get<double>();
  b.heading = j[6].get<double>();
  return b;
}

// PNM header tokens, skipping comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
    } else {
      tok.push_back(c);
    }
  }
  return tok;
}

}  // namespace

void save_scene(const fs::path& path, const Scene& scene) {
  json header;
  header["version"] = kSceneFormatVersion;
  header["C"] = scene.num_classes;
  header["seed"] = scene.seed;
  header["intrinsics"] = {{"fx", scene.K.fx}, {"fy", scene.K.fy}, {"cx", scene.K.cx},
                          {"cy", scene.K.cy}, {"width", scene.K.width}, {"height", scene.K.height}};
  json rot = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rot.push_back(scene.T.rotation(r, c));
  }
  header["pose"] = {{"rotation", rot},
                    {"translation", {scene.T.translation.x(), scene.T.translation.y(), scene.T.translation.z()}}};
  json boxes = json::array();
  for (const GtBox& g : scene.boxes) boxes.push_back({{"box", box_to_json(g.box)}, {"class", g.cls}});
  header["boxes"] = boxes;
  header["rgbd"] = {{"encoding", "raw-float32-le"}, {"layout", "planar"}, {"channels", {"r", "g", "b", "depth"}},
                    {"height", scene.height()}, {"width", scene.width()}};
  const std::string text = header.dump();

  std::ofstream out = open_out(path);
  out.write(kSceneMagic, sizeof(kSceneMagic));
  const uint64_t len = to_le<uint64_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (float v : scene.rgbd) {
    const float le = to_le(v);
    out.write(reinterpret_cast<const char*>(&le), sizeof(le));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Scene load_scene(const fs::path& path) {
  std::ifstream in = open_in(path);
  char magic[8];
  uint64_t len = 0;
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kSceneMagic, sizeof(magic)) != 0) {
    throw IoError(path.string() + " is not a scene file");
  }
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len))) throw IoError("truncated scene " + path.string());
  len = to_le(len);
  if (len > (1u << 26)) throw IoError("scene header too large in " + path.string());
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("truncated scene " + path.string());

  Scene scene;
  try {
    const json h = json::parse(text);
    if (h.at("version").get<int>() != kSceneFormatVersion) throw IoError("unsupported scene version");
    scene.num_classes = h.at("C").get<int>();
    scene.seed = h.at("seed").get<uint64_t>();
    const json& k = h.at("intrinsics");
    scene.K = Intrinsics{k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                         k.at("cy").get<double>(), k.at("width").get<int>(), k.at("height").get<int>()};
    const json& rot = h.at("pose").at("rotation");
    const json& tr = h.at("pose").at("translation");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) scene.T.rotation(r, c) = rot.at(3 * r + c).get<double>();
      scene.T.translation[r] = tr.at(r).get<double>();
    }
    for (const json& b : h.at("boxes")) scene.boxes.push_back({box_from_json(b.at("box")), b.at("class").get<int>()});
    const json& planes = h.at("rgbd");
    if (planes.at("encoding") != "raw-float32-le" || planes.at("layout") != "planar" ||
        planes.at("height").get<int>() != scene.K.height || planes.at("width").get<int>() != scene.K.width) {
      throw IoError("unsupported rgbd layout in " + path.string());
    }
  } catch (const json::exception& e) {
    throw IoError("bad scene header in " + path.string() + ": " + e.what());
  }
  scene.K.validate();
  scene.rgbd.resize(4 * scene.pixels());
  if (!in.read(reinterpret_cast<char*>(scene.rgbd.data()),
               static_cast<std::streamsize>(scene.rgbd.size() * sizeof(float)))) {
    throw IoError("truncated rgbd planes in " + path.string());
  }
  for (float& v : scene.rgbd) v = to_le(v);
  scene.derive();
  return scene;
}

void save_detections(const fs::path& path, const std::vector<Detection>& dets) {
  json out = json::array();
  for (const Detection& d : dets) out.push_back({{"box", box_to_json(d.box)}, {"class", d.cls}, {"score", d.score}});
  std::ofstream f = open_out(path);
  f << out.dump(1) << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<Detection> load_detections(const fs::path& path) {
  std::ifstream f = open_in(path);
  std::vector<Detection> dets;
  try {
    const json j = json::parse(f);
    for (const json& d : j) {
      dets.push_back({box_from_json(d.at("box")), d.at("class").get<int>(), d.at("score").get<double>()});
    }
  } catch (const json::exception& e) {
    throw IoError("bad detection file " + path.string() + ": " + e.what());
  }
  return dets;
}

void RgbImage::set(int u, int v, const Vec3& color) {
  if (u < 0 || v < 0 || u >= width || v >= height) return;
  uint8_t* px = &rgb[(static_cast<size_t>(v) * width + u) * 3];
  for (int c = 0; c < 3; ++c) px[c] = static_cast<uint8_t>(std::lround(std::clamp(color[c], 0.0, 1.0) * 255.0));
}

void write_ppm(const fs::path& path, const RgbImage& img) {
  std::ofstream out = open_out(path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

RgbImage read_ppm(const fs::path& path) {
  std::ifstream in = open_in(path);
  if (pnm_token(in) != "P6") throw IoError(path.string() + " is not a binary PPM");
  const int w = std::stoi(pnm_token(in));
  const int h = std::stoi(pnm_token(in));
  if (std::stoi(pnm_token(in)) != 255) throw IoError("only 8-bit PPM supported");
  RgbImage img(h, w);
  if (!in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()))) {
    throw IoError("truncated PPM " + path.string());
  }
  return img;
}

void write_label_pgm(const fs::path& path, const LabelMap& labels) {
  std::vector<uint8_t> bytes(labels.labels.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    const int l = labels.labels[i];
    bytes[i] = static_cast<uint8_t>(l == kBackground ? kBackgroundPgm : (l == kIgnore ? kIgnorePgm : l));
  }
  std::ofstream out = open_out(path);
  out << "P5\n" << labels.width << ' ' << labels.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

LabelMap read_label_pgm(const fs::path& path) {
  std::ifstream in = open_in(path);
  if (pnm_token(in) != "P5") throw IoError(path.string() + " is not a binary PGM");
  LabelMap m;
  m.width = std::stoi(pnm_token(in));
  m.height = std::stoi(pnm_token(in));
  if (std::stoi(pnm_token(in)) != 255) throw IoError("only 8-bit PGM supported");
  std::vector<uint8_t> bytes(static_cast<size_t>(m.width) * m.height);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw IoError("truncated PGM " + path.string());
  }
  m.labels.resize(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    m.labels[i] = bytes[i] == kBackgroundPgm ? kBackground : (bytes[i] == kIgnorePgm ? kIgnore : bytes[i]);
  }
  return m;
}

Vec3 class_color(int cls) {
  if (cls == kBackground) return {0.25, 0.25, 0.25};
  if (cls == kIgnore) return {0.0, 0.0, 0.0};
  static const Vec3 palette[] = {{0.90, 0.20, 0.20}, {0.20, 0.80, 0.25}, {0.25, 0.40, 0.95},
                                 {0.95, 0.85, 0.20}, {0.80, 0.30, 0.85}, {0.20, 0.85, 0.85},
                                 {0.95, 0.55, 0.15}, {0.55, 0.35, 0.20}, {0.60, 0.90, 0.50},
                                 {1.00, 1.00, 1.00}};
  return palette[static_cast<size_t>(cls) % std::size(palette)];
}

RgbImage rgb_preview(const Scene& scene) {
  RgbImage img(scene.height(), scene.width());
  for (int v = 0; v < scene.height(); ++v) {
    for (int u = 0; u < scene.width(); ++u) {
      const size_t i = static_cast<size_t>(v) * scene.width() + u;
      img.set(u, v, Vec3{scene.plane(0)[i], scene.plane(1)[i], scene.plane(2)[i]});
    }
  }
  return img;
}

RgbImage label_preview(const LabelMap& labels) {
  RgbImage img(labels.height, labels.width);
  for (int v = 0; v < labels.height; ++v) {
    for (int u = 0; u < labels.width; ++u) img.set(u, v, class_color(labels.at(u, v)));
  }
  return img;
}

void draw_box(RgbImage& img, const Intrinsics& K, const Pose& T, const Box3D& box, const Vec3& color) {
  std::array<Vec3, 8> corners;
  for (int i = 0; i < 8; ++i) {
    const Vec3 q{(i & 1 ? 0.5 : -0.5) * box.l, (i & 2 ? 0.5 : -0.5) * box.w, (i & 4 ? 0.5 : -0.5) * box.h};
    corners[i] = from_canonical(q, box);
  }
  constexpr int kSteps = 200;
  for (int a = 0; a < 8; ++a) {
    for (int bit = 1; bit < 8; bit <<= 1) {
      if (a & bit) continue;
      const Vec3& p0 = corners[a];
      const Vec3& p1 = corners[a | bit];
      for (int s = 0; s <= kSteps; ++s) {
        const auto proj = project(K, T, p0 + (p1 - p0) * (static_cast<double>(s) / kSteps));
        if (!proj) continue;
        img.set(static_cast<int>(std::floor(proj->u)), static_cast<int>(std::floor(proj->v)), color);
      }
    }
  }
}

std::vector<fs::path> list_scenes(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".scene") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace mmc
