#pragma once

#include "mmc/data.hpp"
#include "mmc/scene_io.hpp"

#include "json.hpp"

#include <map>
#include <span>
#include <vector>

namespace mmc {

/// Detections and ground truth of one scene.
struct SceneDetections {
  std::vector<Detection> dets;
  std::vector<GtBox> gts;
};

struct PrCurve {
  std::vector<double> scores;  // descending
  std::vector<uint8_t> tp;
  std::vector<double> precision;
  std::vector<double> recall;
  int num_gt = 0;
  double ap = 0.0;
};

/// Per class: detections sorted by descending score (stable), each matched to
/// the unmatched same-scene GT with highest IoU >= thresh. AP is the area
/// under the monotone precision envelope (all-point interpolation).
PrCurve pr_curve(std::span<const SceneDetections> scenes, int cls, double iou_thresh);
/// All-point AP of a PR sequence.
double average_precision(std::span<const double> precision, std::span<const double> recall);

/// AP per class with at least one GT box.
std::map<int, double> match_and_ap(std::span<const SceneDetections> scenes, int num_classes, double iou_thresh);

/// 0.25, 0.30, ..., 0.95.
std::vector<double> map_thresholds();

struct MapRange {
  std::vector<double> thresholds;
  std::vector<std::map<int, double>> per_class;  // one map per threshold
  std::vector<double> class_mean;                // class-averaged AP per threshold
  double mean = 0.0;
};
MapRange map_range(std::span<const SceneDetections> scenes, int num_classes);

/// (C + 1) x (C + 1) confusion over non-IGNORE GT pixels; index C is
/// background. Accumulates across images.
class Confusion {
 public:
  explicit Confusion(int num_classes);
  void add(const LabelMap& pred, const LabelMap& gt);
  void merge(const Confusion& o);

  int num_classes() const { return num_classes_; }
  int64_t at(int gt, int pred) const { return m_[static_cast<size_t>(gt) * (num_classes_ + 1) + pred]; }

 private:
  int num_classes_;
  std::vector<int64_t> m_;
};

struct MiouResult {
  std::vector<double> iou;       // C + 1 entries, background last
  std::vector<uint8_t> present;  // class occurs in GT
  double mean = 0.0;
};
MiouResult miou(const Confusion& confusion);
MiouResult miou(const LabelMap& pred, const LabelMap& gt, int num_classes);

struct EvalReport {
  int num_classes = 0;
  MapRange map;
  MiouResult seg;
  bool has_seg = false;
  double runtime_s = 0.0;
  bool include_runtime = true;

  nlohmann::json to_json() const;
};

/// Threshold key used in reports, e.g. "0.25".
std::string threshold_key(double t);

}  // namespace mmc
