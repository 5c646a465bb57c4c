#include "mmc/eval.hpp"

#include "mmc/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace mmc {

namespace {

struct Entry {
  double score;
  size_t scene;
  size_t det;
};

}  // namespace

double average_precision(std::span<const double> precision, std::span<const double> recall) {
  std::vector<double> env(precision.begin(), precision.end());
  for (size_t i = env.size(); i-- > 1;) env[i - 1] = std::max(env[i - 1], env[i]);
  double ap = 0.0;
  double prev = 0.0;
  for (size_t i = 0; i < env.size(); ++i) {
    ap += (recall[i] - prev) * env[i];
    prev = recall[i];
  }
  return ap;
}

PrCurve pr_curve(std::span<const SceneDetections> scenes, int cls, double iou_thresh) {
  PrCurve pr;
  std::vector<Entry> entries;
  std::vector<std::vector<Box3D>> gt_boxes(scenes.size());
  for (size_t s = 0; s < scenes.size(); ++s) {
    for (size_t d = 0; d < scenes[s].dets.size(); ++d) {
      if (scenes[s].dets[d].cls == cls) entries.push_back({scenes[s].dets[d].score, s, d});
    }
    for (const GtBox& g : scenes[s].gts) {
      if (g.cls == cls) gt_boxes[s].push_back(g.box);
    }
    pr.num_gt += static_cast<int>(gt_boxes[s].size());
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });

  std::vector<std::vector<uint8_t>> used(scenes.size());
  for (size_t s = 0; s < scenes.size(); ++s) used[s].assign(gt_boxes[s].size(), 0);
  int tp = 0;
  for (size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    const Box3D& box = scenes[e.scene].dets[e.det].box;
    int best = -1;
    double best_iou = -1.0;
    for (size_t g = 0; g < gt_boxes[e.scene].size(); ++g) {
      if (used[e.scene][g]) continue;
      const double iou = iou3d(box, gt_boxes[e.scene][g]);
      if (iou >= iou_thresh && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    const bool hit = best >= 0;
    if (hit) used[e.scene][static_cast<size_t>(best)] = 1;
    tp += hit ? 1 : 0;
    pr.scores.push_back(e.score);
    pr.tp.push_back(hit ? 1 : 0);
    pr.precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    pr.recall.push_back(pr.num_gt > 0 ? static_cast<double>(tp) / pr.num_gt : 0.0);
  }
  pr.ap = pr.num_gt > 0 ? average_precision(pr.precision, pr.recall) : 0.0;
  return pr;
}

std::map<int, double> match_and_ap(std::span<const SceneDetections> scenes, int num_classes, double iou_thresh) {
  std::map<int, double> out;
  for (int c = 0; c < num_classes; ++c) {
    const PrCurve pr = pr_curve(scenes, c, iou_thresh);
    if (pr.num_gt > 0) out[c] = pr.ap;
  }
  return out;
}

std::vector<double> map_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 15; ++i) t.push_back((25 + 5 * i) / 100.0);
  return t;
}

MapRange map_range(std::span<const SceneDetections> scenes, int num_classes) {
  MapRange r;
  r.thresholds = map_thresholds();
  for (double t : r.thresholds) {
    auto ap = match_and_ap(scenes, num_classes, t);
    double sum = 0.0;
    for (const auto& [c, v] : ap) sum += v;
    r.class_mean.push_back(ap.empty() ? 0.0 : sum / static_cast<double>(ap.size()));
    r.per_class.push_back(std::move(ap));
  }
  r.mean = std::accumulate(r.class_mean.begin(), r.class_mean.end(), 0.0) / static_cast<double>(r.class_mean.size());
  return r;
}

Confusion::Confusion(int num_classes)
    : num_classes_(num_classes), m_(static_cast<size_t>(num_classes + 1) * (num_classes + 1), 0) {}

void Confusion::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.labels.size() != gt.labels.size()) throw std::invalid_argument("miou: label map sizes differ");
  auto index = [&](int l) { return l == kBackground ? num_classes_ : l; };
  for (size_t i = 0; i < gt.labels.size(); ++i) {
    if (gt.labels[i] == kIgnore) continue;
    const int p = pred.labels[i];
    if (p == kIgnore) continue;
    ++m_[static_cast<size_t>(index(gt.labels[i])) * (num_classes_ + 1) + static_cast<size_t>(index(p))];
  }
}

void Confusion::merge(const Confusion& o) {
  if (o.num_classes_ != num_classes_) throw std::invalid_argument("miou: class counts differ");
  for (size_t i = 0; i < m_.size(); ++i) m_[i] += o.m_[i];
}

MiouResult miou(const Confusion& cm) {
  const int K = cm.num_classes() + 1;
  MiouResult r;
  r.iou.assign(static_cast<size_t>(K), 0.0);
  r.present.assign(static_cast<size_t>(K), 0);
  int counted = 0;
  double sum = 0.0;
  for (int c = 0; c < K; ++c) {
    int64_t tp = cm.at(c, c);
    int64_t fn = 0;
    int64_t fp = 0;
    for (int o = 0; o < K; ++o) {
      if (o == c) continue;
      fn += cm.at(c, o);
      fp += cm.at(o, c);
    }
    const int64_t denom = tp + fp + fn;
    r.iou[static_cast<size_t>(c)] = denom > 0 ? static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
    if (tp + fn > 0) {
      r.present[static_cast<size_t>(c)] = 1;
      sum += r.iou[static_cast<size_t>(c)];
      ++counted;
    }
  }
  r.mean = counted > 0 ? sum / counted : 0.0;
  return r;
}

MiouResult miou(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  Confusion cm(num_classes);
  cm.add(pred, gt);
  return miou(cm);
}

std::string threshold_key(double t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", t);
  return buf;
}

nlohmann::json EvalReport::to_json() const {
  using nlohmann::json;
  json j;
  j["ap_interpolation"] = "all-point";
  j["num_classes"] = num_classes;
  json per_class = json::object();
  for (int c = 0; c < num_classes; ++c) {
    json row = json::object();
    for (size_t t = 0; t < map.thresholds.size(); ++t) {
      const auto it = map.per_class[t].find(c);
      if (it != map.per_class[t].end()) row[threshold_key(map.thresholds[t])] = it->second;
    }
    if (!row.empty()) per_class[std::to_string(c)] = row;
  }
  j["per_class_ap"] = per_class;
  json mean_ap = json::object();
  for (size_t t = 0; t < map.thresholds.size(); ++t) mean_ap[threshold_key(map.thresholds[t])] = map.class_mean[t];
  j["map_range"] = {{"per_threshold", mean_ap}, {"mean", map.mean}};
  if (has_seg) {
    json ious = json::object();
    for (size_t c = 0; c < seg.iou.size(); ++c) {
      if (!seg.present[c]) continue;
      ious[c + 1 == seg.iou.size() ? "background" : std::to_string(c)] = seg.iou[c];
    }
    j["miou"] = seg.mean;
    j["per_class_iou"] = ious;
  } else {
    j["miou"] = nullptr;
  }
  if (include_runtime) j["runtime_s"] = runtime_s;
  return j;
}

}  // namespace mmc
