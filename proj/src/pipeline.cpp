#include "mmc/pipeline.hpp"

#include "mmc/errors.hpp"

#include <chrono>
#include <fstream>

namespace mmc {

namespace fs = std::filesystem;
using nn::Image;
using nn::Mat;

CascadeModels CascadeModels::create(const CascadeConfig& config, int num_classes) {
  config.validate();
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  CascadeModels m;
  m.config = config;
  m.num_classes = num_classes;
  nn::Rng rng(derive_seed(config.seed, 0x1A17));
  if (config.initial_seg()) {
    m.initial_seg.emplace("seg_initial", FusionMap::kRgbd, num_classes, config.seg, rng, kGroup2d);
  }
  m.proposer = ProposerNet(config.proposer, num_classes, rng, kGroup3d);
  if (config.fused_seg()) {
    m.fused_seg.emplace("seg_fused", fusion_channels(num_classes), num_classes, config.seg, rng, kGroup2d);
  }
  m.refiner = RefinerNet(config.refiner, num_classes, rng, kGroup3d);
  return m;
}

nn::ParamList CascadeModels::params() {
  nn::ParamList out;
  if (initial_seg) initial_seg->collect(out);
  proposer.collect(out);
  if (fused_seg) fused_seg->collect(out);
  refiner.collect(out);
  return out;
}

size_t CascadeModels::num_parameters() const {
  size_t n = proposer.num_parameters() + refiner.num_parameters();
  if (initial_seg) n += initial_seg->num_parameters();
  if (fused_seg) n += fused_seg->num_parameters();
  return n;
}

void CascadeModels::save(const fs::path& dir) {
  fs::create_directories(dir);
  nn::save_checkpoint(dir / "model.ckpt", params());
  save_config(dir / "config.json", config);
  std::ofstream meta(dir / "meta.json");
  meta << nlohmann::json{{"num_classes", num_classes}}.dump(2) << '\n';
  if (!meta) throw IoError("cannot write " + (dir / "meta.json").string());
}

CascadeModels CascadeModels::load(const fs::path& dir) {
  const CascadeConfig config = load_config(dir / "config.json");
  std::ifstream meta(dir / "meta.json");
  if (!meta) throw IoError("cannot open " + (dir / "meta.json").string());
  int num_classes = 0;
  try {
    num_classes = nlohmann::json::parse(meta).at("num_classes").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad meta.json: ") + e.what());
  }
  CascadeModels m = create(config, num_classes);
  nn::load_checkpoint(dir / "model.ckpt", m.params());
  return m;
}

const Image* CascadeResult::final_probs() const {
  for (auto it = iterations.rbegin(); it != iterations.rend(); ++it) {
    if (it->fused_probs) return &*it->fused_probs;
  }
  return initial_probs ? &*initial_probs : nullptr;
}

Image one_hot_probs(const LabelMap& labels, int num_classes) {
  Image out(labels.height, labels.width, num_classes + 1);
  for (size_t i = 0; i < labels.labels.size(); ++i) {
    const int l = labels.labels[i];
    const auto r = static_cast<Eigen::Index>(i);
    if (l == kIgnore) {
      out.data.row(r).setConstant(1.0 / (num_classes + 1));
    } else {
      out.data(r, l == kBackground ? num_classes : l) = 1.0;
    }
  }
  return out;
}

std::vector<Detection> per_class_nms(std::span<const Detection> dets, double iou) {
  std::vector<Detection> out;
  int max_cls = -1;
  for (const Detection& d : dets) max_cls = std::max(max_cls, d.cls);
  for (int c = 0; c <= max_cls; ++c) {
    std::vector<Box3D> boxes;
    std::vector<double> scores;
    std::vector<size_t> index;
    for (size_t i = 0; i < dets.size(); ++i) {
      if (dets[i].cls != c) continue;
      boxes.push_back(dets[i].box);
      scores.push_back(dets[i].score);
      index.push_back(i);
    }
    for (int k : nms3d(boxes, scores, iou)) out.push_back(dets[index[static_cast<size_t>(k)]]);
  }
  return out;
}

CascadeResult run_cascade(const Scene& scene, const CascadeModels& models, uint64_t seed,
                          const CascadeOptions& options) {
  const CascadeConfig& cfg = models.config;
  const int C = models.num_classes;
  if (scene.num_classes != C) throw std::invalid_argument("scene class count differs from the model");
  if (scene.cloud.empty()) throw std::invalid_argument("scene has no valid depth");
  CascadeResult result;
  std::optional<Image> oracle;
  if (options.oracle_2d) oracle = one_hot_probs(scene.seg_gt, C);

  // Latest 2D prediction available to the 3D stages.
  const Image* current = nullptr;
  if (cfg.initial_seg()) {
    nn::Rng rng(derive_seed(seed, 0));
    if (oracle) {
      result.initial_probs = *oracle;
    } else {
      const SegOutput out = models.initial_seg->forward(rgbd_image(scene), false, &rng);
      result.initial_probs = select_fusion_output(out, cfg.head_policy, Phase::Test);
    }
    current = &*result.initial_probs;
  }

  result.iterations.resize(static_cast<size_t>(cfg.recursion_iters));
  for (int k = 1; k <= cfg.recursion_iters; ++k) {
    IterationTrace& it = result.iterations[static_cast<size_t>(k - 1)];
    nn::Rng rng(derive_seed(seed, static_cast<uint64_t>(k)));
    const PointCloud sampled = sample_points(scene.cloud, static_cast<size_t>(cfg.n_points), rng);
    const PaintedCloud painted = current ? paint(sampled, foreground_block(*current)) : paint_zeros(sampled, C);
    const ProposerOutput prop = models.proposer.forward(painted);
    it.proposals = prop.proposals;

    if (cfg.fused_seg()) {
      if (oracle) {
        it.fused_probs = *oracle;
      } else {
        std::vector<Proposal> keep;
        for (const Proposal& p : it.proposals) {
          if (p.objectness >= cfg.fusion_min_objectness) keep.push_back(p);
        }
        const FusionMap map = build_3d_to_2d_map(keep, scene, cfg.n_per_box_fusion, rng);
        const SegOutput out = models.fused_seg->forward(map.channels, false, &rng);
        it.fused_probs = select_fusion_output(out, cfg.head_policy, Phase::Test);
      }
      current = &*it.fused_probs;
    }

    const Image fg = current ? foreground_block(*current) : Image();
    std::vector<Box3D> boxes;
    std::vector<RefineInput> inputs;
    std::vector<const Mat*> rows;
    for (const Proposal& p : it.proposals) {
      boxes.push_back(p.box);
      inputs.push_back(assemble_refine_features(enlarge(p.box, cfg.enlarge_factor), scene.cloud,
                                                current ? &fg : nullptr, C, cfg.n_per_roi_test, rng));
    }
    for (const RefineInput& in : inputs) rows.push_back(&in.rows);
    const RefinerOutput out = models.refiner.forward(rows, false, nullptr);
    it.refined = decode_refined(boxes, out);
    for (const RefinedBox& b : it.refined) result.pool.push_back({b.box, b.cls, b.score});
  }

  std::vector<Box3D> boxes;
  std::vector<double> scores;
  for (const Detection& d : result.pool) {
    boxes.push_back(d.box);
    scores.push_back(d.score);
  }
  std::vector<Detection> kept;
  for (int i : nms3d(boxes, scores, cfg.ensemble_nms_iou)) kept.push_back(result.pool[static_cast<size_t>(i)]);
  result.detections = per_class_nms(kept, cfg.final_nms_iou);
  return result;
}

uint64_t inference_seed(const CascadeModels& models, const Scene& scene) {
  return derive_seed(models.config.seed ^ 0x5EEDF00DULL, scene.seed);
}

EvalReport evaluate(const CascadeModels& models, std::span<const Scene> scenes, const CascadeOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalReport report;
  report.num_classes = models.num_classes;
  std::vector<SceneDetections> per_scene;
  Confusion cm(models.num_classes);
  for (const Scene& s : scenes) {
    const CascadeResult r = run_cascade(s, models, inference_seed(models, s), options);
    per_scene.push_back({r.detections, s.boxes});
    if (const Image* probs = r.final_probs()) {
      cm.add(argmax_labels(*probs), s.seg_gt);
      report.has_seg = true;
    }
  }
  report.map = map_range(per_scene, models.num_classes);
  if (report.has_seg) report.seg = miou(cm);
  report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace mmc
