#include "mmc/trainer.hpp"

#include "mmc/kernels.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

namespace mmc {

using nn::Image;
using nn::Mat;

LossParts& LossParts::operator+=(const LossParts& o) {
  rpn += o.rpn;
  seg += o.seg;
  rcnn += o.rcnn;
  total += o.total;
  return *this;
}

LossParts LossParts::scaled(double s) const { return {rpn * s, seg * s, rcnn * s, total * s}; }

nlohmann::json TrainLog::to_json() const {
  using nlohmann::json;
  auto parts = [](const LossParts& p) {
    return json{{"total", p.total}, {"rpn", p.rpn}, {"seg", p.seg}, {"rcnn", p.rcnn}};
  };
  json s = json::array();
  for (const StepRecord& r : steps) {
    json j = parts(r.loss);
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    s.push_back(j);
  }
  json e = json::array();
  for (const LossParts& p : epochs) e.push_back(parts(p));
  return {{"steps", s}, {"epochs", e}};
}

namespace {

// Balanced RoI subset: up to fg_fraction foreground, the rest background.
std::vector<int> sample_rois(std::span<const Proposal> proposals, std::span<const GtBox> gt,
                             const CascadeConfig& cfg, nn::Rng& rng) {
  std::vector<Box3D> pb;
  std::vector<Box3D> gb;
  for (const Proposal& p : proposals) pb.push_back(p.box);
  for (const GtBox& g : gt) gb.push_back(g.box);
  const std::vector<double> ious = kernels::pairwise_iou3d(pb, gb);
  std::vector<int> fg;
  std::vector<int> bg;
  for (size_t i = 0; i < pb.size(); ++i) {
    double best = 0.0;
    for (size_t g = 0; g < gb.size(); ++g) best = std::max(best, ious[i * gb.size() + g]);
    (best >= cfg.fg_iou ? fg : bg).push_back(static_cast<int>(i));
  }
  std::shuffle(fg.begin(), fg.end(), rng);
  std::shuffle(bg.begin(), bg.end(), rng);
  const size_t total = std::min(static_cast<size_t>(cfg.train_rois), pb.size());
  size_t n_fg = std::min(fg.size(), static_cast<size_t>(std::lround(cfg.roi_fg_fraction * cfg.train_rois)));
  const size_t n_bg = std::min(bg.size(), total - std::min(total, n_fg));
  n_fg = std::min(fg.size(), total - n_bg);
  std::vector<int> out(fg.begin(), fg.begin() + static_cast<long>(n_fg));
  out.insert(out.end(), bg.begin(), bg.begin() + static_cast<long>(n_bg));
  std::sort(out.begin(), out.end());
  return out;
}

LossParts sample_pass(CascadeModels& models, const Scene& scene, uint64_t seed, bool backward, double grad_scale) {
  const CascadeConfig& cfg = models.config;
  const int C = models.num_classes;
  nn::Rng rng(seed);
  const Scene aug = cfg.augment ? apply_augment(scene, AugmentParams::draw(rng)) : scene;
  const std::vector<uint8_t> drops = fusion_dropout(2, cfg.fusion_dropout, Phase::Train, rng);
  const bool drop_paint = drops[0] != 0;
  const bool drop_refine = drops[1] != 0;
  LossParts parts;

  // (2D ->) painting source
  std::optional<SegOutput> seg0;
  SegLoss seg0_loss;
  std::optional<Image> current;
  if (models.initial_seg) {
    seg0 = models.initial_seg->forward(rgbd_image(aug), true, &rng);
    seg0_loss = seg_loss(seg0->main_logits, seg0->aux_logits, aug.seg_gt, C, cfg.lambda_aux);
    parts.seg += seg0_loss.total;
    current = select_fusion_output(*seg0, cfg.head_policy, Phase::Train);
  }

  // 3D proposals
  const PointCloud sampled = sample_points(aug.cloud, static_cast<size_t>(cfg.n_points), rng);
  const PaintedCloud painted =
      current && !drop_paint ? paint(sampled, foreground_block(*current)) : paint_zeros(sampled, C);
  const ProposerOutput prop = models.proposer.forward(painted);
  const RpnLoss rpn = rpn_loss(prop, aug.boxes, cfg.rpn);
  parts.rpn = rpn.total;

  // 3D -> 2D
  std::optional<SegOutput> seg1;
  SegLoss seg1_loss;
  if (models.fused_seg) {
    std::vector<Proposal> keep;
    for (const Proposal& p : prop.proposals) {
      if (p.objectness >= cfg.fusion_min_objectness) keep.push_back(p);
    }
    const FusionMap map = build_3d_to_2d_map(keep, aug, cfg.n_per_box_fusion, rng);
    seg1 = models.fused_seg->forward(map.channels, true, &rng);
    seg1_loss = seg_loss(seg1->main_logits, seg1->aux_logits, aug.seg_gt, C, cfg.lambda_aux);
    parts.seg += seg1_loss.total;
    current = select_fusion_output(*seg1, cfg.head_policy, Phase::Train);
  }

  // 2D -> 3D refinement
  const std::vector<int> rois = sample_rois(prop.proposals, aug.boxes, cfg, rng);
  const Image fg = current ? foreground_block(*current) : Image();
  const bool use_2d = current && !drop_refine;
  std::vector<RefineInput> inputs;
  std::vector<Box3D> roi_boxes;
  for (int k : rois) {
    const Box3D& b = prop.proposals[static_cast<size_t>(k)].box;
    roi_boxes.push_back(b);
    inputs.push_back(assemble_refine_features(enlarge(b, cfg.enlarge_factor), aug.cloud, use_2d ? &fg : nullptr, C,
                                              cfg.n_per_roi_train, rng));
  }
  std::vector<const Mat*> rows;
  for (const RefineInput& in : inputs) rows.push_back(&in.rows);
  RcnnLoss rcnn;
  std::optional<RefinerOutput> ref;
  if (!rois.empty()) {
    ref = models.refiner.forward(rows, true, &rng);
    rcnn = rcnn_loss(roi_boxes, *ref, aug.boxes, cfg.fg_iou);
  }
  parts.rcnn = rcnn.total;
  parts.total = parts.rpn + parts.seg + parts.rcnn;
  if (!backward) return parts;

  const double s = grad_scale;
  ProposerGrad pgrad{rpn.grad.dhead * s, rpn.grad.dvote_xyz * s};
  if (ref) {
    const Mat drows = models.refiner.backward(*ref, rcnn.dres * s, rcnn.dcls * s, rcnn.diou_logit * s);
    for (size_t i = 0; i < rois.size(); ++i) {
      const Mat d = drows.middleRows(ref->offsets[i], ref->offsets[i + 1] - ref->offsets[i]);
      accumulate_box_grad(prop, rois[i], refine_features_backward(inputs[i], aug.cloud, d, cfg.enlarge_factor),
                          pgrad);
    }
  }
  models.proposer.backward(prop, pgrad);
  if (seg1) {
    models.fused_seg->backward(*seg1, Image(seg1_loss.dmain.h, seg1_loss.dmain.w, seg1_loss.dmain.data * s),
                               Image(seg1_loss.daux.h, seg1_loss.daux.w, seg1_loss.daux.data * s));
  }
  if (seg0) {
    models.initial_seg->backward(*seg0, Image(seg0_loss.dmain.h, seg0_loss.dmain.w, seg0_loss.dmain.data * s),
                                 Image(seg0_loss.daux.h, seg0_loss.daux.w, seg0_loss.daux.data * s));
  }
  return parts;
}

uint64_t sample_seed(uint64_t master, int epoch, size_t n, size_t index) {
  return derive_seed(derive_seed(master, 77), static_cast<uint64_t>(epoch) * n + index);
}

}  // namespace

LossParts train_sample(CascadeModels& models, const Scene& scene, uint64_t seed, double grad_scale) {
  return sample_pass(models, scene, seed, true, grad_scale);
}

LossParts sample_loss(CascadeModels& models, const Scene& scene, uint64_t seed) {
  return sample_pass(models, scene, seed, false, 0.0);
}

TrainLog train(CascadeModels& models, std::span<const Scene> scenes,
               const std::function<void(const StepRecord&)>& on_step) {
  const auto t0 = std::chrono::steady_clock::now();
  const OptimConfig& opt = models.config.optim;
  const uint64_t seed = models.config.seed;
  nn::ParamList params = models.params();
  nn::AdamW adam({opt.weight_decay_3d, opt.weight_decay_2d}, opt.beta1, opt.beta2);
  TrainLog log;
  const size_t n = scenes.size();
  std::vector<size_t> order(n);
  int step = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    nn::Rng shuffle_rng(derive_seed(seed, 0xE0000 + static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = opt.lr_at(epoch);
    LossParts epoch_sum;
    for (size_t b = 0; b < n; b += static_cast<size_t>(opt.batch_size)) {
      const size_t end = std::min(n, b + static_cast<size_t>(opt.batch_size));
      const double scale = 1.0 / static_cast<double>(end - b);
      nn::zero_grads(params);
      LossParts batch;
      for (size_t i = b; i < end; ++i) {
        batch += train_sample(models, scenes[order[i]], sample_seed(seed, epoch, n, order[i]), scale);
      }
      nn::clip_grad_norm(params, opt.clip_norm);
      adam.step(params, lr);
      epoch_sum += batch;
      StepRecord rec{step++, epoch, lr, batch.scaled(scale)};
      log.steps.push_back(rec);
      if (on_step) on_step(rec);
    }
    log.epochs.push_back(epoch_sum.scaled(1.0 / static_cast<double>(n)));
  }
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

double train_2d_only_miou(const CascadeConfig& config, int num_classes, std::span<const Scene> train_scenes,
                          std::span<const Scene> test_scenes) {
  const OptimConfig& opt = config.optim;
  nn::Rng init(derive_seed(config.seed, 0x2D));
  SegNet net("seg_rgbd", FusionMap::kRgbd, num_classes, config.seg, init, kGroup2d);
  nn::ParamList params;
  net.collect(params);
  nn::AdamW adam({opt.weight_decay_3d, opt.weight_decay_2d}, opt.beta1, opt.beta2);
  const size_t n = train_scenes.size();
  std::vector<size_t> order(n);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    nn::Rng shuffle_rng(derive_seed(config.seed, 0xE0000 + static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (size_t b = 0; b < n; b += static_cast<size_t>(opt.batch_size)) {
      const size_t end = std::min(n, b + static_cast<size_t>(opt.batch_size));
      const double scale = 1.0 / static_cast<double>(end - b);
      nn::zero_grads(params);
      for (size_t i = b; i < end; ++i) {
        nn::Rng rng(sample_seed(config.seed, epoch, n, order[i]));
        const Scene& src = train_scenes[order[i]];
        const Scene aug = config.augment ? apply_augment(src, AugmentParams::draw(rng)) : src;
        const SegOutput out = net.forward(rgbd_image(aug), true, &rng);
        const SegLoss L = seg_loss(out.main_logits, out.aux_logits, aug.seg_gt, num_classes, config.lambda_aux);
        net.backward(out, Image(L.dmain.h, L.dmain.w, L.dmain.data * scale),
                     Image(L.daux.h, L.daux.w, L.daux.data * scale));
      }
      nn::clip_grad_norm(params, opt.clip_norm);
      adam.step(params, opt.lr_at(epoch));
    }
  }
  Confusion cm(num_classes);
  for (const Scene& s : test_scenes) {
    const SegOutput out = net.forward(rgbd_image(s), false, nullptr);
    cm.add(argmax_labels(select_fusion_output(out, config.head_policy, Phase::Test)), s.seg_gt);
  }
  return miou(cm).mean;
}

}  // namespace mmc
