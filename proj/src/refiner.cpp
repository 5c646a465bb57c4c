#include "mmc/refiner.hpp"

#include "mmc/errors.hpp"
#include "mmc/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmc {

using nn::Mat;

void RefinerConfig::validate() const {
  if (pre.empty() || post.empty()) throw ConfigError("refiner needs pre and post widths");
  for (int w : pre) {
    if (w < 1) throw ConfigError("refiner widths must be positive");
  }
  for (int w : post) {
    if (w < 1) throw ConfigError("refiner widths must be positive");
  }
  if (head_width < 1) throw ConfigError("refiner head width must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("refiner dropout out of range");
}

Box3D apply_residuals(const Box3D& p, const Residuals& r) {
  Box3D b;
  const double c = std::cos(p.heading);
  const double s = std::sin(p.heading);
  b.center = p.center + Vec3{c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]};
  b.l = std::max(p.l + r[3], kMinExtent);
  b.h = std::max(p.h + r[4], kMinExtent);
  b.w = std::max(p.w + r[5], kMinExtent);
  b.heading = wrap_angle(p.heading + r[6]);
  return b;
}

Residuals measure_residuals(const Box3D& p, const Box3D& t) {
  const Vec3 d = to_canonical(t.center, p);
  return {d.x(), d.y(), d.z(), t.l - p.l, t.h - p.h, t.w - p.w, wrap_angle(t.heading - p.heading)};
}

double iou_target(double iou) { return std::min(1.0, std::max(0.0, 2.0 * iou - 0.3)); }

namespace {

std::vector<int> widths(int in, const std::vector<int>& rest) {
  std::vector<int> w{in};
  w.insert(w.end(), rest.begin(), rest.end());
  return w;
}

}  // namespace

RefinerNet::RefinerNet(const RefinerConfig& config, int num_classes, nn::Rng& rng, int group)
    : config_(config), num_classes_(num_classes) {
  config.validate();
  pre = nn::MlpStack("refiner.pre", widths(9 + num_classes, config.pre), true, rng, group);
  post = nn::MlpStack("refiner.post", widths(config.pre.back(), config.post), true, rng, group);
  const int q = config.post.back();
  const int outs[3] = {7, num_classes + 1, 1};
  const char* names[3] = {"refiner.residual", "refiner.class", "refiner.iou"};
  for (int i = 0; i < 3; ++i) {
    heads[static_cast<size_t>(i)] = nn::MlpStack(names[i], {q, config.head_width, outs[i]}, false, rng, group);
    heads[static_cast<size_t>(i)].layers.back().weight.value *= 0.1;
  }
}

RefinerOutput RefinerNet::forward(const Mat& rows, bool train, nn::Rng* rng) const {
  const Mat* one = &rows;
  return forward(std::span<const Mat* const>(&one, 1), train, rng);
}

RefinerOutput RefinerNet::forward(std::span<const Mat* const> rois, bool train, nn::Rng* rng) const {
  if (train && config_.dropout > 0.0 && !rng) throw std::invalid_argument("RefinerNet: training forward needs an rng");
  RefinerOutput o;
  o.offsets.push_back(0);
  for (const Mat* m : rois) {
    if (m->cols() != in_dim()) throw std::invalid_argument("RefinerNet: RoI feature width mismatch");
    o.offsets.push_back(o.offsets.back() + static_cast<int>(m->rows()));
  }
  Mat stacked(o.offsets.back(), in_dim());
  for (size_t i = 0; i < rois.size(); ++i) stacked.middleRows(o.offsets[i], rois[i]->rows()) = *rois[i];

  const Mat h = pre.forward(stacked, &o.pre_cache);
  o.pool = nn::group_maxpool(h, o.offsets);
  const Mat shared = post.forward(o.pool.out, &o.post_cache);
  Mat outs[3];
  for (size_t i = 0; i < 3; ++i) {
    if (train && config_.dropout > 0.0) {
      o.head_inputs[i] = nn::dropout(shared, config_.dropout, *rng, &o.masks[i]);
    } else {
      o.head_inputs[i] = shared;
      o.masks[i] = Mat::Ones(shared.rows(), shared.cols());
    }
    outs[i] = heads[i].forward(o.head_inputs[i], &o.head_caches[i]);
  }
  o.residuals = outs[0];
  o.cls_logits = outs[1];
  o.iou_logit = outs[2];
  o.iou = o.iou_logit.unaryExpr([](double x) { return nn::sigmoid(x); });
  return o;
}

Mat RefinerNet::backward(const RefinerOutput& o, const Mat& dres, const Mat& dcls, const Mat& diou) {
  const Mat* grads[3] = {&dres, &dcls, &diou};
  Mat dshared = Mat::Zero(o.head_inputs[0].rows(), o.head_inputs[0].cols());
  for (size_t i = 0; i < 3; ++i) {
    dshared += heads[i].backward(o.head_caches[i], *grads[i]).cwiseProduct(o.masks[i]);
  }
  const Mat dpooled = post.backward(o.post_cache, dshared);
  return pre.backward(o.pre_cache, nn::maxpool_backward(o.pool, dpooled, o.offsets.back()));
}

size_t RefinerNet::num_parameters() const {
  size_t n = pre.num_parameters() + post.num_parameters();
  for (const auto& h : heads) n += h.num_parameters();
  return n;
}

void RefinerNet::collect(nn::ParamList& out) {
  pre.collect(out);
  post.collect(out);
  for (auto& h : heads) h.collect(out);
}

RcnnLoss rcnn_loss(std::span<const Box3D> proposals, const RefinerOutput& out, std::span<const GtBox> gt,
                   double fg_iou) {
  const int R = static_cast<int>(proposals.size());
  if (out.residuals.rows() != R) throw std::invalid_argument("rcnn_loss: proposal count mismatch");
  const int K = static_cast<int>(out.cls_logits.cols());
  RcnnLoss L;
  L.dres = Mat::Zero(R, 7);
  L.dcls = Mat::Zero(R, K);
  L.diou_logit = Mat::Zero(R, 1);
  if (R == 0) return L;

  std::vector<Box3D> gt_boxes;
  for (const GtBox& g : gt) gt_boxes.push_back(g.box);
  const std::vector<double> ious = kernels::pairwise_iou3d(proposals, gt_boxes);

  std::vector<int> labels(static_cast<size_t>(R), K - 1);
  std::vector<int> match(static_cast<size_t>(R), -1);
  std::vector<double> best(static_cast<size_t>(R), 0.0);
  for (int r = 0; r < R; ++r) {
    for (size_t g = 0; g < gt.size(); ++g) {
      const double iou = ious[static_cast<size_t>(r) * gt.size() + g];
      if (iou > best[static_cast<size_t>(r)]) {
        best[static_cast<size_t>(r)] = iou;
        match[static_cast<size_t>(r)] = static_cast<int>(g);
      }
    }
    if (match[static_cast<size_t>(r)] >= 0 && best[static_cast<size_t>(r)] >= fg_iou) {
      labels[static_cast<size_t>(r)] = gt[static_cast<size_t>(match[static_cast<size_t>(r)])].cls;
      ++L.foreground;
    }
  }

  for (int r = 0; r < R && L.foreground > 0; ++r) {
    if (labels[static_cast<size_t>(r)] == K - 1) continue;
    const Residuals t = measure_residuals(proposals[static_cast<size_t>(r)],
                                          gt[static_cast<size_t>(match[static_cast<size_t>(r)])].box);
    for (int j = 0; j < 7; ++j) {
      double diff = out.residuals(r, j) - t[static_cast<size_t>(j)];
      if (j == 6) diff = wrap_angle(diff);
      L.box += nn::smooth_l1(diff) / L.foreground;
      L.dres(r, j) = nn::smooth_l1_grad(diff) / L.foreground;
    }
  }

  const nn::Loss ce = nn::cross_entropy(out.cls_logits, labels);
  L.cls = ce.value;
  L.dcls = ce.grad;

  for (int r = 0; r < R; ++r) {
    const double y = iou_target(best[static_cast<size_t>(r)]);
    const double p = out.iou(r, 0);
    L.iou += nn::bce(p, y) / R;
    L.diou_logit(r, 0) = (p - y) / R;
  }
  L.total = L.box + L.cls + L.iou;
  return L;
}

std::vector<uint8_t> fusion_dropout(int samples, double p, Phase phase, nn::Rng& rng) {
  std::vector<uint8_t> drop(static_cast<size_t>(samples), 0);
  if (phase != Phase::Train || p <= 0.0) return drop;
  std::bernoulli_distribution coin(std::min(p, 1.0));
  for (auto& d : drop) d = coin(rng) ? 1 : 0;
  return drop;
}

void zero_2d_block(Mat& rows, int num_classes) { rows.rightCols(num_classes).setZero(); }

std::vector<RefinedBox> decode_refined(std::span<const Box3D> proposals, const RefinerOutput& out) {
  std::vector<RefinedBox> boxes;
  const Mat probs = nn::softmax_rows(out.cls_logits);
  const int C = static_cast<int>(probs.cols()) - 1;
  for (size_t r = 0; r < proposals.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    Residuals res;
    for (int j = 0; j < 7; ++j) res[static_cast<size_t>(j)] = out.residuals(i, j);
    RefinedBox b;
    b.box = apply_residuals(proposals[r], res);
    Eigen::Index cls;
    const double p = probs.row(i).leftCols(C).maxCoeff(&cls);
    b.cls = static_cast<int>(cls);
    b.score = p * out.iou(i, 0);
    boxes.push_back(b);
  }
  return boxes;
}

}  // namespace mmc
