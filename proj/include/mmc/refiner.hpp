#pragma once

#include "mmc/data.hpp"
#include "mmc/nn.hpp"
#include "mmc/seg2d.hpp"

#include <array>
#include <span>
#include <vector>

namespace mmc {

struct RefinerConfig {
  std::vector<int> pre{64, 64, 256};
  std::vector<int> post{256, 256};
  int head_width = 128;
  double dropout = 0.1;

  void validate() const;
};

/// (dx, dy, dz) in the proposal's canonical frame, (dl, dh, dw) additive
/// extents, dtheta wrapped. All in meters or radians.
using Residuals = std::array<double, 7>;

inline constexpr double kMinExtent = 0.01;

Box3D apply_residuals(const Box3D& proposal, const Residuals& r);
/// Residuals that take `proposal` to `target` (inverse of apply_residuals
/// while target extents stay above the floor).
Residuals measure_residuals(const Box3D& proposal, const Box3D& target);

/// min(1, max(0, 2 iou - 0.3)).
double iou_target(double iou);

/// Output of one batched forward over several RoIs.
struct RefinerOutput {
  nn::Mat residuals;   // R x 7
  nn::Mat cls_logits;  // R x (C + 1), last = background
  nn::Mat iou_logit;   // R x 1
  nn::Mat iou;         // sigmoid(iou_logit)

  std::vector<int> offsets;  // row ranges of each RoI in the stacked input
  nn::MlpCache pre_cache;
  nn::PoolResult pool;
  nn::MlpCache post_cache;
  std::array<nn::Mat, 3> masks;
  std::array<nn::Mat, 3> head_inputs;
  std::array<nn::MlpCache, 3> head_caches;
};

/// Per-RoI PointNet: shared MLP, max-pool, shared layers, then residual,
/// class and IoU heads with dropout in front of each at train time.
class RefinerNet {
 public:
  RefinerNet() = default;
  RefinerNet(const RefinerConfig& config, int num_classes, nn::Rng& rng, int group = 0);

  RefinerOutput forward(std::span<const nn::Mat* const> rois, bool train, nn::Rng* rng) const;
  RefinerOutput forward(const nn::Mat& rows, bool train, nn::Rng* rng) const;
  /// Returns d(loss)/d(rows), stacked in input order.
  nn::Mat backward(const RefinerOutput& out, const nn::Mat& dres, const nn::Mat& dcls, const nn::Mat& diou_logit);

  int num_classes() const { return num_classes_; }
  int in_dim() const { return 9 + num_classes_; }
  const RefinerConfig& config() const { return config_; }
  size_t num_parameters() const;
  void collect(nn::ParamList& out);

  nn::MlpStack pre;
  nn::MlpStack post;
  std::array<nn::MlpStack, 3> heads;  // residual, class, IoU

 private:
  RefinerConfig config_;
  int num_classes_ = 0;
};

struct RcnnLoss {
  double total = 0.0;
  double box = 0.0;
  double cls = 0.0;
  double iou = 0.0;
  int foreground = 0;
  nn::Mat dres;
  nn::Mat dcls;
  nn::Mat diou_logit;
};

/// Each RoI matches its max-IoU GT; IoU >= fg_iou is foreground. Box loss is
/// the foreground mean of summed smooth-L1 over the 7 residuals; class CE and
/// IoU BCE are means over all RoIs. total = box + cls + iou.
RcnnLoss rcnn_loss(std::span<const Box3D> proposals, const RefinerOutput& out, std::span<const GtBox> gt,
                   double fg_iou = 0.25);

/// Per-sample Bernoulli(p) drop flags; never drops outside training.
std::vector<uint8_t> fusion_dropout(int samples, double p, Phase phase, nn::Rng& rng);
/// Zeroes the trailing C columns (the 2D block) of refinement rows.
void zero_2d_block(nn::Mat& rows, int num_classes);

/// Decoded RoI: refined box, best object class and its score
/// (class probability x predicted IoU).
struct RefinedBox {
  Box3D box;
  int cls = 0;
  double score = 0.0;
};
std::vector<RefinedBox> decode_refined(std::span<const Box3D> proposals, const RefinerOutput& out);

}  // namespace mmc
