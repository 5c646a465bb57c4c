#pragma once

#include "mmc/conv.hpp"
#include "mmc/data.hpp"

#include <string>
#include <vector>

namespace mmc {

enum class HeadSource { Main, Aux, Ensemble };
enum class Phase { Train, Test };

HeadSource parse_head_source(const std::string& s);
std::string to_string(HeadSource s);

struct HeadPolicy {
  HeadSource train = HeadSource::Aux;
  HeadSource test = HeadSource::Ensemble;
};

struct SegConfig {
  std::vector<int> trunk{16, 32, 32, 64};  // conv widths; layers 2 and 3 stride 2
  std::vector<int> decoder{32, 16};
  double dropout = 0.1;

  void validate() const;
};

/// Forward activations of SegNet. Probability maps have C + 1 channels, the
/// last being background.
struct SegOutput {
  nn::Image main_logits;
  nn::Image aux_logits;
  nn::Image main;
  nn::Image aux;

  // backward state
  std::vector<nn::ConvCache> conv;
  std::vector<nn::Image> pre;
  nn::Mat aux_mask;
  nn::Mat main_mask;
  int h2 = 0, w2 = 0, h4 = 0, w4 = 0;
};

/// Four-layer conv trunk with a deep decoder head (main) and a 1x1 head on
/// the half-resolution trunk features (aux).
class SegNet {
 public:
  SegNet() = default;
  SegNet(const std::string& name, int in_channels, int num_classes, const SegConfig& config, nn::Rng& rng,
         int group = 0);

  /// `rng` drives dropout and is only used when train is true.
  SegOutput forward(const nn::Image& x, bool train, nn::Rng* rng) const;
  void backward(const SegOutput& out, const nn::Image& dmain_logits, const nn::Image& daux_logits);

  int in_channels() const { return trunk[0].in_channels(); }
  int num_classes() const { return num_classes_; }
  size_t aux_parameters() const { return aux_head.num_parameters(); }
  size_t main_head_parameters() const;
  size_t num_parameters() const;
  void collect(nn::ParamList& out);

  std::vector<nn::Conv2d> trunk;
  std::vector<nn::Conv2d> decoder;
  nn::Conv2d main_head;
  nn::Conv2d aux_head;

 private:
  SegConfig config_;
  int num_classes_ = 0;
};

/// BACKGROUND maps to channel C, IGNORE is excluded.
std::vector<int> seg_targets(const LabelMap& gt, int num_classes);

struct SegLoss {
  double total = 0.0;
  double main = 0.0;
  double aux = 0.0;
  nn::Image dmain;
  nn::Image daux;
};

/// Pixel-mean CE(main) + lambda_aux * CE(aux) over non-IGNORE pixels.
SegLoss seg_loss(const nn::Image& main_logits, const nn::Image& aux_logits, const LabelMap& gt,
                 int num_classes, double lambda_aux = 0.4);

/// Train phase uses policy.train, test phase policy.test. ENSEMBLE is the
/// renormalized per-pixel mean of both maps.
nn::Image select_fusion_output(const SegOutput& out, const HeadPolicy& policy, Phase phase);
nn::Image ensemble(const nn::Image& a, const nn::Image& b);

/// The C object-class channels of a (C + 1)-channel map.
nn::Image foreground_block(const nn::Image& probs);

/// Per-pixel argmax as a label map (channel C = BACKGROUND).
LabelMap argmax_labels(const nn::Image& probs);

}  // namespace mmc
