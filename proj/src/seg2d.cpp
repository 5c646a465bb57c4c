#include "mmc/seg2d.hpp"

#include "mmc/errors.hpp"

#include <stdexcept>

namespace mmc {

using nn::Conv2d;
using nn::Image;
using nn::Mat;

HeadSource parse_head_source(const std::string& s) {
  if (s == "MAIN") return HeadSource::Main;
  if (s == "AUX") return HeadSource::Aux;
  if (s == "ENSEMBLE") return HeadSource::Ensemble;
  throw ConfigError("unknown head source '" + s + "'");
}

std::string to_string(HeadSource s) {
  switch (s) {
    case HeadSource::Main:
      return "MAIN";
    case HeadSource::Aux:
      return "AUX";
    case HeadSource::Ensemble:
      return "ENSEMBLE";
  }
  return "?";
}

void SegConfig::validate() const {
  if (trunk.size() != 4 || decoder.size() != 2) throw ConfigError("segmenter needs 4 trunk and 2 decoder widths");
  for (int w : trunk) {
    if (w < 1) throw ConfigError("segmenter widths must be positive");
  }
  for (int w : decoder) {
    if (w < 1) throw ConfigError("segmenter widths must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("segmenter dropout out of range");
}

namespace {

Image relu(const Image& x) { return Image(x.h, x.w, nn::relu(x.data)); }

Image relu_backward(const Image& pre, const Image& dy) { return Image(dy.h, dy.w, nn::relu_backward(pre.data, dy.data)); }

Image softmax(const Image& logits) { return Image(logits.h, logits.w, nn::softmax_rows(logits.data)); }

}  // namespace

SegNet::SegNet(const std::string& name, int in_channels, int num_classes, const SegConfig& config, nn::Rng& rng,
               int group)
    : config_(config), num_classes_(num_classes) {
  config.validate();
  const auto& t = config.trunk;
  const int k = num_classes + 1;
  trunk.emplace_back(name + ".conv1", in_channels, t[0], 3, 1, rng, group);
  trunk.emplace_back(name + ".conv2", t[0], t[1], 3, 2, rng, group);
  trunk.emplace_back(name + ".conv3", t[1], t[2], 3, 2, rng, group);
  trunk.emplace_back(name + ".conv4", t[2], t[3], 3, 1, rng, group);
  decoder.emplace_back(name + ".dec1", t[3] + t[1], config.decoder[0], 3, 1, rng, group);
  decoder.emplace_back(name + ".dec2", config.decoder[0] + t[0], config.decoder[1], 3, 1, rng, group);
  main_head = Conv2d(name + ".main", config.decoder[1], k, 1, 1, rng, group);
  aux_head = Conv2d(name + ".aux", t[1], k, 1, 1, rng, group);
}

SegOutput SegNet::forward(const Image& x, bool train, nn::Rng* rng) const {
  if (train && config_.dropout > 0.0 && !rng) throw std::invalid_argument("SegNet: training forward needs an rng");
  SegOutput o;
  o.conv.resize(8);
  o.pre.resize(6);
  auto layer = [&](const Conv2d& conv, const Image& in, int slot) {
    o.pre[static_cast<size_t>(slot)] = conv.forward(in, &o.conv[static_cast<size_t>(slot)]);
    return relu(o.pre[static_cast<size_t>(slot)]);
  };
  auto drop = [&](const Image& in, Mat& mask) {
    if (!train || config_.dropout == 0.0) {
      mask = Mat::Ones(in.data.rows(), in.data.cols());
      return in;
    }
    return Image(in.h, in.w, nn::dropout(in.data, config_.dropout, *rng, &mask));
  };

  const Image c1 = layer(trunk[0], x, 0);
  const Image c2 = layer(trunk[1], c1, 1);
  const Image c3 = layer(trunk[2], c2, 2);
  const Image c4 = layer(trunk[3], c3, 3);
  o.h2 = c2.h;
  o.w2 = c2.w;
  o.h4 = c4.h;
  o.w4 = c4.w;

  const Image aux_small = aux_head.forward(drop(c2, o.aux_mask), &o.conv[7]);
  o.aux_logits = nn::resize_bilinear(aux_small, x.h, x.w);

  const Image d1 = layer(decoder[0], nn::concat_channels(nn::resize_bilinear(c4, c2.h, c2.w), c2), 4);
  const Image d2 = layer(decoder[1], nn::concat_channels(nn::resize_bilinear(d1, x.h, x.w), c1), 5);
  o.main_logits = main_head.forward(drop(d2, o.main_mask), &o.conv[6]);

  o.main = softmax(o.main_logits);
  o.aux = softmax(o.aux_logits);
  return o;
}

void SegNet::backward(const SegOutput& o, const Image& dmain, const Image& daux) {
  const int t3 = trunk[3].out_channels();
  const int d0 = decoder[0].out_channels();

  // main head and decoder
  Image dd2 = main_head.backward(o.conv[6], dmain);
  dd2.data.array() *= o.main_mask.array();
  auto [du2, dc1] = nn::split_channels(decoder[1].backward(o.conv[5], relu_backward(o.pre[5], dd2)), d0);
  const Image dd1 = nn::resize_bilinear_backward(du2, o.h2, o.w2);
  auto [du1, dc2] = nn::split_channels(decoder[0].backward(o.conv[4], relu_backward(o.pre[4], dd1)), t3);
  const Image dc4 = nn::resize_bilinear_backward(du1, o.h4, o.w4);

  // aux head
  Image da = aux_head.backward(o.conv[7], nn::resize_bilinear_backward(daux, o.h2, o.w2));
  da.data.array() *= o.aux_mask.array();
  dc2.data += da.data;

  // trunk
  const Image dc3 = trunk[3].backward(o.conv[3], relu_backward(o.pre[3], dc4));
  dc2.data += trunk[2].backward(o.conv[2], relu_backward(o.pre[2], dc3)).data;
  dc1.data += trunk[1].backward(o.conv[1], relu_backward(o.pre[1], dc2)).data;
  trunk[0].backward(o.conv[0], relu_backward(o.pre[0], dc1));
}

size_t SegNet::main_head_parameters() const {
  size_t n = main_head.num_parameters();
  for (const auto& c : decoder) n += c.num_parameters();
  return n;
}

size_t SegNet::num_parameters() const {
  size_t n = main_head_parameters() + aux_head.num_parameters();
  for (const auto& c : trunk) n += c.num_parameters();
  return n;
}

void SegNet::collect(nn::ParamList& out) {
  for (auto& c : trunk) c.collect(out);
  for (auto& c : decoder) c.collect(out);
  main_head.collect(out);
  aux_head.collect(out);
}

std::vector<int> seg_targets(const LabelMap& gt, int num_classes) {
  std::vector<int> t(gt.labels.size());
  for (size_t i = 0; i < t.size(); ++i) {
    const int l = gt.labels[i];
    t[i] = l == kBackground ? num_classes : (l == kIgnore ? nn::kIgnoreLabel : l);
  }
  return t;
}

SegLoss seg_loss(const Image& main_logits, const Image& aux_logits, const LabelMap& gt, int num_classes,
                 double lambda_aux) {
  const std::vector<int> targets = seg_targets(gt, num_classes);
  const nn::Loss m = nn::cross_entropy(main_logits.data, targets);
  const nn::Loss a = nn::cross_entropy(aux_logits.data, targets);
  SegLoss L;
  L.main = m.value;
  L.aux = a.value;
  L.total = m.value + lambda_aux * a.value;
  L.dmain = Image(main_logits.h, main_logits.w, m.grad);
  L.daux = Image(aux_logits.h, aux_logits.w, lambda_aux * a.grad);
  return L;
}

Image ensemble(const Image& a, const Image& b) {
  Mat m = 0.5 * (a.data + b.data);
  const Eigen::VectorXd sums = m.rowwise().sum();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (sums(r) > 0.0) m.row(r) /= sums(r);
  }
  return Image(a.h, a.w, std::move(m));
}

Image select_fusion_output(const SegOutput& out, const HeadPolicy& policy, Phase phase) {
  const HeadSource s = phase == Phase::Train ? policy.train : policy.test;
  switch (s) {
    case HeadSource::Main:
      return out.main;
    case HeadSource::Aux:
      return out.aux;
    case HeadSource::Ensemble:
      return ensemble(out.main, out.aux);
  }
  return out.aux;
}

Image foreground_block(const Image& probs) {
  return Image(probs.h, probs.w, Mat(probs.data.leftCols(probs.channels() - 1)));
}

LabelMap argmax_labels(const Image& probs) {
  LabelMap m;
  m.height = probs.h;
  m.width = probs.w;
  m.labels.resize(static_cast<size_t>(probs.h) * probs.w);
  const int C = probs.channels() - 1;
  for (Eigen::Index r = 0; r < probs.data.rows(); ++r) {
    Eigen::Index best;
    probs.data.row(r).maxCoeff(&best);
    m.labels[static_cast<size_t>(r)] = best == C ? kBackground : static_cast<int>(best);
  }
  return m;
}

}  // namespace mmc
