#include "mmc/seg2d.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

namespace mmc {
namespace {

SegConfig tiny_config() {
  SegConfig c;
  c.trunk = {4, 5, 5, 6};
  c.decoder = {5, 4};
  c.dropout = 0.2;
  return c;
}

LabelMap random_labels(int h, int w, int C, nn::Rng& rng) {
  LabelMap m;
  m.height = h;
  m.width = w;
  std::uniform_int_distribution<int> d(-2, C - 1);
  for (int i = 0; i < h * w; ++i) m.labels.push_back(d(rng));
  return m;
}

TEST(Seg2d, HeadSourceNames) {
  EXPECT_EQ(parse_head_source("AUX"), HeadSource::Aux);
  EXPECT_EQ(parse_head_source("MAIN"), HeadSource::Main);
  EXPECT_EQ(parse_head_source("ENSEMBLE"), HeadSource::Ensemble);
  EXPECT_EQ(to_string(HeadSource::Ensemble), "ENSEMBLE");
  EXPECT_ANY_THROW(parse_head_source("aux2"));
  const HeadPolicy p;
  EXPECT_EQ(p.train, HeadSource::Aux);
  EXPECT_EQ(p.test, HeadSource::Ensemble);
}

TEST(Seg2d, OutputsAreSimplices) {
  nn::Rng rng(1);
  const SegNet net("s", 16, 3, SegConfig{}, rng);
  const nn::Image x(24, 32, test::random_mat(24 * 32, 16, rng));
  const SegOutput o = net.forward(x, false, nullptr);
  EXPECT_EQ(o.main.channels(), 4);
  EXPECT_EQ(o.aux.channels(), 4);
  EXPECT_EQ(o.main.h, 24);
  EXPECT_EQ(o.aux.w, 32);
  for (int r = 0; r < o.main.data.rows(); r += 17) {
    EXPECT_NEAR(o.main.data.row(r).sum(), 1.0, 1e-12);
    EXPECT_NEAR(o.aux.data.row(r).sum(), 1.0, 1e-12);
  }
  EXPECT_EQ(net.in_channels(), 16);
}

TEST(Seg2d, AuxHeadIsWeaker) {
  nn::Rng rng(2);
  const SegNet net("s", 16, 3, SegConfig{}, rng);
  EXPECT_LT(net.aux_parameters(), net.main_head_parameters());
  const nn::Image x(24, 32, test::random_mat(24 * 32, 16, rng));
  const SegOutput o = net.forward(x, false, nullptr);
  EXPECT_LT(o.h2, 24);
  EXPECT_LT(o.w2, 32);
}

TEST(Seg2d, ConstantInputGivesConstantInterior) {
  nn::Rng rng(3);
  const SegNet net("s", 4, 3, SegConfig{}, rng);
  const nn::Image x(48, 64, nn::Mat::Constant(48 * 64, 4, 0.5));
  const SegOutput o = net.forward(x, false, nullptr);
  const auto ref = o.main.data.row(24 * 64 + 32);
  for (int y = 16; y < 32; ++y) {
    for (int xx = 16; xx < 48; ++xx) {
      EXPECT_LT((o.main.data.row(y * 64 + xx) - ref).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Seg2d, HeadPolicySelection) {
  SegOutput o;
  o.main = nn::Image(1, 1, nn::Mat(1, 2));
  o.aux = nn::Image(1, 1, nn::Mat(1, 2));
  o.main.data << 1.0, 0.0;
  o.aux.data << 0.0, 1.0;
  const HeadPolicy p;
  EXPECT_EQ(select_fusion_output(o, p, Phase::Train).data, o.aux.data);
  const nn::Image e = select_fusion_output(o, p, Phase::Test);
  EXPECT_EQ(e.data(0, 0), 0.5);
  EXPECT_EQ(e.data(0, 1), 0.5);
  o.aux = o.main;
  EXPECT_EQ(select_fusion_output(o, p, Phase::Test).data, o.main.data);
  EXPECT_EQ(select_fusion_output(o, HeadPolicy{HeadSource::Main, HeadSource::Main}, Phase::Train).data,
            o.main.data);
}

TEST(Seg2d, TargetsAndLabels) {
  LabelMap gt;
  gt.height = 1;
  gt.width = 4;
  gt.labels = {0, 2, kBackground, kIgnore};
  EXPECT_EQ(seg_targets(gt, 3), (std::vector<int>{0, 2, 3, nn::kIgnoreLabel}));
  nn::Image probs(1, 2, nn::Mat(2, 4));
  probs.data << 0.1, 0.2, 0.3, 0.4, 0.5, 0.2, 0.2, 0.1;
  EXPECT_EQ(argmax_labels(probs).labels, (std::vector<int>{kBackground, 0}));
  EXPECT_EQ(foreground_block(probs).channels(), 3);
}

TEST(Seg2d, LossGradients) {
  nn::Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const LabelMap gt = random_labels(3, 4, 3, rng);
    nn::Image main(3, 4, test::random_mat(12, 4, rng));
    nn::Image aux(3, 4, test::random_mat(12, 4, rng));
    auto loss = [&] { return seg_loss(main, aux, gt, 3, 0.4).total; };
    const SegLoss L = seg_loss(main, aux, gt, 3, 0.4);
    EXPECT_NEAR(L.total, L.main + 0.4 * L.aux, 1e-12);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (int i = 0; i < 48; i += 2) {
      coords.push_back(main.data.data() + i);
      analytic.push_back(L.dmain.data.data()[i]);
      coords.push_back(aux.data.data() + i + 1);
      analytic.push_back(L.daux.data.data()[i + 1]);
    }
    EXPECT_LT(nn::check_gradients(loss, coords, analytic).max_rel_error, 1e-4);
  }
}

TEST(Seg2d, NetworkGradients) {
  for (int trial = 0; trial < 20; ++trial) {
    nn::Rng rng(50 + trial);
    SegNet net("s", 5, 2, tiny_config(), rng);
    const nn::Image x(9, 11, test::random_mat(99, 5, rng));
    const LabelMap gt = random_labels(9, 11, 2, rng);
    nn::ParamList params;
    net.collect(params);
    auto run = [&] {
      nn::Rng drop(7);
      return net.forward(x, true, &drop);
    };
    auto loss = [&] {
      const SegOutput o = run();
      return seg_loss(o.main_logits, o.aux_logits, gt, 2).total;
    };
    auto backprop = [&] {
      const SegOutput o = run();
      const SegLoss L = seg_loss(o.main_logits, o.aux_logits, gt, 2);
      net.backward(o, L.dmain, L.daux);
    };
    EXPECT_LT(test::check_params(params, loss, backprop, rng, 3).max_rel_error, 1e-4) << trial;
  }
}

}  // namespace
}  // namespace mmc
