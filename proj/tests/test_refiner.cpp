#include "mmc/refiner.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

namespace mmc {
namespace {

RefinerConfig tiny_config() {
  RefinerConfig c;
  c.pre = {8, 10};
  c.post = {9};
  c.head_width = 6;
  c.dropout = 0.2;
  return c;
}

TEST(Refiner, IouTargetGrid) {
  for (int i = 0; i <= 1000; ++i) {
    const double iou = i / 1000.0;
    const double want = iou < 0.15 ? 0.0 : (iou > 0.65 ? 1.0 : 2 * iou - 0.3);
    EXPECT_NEAR(iou_target(iou), want, 1e-12);
  }
}

TEST(Refiner, ResidualRoundTrip) {
  nn::Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Box3D p = test::random_box(rng);
    const Box3D t = test::random_box(rng);
    const Box3D r = apply_residuals(p, measure_residuals(p, t));
    EXPECT_LT((r.center - t.center).norm(), 1e-12);
    EXPECT_NEAR(r.l, t.l, 1e-12);
    EXPECT_NEAR(r.w, t.w, 1e-12);
    EXPECT_NEAR(r.h, t.h, 1e-12);
    EXPECT_NEAR(std::remainder(r.heading - t.heading, 2 * kPi), 0.0, 1e-12);
  }
}

TEST(Refiner, ResidualsLiveInProposalFrame) {
  Box3D p;
  p.heading = kPi / 2;
  const Box3D b = apply_residuals(p, {1.0, 0, 0, -5.0, 0, 0, 0});
  EXPECT_NEAR(b.center.x(), 0.0, 1e-15);
  EXPECT_NEAR(b.center.y(), 1.0, 1e-15);
  EXPECT_EQ(b.l, kMinExtent);
}

TEST(Refiner, WidthsAndShapes) {
  nn::Rng rng(2);
  const RefinerNet net(RefinerConfig{}, 3, rng);
  EXPECT_EQ(net.in_dim(), 12);
  EXPECT_EQ(net.pre.widths(), (std::vector<int>{12, 64, 64, 256}));
  const nn::Mat a = test::random_mat(5, 12, rng);
  const nn::Mat b = test::random_mat(3, 12, rng);
  const std::vector<const nn::Mat*> rois{&a, &b};
  const RefinerOutput o = net.forward(rois, false, nullptr);
  EXPECT_EQ(o.residuals.rows(), 2);
  EXPECT_EQ(o.cls_logits.cols(), 4);
  EXPECT_EQ(o.offsets, (std::vector<int>{0, 5, 8}));
  // Stacking does not mix RoIs.
  const RefinerOutput single = net.forward(b, false, nullptr);
  EXPECT_LT((single.residuals.row(0) - o.residuals.row(1)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(net.forward(nn::Mat::Zero(2, 11), false, nullptr), std::invalid_argument);
}

TEST(Refiner, PermutationInvariantWithinRoi) {
  nn::Rng rng(3);
  const RefinerNet net(RefinerConfig{}, 3, rng);
  const nn::Mat a = test::random_mat(6, 12, rng);
  nn::Mat b = a;
  b.row(0).swap(b.row(5));
  EXPECT_LT((net.forward(a, false, nullptr).residuals - net.forward(b, false, nullptr).residuals).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(Refiner, LossGradients) {
  nn::Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<GtBox> gt{{test::random_box(rng, 0.3), 0}, {test::random_box(rng, 0.3), 2}};
    std::vector<Box3D> props;
    for (int r = 0; r < 5; ++r) {
      Box3D p = gt[static_cast<size_t>(r % 2)].box;
      p.center += test::random_mat(3, 1, rng, 0.1).col(0);
      props.push_back(r == 4 ? test::random_box(rng, 3.0) : p);
    }
    RefinerOutput o;
    o.residuals = test::random_mat(5, 7, rng, 0.5);
    o.cls_logits = test::random_mat(5, 4, rng);
    o.iou_logit = test::random_mat(5, 1, rng);
    auto refresh = [&] {
      o.iou.resize(5, 1);
      for (int r = 0; r < 5; ++r) o.iou(r, 0) = nn::sigmoid(o.iou_logit(r, 0));
    };
    auto loss = [&] {
      refresh();
      return rcnn_loss(props, o, gt).total;
    };
    refresh();
    const RcnnLoss L = rcnn_loss(props, o, gt);
    EXPECT_NEAR(L.total, L.box + L.cls + L.iou, 1e-12);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (int i = 0; i < 35; ++i) {
      coords.push_back(o.residuals.data() + i);
      analytic.push_back(L.dres.data()[i]);
    }
    for (int i = 0; i < 20; ++i) {
      coords.push_back(o.cls_logits.data() + i);
      analytic.push_back(L.dcls.data()[i]);
    }
    for (int i = 0; i < 5; ++i) {
      coords.push_back(o.iou_logit.data() + i);
      analytic.push_back(L.diou_logit.data()[i]);
    }
    EXPECT_LT(nn::check_gradients(loss, coords, analytic).max_rel_error, 1e-4);
  }
}

TEST(Refiner, ForegroundAssignment) {
  GtBox g{Box3D{}, 1};
  Box3D near = g.box;
  near.center.x() = 0.1;
  Box3D far = g.box;
  far.center.x() = 5.0;
  const std::vector<Box3D> props{near, far};
  RefinerOutput o;
  o.residuals = nn::Mat::Zero(2, 7);
  o.cls_logits = nn::Mat::Zero(2, 3);
  o.iou_logit = nn::Mat::Zero(2, 1);
  o.iou = nn::Mat::Constant(2, 1, 0.5);
  const RcnnLoss L = rcnn_loss(props, o, std::vector<GtBox>{g});
  EXPECT_EQ(L.foreground, 1);
  EXPECT_NEAR(L.dres(0, 0), 0.1, 1e-12);
  EXPECT_EQ(L.dres.row(1), nn::Mat::Zero(1, 7));
  EXPECT_LT(L.dcls(1, 2), 0.0);
  EXPECT_LT(L.dcls(0, 1), 0.0);
}

TEST(Refiner, NetworkGradients) {
  for (int trial = 0; trial < 20; ++trial) {
    nn::Rng rng(200 + trial);
    RefinerNet net(tiny_config(), 2, rng);
    nn::Mat a = test::random_mat(6, 11, rng);
    nn::Mat b = test::random_mat(4, 11, rng);
    std::vector<GtBox> gt{{test::random_box(rng, 0.2), 1}};
    std::vector<Box3D> props{gt[0].box, test::random_box(rng, 0.2)};
    props[0].center.x() += 0.05;
    nn::ParamList params;
    net.collect(params);
    test::randomize_biases(params, rng);
    auto run = [&] {
      nn::Rng drop(9);
      const std::vector<const nn::Mat*> rois{&a, &b};
      return net.forward(rois, true, &drop);
    };
    auto loss = [&] { return rcnn_loss(props, run(), gt).total; };
    nn::Mat drows;
    auto backprop = [&] {
      const RefinerOutput o = run();
      const RcnnLoss L = rcnn_loss(props, o, gt);
      drows = net.backward(o, L.dres, L.dcls, L.diou_logit);
    };
    EXPECT_LT(test::check_params(params, loss, backprop, rng, 4).max_rel_error, 1e-4) << trial;
    ASSERT_EQ(drows.rows(), 10);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (int i = 0; i < 66; i += 5) {
      coords.push_back(a.data() + i);
      analytic.push_back(drows.data()[i]);
    }
    for (int i = 0; i < 44; i += 5) {
      coords.push_back(b.data() + i);
      analytic.push_back(drows.data()[66 + i]);
    }
    EXPECT_LT(nn::check_gradients(loss, coords, analytic).max_rel_error, 1e-4) << trial;
  }
}

TEST(Refiner, FusionDropout) {
  nn::Rng rng(5);
  for (uint8_t d : fusion_dropout(100, 1.0, Phase::Test, rng)) EXPECT_EQ(d, 0);
  for (uint8_t d : fusion_dropout(100, 1.0, Phase::Train, rng)) EXPECT_EQ(d, 1);
  int dropped = 0;
  for (uint8_t d : fusion_dropout(2000, 0.5, Phase::Train, rng)) dropped += d;
  EXPECT_NEAR(dropped / 2000.0, 0.5, 0.05);
  nn::Mat rows = nn::Mat::Ones(3, 12);
  zero_2d_block(rows, 3);
  EXPECT_EQ(rows.leftCols(9), nn::Mat::Ones(3, 9));
  EXPECT_EQ(rows.rightCols(3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Refiner, DecodeScore) {
  RefinerOutput o;
  o.residuals = nn::Mat::Zero(1, 7);
  o.cls_logits = nn::Mat(1, 3);
  o.cls_logits << 0.0, std::log(3.0), 0.0;
  o.iou_logit = nn::Mat::Zero(1, 1);
  o.iou = nn::Mat::Constant(1, 1, 0.8);
  const std::vector<Box3D> props{Box3D{}};
  const auto d = decode_refined(props, o);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].cls, 1);
  EXPECT_NEAR(d[0].score, 0.6 * 0.8, 1e-12);
}

}  // namespace
}  // namespace mmc
