#include "mmc/conv.hpp"
#include "mmc/nn.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace mmc::nn {
namespace {

double weighted_sum(const Mat& y, const Mat& w) { return y.cwiseProduct(w).sum(); }

TEST(Nn, DenseForwardShape) {
  Rng rng(1);
  Dense d("d", 4, 3, rng);
  EXPECT_EQ(d.forward(Mat::Ones(5, 4)).rows(), 5);
  EXPECT_EQ(d.forward(Mat::Ones(5, 4)).cols(), 3);
  EXPECT_EQ(d.bias.value, Mat::Zero(1, 3));
}

TEST(Nn, MlpGradients) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    MlpStack mlp("m", {5, 7, 6, 3}, trial % 2 == 0, rng);
    Mat x = test::random_mat(6, 5, rng);
    const Mat w = test::random_mat(6, 3, rng);
    ParamList params;
    mlp.collect(params);
    test::randomize_biases(params, rng);
    auto loss = [&] { return weighted_sum(mlp.forward(x, nullptr), w); };
    auto backprop = [&] {
      MlpCache cache;
      mlp.forward(x, &cache);
      mlp.backward(cache, w);
    };
    EXPECT_LT(test::check_params(params, loss, backprop, rng, 4).max_rel_error, 1e-4);

    MlpCache cache;
    mlp.forward(x, &cache);
    const Mat dx = mlp.backward(cache, w);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (int i = 0; i < 6; ++i) {
      coords.push_back(x.data() + i * 5 + i % 5);
      analytic.push_back(dx(i, i % 5));
    }
    EXPECT_LT(check_gradients(loss, coords, analytic).max_rel_error, 1e-4);
  }
}

TEST(Nn, MaxpoolGradients) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Mat x = test::random_mat(12, 4, rng);
    const std::vector<int> offsets{0, 5, 6, 12};
    const Mat w = test::random_mat(3, 4, rng);
    auto loss = [&] { return weighted_sum(group_maxpool(x, offsets).out, w); };
    const PoolResult p = group_maxpool(x, offsets);
    const Mat dx = maxpool_backward(p, w, 12);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (int i = 0; i < x.size(); ++i) {
      coords.push_back(x.data() + i);
      analytic.push_back(dx.data()[i]);
    }
    EXPECT_LT(check_gradients(loss, coords, analytic).max_rel_error, 1e-4);

    const Mat wset = test::random_mat(1, 4, rng);
    auto loss_set = [&] { return weighted_sum(maxpool_set(x).out, wset); };
    const Mat dset = maxpool_backward(maxpool_set(x), wset, 12);
    analytic.assign(dset.data(), dset.data() + dset.size());
    EXPECT_LT(check_gradients(loss_set, coords, analytic).max_rel_error, 1e-4);
  }
}

TEST(Nn, MaxpoolTiesGoToLowestRow) {
  Mat x(3, 2);
  x << 1, 5, 2, 5, 2, 1;
  const PoolResult p = maxpool_set(x);
  EXPECT_EQ(p.out(0, 0), 2.0);
  EXPECT_EQ(p.argmax, (std::vector<int>{1, 0}));
}

TEST(Nn, SmoothL1) {
  EXPECT_EQ(smooth_l1(0.5), 0.125);
  EXPECT_EQ(smooth_l1(-2.0), 1.5);
  EXPECT_EQ(smooth_l1_grad(0.5), 0.5);
  EXPECT_EQ(smooth_l1_grad(-2.0), -1.0);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Mat p = test::random_mat(4, 3, rng, 2.0);
    const Mat t = test::random_mat(4, 3, rng);
    auto loss = [&] { return smooth_l1(p, t).value; };
    const Loss l = smooth_l1(p, t);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (int i = 0; i < p.size(); ++i) {
      coords.push_back(p.data() + i);
      analytic.push_back(l.grad.data()[i]);
    }
    EXPECT_LT(check_gradients(loss, coords, analytic).max_rel_error, 1e-4);
  }
}

TEST(Nn, CrossEntropy) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Mat logits = test::random_mat(6, 4, rng, 2.0);
    std::vector<int> labels{0, 3, kIgnoreLabel, 2, 1, 1};
    auto loss = [&] { return cross_entropy(logits, labels).value; };
    const Loss l = cross_entropy(logits, labels);
    EXPECT_EQ(l.grad.row(2), Mat::Zero(1, 4));
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (int i = 0; i < logits.size(); ++i) {
      coords.push_back(logits.data() + i);
      analytic.push_back(l.grad.data()[i]);
    }
    EXPECT_LT(check_gradients(loss, coords, analytic).max_rel_error, 1e-4);
  }
  const Mat uniform = Mat::Zero(2, 4);
  EXPECT_NEAR(cross_entropy(uniform, std::vector<int>{1, 2}).value, std::log(4.0), 1e-15);
  EXPECT_EQ(cross_entropy(uniform, std::vector<int>{kIgnoreLabel, kIgnoreLabel}).value, 0.0);
}

TEST(Nn, BinaryCrossEntropy) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Mat p(5, 1);
    Mat y(5, 1);
    for (int i = 0; i < 5; ++i) {
      p(i, 0) = test::uniform(rng, 0.05, 0.95);
      y(i, 0) = test::uniform(rng, 0, 1);
    }
    auto loss = [&] { return bce(p, y).value; };
    const Loss l = bce(p, y);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (int i = 0; i < 5; ++i) {
      coords.push_back(p.data() + i);
      analytic.push_back(l.grad(i, 0));
    }
    EXPECT_LT(check_gradients(loss, coords, analytic).max_rel_error, 1e-4);
  }
  EXPECT_NEAR(bce(0.0, 1.0), -std::log(kBceClamp), 1e-9);
}

TEST(Nn, SoftmaxRowsAreSimplices) {
  Rng rng(7);
  const Mat p = softmax_rows(test::random_mat(4, 5, rng, 30.0));
  for (int r = 0; r < 4; ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
  EXPECT_GE(p.minCoeff(), 0.0);
}

TEST(Nn, DropoutIsInverted) {
  Rng rng(8);
  Mat mask;
  const Mat y = dropout(Mat::Ones(200, 50), 0.5, rng, &mask);
  EXPECT_NEAR(y.mean(), 1.0, 0.03);
  for (int i = 0; i < mask.size(); ++i) EXPECT_TRUE(mask.data()[i] == 0.0 || mask.data()[i] == 2.0);
  EXPECT_EQ(dropout(Mat::Ones(2, 2), 0.0, rng, nullptr), Mat::Ones(2, 2));
}

TEST(Nn, AdamWStepByHand) {
  ParamTensor p("p", 1, 2, 1);
  p.value << 1.0, -2.0;
  p.grad << 0.5, 0.0;
  AdamW opt({0.0, 0.1}, 0.9, 0.999, 1e-8);
  opt.step({&p}, 0.01);
  // Bias-corrected first step moves by lr * g / (|g| + eps) after decay.
  EXPECT_NEAR(p.value(0, 0), 1.0 * (1 - 0.001) - 0.01 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(p.value(0, 1), -2.0 * (1 - 0.001), 1e-12);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Nn, ClipGradNorm) {
  ParamTensor a("a", 1, 2);
  ParamTensor b("b", 1, 1);
  a.grad << 3.0, 0.0;
  b.grad << 4.0;
  EXPECT_NEAR(clip_grad_norm({&a, &b}, 10.0), 1.0, 0);
  EXPECT_NEAR(clip_grad_norm({&a, &b}, 1.0), 0.2, 1e-15);
  EXPECT_NEAR(global_grad_norm({&a, &b}), 1.0, 1e-12);
}

TEST(Nn, CheckpointRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "mmc_test_ckpt.bin";
  Rng rng(9);
  MlpStack a("net", {3, 4, 2}, false, rng);
  MlpStack b("net", {3, 4, 2}, false, rng);
  ParamList pa;
  ParamList pb;
  a.collect(pa);
  b.collect(pb);
  save_checkpoint(path, pa);
  load_checkpoint(path, pb);
  for (size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
  MlpStack c("net", {3, 5, 2}, false, rng);
  ParamList pc;
  c.collect(pc);
  EXPECT_ANY_THROW(load_checkpoint(path, pc));
  MlpStack d("other", {3, 4, 2}, false, rng);
  ParamList pd;
  d.collect(pd);
  EXPECT_ANY_THROW(load_checkpoint(path, pd));
}

TEST(Conv, Gradients) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = trial % 2 == 0 ? 3 : 1;
    const int stride = trial % 4 < 2 ? 1 : 2;
    Conv2d conv("c", 3, 4, k, stride, rng);
    Image x(5, 6, test::random_mat(30, 3, rng));
    const int ho = (5 - 1) / stride + 1;
    const int wo = (6 - 1) / stride + 1;
    const Mat w = test::random_mat(ho * wo, 4, rng);
    ParamList params;
    conv.collect(params);
    auto loss = [&] { return weighted_sum(conv.forward(x, nullptr).data, w); };
    ConvCache cache;
    auto backprop = [&] {
      conv.forward(x, &cache);
      conv.backward(cache, Image(ho, wo, w));
    };
    EXPECT_LT(test::check_params(params, loss, backprop, rng, 6).max_rel_error, 1e-4);
    conv.forward(x, &cache);
    const Image dx = conv.backward(cache, Image(ho, wo, w));
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (int i = 0; i < x.data.size(); i += 3) {
      coords.push_back(x.data.data() + i);
      analytic.push_back(dx.data.data()[i]);
    }
    EXPECT_LT(check_gradients(loss, coords, analytic).max_rel_error, 1e-4);
  }
}

TEST(Conv, ResizeAdjointAndConstant) {
  Rng rng(11);
  const Image x(4, 5, test::random_mat(20, 2, rng));
  const Image y(9, 7, test::random_mat(63, 2, rng));
  const Image rx = resize_bilinear(x, 9, 7);
  const Image ry = resize_bilinear_backward(y, 4, 5);
  EXPECT_NEAR(rx.data.cwiseProduct(y.data).sum(), x.data.cwiseProduct(ry.data).sum(), 1e-10);
  const Image c(3, 3, Mat::Constant(9, 1, 0.7));
  const Image up = resize_bilinear(c, 12, 12);
  EXPECT_NEAR((up.data.array() - 0.7).abs().maxCoeff(), 0.0, 1e-15);
}

TEST(Conv, ConcatSplit) {
  Rng rng(12);
  const Image a(2, 3, test::random_mat(6, 2, rng));
  const Image b(2, 3, test::random_mat(6, 3, rng));
  const Image c = concat_channels(a, b);
  EXPECT_EQ(c.channels(), 5);
  const auto [l, r] = split_channels(c, 2);
  EXPECT_EQ(l.data, a.data);
  EXPECT_EQ(r.data, b.data);
}

}  // namespace
}  // namespace mmc::nn
