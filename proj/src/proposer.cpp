#include "mmc/proposer.hpp"

#include "mmc/errors.hpp"
#include "mmc/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mmc {

using nn::Mat;

void ProposerConfig::validate() const {
  auto positive = [](double v) { return v > 0.0; };
  if (sa1_points < 1 || sa2_points < 1 || n_proposals < 1 || sa1_k < 1 || sa2_k < 1 || cluster_k < 1) {
    throw ConfigError("proposer point counts must be positive");
  }
  if (sa2_points > sa1_points || n_proposals > sa2_points) {
    throw ConfigError("proposer needs sa1_points >= sa2_points >= n_proposals");
  }
  if (!positive(sa1_radius) || !positive(sa2_radius) || !positive(cluster_radius)) {
    throw ConfigError("proposer radii must be positive");
  }
  if (sa1_mlp.empty() || sa2_mlp.empty() || cluster_mlp.empty()) throw ConfigError("proposer MLPs need widths");
}

std::vector<int> fps(std::span<const Vec3> points, int m, int start_index) {
  return kernels::farthest_point_sample(points, m, start_index);
}

std::vector<int> ball_group(std::span<const Vec3> points, std::span<const Vec3> centers, double radius, int k) {
  return kernels::ball_query(points, centers, radius, k);
}

namespace {

std::vector<int> group_offsets(int groups, int k) {
  std::vector<int> off(static_cast<size_t>(groups) + 1);
  for (int g = 0; g <= groups; ++g) off[static_cast<size_t>(g)] = g * k;
  return off;
}

// Rows [(p_j - c_i) / radius, feat_j] for every group member.
Mat grouped_rows(std::span<const Vec3> points, const Mat& feat, std::span<const Vec3> centers,
                 const std::vector<int>& groups, int k, double radius) {
  Mat rows(static_cast<Eigen::Index>(groups.size()), 3 + feat.cols());
  for (size_t g = 0; g < centers.size(); ++g) {
    for (int t = 0; t < k; ++t) {
      const size_t r = g * static_cast<size_t>(k) + static_cast<size_t>(t);
      const int j = groups[r];
      const Vec3 d = (points[static_cast<size_t>(j)] - centers[g]) / radius;
      rows.block(static_cast<Eigen::Index>(r), 0, 1, 3) = d.transpose();
      rows.block(static_cast<Eigen::Index>(r), 3, 1, feat.cols()) = feat.row(j);
    }
  }
  return rows;
}

std::vector<Vec3> rows_to_points(const Mat& xyz) {
  std::vector<Vec3> out(static_cast<size_t>(xyz.rows()));
  for (Eigen::Index i = 0; i < xyz.rows(); ++i) out[static_cast<size_t>(i)] = xyz.row(i).transpose();
  return out;
}

SetAbstraction abstract(const nn::MlpStack& mlp, std::span<const Vec3> points, const Mat& feat, int n_seeds,
                        double radius, int k, std::vector<Vec3>& seed_pos, Mat& pooled) {
  SetAbstraction sa;
  sa.seeds = fps(points, std::min<int>(n_seeds, static_cast<int>(points.size())), 0);
  seed_pos.clear();
  for (int s : sa.seeds) seed_pos.push_back(points[static_cast<size_t>(s)]);
  sa.groups = ball_group(points, seed_pos, radius, k);
  const Mat rows = grouped_rows(points, feat, seed_pos, sa.groups, k, radius);
  sa.rows = static_cast<int>(rows.rows());
  const Mat h = mlp.forward(rows, &sa.mlp);
  sa.pool = nn::group_maxpool(h, group_offsets(static_cast<int>(sa.seeds.size()), k));
  pooled = sa.pool.out;
  return sa;
}

// Backward through one abstraction round: returns d(rows) split as offsets
// (scaled back by 1/radius) and features.
Mat abstract_backward(nn::MlpStack& mlp, const SetAbstraction& sa, const Mat& dpooled) {
  return mlp.backward(sa.mlp, nn::maxpool_backward(sa.pool, dpooled, sa.rows));
}

std::vector<int> with_input(int in, const std::vector<int>& hidden, int out = -1) {
  std::vector<int> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  if (out > 0) w.push_back(out);
  return w;
}

}  // namespace

Vec3 ProposerOutput::cluster_center(int k) const {
  return vote_xyz.row(cluster.seeds[static_cast<size_t>(k)]).transpose();
}

ProposerGrad ProposerGrad::zeros(const ProposerOutput& out) {
  return {Mat::Zero(out.head.rows(), out.head.cols()), Mat::Zero(out.vote_xyz.rows(), 3)};
}

void accumulate_box_grad(const ProposerOutput& out, int k, const BoxGrad& g, ProposerGrad& grad) {
  const Eigen::Index r = k;
  for (int a = 0; a < 3; ++a) {
    grad.dhead(r, HeadLayout::kCenter + a) += g.center[a];
    grad.dvote_xyz(out.cluster.seeds[static_cast<size_t>(k)], a) += g.center[a];
  }
  const Box3D& b = out.proposals[static_cast<size_t>(k)].box;
  const double sizes[3] = {b.l, b.h, b.w};
  const double grads[3] = {g.l, g.h, g.w};
  for (int a = 0; a < 3; ++a) {
    const double raw = out.head(r, HeadLayout::kSize + a);
    if (raw > kMinLogSize && raw < kMaxLogSize) grad.dhead(r, HeadLayout::kSize + a) += grads[a] * sizes[a];
  }
  grad.dhead(r, HeadLayout::kHeading) += g.heading;
}

ProposerNet::ProposerNet(const ProposerConfig& config, int num_classes, nn::Rng& rng, int group)
    : config_(config), num_classes_(num_classes) {
  config.validate();
  const int in1 = 3 + 1 + num_classes;
  sa1 = nn::MlpStack("proposer.sa1", with_input(in1, config.sa1_mlp), true, rng, group);
  const int d1 = config.sa1_mlp.back();
  sa2 = nn::MlpStack("proposer.sa2", with_input(3 + d1, config.sa2_mlp), true, rng, group);
  const int d2 = config.sa2_mlp.back();
  vote = nn::MlpStack("proposer.vote", with_input(d2, config.vote_hidden, 3 + d2), false, rng, group);
  cluster = nn::MlpStack("proposer.cluster", with_input(3 + d2, config.cluster_mlp), true, rng, group);
  head = nn::MlpStack("proposer.head", with_input(config.cluster_mlp.back(), config.head_hidden,
                                                  HeadLayout::width(num_classes)),
                      false, rng, group);
  vote.layers.back().weight.value *= 0.1;
  head.layers.back().weight.value *= 0.1;
}

ProposerOutput ProposerNet::forward(const PaintedCloud& cloud) const {
  if (cloud.size() == 0) throw std::invalid_argument("proposer: empty cloud");
  if (cloud.num_classes() != num_classes_) throw std::invalid_argument("proposer: painted width mismatch");
  const ProposerConfig& cfg = config_;
  ProposerOutput out;
  out.num_classes = num_classes_;
  out.input_points = cloud.points;

  std::vector<Vec3> seeds1;
  Mat f1;
  out.sa1 = abstract(sa1, out.input_points, cloud.features(), cfg.sa1_points, cfg.sa1_radius, cfg.sa1_k,
                     seeds1, f1);
  out.sa2 = abstract(sa2, seeds1, f1, cfg.sa2_points, cfg.sa2_radius, cfg.sa2_k, out.seed_xyz, out.seed_feat);

  const int m = static_cast<int>(out.seed_xyz.size());
  const Mat v = vote.forward(out.seed_feat, &out.vote_cache);
  out.vote_xyz.resize(m, 3);
  for (int i = 0; i < m; ++i) out.vote_xyz.row(i) = out.seed_xyz[static_cast<size_t>(i)].transpose();
  out.vote_xyz += v.leftCols(3);
  out.vote_feat = out.seed_feat + v.rightCols(v.cols() - 3);

  std::vector<Vec3> centers;
  Mat pooled;
  const std::vector<Vec3> votes = rows_to_points(out.vote_xyz);
  out.cluster = abstract(cluster, votes, out.vote_feat, std::min(cfg.n_proposals, m), cfg.cluster_radius,
                         cfg.cluster_k, centers, pooled);
  out.head = head.forward(pooled, &out.head_cache);

  const int C = num_classes_;
  out.proposals.resize(centers.size());
  for (size_t k = 0; k < centers.size(); ++k) {
    const auto h = out.head.row(static_cast<Eigen::Index>(k));
    Proposal& p = out.proposals[k];
    p.box.center = centers[k] + Vec3{h(0), h(1), h(2)};
    auto size = [&](int a) { return std::exp(std::clamp(h(HeadLayout::kSize + a), kMinLogSize, kMaxLogSize)); };
    p.box.l = size(0);
    p.box.h = size(1);
    p.box.w = size(2);
    p.box.heading = wrap_angle(h(HeadLayout::kHeading));
    p.objectness = nn::sigmoid(h(HeadLayout::kObjectness));
    const Mat probs = nn::softmax_rows(h.segment(HeadLayout::kClass, C));
    p.class_probs.assign(probs.data(), probs.data() + C);
  }
  return out;
}

void ProposerNet::backward(const ProposerOutput& out, const ProposerGrad& grad) {
  const ProposerConfig& cfg = config_;
  Mat dvote_xyz = grad.dvote_xyz;
  Mat dvote_feat = Mat::Zero(out.vote_feat.rows(), out.vote_feat.cols());

  const Mat dpooled = head.backward(out.head_cache, grad.dhead);
  const Mat drows3 = abstract_backward(cluster, out.cluster, dpooled);
  const int k3 = cfg.cluster_k;
  for (size_t g = 0; g < out.cluster.seeds.size(); ++g) {
    const int c = out.cluster.seeds[g];
    for (int t = 0; t < k3; ++t) {
      const size_t r = g * static_cast<size_t>(k3) + static_cast<size_t>(t);
      const int j = out.cluster.groups[r];
      const auto d = drows3.block(static_cast<Eigen::Index>(r), 0, 1, 3) / cfg.cluster_radius;
      dvote_xyz.row(j) += d;
      dvote_xyz.row(c) -= d;
      dvote_feat.row(j) += drows3.block(static_cast<Eigen::Index>(r), 3, 1, dvote_feat.cols());
    }
  }

  Mat dv(dvote_xyz.rows(), 3 + dvote_feat.cols());
  dv << dvote_xyz, dvote_feat;
  Mat dseed_feat = dvote_feat + vote.backward(out.vote_cache, dv);

  const Mat drows2 = abstract_backward(sa2, out.sa2, dseed_feat);
  const Eigen::Index d1 = sa1.out_dim();
  Mat df1 = Mat::Zero(static_cast<Eigen::Index>(out.sa1.seeds.size()), d1);
  for (size_t r = 0; r < out.sa2.groups.size(); ++r) {
    df1.row(out.sa2.groups[r]) += drows2.block(static_cast<Eigen::Index>(r), 3, 1, d1);
  }
  abstract_backward(sa1, out.sa1, df1);
}

size_t ProposerNet::num_parameters() const {
  return sa1.num_parameters() + sa2.num_parameters() + vote.num_parameters() + cluster.num_parameters() +
         head.num_parameters();
}

void ProposerNet::collect(nn::ParamList& out) {
  sa1.collect(out);
  sa2.collect(out);
  vote.collect(out);
  cluster.collect(out);
  head.collect(out);
}

RpnLoss rpn_loss(const ProposerOutput& out, std::span<const GtBox> gt, const RpnLossConfig& cfg) {
  RpnLoss L;
  L.grad = ProposerGrad::zeros(out);
  const int C = out.num_classes;

  // Votes of seeds inside a GT box regress to the nearest containing center.
  std::vector<std::pair<int, Vec3>> targets;
  for (size_t i = 0; i < out.seed_xyz.size(); ++i) {
    const Vec3& s = out.seed_xyz[i];
    double best = std::numeric_limits<double>::infinity();
    Vec3 target;
    for (const GtBox& g : gt) {
      if (!contains(g.box, s)) continue;
      const double d = (g.box.center - s).squaredNorm();
      if (d < best) {
        best = d;
        target = g.box.center;
      }
    }
    if (std::isfinite(best)) targets.emplace_back(static_cast<int>(i), target);
  }
  L.object_seeds = static_cast<int>(targets.size());
  for (const auto& [i, target] : targets) {
    for (int a = 0; a < 3; ++a) {
      const double diff = out.vote_xyz(i, a) - target[a];
      L.vote += std::abs(diff) / L.object_seeds;
      L.grad.dvote_xyz(i, a) += (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) / L.object_seeds;
    }
  }

  // Objectness by cluster-center distance to the nearest GT center.
  const int P = static_cast<int>(out.proposals.size());
  std::vector<int> label(static_cast<size_t>(P), -1);
  std::vector<int> match(static_cast<size_t>(P), -1);
  int labeled = 0;
  for (int k = 0; k < P; ++k) {
    const Vec3 c = out.cluster_center(k);
    double best = std::numeric_limits<double>::infinity();
    for (size_t g = 0; g < gt.size(); ++g) {
      const double d = (gt[g].box.center - c).norm();
      if (d < best) {
        best = d;
        match[static_cast<size_t>(k)] = static_cast<int>(g);
      }
    }
    if (best < cfg.near) {
      label[static_cast<size_t>(k)] = 1;
    } else if (best > cfg.far) {
      label[static_cast<size_t>(k)] = 0;
    }
    if (label[static_cast<size_t>(k)] >= 0) ++labeled;
    if (label[static_cast<size_t>(k)] == 1) ++L.positives;
  }
  for (int k = 0; k < P && labeled > 0; ++k) {
    const int y = label[static_cast<size_t>(k)];
    if (y < 0) continue;
    const double x = out.head(k, HeadLayout::kObjectness);
    // Two-class cross entropy on a single logit.
    const double softplus = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    L.objectness += (softplus - y * x) / labeled;
    L.grad.dhead(k, HeadLayout::kObjectness) += cfg.lambda_obj * (nn::sigmoid(x) - y) / labeled;
  }

  // Box and semantic terms on positives.
  for (int k = 0; k < P && L.positives > 0; ++k) {
    if (label[static_cast<size_t>(k)] != 1) continue;
    const GtBox& g = gt[static_cast<size_t>(match[static_cast<size_t>(k)])];
    const Box3D& b = out.proposals[static_cast<size_t>(k)].box;
    const double n = L.positives;
    BoxGrad bg;
    for (int a = 0; a < 3; ++a) {
      const double diff = b.center[a] - g.box.center[a];
      L.box += nn::smooth_l1(diff) / n;
      bg.center[a] = cfg.lambda_box * nn::smooth_l1_grad(diff) / n;
    }
    const double dl = b.l - g.box.l;
    const double dh = b.h - g.box.h;
    const double dw = b.w - g.box.w;
    const double dt = wrap_angle(out.head(k, HeadLayout::kHeading) - g.box.heading);
    L.box += (nn::smooth_l1(dl) + nn::smooth_l1(dh) + nn::smooth_l1(dw) + nn::smooth_l1(dt)) / n;
    bg.l = cfg.lambda_box * nn::smooth_l1_grad(dl) / n;
    bg.h = cfg.lambda_box * nn::smooth_l1_grad(dh) / n;
    bg.w = cfg.lambda_box * nn::smooth_l1_grad(dw) / n;
    bg.heading = cfg.lambda_box * nn::smooth_l1_grad(dt) / n;
    accumulate_box_grad(out, k, bg, L.grad);

    const Mat logits = out.head.block(k, HeadLayout::kClass, 1, C);
    const int cls = g.cls;
    const nn::Loss ce = nn::cross_entropy(logits, std::span<const int>(&cls, 1));
    L.semantic += ce.value / n;
    L.grad.dhead.block(k, HeadLayout::kClass, 1, C) += cfg.lambda_sem * ce.grad / n;
  }

  L.total = L.vote + cfg.lambda_obj * L.objectness + cfg.lambda_box * L.box + cfg.lambda_sem * L.semantic;
  return L;
}

}  // namespace mmc
