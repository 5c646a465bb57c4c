#pragma once

#include "mmc/data.hpp"
#include "mmc/fusion.hpp"
#include "mmc/nn.hpp"

#include <span>
#include <vector>

namespace mmc {

struct ProposerConfig {
  int sa1_points = 1024;
  double sa1_radius = 0.2;
  int sa1_k = 16;
  std::vector<int> sa1_mlp{32, 32, 64};
  int sa2_points = 256;
  double sa2_radius = 0.4;
  int sa2_k = 16;
  std::vector<int> sa2_mlp{64, 128};
  std::vector<int> vote_hidden{128};
  int n_proposals = 64;
  double cluster_radius = 0.3;
  int cluster_k = 16;
  std::vector<int> cluster_mlp{128, 128};
  std::vector<int> head_hidden{128};

  void validate() const;
};

/// Greedy farthest-point sampling, ties to the lowest index.
std::vector<int> fps(std::span<const Vec3> points, int m, int start_index = 0);
/// Up to k neighbors within radius per center, padded with the nearest.
std::vector<int> ball_group(std::span<const Vec3> points, std::span<const Vec3> centers, double radius, int k);

/// Columns of the raw head output.
struct HeadLayout {
  static constexpr int kCenter = 0;
  static constexpr int kSize = 3;  // log (l, h, w)
  static constexpr int kHeading = 6;
  static constexpr int kObjectness = 7;
  static constexpr int kClass = 8;
  static int width(int num_classes) { return kClass + num_classes; }
};

inline constexpr double kMinLogSize = -4.0;
inline constexpr double kMaxLogSize = 2.5;

/// One set-abstraction round: grouped rows, MLP activations and pooling.
struct SetAbstraction {
  std::vector<int> seeds;   // indices into the round's input points
  std::vector<int> groups;  // seeds.size() x k indices into the input points
  nn::MlpCache mlp;
  nn::PoolResult pool;
  int rows = 0;
};

/// Forward results plus everything backward needs.
struct ProposerOutput {
  int num_classes = 0;
  std::vector<Vec3> input_points;
  SetAbstraction sa1;
  SetAbstraction sa2;
  std::vector<Vec3> seed_xyz;  // second-round seeds
  nn::Mat seed_feat;
  nn::MlpCache vote_cache;
  nn::Mat vote_xyz;  // seeds x 3
  nn::Mat vote_feat;
  SetAbstraction cluster;  // seeds = center votes
  nn::MlpCache head_cache;
  nn::Mat head;  // raw, n_proposals x HeadLayout::width(C)
  std::vector<Proposal> proposals;

  Vec3 cluster_center(int k) const;
};

/// Upstream gradients for ProposerNet::backward.
struct ProposerGrad {
  nn::Mat dhead;
  nn::Mat dvote_xyz;

  static ProposerGrad zeros(const ProposerOutput& out);
};

/// Routes a gradient on proposal k's decoded box into the raw outputs.
void accumulate_box_grad(const ProposerOutput& out, int k, const BoxGrad& g, ProposerGrad& grad);

class ProposerNet {
 public:
  ProposerNet() = default;
  ProposerNet(const ProposerConfig& config, int num_classes, nn::Rng& rng, int group = 0);

  ProposerOutput forward(const PaintedCloud& cloud) const;
  void backward(const ProposerOutput& out, const ProposerGrad& grad);

  const ProposerConfig& config() const { return config_; }
  int num_classes() const { return num_classes_; }
  size_t num_parameters() const;
  void collect(nn::ParamList& out);

  nn::MlpStack sa1;
  nn::MlpStack sa2;
  nn::MlpStack vote;
  nn::MlpStack cluster;
  nn::MlpStack head;

 private:
  ProposerConfig config_;
  int num_classes_ = 0;
};

struct RpnLossConfig {
  double near = 0.3;
  double far = 0.6;
  double lambda_obj = 0.5;
  double lambda_box = 1.0;
  double lambda_sem = 0.1;
};

struct RpnLoss {
  double total = 0.0;
  double vote = 0.0;
  double objectness = 0.0;
  double box = 0.0;
  double semantic = 0.0;
  int object_seeds = 0;
  int positives = 0;
  ProposerGrad grad;
};

RpnLoss rpn_loss(const ProposerOutput& out, std::span<const GtBox> gt, const RpnLossConfig& config);

}  // namespace mmc
