#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mmc::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

/// A named trainable matrix with its gradient accumulator. Biases are 1 x n.
struct ParamTensor {
  ParamTensor() = default;
  ParamTensor(std::string name, int rows, int cols, int group = 0);

  std::string name;
  Mat value;
  Mat grad;
  /// Optimizer parameter group (weight decay is set per group).
  int group = 0;

  void zero_grad() { grad.setZero(); }
};

using ParamList = std::vector<ParamTensor*>;

void zero_grads(const ParamList& params);

/// y = x W + b with x as rows.
class Dense {
 public:
  Dense() = default;
  /// He-normal weights scaled by `gain_scale`, zero bias.
  Dense(const std::string& name, int in, int out, Rng& rng, int group = 0, double gain_scale = 1.0);

  Mat forward(const Mat& x) const;
  /// Accumulates parameter gradients and returns dL/dx.
  Mat backward(const Mat& x, const Mat& dy);

  int in_dim() const { return static_cast<int>(weight.value.rows()); }
  int out_dim() const { return static_cast<int>(weight.value.cols()); }
  void collect(ParamList& out);

  ParamTensor weight;
  ParamTensor bias;
};

/// Everything MlpStack::backward needs from the matching forward call.
struct MlpCache {
  std::vector<Mat> inputs;
  std::vector<Mat> pre;
};

/// Dense layers with ReLU between them (and after the last if `relu_last`).
class MlpStack {
 public:
  MlpStack() = default;
  MlpStack(const std::string& name, const std::vector<int>& widths, bool relu_last, Rng& rng,
           int group = 0);

  Mat forward(const Mat& x, MlpCache* cache) const;
  Mat backward(const MlpCache& cache, const Mat& dy);

  int in_dim() const { return layers.front().in_dim(); }
  int out_dim() const { return layers.back().out_dim(); }
  std::vector<int> widths() const;
  size_t num_parameters() const;
  void collect(ParamList& out);

  std::vector<Dense> layers;
  bool relu_last = false;
};

Mat relu(const Mat& x);
/// dy masked where the pre-activation was <= 0.
Mat relu_backward(const Mat& pre, const Mat& dy);

/// Row-wise softmax.
Mat softmax_rows(const Mat& logits);
double sigmoid(double x);

/// Inverted dropout. Draws a keep-mask (scaled by 1/(1-p)) into `mask`.
Mat dropout(const Mat& x, double p, Rng& rng, Mat* mask);

/// Column-wise max over contiguous row groups [offsets[g], offsets[g+1]).
/// argmax[g * d + j] is the winning row (lowest index on ties).
struct PoolResult {
  Mat out;
  std::vector<int> argmax;
};
PoolResult group_maxpool(const Mat& rows, std::span<const int> offsets);
/// Max over all rows (a single group).
PoolResult maxpool_set(const Mat& rows);
/// Routes dout to the argmax rows only.
Mat maxpool_backward(const PoolResult& pooled, const Mat& dout, int n_rows);

/// Loss value with its gradient with respect to the first argument.
struct Loss {
  double value = 0.0;
  Mat grad;
};

double smooth_l1(double x);
double smooth_l1_grad(double x);
/// Sum over all components of smooth_l1(pred - target).
Loss smooth_l1(const Mat& pred, const Mat& target);

inline constexpr int kIgnoreLabel = -1;

/// Mean multi-class cross entropy over rows whose label is not `ignore`.
/// Ignored rows get zero gradient; all-ignored input yields 0.
Loss cross_entropy(const Mat& logits, std::span<const int> labels, int ignore = kIgnoreLabel);
/// Single-row convenience.
double cross_entropy(std::span<const double> logits, int label);

inline constexpr double kBceClamp = 1e-7;
/// Mean binary cross entropy on probabilities clamped to [1e-7, 1 - 1e-7].
Loss bce(const Mat& prob, const Mat& target);
double bce(double prob, double target);

/// Decoupled-weight-decay Adam with per-group weight decay.
class AdamW {
 public:
  explicit AdamW(std::vector<double> group_weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);

  void step(const ParamList& params, double lr);
  int64_t steps() const { return t_; }

 private:
  std::vector<double> weight_decay_;
  double beta1_;
  double beta2_;
  double eps_;
  int64_t t_ = 0;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
};

double global_grad_norm(const ParamList& params);
/// Rescales gradients so the global norm is at most max_norm; returns the
/// applied scale (1 when no clipping happened).
double clip_grad_norm(const ParamList& params, double max_norm);

/// Central finite differences at the given coordinates compared against
/// `analytic`. Relative error is |a - n| / max(|a|, |n|, floor).
struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  int checked = 0;
};
GradCheckResult check_gradients(const std::function<double()>& loss,
                                std::span<double* const> coords,
                                std::span<const double> analytic, double h = 1e-5,
                                double floor = 1e-6);

/// Versioned container of named float64 tensors (little-endian).
void save_checkpoint(const std::filesystem::path& path, const ParamList& params);
/// Loads every tensor in `params` by name; throws on a missing name or shape
/// mismatch.
void load_checkpoint(const std::filesystem::path& path, const ParamList& params);

}  // namespace mmc::nn
