#include "mmc/nn.hpp"

#include "mmc/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

namespace mmc::nn {

ParamTensor::ParamTensor(std::string n, int rows, int cols, int g)
    : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)), group(g) {}

void zero_grads(const ParamList& params) {
  for (ParamTensor* p : params) p->zero_grad();
}

Dense::Dense(const std::string& name, int in, int out, Rng& rng, int group, double gain_scale)
    : weight(name + ".weight", in, out, group), bias(name + ".bias", 1, out, group) {
  std::normal_distribution<double> normal(0.0, gain_scale * std::sqrt(2.0 / in));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = normal(rng);
}

Mat Dense::forward(const Mat& x) const {
  if (x.cols() != weight.value.rows()) {
    throw std::invalid_argument("Dense(" + weight.name + "): input width mismatch");
  }
  Mat y = x * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

Mat Dense::backward(const Mat& x, const Mat& dy) {
  if (dy.cols() != weight.value.cols() || dy.rows() != x.rows()) {
    throw std::invalid_argument("Dense(" + weight.name + "): gradient shape mismatch");
  }
  weight.grad.noalias() += x.transpose() * dy;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value.transpose();
}

void Dense::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

MlpStack::MlpStack(const std::string& name, const std::vector<int>& widths, bool relu_last_,
                   Rng& rng, int group)
    : relu_last(relu_last_) {
  if (widths.size() < 2) throw std::invalid_argument("MlpStack needs at least two widths");
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    layers.emplace_back(name + "." + std::to_string(i), widths[i], widths[i + 1], rng, group);
  }
}

Mat MlpStack::forward(const Mat& x, MlpCache* cache) const {
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Mat h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    Mat z = layers[i].forward(h);
    const bool act = relu_last || i + 1 < layers.size();
    if (cache) {
      cache->inputs.push_back(std::move(h));
      if (act) cache->pre.push_back(z);
      else cache->pre.emplace_back();
    }
    h = act ? relu(z) : std::move(z);
  }
  return h;
}

Mat MlpStack::backward(const MlpCache& cache, const Mat& dy) {
  if (cache.inputs.size() != layers.size()) {
    throw std::invalid_argument("MlpStack::backward: cache does not match this stack");
  }
  Mat g = dy;
  for (size_t i = layers.size(); i-- > 0;) {
    const bool act = relu_last || i + 1 < layers.size();
    if (act) g = relu_backward(cache.pre[i], g);
    g = layers[i].backward(cache.inputs[i], g);
  }
  return g;
}

std::vector<int> MlpStack::widths() const {
  std::vector<int> w{layers.front().in_dim()};
  for (const Dense& d : layers) w.push_back(d.out_dim());
  return w;
}

size_t MlpStack::num_parameters() const {
  size_t n = 0;
  for (const Dense& d : layers) n += d.weight.value.size() + d.bias.value.size();
  return n;
}

void MlpStack::collect(ParamList& out) {
  for (Dense& d : layers) d.collect(out);
}

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

Mat relu_backward(const Mat& pre, const Mat& dy) {
  return (pre.array() > 0.0).select(dy, 0.0);
}

Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      out(r, c) = std::exp(logits(r, c) - mx);
      sum += out(r, c);
    }
    out.row(r) /= sum;
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Mat dropout(const Mat& x, double p, Rng& rng, Mat* mask) {
  if (p <= 0.0) {
    if (mask) *mask = Mat::Ones(x.rows(), x.cols());
    return x;
  }
  std::bernoulli_distribution keep(1.0 - p);
  Mat m(x.rows(), x.cols());
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : 0.0;
  Mat y = x.cwiseProduct(m);
  if (mask) *mask = std::move(m);
  return y;
}

PoolResult group_maxpool(const Mat& rows, std::span<const int> offsets) {
  if (offsets.size() < 2) throw std::invalid_argument("group_maxpool: need at least one group");
  const int groups = static_cast<int>(offsets.size()) - 1;
  const Eigen::Index d = rows.cols();
  PoolResult r;
  r.out.resize(groups, d);
  r.argmax.resize(static_cast<size_t>(groups) * d);
  for (int g = 0; g < groups; ++g) {
    const int begin = offsets[g];
    const int end = offsets[g + 1];
    if (end <= begin || end > rows.rows()) throw std::invalid_argument("group_maxpool: bad group");
    for (Eigen::Index j = 0; j < d; ++j) {
      int best = begin;
      double best_v = rows(begin, j);
      for (int i = begin + 1; i < end; ++i) {
        if (rows(i, j) > best_v) {
          best_v = rows(i, j);
          best = i;
        }
      }
      r.out(g, j) = best_v;
      r.argmax[static_cast<size_t>(g) * d + j] = best;
    }
  }
  return r;
}

PoolResult maxpool_set(const Mat& rows) {
  const int offsets[2] = {0, static_cast<int>(rows.rows())};
  return group_maxpool(rows, offsets);
}

Mat maxpool_backward(const PoolResult& pooled, const Mat& dout, int n_rows) {
  const Eigen::Index d = pooled.out.cols();
  Mat dx = Mat::Zero(n_rows, d);
  for (Eigen::Index g = 0; g < pooled.out.rows(); ++g) {
    for (Eigen::Index j = 0; j < d; ++j) {
      dx(pooled.argmax[static_cast<size_t>(g * d + j)], j) += dout(g, j);
    }
  }
  return dx;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (x >= 1.0) return 1.0;
  if (x <= -1.0) return -1.0;
  return x;
}

Loss smooth_l1(const Mat& pred, const Mat& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw std::invalid_argument("smooth_l1: shape mismatch");
  }
  Loss l;
  l.grad.resize(pred.rows(), pred.cols());
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    l.value += smooth_l1(d);
    l.grad.data()[i] = smooth_l1_grad(d);
  }
  return l;
}

Loss cross_entropy(const Mat& logits, std::span<const int> labels, int ignore) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    throw std::invalid_argument("cross_entropy: label count mismatch");
  }
  Loss l;
  l.grad = Mat::Zero(logits.rows(), logits.cols());
  int counted = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[r];
    if (y == ignore) continue;
    if (y < 0 || y >= logits.cols()) throw std::invalid_argument("cross_entropy: label out of range");
    ++counted;
    const double mx = logits.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double e = std::exp(logits(r, c) - mx);
      l.grad(r, c) = e;
      sum += e;
    }
    l.value += std::log(sum) + mx - logits(r, y);
    l.grad.row(r) /= sum;
    l.grad(r, y) -= 1.0;
  }
  if (counted > 0) {
    l.value /= counted;
    l.grad /= counted;
  }
  return l;
}

double cross_entropy(std::span<const double> logits, int label) {
  Mat m(1, static_cast<Eigen::Index>(logits.size()));
  for (size_t i = 0; i < logits.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = logits[i];
  const int labels[1] = {label};
  return cross_entropy(m, labels, std::numeric_limits<int>::min()).value;
}

double bce(double prob, double target) {
  const double p = std::clamp(prob, kBceClamp, 1.0 - kBceClamp);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

Loss bce(const Mat& prob, const Mat& target) {
  if (prob.rows() != target.rows() || prob.cols() != target.cols()) {
    throw std::invalid_argument("bce: shape mismatch");
  }
  Loss l;
  l.grad.resize(prob.rows(), prob.cols());
  const double n = static_cast<double>(prob.size());
  if (prob.size() == 0) return l;
  for (Eigen::Index i = 0; i < prob.size(); ++i) {
    const double p = prob.data()[i];
    const double y = target.data()[i];
    l.value += bce(p, y);
    const bool clamped = p < kBceClamp || p > 1.0 - kBceClamp;
    l.grad.data()[i] = clamped ? 0.0 : (p - y) / (p * (1.0 - p)) / n;
  }
  l.value /= n;
  return l;
}

AdamW::AdamW(std::vector<double> group_weight_decay, double beta1, double beta2, double eps)
    : weight_decay_(std::move(group_weight_decay)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(const ParamList& params, double lr) {
  if (m_.empty()) {
    for (ParamTensor* p : params) {
      m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("AdamW: parameter list changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    ParamTensor& p = *params[i];
    const double wd = p.group < static_cast<int>(weight_decay_.size()) ? weight_decay_[p.group] : 0.0;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value *= 1.0 - lr * wd;
    p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

double global_grad_norm(const ParamList& params) {
  double sq = 0.0;
  for (const ParamTensor* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (ParamTensor* p : params) p->grad *= scale;
  return scale;
}

GradCheckResult check_gradients(const std::function<double()>& loss,
                                std::span<double* const> coords, std::span<const double> analytic,
                                double h, double floor) {
  if (coords.size() != analytic.size()) throw std::invalid_argument("check_gradients: size mismatch");
  GradCheckResult r;
  for (size_t i = 0; i < coords.size(); ++i) {
    double* x = coords[i];
    const double saved = *x;
    *x = saved + h;
    const double fp = loss();
    *x = saved - h;
    const double fm = loss();
    *x = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double abs_err = std::abs(numeric - analytic[i]);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
    r.max_abs_error = std::max(r.max_abs_error, abs_err);
    r.max_rel_error = std::max(r.max_rel_error, abs_err / denom);
    ++r.checked;
  }
  return r;
}

namespace {

constexpr char kCkptMagic[8] = {'M', 'M', 'C', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw IoError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kCkptMagic, sizeof(kCkptMagic));
  write_le<uint32_t>(os, kCkptVersion);
  write_le<uint32_t>(os, static_cast<uint32_t>(params.size()));
  for (const ParamTensor* p : params) {
    write_le<uint32_t>(os, static_cast<uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_le<uint32_t>(os, static_cast<uint32_t>(p->value.rows()));
    write_le<uint32_t>(os, static_cast<uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) write_le<double>(os, p->value.data()[i]);
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  const uint32_t version = read_le<uint32_t>(is);
  if (version != kCkptVersion) throw IoError("unsupported checkpoint version");
  const uint32_t count = read_le<uint32_t>(is);
  std::map<std::string, Mat> tensors;
  for (uint32_t t = 0; t < count; ++t) {
    const uint32_t len = read_le<uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("checkpoint truncated");
    const uint32_t rows = read_le<uint32_t>(is);
    const uint32_t cols = read_le<uint32_t>(is);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = read_le<double>(is);
    tensors.emplace(std::move(name), std::move(m));
  }
  for (ParamTensor* p : params) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) throw IoError("checkpoint lacks tensor " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw IoError("checkpoint tensor " + p->name + " has the wrong shape");
    }
    p->value = it->second;
  }
}

}  // namespace mmc::nn
