#pragma once

#include "mmc/data.hpp"
#include "mmc/nn.hpp"

#include <functional>
#include <random>
#include <vector>

namespace mmc::test {

inline nn::Mat random_mat(int rows, int cols, nn::Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  nn::Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline double uniform(nn::Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Box3D random_box(nn::Rng& rng, double spread = 1.0) {
  Box3D b;
  b.center = Vec3(uniform(rng, -spread, spread), uniform(rng, -spread, spread), uniform(rng, -spread, spread));
  b.l = uniform(rng, 0.3, 2.0);
  b.w = uniform(rng, 0.3, 2.0);
  b.h = uniform(rng, 0.3, 2.0);
  b.heading = uniform(rng, -kPi, kPi);
  return b;
}

// Zero-initialized biases put dead units exactly on the ReLU kink.
inline void randomize_biases(const nn::ParamList& params, nn::Rng& rng, double scale = 0.1) {
  for (nn::ParamTensor* p : params) {
    if (p->name.ends_with("bias")) p->value = random_mat(static_cast<int>(p->value.rows()), static_cast<int>(p->value.cols()), rng, scale);
  }
}

// Finite differences on up to `per_tensor` random coordinates of every
// parameter. `run` must zero, recompute and backpropagate, returning the loss.
inline nn::GradCheckResult check_params(const nn::ParamList& params, const std::function<double()>& loss,
                                        const std::function<void()>& backprop, nn::Rng& rng, int per_tensor = 3,
                                        double h = 1e-5) {
  nn::zero_grads(params);
  backprop();
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (nn::ParamTensor* p : params) {
    const auto n = static_cast<int>(p->value.size());
    for (int t = 0; t < std::min(per_tensor, n); ++t) {
      const int i = std::uniform_int_distribution<int>(0, n - 1)(rng);
      coords.push_back(p->value.data() + i);
      analytic.push_back(p->grad.data()[i]);
    }
  }
  return nn::check_gradients(loss, coords, analytic, h);
}

}  // namespace mmc::test
