#pragma once

#include "mmc/pipeline.hpp"

#include "json.hpp"

#include <functional>
#include <span>
#include <vector>

namespace mmc {

/// Loss parts of one training sample (or a batch mean).
struct LossParts {
  double rpn = 0.0;
  double seg = 0.0;
  double rcnn = 0.0;
  double total = 0.0;

  LossParts& operator+=(const LossParts& o);
  LossParts scaled(double s) const;
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double lr = 0.0;
  LossParts loss;  // batch mean
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<LossParts> epochs;  // per-epoch mean
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Forward and backward of one augmented training sample. Gradients are
/// accumulated into the models scaled by `grad_scale`; the returned parts
/// are unscaled (total = rpn + seg + rcnn).
LossParts train_sample(CascadeModels& models, const Scene& scene, uint64_t seed, double grad_scale);

/// Same computation without touching gradients.
LossParts sample_loss(CascadeModels& models, const Scene& scene, uint64_t seed);

/// Joint optimization over `scenes` following models.config.optim. All
/// randomness derives from models.config.seed.
TrainLog train(CascadeModels& models, std::span<const Scene> scenes,
               const std::function<void(const StepRecord&)>& on_step = {});

/// A segmenter trained on RGB-D alone with the same schedule (no 3D input),
/// as a 2D-only baseline. Returns its test-set mIoU on `test`.
double train_2d_only_miou(const CascadeConfig& config, int num_classes, std::span<const Scene> train_scenes,
                          std::span<const Scene> test_scenes);

}  // namespace mmc
