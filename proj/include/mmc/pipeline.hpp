#pragma once

#include "mmc/config.hpp"
#include "mmc/eval.hpp"
#include "mmc/fusion.hpp"
#include "mmc/proposer.hpp"
#include "mmc/refiner.hpp"
#include "mmc/scene_io.hpp"
#include "mmc/seg2d.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace mmc {

/// Parameter groups for the optimizer.
inline constexpr int kGroup3d = 0;
inline constexpr int kGroup2d = 1;

/// All trainable stages of one cascade.
struct CascadeModels {
  CascadeConfig config;
  int num_classes = 0;
  std::optional<SegNet> initial_seg;  // RGB-D input
  ProposerNet proposer;
  std::optional<SegNet> fused_seg;    // C + 13 input
  RefinerNet refiner;

  static CascadeModels create(const CascadeConfig& config, int num_classes);
  nn::ParamList params();
  size_t num_parameters() const;

  /// model.ckpt + config.json (with num_classes) in `dir`.
  void save(const std::filesystem::path& dir);
  static CascadeModels load(const std::filesystem::path& dir);
};

/// Forward products of one recursion iteration.
struct IterationTrace {
  std::vector<Proposal> proposals;
  std::optional<nn::Image> fused_probs;  // (C + 1) channels
  std::vector<RefinedBox> refined;
};

struct CascadeResult {
  std::vector<Detection> detections;
  std::vector<Detection> pool;  // every iteration's refined boxes, in order
  std::optional<nn::Image> initial_probs;
  std::vector<IterationTrace> iterations;

  /// The last 2D prediction, or nullopt when the cascade has no 2D stage.
  const nn::Image* final_probs() const;
};

struct CascadeOptions {
  /// Replaces every 2D prediction with the one-hot ground truth.
  bool oracle_2d = false;
};

/// Runs the configured stages. Iteration k draws its randomness from
/// derive_seed(seed, k); refined boxes of all iterations are pooled, reduced
/// by class-agnostic NMS and then per-class NMS.
CascadeResult run_cascade(const Scene& scene, const CascadeModels& models, uint64_t seed,
                          const CascadeOptions& options = {});

/// One-hot (C + 1)-channel map from a label map; IGNORE pixels get uniform.
nn::Image one_hot_probs(const LabelMap& labels, int num_classes);

/// Greedy NMS per class at the given IoU.
std::vector<Detection> per_class_nms(std::span<const Detection> dets, double iou);

/// Seed used for inference on a scene (shared by the CLI and evaluate()).
uint64_t inference_seed(const CascadeModels& models, const Scene& scene);

/// Runs the cascade on every scene and evaluates boxes and the last 2D map.
EvalReport evaluate(const CascadeModels& models, std::span<const Scene> scenes,
                    const CascadeOptions& options = {});

}  // namespace mmc
