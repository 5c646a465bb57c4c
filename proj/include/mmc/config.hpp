#pragma once

#include "mmc/proposer.hpp"
#include "mmc/refiner.hpp"
#include "mmc/seg2d.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mmc {

enum class Stage { Seg2dInitial, Propose3d, Seg2dFused, Refine3d };

Stage parse_stage(const std::string& s);
std::string to_string(Stage s);

struct OptimConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay_3d = 0.01;
  double weight_decay_2d = 1e-4;
  double clip_norm = 10.0;
  int epochs = 24;
  int batch_size = 8;
  std::vector<double> decay_at{2.0 / 3.0, 7.0 / 8.0};  // fractions of the epochs
  double decay_factor = 0.1;

  /// Learning rate during a 0-based epoch.
  double lr_at(int epoch) const;
};

/// Everything that defines a cascade run. The stage list follows
///   [SEG2D_INITIAL] (PROPOSE_3D [SEG2D_FUSED] REFINE_3D) x R
/// with every repetition identical; a single block is repeated
/// recursion_iters times.
struct CascadeConfig {
  std::vector<Stage> stages{Stage::Propose3d, Stage::Seg2dFused, Stage::Refine3d};
  int recursion_iters = 1;

  int n_points = 4096;
  int n_per_box_fusion = 512;
  int n_per_roi_train = 256;
  int n_per_roi_test = 512;
  double enlarge_factor = 1.2;
  double fusion_min_objectness = 0.5;
  HeadPolicy head_policy;
  double fusion_dropout = 0.5;
  bool augment = true;

  int train_rois = 16;
  double roi_fg_fraction = 0.5;
  double fg_iou = 0.25;
  double ensemble_nms_iou = 0.25;
  double final_nms_iou = 0.25;

  ProposerConfig proposer;
  RpnLossConfig rpn;
  SegConfig seg;
  double lambda_aux = 0.4;
  RefinerConfig refiner;
  OptimConfig optim;
  uint64_t seed = 1;

  bool initial_seg() const { return !stages.empty() && stages.front() == Stage::Seg2dInitial; }
  bool fused_seg() const;
  /// Expands the stage list to the full R-fold sequence.
  std::vector<Stage> expanded_stages() const;

  /// Throws ConfigError on a grammar violation or bad value.
  void validate() const;
};

CascadeConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const CascadeConfig& c);
CascadeConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const CascadeConfig& c);

}  // namespace mmc
