#include "mmc/config.hpp"

#include "mmc/errors.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace mmc {

using nlohmann::json;

Stage parse_stage(const std::string& s) {
  if (s == "SEG2D_INITIAL") return Stage::Seg2dInitial;
  if (s == "PROPOSE_3D") return Stage::Propose3d;
  if (s == "SEG2D_FUSED") return Stage::Seg2dFused;
  if (s == "REFINE_3D") return Stage::Refine3d;
  throw ConfigError("unknown stage '" + s + "'");
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Seg2dInitial:
      return "SEG2D_INITIAL";
    case Stage::Propose3d:
      return "PROPOSE_3D";
    case Stage::Seg2dFused:
      return "SEG2D_FUSED";
    case Stage::Refine3d:
      return "REFINE_3D";
  }
  return "?";
}

double OptimConfig::lr_at(int epoch) const {
  double lr_now = lr;
  for (double f : decay_at) {
    if (epoch >= static_cast<int>(std::lround(f * epochs))) lr_now *= decay_factor;
  }
  return lr_now;
}

namespace {

// Splits the stage list after the optional SEG2D_INITIAL into blocks.
std::vector<std::vector<Stage>> blocks_of(const std::vector<Stage>& stages) {
  size_t i = (!stages.empty() && stages.front() == Stage::Seg2dInitial) ? 1 : 0;
  std::vector<std::vector<Stage>> blocks;
  while (i < stages.size()) {
    std::vector<Stage> b;
    if (stages[i] != Stage::Propose3d) throw ConfigError("stage block must start with PROPOSE_3D");
    b.push_back(stages[i++]);
    if (i < stages.size() && stages[i] == Stage::Seg2dFused) b.push_back(stages[i++]);
    if (i >= stages.size() || stages[i] != Stage::Refine3d) throw ConfigError("stage block must end with REFINE_3D");
    b.push_back(stages[i++]);
    blocks.push_back(std::move(b));
  }
  if (blocks.empty()) throw ConfigError("stages need at least one PROPOSE_3D ... REFINE_3D block");
  for (const auto& b : blocks) {
    if (b != blocks.front()) throw ConfigError("repeated stage blocks must be identical");
  }
  return blocks;
}

// Reads keys of an object, rejecting any not listed.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + " must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + key + "' in " + where_);
    }
  }
  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

bool CascadeConfig::fused_seg() const {
  for (Stage s : stages) {
    if (s == Stage::Seg2dFused) return true;
  }
  return false;
}

std::vector<Stage> CascadeConfig::expanded_stages() const {
  const auto blocks = blocks_of(stages);
  std::vector<Stage> out;
  if (initial_seg()) out.push_back(Stage::Seg2dInitial);
  for (int r = 0; r < recursion_iters; ++r) out.insert(out.end(), blocks.front().begin(), blocks.front().end());
  return out;
}

void CascadeConfig::validate() const {
  const auto blocks = blocks_of(stages);
  if (recursion_iters < 1) throw ConfigError("recursion_iters must be >= 1");
  if (blocks.size() != 1 && static_cast<int>(blocks.size()) != recursion_iters) {
    throw ConfigError("stage list has " + std::to_string(blocks.size()) + " blocks but recursion_iters is " +
                      std::to_string(recursion_iters));
  }
  if (n_points < 1 || n_per_box_fusion < 1 || n_per_roi_train < 1 || n_per_roi_test < 1) {
    throw ConfigError("point counts must be positive");
  }
  if (!(enlarge_factor >= 1.0)) throw ConfigError("enlarge_factor must be >= 1");
  if (!(fusion_dropout >= 0.0 && fusion_dropout <= 1.0)) throw ConfigError("fusion_dropout out of range");
  if (train_rois < 1 || !(roi_fg_fraction >= 0.0 && roi_fg_fraction <= 1.0)) throw ConfigError("bad RoI sampling");
  if (optim.epochs < 1 || optim.batch_size < 1 || !(optim.lr > 0.0)) throw ConfigError("bad optimizer settings");
  proposer.validate();
  seg.validate();
  refiner.validate();
  if (proposer.n_proposals > n_points) throw ConfigError("n_proposals exceeds n_points");
}

CascadeConfig config_from_json(const json& j) {
  CascadeConfig c;
  {
    Reader r(j, "config");
    std::vector<std::string> stages;
    r.get("stages", stages);
    if (j.contains("stages")) {
      c.stages.clear();
      for (const auto& s : stages) c.stages.push_back(parse_stage(s));
    }
    r.get("recursion_iters", c.recursion_iters);
    r.get("n_points", c.n_points);
    r.get("n_per_box_fusion", c.n_per_box_fusion);
    r.get("n_per_roi_train", c.n_per_roi_train);
    r.get("n_per_roi_test", c.n_per_roi_test);
    r.get("enlarge_factor", c.enlarge_factor);
    r.get("fusion_min_objectness", c.fusion_min_objectness);
    r.get("fusion_dropout", c.fusion_dropout);
    r.get("augment", c.augment);
    r.get("train_rois", c.train_rois);
    r.get("roi_fg_fraction", c.roi_fg_fraction);
    r.get("fg_iou", c.fg_iou);
    r.get("ensemble_nms_iou", c.ensemble_nms_iou);
    r.get("final_nms_iou", c.final_nms_iou);
    r.get("seed", c.seed);
    if (const json* h = r.child("head_policy")) {
      Reader hr(*h, "head_policy");
      std::string train = to_string(c.head_policy.train);
      std::string test = to_string(c.head_policy.test);
      hr.get("train", train);
      hr.get("test", test);
      c.head_policy.train = parse_head_source(train);
      c.head_policy.test = parse_head_source(test);
    }
    if (const json* p = r.child("proposer")) {
      Reader pr(*p, "proposer");
      ProposerConfig& q = c.proposer;
      pr.get("sa1_points", q.sa1_points);
      pr.get("sa1_radius", q.sa1_radius);
      pr.get("sa1_k", q.sa1_k);
      pr.get("sa1_mlp", q.sa1_mlp);
      pr.get("sa2_points", q.sa2_points);
      pr.get("sa2_radius", q.sa2_radius);
      pr.get("sa2_k", q.sa2_k);
      pr.get("sa2_mlp", q.sa2_mlp);
      pr.get("vote_hidden", q.vote_hidden);
      pr.get("n_proposals", q.n_proposals);
      pr.get("cluster_radius", q.cluster_radius);
      pr.get("cluster_k", q.cluster_k);
      pr.get("cluster_mlp", q.cluster_mlp);
      pr.get("head_hidden", q.head_hidden);
    }
    if (const json* l = r.child("loss")) {
      Reader lr(*l, "loss");
      lr.get("near", c.rpn.near);
      lr.get("far", c.rpn.far);
      lr.get("lambda_obj", c.rpn.lambda_obj);
      lr.get("lambda_box", c.rpn.lambda_box);
      lr.get("lambda_sem", c.rpn.lambda_sem);
      lr.get("lambda_aux", c.lambda_aux);
    }
    if (const json* s = r.child("segmenter")) {
      Reader sr(*s, "segmenter");
      sr.get("trunk", c.seg.trunk);
      sr.get("decoder", c.seg.decoder);
      sr.get("dropout", c.seg.dropout);
    }
    if (const json* f = r.child("refiner")) {
      Reader fr(*f, "refiner");
      fr.get("pre", c.refiner.pre);
      fr.get("post", c.refiner.post);
      fr.get("head_width", c.refiner.head_width);
      fr.get("dropout", c.refiner.dropout);
    }
    if (const json* o = r.child("optimizer")) {
      Reader orr(*o, "optimizer");
      OptimConfig& q = c.optim;
      orr.get("lr", q.lr);
      orr.get("beta1", q.beta1);
      orr.get("beta2", q.beta2);
      orr.get("weight_decay_3d", q.weight_decay_3d);
      orr.get("weight_decay_2d", q.weight_decay_2d);
      orr.get("clip_norm", q.clip_norm);
      orr.get("epochs", q.epochs);
      orr.get("batch_size", q.batch_size);
      orr.get("decay_at", q.decay_at);
      orr.get("decay_factor", q.decay_factor);
    }
  }
  c.validate();
  return c;
}

json config_to_json(const CascadeConfig& c) {
  json stages = json::array();
  for (Stage s : c.stages) stages.push_back(to_string(s));
  const ProposerConfig& p = c.proposer;
  return {
      {"stages", stages},
      {"recursion_iters", c.recursion_iters},
      {"n_points", c.n_points},
      {"n_per_box_fusion", c.n_per_box_fusion},
      {"n_per_roi_train", c.n_per_roi_train},
      {"n_per_roi_test", c.n_per_roi_test},
      {"enlarge_factor", c.enlarge_factor},
      {"fusion_min_objectness", c.fusion_min_objectness},
      {"fusion_dropout", c.fusion_dropout},
      {"augment", c.augment},
      {"train_rois", c.train_rois},
      {"roi_fg_fraction", c.roi_fg_fraction},
      {"fg_iou", c.fg_iou},
      {"ensemble_nms_iou", c.ensemble_nms_iou},
      {"final_nms_iou", c.final_nms_iou},
      {"seed", c.seed},
      {"head_policy", {{"train", to_string(c.head_policy.train)}, {"test", to_string(c.head_policy.test)}}},
      {"proposer",
       {{"sa1_points", p.sa1_points}, {"sa1_radius", p.sa1_radius}, {"sa1_k", p.sa1_k}, {"sa1_mlp", p.sa1_mlp},
        {"sa2_points", p.sa2_points}, {"sa2_radius", p.sa2_radius}, {"sa2_k", p.sa2_k}, {"sa2_mlp", p.sa2_mlp},
        {"vote_hidden", p.vote_hidden}, {"n_proposals", p.n_proposals}, {"cluster_radius", p.cluster_radius},
        {"cluster_k", p.cluster_k}, {"cluster_mlp", p.cluster_mlp}, {"head_hidden", p.head_hidden}}},
      {"loss",
       {{"near", c.rpn.near}, {"far", c.rpn.far}, {"lambda_obj", c.rpn.lambda_obj}, {"lambda_box", c.rpn.lambda_box},
        {"lambda_sem", c.rpn.lambda_sem}, {"lambda_aux", c.lambda_aux}}},
      {"segmenter", {{"trunk", c.seg.trunk}, {"decoder", c.seg.decoder}, {"dropout", c.seg.dropout}}},
      {"refiner",
       {{"pre", c.refiner.pre}, {"post", c.refiner.post}, {"head_width", c.refiner.head_width},
        {"dropout", c.refiner.dropout}}},
      {"optimizer",
       {{"lr", c.optim.lr}, {"beta1", c.optim.beta1}, {"beta2", c.optim.beta2},
        {"weight_decay_3d", c.optim.weight_decay_3d}, {"weight_decay_2d", c.optim.weight_decay_2d},
        {"clip_norm", c.optim.clip_norm}, {"epochs", c.optim.epochs}, {"batch_size", c.optim.batch_size},
        {"decay_at", c.optim.decay_at}, {"decay_factor", c.optim.decay_factor}}},
  };
}

CascadeConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const CascadeConfig& c) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << config_to_json(c).dump(2) << '\n';
}

}  // namespace mmc
