#include "mmc/errors.hpp"
#include "mmc/pipeline.hpp"
#include "mmc/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <malloc.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw mmc::IoError("cannot write " + path.string());
}

std::vector<mmc::Scene> load_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw mmc::IoError("not a directory: " + dir.string());
  std::vector<mmc::Scene> scenes;
  for (const fs::path& p : mmc::list_scenes(dir)) scenes.push_back(mmc::load_scene(p));
  if (scenes.empty()) throw mmc::IoError("no scenes in " + dir.string());
  for (const mmc::Scene& s : scenes) {
    if (s.num_classes != scenes.front().num_classes) throw mmc::IoError("mixed class counts in " + dir.string());
  }
  return scenes;
}

fs::path seg_path(const fs::path& dets) {
  fs::path p = dets;
  return p.replace_extension(".seg.pgm");
}

struct GenArgs {
  std::string out;
  int scenes = 100;
  uint64_t seed = 1;
  int classes = 3;
};

int gen_data(const GenArgs& a) {
  if (a.scenes < 1) throw mmc::ConfigError("--scenes must be >= 1");
  mmc::SynthConfig cfg;
  cfg.num_classes = a.classes;
  cfg.validate();
  fs::create_directories(a.out);
  json files = json::array();
  for (int i = 0; i < a.scenes; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05d.scene", i);
    const mmc::Scene s = mmc::synth_scene(mmc::derive_seed(a.seed, static_cast<uint64_t>(i)), cfg);
    mmc::save_scene(fs::path(a.out) / name, s);
    files.push_back(name);
  }
  write_json(fs::path(a.out) / "manifest.json",
             {{"num_classes", a.classes}, {"scenes", a.scenes}, {"seed", a.seed}, {"files", files}});
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  bool quiet = false;
};

int train(const TrainArgs& a) {
  const mmc::CascadeConfig config = a.config.empty() ? mmc::CascadeConfig{} : mmc::load_config(a.config);
  config.validate();
  const std::vector<mmc::Scene> scenes = load_dir(a.data);
  mmc::CascadeModels models = mmc::CascadeModels::create(config, scenes.front().num_classes);
  const size_t n = scenes.size();
  const auto batch = static_cast<size_t>(config.optim.batch_size);
  const size_t per_epoch = (n + batch - 1) / batch;
  mmc::LossParts epoch_sum;
  const mmc::TrainLog log = mmc::train(models, scenes, [&](const mmc::StepRecord& r) {
    const size_t k = static_cast<size_t>(r.step) % per_epoch;
    epoch_sum += r.loss.scaled(static_cast<double>(std::min(batch, n - k * batch)));
    if (k + 1 < per_epoch) return;
    const mmc::LossParts m = epoch_sum.scaled(1.0 / static_cast<double>(n));
    epoch_sum = {};
    if (!a.quiet) {
      std::fprintf(stderr, "epoch %d  lr %.2e  loss %.4f (rpn %.4f seg %.4f rcnn %.4f)\n", r.epoch, r.lr, m.total,
                   m.rpn, m.seg, m.rcnn);
    }
  });
  models.save(a.out);
  write_json(fs::path(a.out) / "loss_curve.json", log.to_json());
  if (!a.quiet) std::fprintf(stderr, "trained %zu parameters in %.1f s\n", models.num_parameters(), log.seconds);
  return 0;
}

std::vector<mmc::Detection> proposal_detections(const std::vector<mmc::Proposal>& props) {
  std::vector<mmc::Detection> dets;
  for (const mmc::Proposal& p : props) {
    int cls = 0;
    for (size_t c = 1; c < p.class_probs.size(); ++c) {
      if (p.class_probs[c] > p.class_probs[static_cast<size_t>(cls)]) cls = static_cast<int>(c);
    }
    dets.push_back({p.box, cls, p.objectness});
  }
  return dets;
}

struct InferArgs {
  std::string ckpt;
  std::string scene;
  std::string out;
  std::string stages;
  bool oracle_2d = false;
};

int infer(const InferArgs& a) {
  const mmc::CascadeModels models = mmc::CascadeModels::load(a.ckpt);
  const mmc::Scene scene = mmc::load_scene(a.scene);
  const mmc::CascadeResult r =
      mmc::run_cascade(scene, models, mmc::inference_seed(models, scene), {.oracle_2d = a.oracle_2d});
  mmc::save_detections(a.out, r.detections);
  if (const mmc::nn::Image* probs = r.final_probs()) mmc::write_label_pgm(seg_path(a.out), mmc::argmax_labels(*probs));
  if (!a.stages.empty()) {
    const fs::path dir(a.stages);
    fs::create_directories(dir);
    if (r.initial_probs) mmc::write_label_pgm(dir / "seg_initial.pgm", mmc::argmax_labels(*r.initial_probs));
    for (size_t k = 0; k < r.iterations.size(); ++k) {
      const mmc::IterationTrace& it = r.iterations[k];
      const std::string tag = "iter" + std::to_string(k + 1);
      mmc::save_detections(dir / (tag + "_proposals.json"), proposal_detections(it.proposals));
      if (it.fused_probs) mmc::write_label_pgm(dir / (tag + "_seg.pgm"), mmc::argmax_labels(*it.fused_probs));
      std::vector<mmc::Detection> refined;
      for (const mmc::RefinedBox& b : it.refined) refined.push_back({b.box, b.cls, b.score});
      mmc::save_detections(dir / (tag + "_refined.json"), refined);
    }
  }
  return 0;
}

struct EvalArgs {
  std::string dets;
  std::string gt;
  std::string report;
  bool omit_runtime = false;
};

int eval(const EvalArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path gt_dir(a.gt);
  if (!fs::is_directory(gt_dir)) throw mmc::IoError("not a directory: " + a.gt);
  const std::vector<fs::path> files = mmc::list_scenes(gt_dir);
  if (files.empty()) throw mmc::IoError("no scenes in " + a.gt);
  mmc::EvalReport report;
  std::vector<mmc::SceneDetections> per_scene;
  std::optional<mmc::Confusion> cm;
  bool all_seg = true;
  for (const fs::path& f : files) {
    const mmc::Scene s = mmc::load_scene(f);
    if (report.num_classes == 0) {
      report.num_classes = s.num_classes;
      cm.emplace(s.num_classes);
    } else if (report.num_classes != s.num_classes) {
      throw mmc::IoError("mixed class counts in " + a.gt);
    }
    const fs::path dets = fs::path(a.dets) / f.stem().concat(".json");
    per_scene.push_back({mmc::load_detections(dets), s.boxes});
    const fs::path seg = seg_path(dets);
    if (all_seg && fs::exists(seg)) {
      cm->add(mmc::read_label_pgm(seg), s.seg_gt);
    } else {
      all_seg = false;
    }
  }
  report.map = mmc::map_range(per_scene, report.num_classes);
  if (all_seg) {
    report.has_seg = true;
    report.seg = mmc::miou(*cm);
  }
  report.include_runtime = !a.omit_runtime;
  report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(a.report, report.to_json());
  return 0;
}

struct RenderArgs {
  std::string scene;
  std::string dets;
  std::string seg;
  std::string out;
  bool gt = true;
};

int render(const RenderArgs& a) {
  const mmc::Scene scene = mmc::load_scene(a.scene);
  mmc::RgbImage img = mmc::rgb_preview(scene);
  if (a.gt) {
    for (const mmc::GtBox& g : scene.boxes) mmc::draw_box(img, scene.K, scene.T, g.box, mmc::Vec3(1, 1, 1));
  }
  if (!a.dets.empty()) {
    for (const mmc::Detection& d : mmc::load_detections(a.dets)) {
      mmc::draw_box(img, scene.K, scene.T, d.box, mmc::class_color(d.cls));
    }
  }
  if (!a.seg.empty()) {
    const mmc::RgbImage labels = mmc::label_preview(mmc::read_label_pgm(a.seg));
    if (labels.height != img.height) throw mmc::IoError("segmentation size differs from the scene");
    mmc::RgbImage both(img.height, img.width + labels.width);
    for (int v = 0; v < img.height; ++v) {
      std::copy_n(&img.rgb[static_cast<size_t>(v) * img.width * 3], img.width * 3,
                  &both.rgb[static_cast<size_t>(v) * both.width * 3]);
      std::copy_n(&labels.rgb[static_cast<size_t>(v) * labels.width * 3], labels.width * 3,
                  &both.rgb[(static_cast<size_t>(v) * both.width + img.width) * 3]);
    }
    img = std::move(both);
  }
  mmc::write_ppm(a.out, img);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Large activation buffers are reused across samples instead of being
  // returned to the OS and faulted back in on every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  CLI::App app{"Multi-modality task cascade for 3D detection"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate synthetic RGB-D scenes");
  g->add_option("--out", gen.out)->required();
  g->add_option("--scenes", gen.scenes);
  g->add_option("--seed", gen.seed);
  g->add_option("--classes", gen.classes);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Jointly train the cascade");
  t->add_option("--data", tr.data)->required();
  t->add_option("--config", tr.config);
  t->add_option("--out", tr.out)->required();
  t->add_flag("--quiet", tr.quiet);

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Run the cascade on one scene");
  i->add_option("--ckpt", inf.ckpt)->required();
  i->add_option("--scene", inf.scene)->required();
  i->add_option("--out", inf.out)->required();
  i->add_option("--stages", inf.stages, "Directory for per-stage outputs");
  i->add_flag("--oracle-2d", inf.oracle_2d, "Replace 2D predictions with ground truth");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score detection files against scenes");
  e->add_option("--dets", ev.dets)->required();
  e->add_option("--gt", ev.gt)->required();
  e->add_option("--report", ev.report)->required();
  e->add_flag("--omit-runtime", ev.omit_runtime, "Leave runtime_s out of the report");

  RenderArgs rd;
  auto* r = app.add_subcommand("render", "Draw boxes over a scene");
  r->add_option("--scene", rd.scene)->required();
  r->add_option("--dets", rd.dets);
  r->add_option("--seg", rd.seg, "Label map shown next to the image");
  r->add_option("--out", rd.out)->required();
  r->add_flag("!--no-gt", rd.gt, "Skip ground-truth boxes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*g) return gen_data(gen);
    if (*t) return train(tr);
    if (*i) return infer(inf);
    if (*e) return eval(ev);
    if (*r) return render(rd);
  } catch (const mmc::ConfigError& err) {
    std::fprintf(stderr, "config error: %s\n", err.what());
    return 2;
  } catch (const mmc::IoError& err) {
    std::fprintf(stderr, "io error: %s\n", err.what());
    return 3;
  } catch (const std::filesystem::filesystem_error& err) {
    std::fprintf(stderr, "io error: %s\n", err.what());
    return 3;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}
