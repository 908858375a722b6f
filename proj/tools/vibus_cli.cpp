#include "vibus/harvest.hpp"
#include "vibus/pipeline.hpp"
#include "vibus/spectral.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace vibus;

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string scenes;
  std::string labels;
  std::string out;
  std::string strategy;
  std::string checkpoint;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "JSON pipeline configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "Random seed (overrides the config)");
  cmd->add_option("--scenes", a.scenes, "Directory of .ply scenes")->check(CLI::ExistingDirectory);
  cmd->add_option("--labels", a.labels, "Directory of <scene_id>.csv / <scene_id>.gt.csv labels");
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_option("--strategy", a.strategy, "Harvest strategy")
      ->check(CLI::IsMember({"uncertainty", "spectrum", "joint"}));
}

PipelineConfig resolve_config(const CommonArgs& a) {
  PipelineConfig cfg = a.config.empty() ? PipelineConfig{} : load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.strategy.empty()) cfg.harvest.strategy = harvest_strategy_from_string(a.strategy);
  return cfg;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw std::invalid_argument(std::string(flag) + " is required for this subcommand");
}

fs::path out_dir(const CommonArgs& a) {
  require(a.out, "--out");
  fs::create_directories(a.out);
  return a.out;
}

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f << text;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

SegmentationModel load_model(const std::string& path, int num_categories, std::uint64_t seed) {
  require(path, "--checkpoint");
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.head) return SegmentationModel{std::move(ckpt.encoder), std::move(*ckpt.head)};
  return attach_head(std::move(ckpt.encoder), num_categories, seed);
}

std::vector<SceneMesh> load_all_scenes(const std::string& dir) {
  require(dir, "--scenes");
  std::vector<fs::path> plys;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ply") plys.push_back(e.path());
  std::sort(plys.begin(), plys.end());
  std::vector<SceneMesh> out;
  for (const auto& p : plys) out.push_back(load_scene(p));
  if (out.empty()) throw std::invalid_argument("no .ply scenes in '" + dir + "'");
  return out;
}

PipelineInputs inputs_with_labels(const CommonArgs& a, int num_categories) {
  require(a.scenes, "--scenes");
  require(a.labels, "--labels");
  return load_inputs(a.scenes, a.labels, num_categories);
}

int cmd_pretrain(const CommonArgs& a) {
  const PipelineConfig cfg = resolve_config(a);
  validate(cfg);
  const fs::path out = out_dir(a);
  const std::vector<SceneMesh> scenes = load_all_scenes(a.scenes);
  std::vector<double> losses;
  EncoderParams enc = pretrain_encoder(scenes, cfg, &losses, log_line);
  standardize_feature_columns(enc, scenes);
  save_checkpoint({enc, std::nullopt, cfg.vb}, out / "encoder.ckpt");
  std::string csv = "step,loss\n";
  for (std::size_t s = 0; s < losses.size(); ++s) csv += std::to_string(s) + "," + fmt(losses[s]) + "\n";
  write_file(out / "losses.csv", csv);
  return 0;
}

int cmd_finetune(const CommonArgs& a, const std::string& pseudo_dir) {
  const PipelineConfig cfg = resolve_config(a);
  validate(cfg.vb);
  const fs::path out = out_dir(a);
  const PipelineInputs in = inputs_with_labels(a, cfg.num_categories);
  if (in.train.empty()) throw std::invalid_argument("no scene has a sparse label file");
  SegmentationModel model = load_model(a.checkpoint, cfg.num_categories, cfg.seed);
  std::vector<SceneMesh> meshes;
  std::vector<std::vector<PointTarget>> targets;
  for (std::size_t i = 0; i < in.train.size(); ++i) {
    meshes.push_back(in.train[i].mesh);
    if (pseudo_dir.empty()) {
      targets.push_back(to_targets(apply_budget(in.train[i].labels, cfg.annotation_budget, cfg.seed + i)));
    } else {
      targets.push_back(to_targets(load_pseudo_labels(fs::path(pseudo_dir) / (meshes.back().scene_id + ".pseudo.csv"))));
    }
  }
  const StageFinetuneConfig& stage = pseudo_dir.empty() ? cfg.finetune : cfg.pseudo_finetune;
  finetune_model(model, meshes, targets, stage, cfg.seed, log_line);
  save_checkpoint({model.encoder, model.head, cfg.vb}, out / "model.ckpt");
  for (const SceneMesh& m : meshes) {
    const PredictionField pred = predict(model, m);
    std::string csv = "vertex_index,category_id\n";
    for (std::size_t v = 0; v < pred.size(); ++v) csv += std::to_string(v) + "," + std::to_string(pred.predicted()[v]) + "\n";
    write_file(out / (m.scene_id + ".pred.csv"), csv);
  }
  return 0;
}

int cmd_uncertainty(const CommonArgs& a) {
  const PipelineConfig cfg = resolve_config(a);
  validate(cfg.uncertainty);
  const fs::path out = out_dir(a);
  const SegmentationModel model = load_model(a.checkpoint, cfg.num_categories, cfg.seed);
  for (const SceneMesh& m : load_all_scenes(a.scenes)) {
    const UncertaintyField f = mc_dropout_uncertainty(model, m, cfg.uncertainty, cfg.seed);
    std::string csv = "vertex_index,predicted,uncertainty\n";
    for (std::size_t v = 0; v < f.values.size(); ++v)
      csv += std::to_string(v) + "," + std::to_string(f.predicted[v]) + "," + fmt(f.values[v]) + "\n";
    write_file(out / (m.scene_id + ".uncertainty.csv"), csv);
  }
  return 0;
}

int cmd_spectrum(const CommonArgs& a) {
  const PipelineConfig cfg = resolve_config(a);
  const fs::path out = out_dir(a);
  const PipelineInputs in = inputs_with_labels(a, cfg.num_categories);
  if (in.train.empty()) throw std::invalid_argument("no scene has a sparse label file");
  for (const TrainingScene& s : in.train) {
    const SparseLabelSet labels = apply_budget(s.labels, cfg.annotation_budget, cfg.seed);
    const SpectrumAnalysis r =
        analyze_spectrum(s.mesh, labels, cfg.spectrum, out / (s.mesh.scene_id + ".distances.bin"));
    log_line(s.mesh.scene_id + ": " + std::to_string(r.decimated_vertices) + " decimated vertices, " +
             std::to_string(r.clusters) + " clusters" + (r.cache_hit ? " (cached distances)" : ""));
    std::string csv = "vertex_index,spectrum_distance\n";
    for (std::size_t v = 0; v < r.distances.size(); ++v) csv += std::to_string(v) + "," + fmt(r.distances[v]) + "\n";
    write_file(out / (s.mesh.scene_id + ".spectrum.csv"), csv);
  }
  return 0;
}

int cmd_harvest(const CommonArgs& a) {
  const PipelineConfig cfg = resolve_config(a);
  validate(cfg.uncertainty);
  const fs::path out = out_dir(a);
  const PipelineInputs in = inputs_with_labels(a, cfg.num_categories);
  if (in.train.empty()) throw std::invalid_argument("no scene has a sparse label file");
  const SegmentationModel model = load_model(a.checkpoint, cfg.num_categories, cfg.seed);
  std::vector<HistogramRow> rows;
  for (std::size_t i = 0; i < in.train.size(); ++i) {
    TrainingScene scene = in.train[i];
    scene.labels = apply_budget(scene.labels, cfg.annotation_budget, cfg.seed + i);
    const SceneHarvest h =
        harvest_scene(model, scene, cfg, cfg.seed + i, out / (scene.mesh.scene_id + ".distances.bin"));
    for (const CategoryFit& cf : h.harvest.categories) {
      if (cf.fitted)
        write_file(out / (h.scene_id + ".category_" + std::to_string(cf.category) + ".mixture.json"),
                   mixture_to_json(cf.fit.model, &cf.fit.diagnostics));
      else
        log_line(h.scene_id + " category " + std::to_string(cf.category) + " skipped: " + cf.skip_reason);
    }
    save_pseudo_labels(h.harvest.labels, out / (h.scene_id + ".pseudo.csv"));
    rows.insert(rows.end(), h.histograms.begin(), h.histograms.end());
  }
  write_histograms_csv(rows, out / "histograms.csv");
  return 0;
}

int cmd_evaluate(const CommonArgs& a) {
  const PipelineConfig cfg = resolve_config(a);
  const fs::path out = out_dir(a);
  const PipelineInputs in = inputs_with_labels(a, cfg.num_categories);
  if (in.eval.empty()) throw std::invalid_argument("no scene has a <scene_id>.gt.csv ground-truth file");
  const SegmentationModel model = load_model(a.checkpoint, cfg.num_categories, cfg.seed);
  const SegMetrics m = evaluate_model(model, in.eval, cfg.num_categories);
  write_file(out / "metrics.json", metrics_to_json(m));
  std::cout << "mIoU " << fmt(m.miou) << '\n';
  return 0;
}

int cmd_pipeline(const CommonArgs& a) {
  const PipelineConfig cfg = resolve_config(a);
  const fs::path out = out_dir(a);
  const PipelineInputs in = inputs_with_labels(a, cfg.num_categories);
  write_file(out / "config.json", config_to_json(cfg));
  const PipelineResult r = run_pipeline(in, cfg, out, log_line);
  std::cout << "stage B mIoU " << fmt(r.stage_b.miou) << "\nstage E mIoU " << fmt(r.stage_e.miou) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-label 3D semantic segmentation with self-supervised pre-training and pseudo-label harvesting"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string pseudo_dir;
  std::function<int()> action;
  auto sub = [&](const char* name, const char* help, std::function<int()> fn) {
    CLI::App* cmd = app.add_subcommand(name, help);
    add_common(cmd, args);
    cmd->callback([&action, fn] { action = fn; });
    return cmd;
  };
  sub("pretrain", "Self-supervised pre-training of the encoder", [&] { return cmd_pretrain(args); });
  auto* ft = sub("finetune", "Fine-tune on sparse or pseudo labels", [&] { return cmd_finetune(args, pseudo_dir); });
  ft->add_option("--checkpoint", args.checkpoint, "Encoder or model checkpoint")->check(CLI::ExistingFile);
  ft->add_option("--pseudo", pseudo_dir, "Directory of <scene_id>.pseudo.csv files to train on instead")
      ->check(CLI::ExistingDirectory);
  auto* unc = sub("uncertainty", "MC-dropout uncertainty per vertex", [&] { return cmd_uncertainty(args); });
  unc->add_option("--checkpoint", args.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  sub("spectrum", "Spectrum distances from the labeled vertices", [&] { return cmd_spectrum(args); });
  auto* hv = sub("harvest", "Fit mixtures and harvest pseudo labels", [&] { return cmd_harvest(args); });
  hv->add_option("--checkpoint", args.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  auto* ev = sub("evaluate", "Per-class IoU and mIoU against dense ground truth", [&] { return cmd_evaluate(args); });
  ev->add_option("--checkpoint", args.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  sub("pipeline", "Run pre-training, fine-tuning, harvesting, and evaluation", [&] { return cmd_pipeline(args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    return action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
