#include "vibus/pipeline.hpp"

#include "seed.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

namespace vibus {

namespace {

namespace fs = std::filesystem;

enum Stream : std::uint64_t { kStageA = 0xA, kStageB = 0xB, kStageC = 0xC, kStageD = 0xD, kBudget = 0xBD };

void say(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

template <class F>
auto run_stage(const std::string& stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(stage, e.what());
  }
}

SegMetrics empty_metrics(int num_categories) { return evaluate_segmentation({}, {}, num_categories); }

}  // namespace

PipelineInputs load_inputs(const fs::path& scene_dir, const fs::path& label_dir, int num_categories) {
  if (!fs::is_directory(scene_dir)) throw std::runtime_error("scene directory '" + scene_dir.string() + "' not found");
  std::vector<fs::path> plys;
  for (const auto& entry : fs::directory_iterator(scene_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".ply") plys.push_back(entry.path());
  std::sort(plys.begin(), plys.end());

  PipelineInputs in;
  for (const fs::path& p : plys) {
    SceneMesh mesh = load_scene(p);
    const fs::path sparse = label_dir / (mesh.scene_id + ".csv");
    const fs::path dense = label_dir / (mesh.scene_id + ".gt.csv");
    if (!label_dir.empty() && fs::exists(dense))
      in.eval.push_back({mesh, load_dense_labels(dense, mesh, num_categories)});
    if (!label_dir.empty() && fs::exists(sparse)) {
      SparseLabelSet labels = load_sparse_labels(sparse, mesh, num_categories);
      in.train.push_back({std::move(mesh), std::move(labels)});
    }
  }
  return in;
}

SparseLabelSet apply_budget(const SparseLabelSet& labels, std::size_t budget, std::uint64_t seed) {
  if (budget == 0 || budget >= labels.size()) return labels;
  std::vector<std::size_t> vertices;
  for (const auto& entry : labels.entries) vertices.push_back(entry.first);
  std::mt19937_64 rng(seed);
  std::shuffle(vertices.begin(), vertices.end(), rng);
  SparseLabelSet out;
  out.num_categories = labels.num_categories;
  for (std::size_t k = 0; k < budget; ++k) out.entries[vertices[k]] = labels.entries.at(vertices[k]);
  return out;
}

EncoderParams initial_encoder(const PipelineConfig& cfg) {
  return init_encoder(cfg.encoder, cfg.encoder_dropout, detail::mix_seed(cfg.seed, kStageA));
}

EncoderParams pretrain_encoder(std::span<const SceneMesh> scenes, const PipelineConfig& cfg,
                               std::vector<double>* losses, const LogFn& log) {
  if (scenes.empty()) throw std::invalid_argument("pre-training needs at least one scene");
  const std::uint64_t seed = detail::mix_seed(cfg.seed, kStageA);
  EncoderParams params = initial_encoder(cfg);
  SgdConfig sgd = cfg.pretrain.sgd;
  sgd.total_steps = cfg.pretrain.steps;
  SgdMomentum opt(sgd);
  for (std::size_t s = 0; s < cfg.pretrain.steps; ++s) {
    const double loss = pretrain_step(params, opt, scenes[s % scenes.size()], cfg.vb, detail::mix_seed(seed, s));
    if (!std::isfinite(loss)) throw std::runtime_error("pre-training loss diverged at step " + std::to_string(s));
    if (losses) losses->push_back(loss);
    if ((s + 1) % 100 == 0 || s + 1 == cfg.pretrain.steps)
      say(log, "pretrain step " + std::to_string(s + 1) + " loss " + fmt(loss));
  }
  return params;
}

void standardize_feature_columns(EncoderParams& params, std::span<const SceneMesh> scenes) {
  if (scenes.empty()) throw std::invalid_argument("feature standardization needs at least one scene");
  validate(params);
  const auto d = static_cast<Eigen::Index>(params.feature_dim());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sum_sq = Eigen::VectorXd::Zero(d);
  double count = 0.0;
  for (const SceneMesh& mesh : scenes) {
    const FeatureMatrix f = encoder_forward(params, mesh, false, 0);
    sum += f.colwise().sum().transpose();
    sum_sq += f.array().square().colwise().sum().matrix().transpose();
    count += static_cast<double>(f.rows());
  }
  if (count < 2.0) return;
  DenseLayer& out = params.layers.back();
  for (Eigen::Index j = 0; j < d; ++j) {
    const double mean = sum(j) / count;
    const double sd = std::sqrt(std::max(0.0, sum_sq(j) / count - mean * mean));
    if (!(sd > kColumnNormEpsilon)) continue;
    out.weight.row(j) /= sd;
    out.bias(j) = (out.bias(j) - mean) / sd;
  }
}

void finetune_model(SegmentationModel& model, std::span<const SceneMesh> scenes,
                    std::span<const std::vector<PointTarget>> targets, const StageFinetuneConfig& cfg,
                    std::uint64_t seed, const LogFn& log) {
  const auto active = static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [](const auto& t) { return !t.empty(); }));
  SgdConfig sgd = cfg.finetune.sgd;
  sgd.total_steps = std::max<std::size_t>(1, cfg.epochs * active);
  SgdMomentum opt(sgd);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double loss = finetune_epoch(model, opt, scenes, targets, cfg.finetune, detail::mix_seed(seed, e));
    if (!std::isfinite(loss)) throw std::runtime_error("fine-tuning loss diverged at epoch " + std::to_string(e));
    if ((e + 1) % 50 == 0 || e + 1 == cfg.epochs)
      say(log, "finetune epoch " + std::to_string(e + 1) + " loss " + fmt(loss));
  }
}

SceneHarvest harvest_scene(const SegmentationModel& model, const TrainingScene& scene, const PipelineConfig& cfg,
                           std::uint64_t seed, const fs::path& distance_cache) {
  SceneHarvest out;
  out.scene_id = scene.mesh.scene_id;
  out.prediction = predict(model, scene.mesh);
  out.uncertainty = mc_dropout_uncertainty(model, scene.mesh, cfg.uncertainty, detail::mix_seed(seed, 1));
  std::vector<double> normalized;
  if (cfg.harvest.strategy != HarvestStrategy::Uncertainty) {
    out.spectrum = analyze_spectrum(scene.mesh, scene.labels, cfg.spectrum, distance_cache).distances;
    normalized = min_max_normalize(out.spectrum);
  }
  out.harvest =
      harvest_pseudo_labels(out.prediction.predicted(), out.uncertainty.values, out.spectrum, scene.labels, cfg.harvest);
  out.histograms = category_histograms(out.scene_id, out.prediction.predicted(), out.uncertainty.values, normalized,
                                       cfg.histogram_bins);
  return out;
}

SegMetrics evaluate_model(const SegmentationModel& model, std::span<const EvaluationScene> scenes, int num_categories) {
  SegMetrics total = empty_metrics(num_categories);
  for (const EvaluationScene& s : scenes) {
    const PredictionField pred = predict(model, s.mesh);
    accumulate(total, evaluate_segmentation(pred.predicted(), s.ground_truth, num_categories));
  }
  return total;
}

void write_metrics_json(const fs::path& path, const std::vector<std::pair<std::string, SegMetrics>>& reports) {
  nlohmann::ordered_json doc;
  for (const auto& [name, m] : reports) doc[name] = nlohmann::ordered_json::parse(metrics_to_json(m));
  write_text(path, doc.dump(2) + "\n");
}

PipelineResult run_pipeline(const PipelineInputs& inputs, const PipelineConfig& cfg, const fs::path& out_dir,
                            const LogFn& log) {
  validate(cfg);
  if (inputs.train.empty()) throw std::invalid_argument("the pipeline needs at least one training scene");
  const bool write = !out_dir.empty();
  if (write) fs::create_directories(out_dir);
  const int c = cfg.num_categories;

  std::vector<SceneMesh> meshes;
  std::vector<SparseLabelSet> labels;
  for (std::size_t i = 0; i < inputs.train.size(); ++i) {
    meshes.push_back(inputs.train[i].mesh);
    labels.push_back(apply_budget(inputs.train[i].labels, cfg.annotation_budget,
                                  detail::mix_seed(cfg.seed, kBudget + i)));
    if (labels.back().empty())
      throw std::invalid_argument("training scene '" + meshes.back().scene_id + "' has no labels");
  }

  PipelineResult result;
  const EncoderParams encoder = run_stage("A", [&] {
    say(log, "stage A: pre-training on " + std::to_string(meshes.size()) + " scene(s)");
    std::vector<double> losses;
    EncoderParams enc = pretrain_encoder(meshes, cfg, &losses, log);
    standardize_feature_columns(enc, meshes);
    if (write) {
      fs::create_directories(out_dir / "stage_a");
      save_checkpoint({enc, std::nullopt, cfg.vb}, out_dir / "stage_a" / "encoder.ckpt");
      std::string csv = "step,loss\n";
      for (std::size_t s = 0; s < losses.size(); ++s) csv += std::to_string(s) + "," + fmt(losses[s]) + "\n";
      write_text(out_dir / "stage_a" / "losses.csv", csv);
    }
    return enc;
  });

  const SegmentationModel model_b = run_stage("B", [&] {
    say(log, "stage B: fine-tuning on sparse labels");
    SegmentationModel model = attach_head(encoder, c, detail::mix_seed(cfg.seed, kStageB));
    std::vector<std::vector<PointTarget>> targets;
    for (const auto& l : labels) targets.push_back(to_targets(l));
    finetune_model(model, meshes, targets, cfg.finetune, detail::mix_seed(cfg.seed, kStageB + 1), log);
    result.stage_b = evaluate_model(model, inputs.eval, c);
    if (write) {
      fs::create_directories(out_dir / "stage_b");
      save_checkpoint({model.encoder, model.head, cfg.vb}, out_dir / "stage_b" / "model.ckpt");
      write_metrics_json(out_dir / "stage_b" / "metrics.json", {{"stage_b", result.stage_b}});
    }
    return model;
  });

  if (!cfg.harvest_enabled) {
    say(log, "harvesting disabled: reporting the stage-B model");
    for (const auto& l : labels) {
      std::vector<PseudoLabel> gt;
      for (const auto& [v, cat] : l.entries) gt.push_back({v, cat, 1.0});
      result.pseudo_labels.emplace_back(std::move(gt));
    }
    result.stage_e = result.stage_b;
    result.final_model = model_b;
    if (write) write_metrics_json(out_dir / "metrics.json", {{"stage_b", result.stage_b}, {"stage_e", result.stage_e}});
    return result;
  }

  run_stage("C", [&] {
    say(log, std::string("stage C: harvesting with the ") + to_string(cfg.harvest.strategy) + " strategy");
    std::vector<HistogramRow> histograms;
    if (write) fs::create_directories(out_dir / "stage_c");
    for (std::size_t i = 0; i < meshes.size(); ++i) {
      const TrainingScene scene{meshes[i], labels[i]};
      const fs::path cache = write ? out_dir / "stage_c" / (meshes[i].scene_id + ".distances.bin") : fs::path{};
      SceneHarvest h = harvest_scene(model_b, scene, cfg, detail::mix_seed(cfg.seed, kStageC + i), cache);
      for (const CategoryFit& cf : h.harvest.categories) {
        say(log, "  " + h.scene_id + " category " + std::to_string(cf.category) + ": " + std::to_string(cf.members) +
                     " members, " + (cf.fitted ? std::to_string(cf.harvested) + " harvested" : cf.skip_reason));
        if (write && cf.fitted)
          write_text(out_dir / "stage_c" / (h.scene_id + ".category_" + std::to_string(cf.category) + ".mixture.json"),
                     mixture_to_json(cf.fit.model, &cf.fit.diagnostics));
      }
      if (write) save_pseudo_labels(h.harvest.labels, out_dir / "stage_c" / (h.scene_id + ".pseudo.csv"));
      histograms.insert(histograms.end(), h.histograms.begin(), h.histograms.end());
      result.pseudo_labels.push_back(std::move(h.harvest.labels));
    }
    if (write) write_histograms_csv(histograms, out_dir / "histograms.csv");
  });

  result.final_model = run_stage("D", [&] {
    say(log, std::string("stage D: fine-tuning on pseudo labels from the ") +
                 (cfg.restart_from_pretrained ? "pre-trained encoder" : "stage-B model"));
    SegmentationModel model =
        cfg.restart_from_pretrained ? attach_head(encoder, c, detail::mix_seed(cfg.seed, kStageD)) : model_b;
    std::vector<std::vector<PointTarget>> targets;
    for (const auto& p : result.pseudo_labels) targets.push_back(to_targets(p));
    finetune_model(model, meshes, targets, cfg.pseudo_finetune, detail::mix_seed(cfg.seed, kStageD + 1), log);
    if (write) {
      fs::create_directories(out_dir / "stage_d");
      save_checkpoint({model.encoder, model.head, cfg.vb}, out_dir / "stage_d" / "model.ckpt");
    }
    return model;
  });

  run_stage("E", [&] {
    say(log, "stage E: evaluating on " + std::to_string(inputs.eval.size()) + " scene(s)");
    result.stage_e = evaluate_model(result.final_model, inputs.eval, c);
    if (write) write_metrics_json(out_dir / "metrics.json", {{"stage_b", result.stage_b}, {"stage_e", result.stage_e}});
  });
  return result;
}

}  // namespace vibus
