#pragma once

#include "vibus/encoder.hpp"
#include "vibus/harvest.hpp"
#include "vibus/scene_data.hpp"
#include "vibus/spectral.hpp"
#include "vibus/training.hpp"
#include "vibus/viewpoint_bottleneck.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vibus {

struct PretrainConfig {
  std::size_t steps = 2000;
  SgdConfig sgd{.base_lr = 0.1, .momentum = 0.99, .poly_power = 0.9, .total_steps = 2000};
};

struct StageFinetuneConfig {
  std::size_t epochs = 200;
  FinetuneConfig finetune;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  int num_categories = kDefaultNumCategories;
  /// Sparse labels kept per training scene; 0 keeps every provided label.
  std::size_t annotation_budget = 0;

  VBConfig vb;
  EncoderShape encoder{.hidden1 = 64, .hidden2 = 64, .feature_dim = 512};
  double encoder_dropout = kDefaultDropoutRate;

  PretrainConfig pretrain;
  StageFinetuneConfig finetune;
  StageFinetuneConfig pseudo_finetune;
  /// Stage D starts from the pre-trained encoder with a fresh head instead
  /// of continuing from the stage-B model.
  bool restart_from_pretrained = false;

  bool harvest_enabled = true;
  SpectrumConfig spectrum;
  UncertaintyConfig uncertainty;
  HarvestConfig harvest;
  std::size_t histogram_bins = kDefaultHistogramBins;
};

/// Throws std::invalid_argument naming the first invalid field.
void validate(const PipelineConfig& cfg);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Parses a JSON document mirroring PipelineConfig. Missing keys keep their
/// defaults; unknown keys are rejected with ConfigError.
PipelineConfig parse_config(const std::string& json_text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});
std::string config_to_json(const PipelineConfig& cfg);

/// The hyperparameters that default to the published settings.
struct DefaultsSnapshot {
  std::size_t fps_target;
  std::size_t decimation_target;
  std::size_t embedding_length;
  double geodesic_share;
  std::size_t dropout_passes;
  double dropout_rate;
  std::size_t em_iterations;

  friend bool operator==(const DefaultsSnapshot&, const DefaultsSnapshot&) = default;
};

DefaultsSnapshot defaults_snapshot(const PipelineConfig& cfg = {});

struct TrainingScene {
  SceneMesh mesh;
  SparseLabelSet labels;
};

struct EvaluationScene {
  SceneMesh mesh;
  std::vector<int> ground_truth;
};

struct PipelineInputs {
  std::vector<TrainingScene> train;
  std::vector<EvaluationScene> eval;
};

/// Reads every `*.ply` in `scene_dir`. Scenes with `<scene_id>.csv` in
/// `label_dir` become training scenes; scenes with `<scene_id>.gt.csv` become
/// evaluation scenes. A scene may be both.
PipelineInputs load_inputs(const std::filesystem::path& scene_dir, const std::filesystem::path& label_dir,
                           int num_categories);

/// Keeps at most `budget` labels, chosen by a seeded shuffle (0 keeps all).
SparseLabelSet apply_budget(const SparseLabelSet& labels, std::size_t budget, std::uint64_t seed);

class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : std::runtime_error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

using LogFn = std::function<void(const std::string&)>;

/// The freshly initialized encoder that stage A starts from.
EncoderParams initial_encoder(const PipelineConfig& cfg);

/// Stage A: VB pre-training over the scenes, cycling through them.
EncoderParams pretrain_encoder(std::span<const SceneMesh> scenes, const PipelineConfig& cfg,
                               std::vector<double>* losses = nullptr, const LogFn& log = {});

/// Rescales the output layer so every feature column has zero mean and unit
/// standard deviation over the vertices of `scenes` (dropout off). The VB loss
/// is invariant to this per-column affine map. Constant columns are left as is.
void standardize_feature_columns(EncoderParams& params, std::span<const SceneMesh> scenes);

/// Fine-tunes `model` on per-scene targets for the stage's epoch count.
void finetune_model(SegmentationModel& model, std::span<const SceneMesh> scenes,
                    std::span<const std::vector<PointTarget>> targets, const StageFinetuneConfig& cfg,
                    std::uint64_t seed, const LogFn& log = {});

struct SceneHarvest {
  std::string scene_id;
  PredictionField prediction;
  UncertaintyField uncertainty;
  std::vector<double> spectrum;  // raw distances; empty for the uncertainty strategy
  HarvestResult harvest;
  std::vector<HistogramRow> histograms;
};

/// Stage C for one scene: MC dropout uncertainty, spectrum analysis (when the
/// strategy needs it), per-category mixtures, and pseudo labels.
SceneHarvest harvest_scene(const SegmentationModel& model, const TrainingScene& scene, const PipelineConfig& cfg,
                           std::uint64_t seed, const std::filesystem::path& distance_cache = {});

/// Pooled confusion over all evaluation scenes.
SegMetrics evaluate_model(const SegmentationModel& model, std::span<const EvaluationScene> scenes,
                          int num_categories);

struct PipelineResult {
  SegMetrics stage_b;
  SegMetrics stage_e;
  std::vector<PseudoLabelSet> pseudo_labels;  // per training scene
  SegmentationModel final_model;
};

/// Stages A-E. With a non-empty `out_dir`, writes per-stage checkpoints,
/// mixture JSONs, pseudo-label CSVs, histograms.csv, and metrics.json.
/// With harvesting disabled, stages C and D are skipped and stage E reports
/// the stage-B model.
PipelineResult run_pipeline(const PipelineInputs& inputs, const PipelineConfig& cfg,
                            const std::filesystem::path& out_dir = {}, const LogFn& log = {});

/// Writes `{"stage_b": ..., "stage_e": ...}` style metric reports.
void write_metrics_json(const std::filesystem::path& path, const std::vector<std::pair<std::string, SegMetrics>>& reports);

}  // namespace vibus
