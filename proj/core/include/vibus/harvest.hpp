#pragma once

#include "vibus/encoder.hpp"
#include "vibus/mixture.hpp"
#include "vibus/scene_data.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace vibus {

inline constexpr std::size_t kDefaultDropoutPasses = 10;
inline constexpr double kDefaultDropoutRate = 0.5;
/// Uncertainties are floored here before gamma fitting.
inline constexpr double kMinUncertainty = 1e-12;

enum class UncertaintyMode {
  WinningLogitVariance,  // variance of the mean-argmax class logit
  MeanLogitVariance,     // trace of the logit covariance divided by C
};

struct UncertaintyConfig {
  std::size_t passes = kDefaultDropoutPasses;
  double dropout_rate = kDefaultDropoutRate;
  UncertaintyMode mode = UncertaintyMode::WinningLogitVariance;
};

void validate(const UncertaintyConfig& cfg);

struct UncertaintyField {
  std::vector<double> values;  // population variance over the passes, >= 0
  std::vector<int> predicted;  // argmax of the mean logits
  std::size_t passes = 0;
  double dropout_rate = 0.0;
};

/// Returns the N x C logits of one stochastic pass.
using LogitSampler = std::function<Eigen::MatrixXd(std::size_t pass)>;

UncertaintyField mc_dropout_uncertainty(const LogitSampler& sampler, std::size_t passes,
                                        UncertaintyMode mode = UncertaintyMode::WinningLogitVariance);

/// Runs the model `cfg.passes` times with dropout active at `cfg.dropout_rate`.
UncertaintyField mc_dropout_uncertainty(const SegmentationModel& model, const SceneMesh& cloud,
                                        const UncertaintyConfig& cfg, std::uint64_t seed);

enum class HarvestStrategy { Uncertainty, Spectrum, Joint };

const char* to_string(HarvestStrategy s);
HarvestStrategy harvest_strategy_from_string(const std::string& name);

struct HarvestConfig {
  HarvestStrategy strategy = HarvestStrategy::Joint;
  EmOptions em;
  std::size_t min_category_samples = kMinMixtureSamples;
};

struct CategoryFit {
  int category = 0;
  std::size_t members = 0;
  bool fitted = false;
  std::string skip_reason;
  MixtureFit fit;
  std::size_t harvested = 0;
};

struct HarvestResult {
  PseudoLabelSet labels;
  std::vector<CategoryFit> categories;  // one per predicted category, ascending
};

/// Min-max rescaling to [0, 1]; constant input maps to all zeros.
std::vector<double> min_max_normalize(std::span<const double> values);

/// Per predicted category, fits the strategy's mixture and keeps the vertices
/// whose reliable posterior is strictly above one half. Labeled vertices are
/// always kept with their annotated category and posterior 1. `spectrum` holds
/// raw per-vertex spectrum distances (normalized here) and may be empty for the
/// uncertainty strategy; `uncertainty` may be empty for the spectrum strategy.
HarvestResult harvest_pseudo_labels(std::span<const int> predicted, std::span<const double> uncertainty,
                                    std::span<const double> spectrum, const SparseLabelSet& ground_truth,
                                    const HarvestConfig& cfg);

struct HistogramRow {
  std::string scene_id;
  int category = 0;
  std::string quantity;  // "uncertainty" or "spectrum"
  double bin_low = 0.0;
  double bin_high = 0.0;
  std::size_t count = 0;
};

inline constexpr std::size_t kDefaultHistogramBins = 20;

/// Per-category histograms over a scene's uncertainty (bins spanning
/// [0, max]) and normalized spectrum distance (bins spanning [0, 1]). Either
/// input may be empty.
std::vector<HistogramRow> category_histograms(const std::string& scene_id, std::span<const int> predicted,
                                              std::span<const double> uncertainty,
                                              std::span<const double> normalized_spectrum,
                                              std::size_t bins = kDefaultHistogramBins);

void write_histograms_csv(std::span<const HistogramRow> rows, const std::filesystem::path& path);

struct SegMetrics {
  int num_categories = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [ground truth][prediction]
  std::vector<double> iou;                          // NaN for classes absent from both
  std::vector<bool> present;
  double miou = 0.0;
  std::size_t evaluated_points = 0;
};

/// Confusion matrix and IoU over points with ground truth >= 0.
SegMetrics evaluate_segmentation(std::span<const int> predicted, std::span<const int> ground_truth,
                                 int num_categories);

/// Adds the counts of `other` and recomputes the IoUs.
void accumulate(SegMetrics& total, const SegMetrics& other);

std::string metrics_to_json(const SegMetrics& m);

}  // namespace vibus
