#include "vibus/harvest.hpp"

#include "seed.hpp"

#include <stdexcept>
#include <string>

namespace vibus {

void validate(const UncertaintyConfig& cfg) {
  if (cfg.passes < 2) throw std::invalid_argument("MC dropout needs at least 2 passes");
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0))
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " + std::to_string(cfg.dropout_rate));
}

UncertaintyField mc_dropout_uncertainty(const LogitSampler& sampler, std::size_t passes, UncertaintyMode mode) {
  if (passes < 2) throw std::invalid_argument("MC dropout needs at least 2 passes");
  Eigen::MatrixXd mean, m2;
  for (std::size_t t = 0; t < passes; ++t) {
    const Eigen::MatrixXd logits = sampler(t);
    if (t == 0) {
      mean = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
      m2 = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
    } else if (logits.rows() != mean.rows() || logits.cols() != mean.cols()) {
      throw std::invalid_argument("logit passes differ in shape");
    }
    // Welford update.
    const Eigen::MatrixXd delta = logits - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta.cwiseProduct(logits - mean);
  }
  const Eigen::MatrixXd var = (m2 / static_cast<double>(passes)).cwiseMax(0.0);

  UncertaintyField field;
  field.passes = passes;
  field.values.resize(static_cast<std::size_t>(mean.rows()));
  field.predicted.resize(static_cast<std::size_t>(mean.rows()));
  for (Eigen::Index i = 0; i < mean.rows(); ++i) {
    Eigen::Index best = 0;
    mean.row(i).maxCoeff(&best);
    field.predicted[static_cast<std::size_t>(i)] = static_cast<int>(best);
    field.values[static_cast<std::size_t>(i)] =
        mode == UncertaintyMode::WinningLogitVariance ? var(i, best) : var.row(i).mean();
  }
  return field;
}

UncertaintyField mc_dropout_uncertainty(const SegmentationModel& model, const SceneMesh& cloud,
                                        const UncertaintyConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  SegmentationModel stochastic = model;
  stochastic.encoder.dropout_rate = cfg.dropout_rate;
  const bool active = cfg.dropout_rate > 0.0;
  UncertaintyField field = mc_dropout_uncertainty(
      [&](std::size_t pass) {
        return model_logits(stochastic, cloud, {}, active, detail::mix_seed(seed, pass));
      },
      cfg.passes, cfg.mode);
  field.dropout_rate = cfg.dropout_rate;
  return field;
}

}  // namespace vibus
