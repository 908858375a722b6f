#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vibus {

inline constexpr std::size_t kDefaultEmIterations = 50;
/// Fewest in-support samples a mixture fit accepts.
inline constexpr std::size_t kMinMixtureSamples = 20;
/// Beta samples at 0 or 1 are moved this far into the open interval.
inline constexpr double kBetaBoundaryClamp = 1e-6;

enum class MixtureKind { Gamma, Beta, Joint };

const char* to_string(MixtureKind kind);
MixtureKind mixture_kind_from_string(const std::string& name);

/// Gamma: a = shape, b = rate. Beta: (a, b). Joint: beta (a, b) on the
/// spectrum coordinate, gamma shape c and rate d on the uncertainty
/// coordinate.
struct ComponentParams {
  MixtureKind kind = MixtureKind::Gamma;
  double a = 1.0;
  double b = 1.0;
  double c = 1.0;
  double d = 1.0;

  static ComponentParams gamma(double shape, double rate) { return {MixtureKind::Gamma, shape, rate, 1.0, 1.0}; }
  static ComponentParams beta(double a, double b) { return {MixtureKind::Beta, a, b, 1.0, 1.0}; }
  static ComponentParams joint(double beta_a, double beta_b, double gamma_shape, double gamma_rate) {
    return {MixtureKind::Joint, beta_a, beta_b, gamma_shape, gamma_rate};
  }

  friend bool operator==(const ComponentParams&, const ComponentParams&) = default;
};

void validate(const ComponentParams& params);

/// Mean of the scalar component, or of the uncertainty coordinate for joint.
double component_mean(const ComponentParams& params);

struct Density {
  double value = 0.0;
  bool out_of_support = false;
};

/// Scalar density (gamma or beta).
Density component_pdf(const ComponentParams& params, double x);
/// Joint density at (spectrum u, uncertainty v).
Density component_pdf(const ComponentParams& params, double u, double v);

/// Natural-log density; -inf outside the support.
double component_log_pdf(const ComponentParams& params, double x, double y = 0.0);

/// Two-component mixture. components[0] is the reliable component.
struct MixtureModel {
  MixtureKind kind = MixtureKind::Gamma;
  std::array<double, 2> weights{0.5, 0.5};
  std::array<ComponentParams, 2> components;
};

void validate(const MixtureModel& model);

struct Responsibility {
  double r1 = 0.5;
  double r2 = 0.5;
  bool valid = true;  // false when both weighted densities vanish
};

/// For joint models x is the spectrum coordinate and y the uncertainty.
Responsibility responsibilities(const MixtureModel& model, double x, double y = 0.0);

/// Posterior of the reliable component; NaN where both densities vanish.
double reliable_posterior(const MixtureModel& model, double x, double y = 0.0);

/// Reorders components so the reliable one comes first: lower mean for
/// scalar kinds, lexicographic (uncertainty mean, spectrum mean) for joint.
void order_reliable_first(MixtureModel& model);

struct FitDiagnostics {
  std::vector<double> log_likelihood_trace;  // after each iteration
  std::size_t iterations_run = 0;
  bool converged = false;
  std::size_t samples_used = 0;
  std::size_t newton_fallbacks = 0;
};

struct EmOptions {
  std::size_t iterations = kDefaultEmIterations;
  /// Relative log-likelihood change under which the fit stops early.
  double tolerance = 1e-12;
};

struct MixtureFit {
  MixtureModel model;
  FitDiagnostics diagnostics;
};

class MixtureFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// EM fit of a two-component gamma or beta mixture. Out-of-support samples
/// are dropped; beta samples at the boundary are clamped inward first.
MixtureFit fit_mixture_em(std::span<const double> samples, MixtureKind kind, const EmOptions& opts = {});

/// EM fit of the joint model: beta on `spectrum`, gamma on `uncertainty`,
/// with shared responsibilities.
MixtureFit fit_joint_mixture_em(std::span<const double> spectrum, std::span<const double> uncertainty,
                                const EmOptions& opts = {});

/// Mixture log-likelihood of the given samples (y ignored unless joint).
double mixture_log_likelihood(const MixtureModel& model, std::span<const double> x, std::span<const double> y = {});

/// JSON document with kind, weights, parameters, and a diagnostics summary.
std::string mixture_to_json(const MixtureModel& model, const FitDiagnostics* diagnostics = nullptr);
MixtureModel mixture_from_json(const std::string& text);

}  // namespace vibus
