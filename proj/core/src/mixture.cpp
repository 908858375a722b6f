#include "vibus/mixture.hpp"

#include "vibus/special_functions.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace vibus {

namespace {

constexpr double kParamMin = 1e-4;
constexpr double kParamMax = 1e4;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool positive_finite(double v) { return v > 0.0 && std::isfinite(v); }

double gamma_log_pdf(double shape, double rate, double x) {
  if (!(x > 0.0) || !std::isfinite(x)) return kNegInf;
  return shape * std::log(rate) + (shape - 1.0) * std::log(x) - rate * x - std::lgamma(shape);
}

double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

double beta_log_pdf(double a, double b, double x) {
  if (!(x > 0.0 && x < 1.0)) return kNegInf;
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta_fn(a, b);
}

double spectrum_mean(const ComponentParams& p) { return p.a / (p.a + p.b); }

// Sufficient statistics of a responsibility-weighted sample.
struct GammaStats {
  double weight = 0.0;
  double mean = 0.0;
  double mean_log = 0.0;
  double var = 0.0;
};

struct BetaStats {
  double weight = 0.0;
  double mean_log = 0.0;
  double mean_log1m = 0.0;
  double mean = 0.0;
  double var = 0.0;
};

GammaStats gamma_stats(std::span<const double> x, std::span<const double> r) {
  GammaStats s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.weight += r[i];
    s.mean += r[i] * x[i];
    s.mean_log += r[i] * std::log(x[i]);
  }
  if (s.weight <= 0.0) return s;
  s.mean /= s.weight;
  s.mean_log /= s.weight;
  for (std::size_t i = 0; i < x.size(); ++i) s.var += r[i] * (x[i] - s.mean) * (x[i] - s.mean);
  s.var /= s.weight;
  return s;
}

BetaStats beta_stats(std::span<const double> x, std::span<const double> r) {
  BetaStats s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.weight += r[i];
    s.mean += r[i] * x[i];
    s.mean_log += r[i] * std::log(x[i]);
    s.mean_log1m += r[i] * std::log1p(-x[i]);
  }
  if (s.weight <= 0.0) return s;
  s.mean /= s.weight;
  s.mean_log /= s.weight;
  s.mean_log1m /= s.weight;
  for (std::size_t i = 0; i < x.size(); ++i) s.var += r[i] * (x[i] - s.mean) * (x[i] - s.mean);
  s.var /= s.weight;
  return s;
}

double clamp_param(double v) { return std::clamp(v, kParamMin, kParamMax); }

std::pair<double, double> gamma_moments(double mean, double var) {
  var = std::max(var, 1e-6 * mean * mean + 1e-300);
  return {clamp_param(mean * mean / var), clamp_param(mean / var)};
}

std::pair<double, double> beta_moments(double mean, double var) {
  mean = std::clamp(mean, kBetaBoundaryClamp, 1.0 - kBetaBoundaryClamp);
  var = std::max(var, 1e-12);
  const double common = mean * (1.0 - mean) / var - 1.0;
  if (!(common > 0.0)) return {1.0, 1.0};
  return {clamp_param(mean * common), clamp_param((1.0 - mean) * common)};
}

// Expected complete-data log-likelihood per unit weight.
double gamma_q(const GammaStats& s, double shape, double rate) {
  return shape * std::log(rate) + (shape - 1.0) * s.mean_log - rate * s.mean - std::lgamma(shape);
}

double beta_q(const BetaStats& s, double a, double b) {
  return (a - 1.0) * s.mean_log + (b - 1.0) * s.mean_log1m - log_beta_fn(a, b);
}

// Solves log(a) - psi(a) = target on the shape bracket by safeguarded Newton.
double solve_gamma_shape(double target) {
  if (!(target > 0.0)) return kParamMax;
  auto f = [&](double a) { return std::log(a) - digamma(a) - target; };
  double lo = kParamMin, hi = kParamMax;
  if (f(hi) >= 0.0) return hi;
  if (f(lo) <= 0.0) return lo;
  double a = std::clamp((3.0 - target + std::sqrt((target - 3.0) * (target - 3.0) + 24.0 * target)) / (12.0 * target),
                        lo, hi);
  for (int it = 0; it < 200; ++it) {
    const double fa = f(a);
    if (std::abs(fa) < 1e-14 * std::max(1.0, target)) break;
    if (fa > 0.0)
      lo = a;
    else
      hi = a;
    double next = a - fa / (1.0 / a - trigamma(a));
    if (!(next > lo && next < hi)) next = std::sqrt(lo * hi);
    if (std::abs(next - a) <= 1e-15 * a) {
      a = next;
      break;
    }
    a = next;
  }
  return a;
}

// Maximizes the concave weighted beta log-likelihood by Newton with
// backtracking. Returns false when it fails to reach a stationary point.
bool solve_beta_mle(const BetaStats& s, double& a, double& b) {
  auto grad = [&](double x, double y, double& ga, double& gb) {
    const double dab = digamma(x + y);
    ga = s.mean_log - digamma(x) + dab;
    gb = s.mean_log1m - digamma(y) + dab;
  };
  double obj = beta_q(s, a, b);
  for (int it = 0; it < 200; ++it) {
    double ga, gb;
    grad(a, b, ga, gb);
    if (std::max(std::abs(ga), std::abs(gb)) < 1e-11) return true;
    const double tab = trigamma(a + b);
    const double haa = tab - trigamma(a);
    const double hbb = tab - trigamma(b);
    const double hab = tab;
    const double det = haa * hbb - hab * hab;
    if (!(det > 0.0) || !std::isfinite(det)) return false;
    // delta = -H^{-1} g
    const double da = -(hbb * ga - hab * gb) / det;
    const double db = -(-hab * ga + haa * gb) / det;
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const double na = a + t * da;
      const double nb = b + t * db;
      if (!(na >= kParamMin && na <= kParamMax && nb >= kParamMin && nb <= kParamMax)) continue;
      const double nobj = beta_q(s, na, nb);
      if (nobj >= obj) {
        moved = na != a || nb != b;
        a = na;
        b = nb;
        obj = nobj;
        break;
      }
    }
    if (!moved) {
      double fa, fb;
      grad(a, b, fa, fb);
      return std::max(std::abs(fa), std::abs(fb)) < 1e-6;
    }
  }
  return true;
}

struct StepResult {
  double a;
  double b;
  bool fallback;
};

StepResult gamma_m_step(std::span<const double> x, std::span<const double> r, double shape, double rate) {
  const GammaStats s = gamma_stats(x, r);
  if (s.weight <= 1e-12 || !(s.mean > 0.0)) return {shape, rate, false};
  const double new_shape = solve_gamma_shape(std::log(s.mean) - s.mean_log);
  double new_rate = std::clamp(new_shape / s.mean, kParamMin, kParamMax);
  bool fallback = false;
  double na = new_shape, nb = new_rate;
  if (!positive_finite(na) || !positive_finite(nb)) {
    std::tie(na, nb) = gamma_moments(s.mean, s.var);
    fallback = true;
  }
  // Generalized EM: never accept parameters that lower the expected log-likelihood.
  if (gamma_q(s, na, nb) < gamma_q(s, shape, rate)) return {shape, rate, fallback};
  return {na, nb, fallback};
}

StepResult beta_m_step(std::span<const double> x, std::span<const double> r, double a, double b) {
  const BetaStats s = beta_stats(x, r);
  if (s.weight <= 1e-12) return {a, b, false};
  double na = a, nb = b;
  bool fallback = false;
  if (!solve_beta_mle(s, na, nb) || !positive_finite(na) || !positive_finite(nb)) {
    std::tie(na, nb) = beta_moments(s.mean, s.var);
    fallback = true;
  }
  if (beta_q(s, na, nb) < beta_q(s, a, b)) return {a, b, fallback};
  return {na, nb, fallback};
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double var_of(std::span<const double> v) {
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size());
}

std::size_t distinct_count(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

ComponentParams moments_component(MixtureKind kind, std::span<const double> x, std::span<const double> y) {
  switch (kind) {
    case MixtureKind::Gamma: {
      const auto [a, b] = gamma_moments(mean_of(x), var_of(x));
      return ComponentParams::gamma(a, b);
    }
    case MixtureKind::Beta: {
      const auto [a, b] = beta_moments(mean_of(x), var_of(x));
      return ComponentParams::beta(a, b);
    }
    case MixtureKind::Joint: {
      const auto [a, b] = beta_moments(mean_of(x), var_of(x));
      const auto [c, d] = gamma_moments(mean_of(y), var_of(y));
      return ComponentParams::joint(a, b, c, d);
    }
  }
  throw std::logic_error("unknown mixture kind");
}

// Runs EM on in-support data. For joint, x is spectrum and y uncertainty.
MixtureFit run_em(MixtureKind kind, const std::vector<double>& x, const std::vector<double>& y,
                  const EmOptions& opts) {
  const std::size_t n = x.size();
  const bool joint = kind == MixtureKind::Joint;
  if (n < kMinMixtureSamples)
    throw MixtureFitError("mixture fit needs at least " + std::to_string(kMinMixtureSamples) +
                          " in-support samples, got " + std::to_string(n));
  if (distinct_count(x) < 2 || (joint && distinct_count(y) < 2))
    throw MixtureFitError("mixture fit needs at least 2 distinct sample values");

  // Median split on the primary coordinate (uncertainty for joint).
  const std::vector<double>& key = joint ? y : x;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return key[i] < key[j]; });
  const std::size_t half = n / 2;
  std::array<std::vector<double>, 2> hx, hy;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t part = r < half ? 0 : 1;
    hx[part].push_back(x[order[r]]);
    if (joint) hy[part].push_back(y[order[r]]);
  }

  MixtureFit fit;
  MixtureModel& m = fit.model;
  m.kind = kind;
  m.weights = {0.5, 0.5};
  for (int j = 0; j < 2; ++j) m.components[j] = moments_component(kind, hx[j], hy[j]);
  fit.diagnostics.samples_used = n;

  std::vector<double> r1(n), r2(n);
  auto e_step = [&]() {
    double ll = 0.0;
    const double lw1 = std::log(m.weights[0]);
    const double lw2 = std::log(m.weights[1]);
    for (std::size_t i = 0; i < n; ++i) {
      const double yi = joint ? y[i] : 0.0;
      const double l1 = lw1 + component_log_pdf(m.components[0], x[i], yi);
      const double l2 = lw2 + component_log_pdf(m.components[1], x[i], yi);
      const double hi = std::max(l1, l2);
      ll += hi + std::log1p(std::exp(std::min(l1, l2) - hi));
      r1[i] = 1.0 / (1.0 + std::exp(l2 - l1));
      r2[i] = 1.0 / (1.0 + std::exp(l1 - l2));
    }
    return ll;
  };

  double ll_prev = e_step();
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    const MixtureModel previous = m;
    const double s1 = std::accumulate(r1.begin(), r1.end(), 0.0);
    const double s2 = std::accumulate(r2.begin(), r2.end(), 0.0);
    m.weights = {s1 / (s1 + s2), s2 / (s1 + s2)};
    for (int j = 0; j < 2; ++j) {
      const std::vector<double>& rj = j == 0 ? r1 : r2;
      ComponentParams& p = m.components[j];
      if (kind == MixtureKind::Gamma) {
        const auto s = gamma_m_step(x, rj, p.a, p.b);
        p.a = s.a, p.b = s.b;
        fit.diagnostics.newton_fallbacks += s.fallback;
      } else {
        const auto s = beta_m_step(x, rj, p.a, p.b);
        p.a = s.a, p.b = s.b;
        fit.diagnostics.newton_fallbacks += s.fallback;
        if (joint) {
          const auto g = gamma_m_step(y, rj, p.c, p.d);
          p.c = g.a, p.d = g.b;
          fit.diagnostics.newton_fallbacks += g.fallback;
        }
      }
    }
    if (m.weights[0] <= 0.0 || m.weights[1] <= 0.0) {
      m = previous;
      e_step();
      fit.diagnostics.converged = true;
      break;
    }
    const double ll = e_step();
    if (!(ll >= ll_prev)) {
      // Rounding at the fixed point; keep the last accepted parameters.
      m = previous;
      e_step();
      fit.diagnostics.converged = true;
      break;
    }
    fit.diagnostics.log_likelihood_trace.push_back(ll);
    fit.diagnostics.iterations_run = it + 1;
    const bool done = ll - ll_prev <= opts.tolerance * std::abs(ll_prev);
    ll_prev = ll;
    if (done) {
      fit.diagnostics.converged = true;
      break;
    }
  }
  order_reliable_first(m);
  validate(m);
  return fit;
}

}  // namespace

const char* to_string(MixtureKind kind) {
  switch (kind) {
    case MixtureKind::Gamma: return "gamma";
    case MixtureKind::Beta: return "beta";
    case MixtureKind::Joint: return "joint";
  }
  return "unknown";
}

MixtureKind mixture_kind_from_string(const std::string& name) {
  if (name == "gamma") return MixtureKind::Gamma;
  if (name == "beta") return MixtureKind::Beta;
  if (name == "joint") return MixtureKind::Joint;
  throw std::invalid_argument("unknown mixture kind '" + name + "'");
}

void validate(const ComponentParams& p) {
  const bool ok = p.kind == MixtureKind::Joint ? positive_finite(p.a) && positive_finite(p.b) &&
                                                     positive_finite(p.c) && positive_finite(p.d)
                                               : positive_finite(p.a) && positive_finite(p.b);
  if (!ok) throw std::invalid_argument(std::string(to_string(p.kind)) + " parameters must be positive and finite");
}

double component_mean(const ComponentParams& p) {
  switch (p.kind) {
    case MixtureKind::Gamma: return p.a / p.b;
    case MixtureKind::Beta: return spectrum_mean(p);
    case MixtureKind::Joint: return p.c / p.d;
  }
  return 0.0;
}

double component_log_pdf(const ComponentParams& p, double x, double y) {
  switch (p.kind) {
    case MixtureKind::Gamma: return gamma_log_pdf(p.a, p.b, x);
    case MixtureKind::Beta: return beta_log_pdf(p.a, p.b, x);
    case MixtureKind::Joint: {
      const double lb = beta_log_pdf(p.a, p.b, x);
      if (lb == kNegInf) return kNegInf;
      return lb + gamma_log_pdf(p.c, p.d, y);
    }
  }
  return kNegInf;
}

Density component_pdf(const ComponentParams& params, double x) {
  validate(params);
  if (params.kind == MixtureKind::Joint) throw std::invalid_argument("joint density needs two coordinates");
  const double l = component_log_pdf(params, x);
  if (l == kNegInf) {
    const bool outside = params.kind == MixtureKind::Gamma ? !(x > 0.0) : !(x > 0.0 && x < 1.0);
    return {0.0, outside};
  }
  return {std::exp(l), false};
}

Density component_pdf(const ComponentParams& params, double u, double v) {
  validate(params);
  if (params.kind != MixtureKind::Joint) throw std::invalid_argument("two coordinates need a joint component");
  const double l = component_log_pdf(params, u, v);
  if (l == kNegInf) return {0.0, !(u > 0.0 && u < 1.0) || !(v > 0.0)};
  return {std::exp(l), false};
}

void validate(const MixtureModel& model) {
  for (const auto& c : model.components) {
    if (c.kind != model.kind) throw std::invalid_argument("mixture component kind mismatch");
    validate(c);
  }
  const double w1 = model.weights[0], w2 = model.weights[1];
  if (!(w1 >= 0.0 && w2 >= 0.0) || std::abs(w1 + w2 - 1.0) > 1e-9)
    throw std::invalid_argument("mixture weights must lie on the simplex");
}

Responsibility responsibilities(const MixtureModel& model, double x, double y) {
  const double l1 = std::log(model.weights[0]) + component_log_pdf(model.components[0], x, y);
  const double l2 = std::log(model.weights[1]) + component_log_pdf(model.components[1], x, y);
  if (l1 == kNegInf && l2 == kNegInf) return {0.0, 0.0, false};
  // Written symmetrically so that swapping the components swaps the results exactly.
  return {1.0 / (1.0 + std::exp(l2 - l1)), 1.0 / (1.0 + std::exp(l1 - l2)), true};
}

double reliable_posterior(const MixtureModel& model, double x, double y) {
  const Responsibility r = responsibilities(model, x, y);
  return r.valid ? r.r1 : std::numeric_limits<double>::quiet_NaN();
}

void order_reliable_first(MixtureModel& model) {
  const auto& c0 = model.components[0];
  const auto& c1 = model.components[1];
  bool swap = false;
  if (model.kind == MixtureKind::Joint) {
    const double u0 = component_mean(c0), u1 = component_mean(c1);
    swap = u1 < u0 || (u1 == u0 && spectrum_mean(c1) < spectrum_mean(c0));
  } else {
    swap = component_mean(c1) < component_mean(c0);
  }
  if (swap) {
    std::swap(model.components[0], model.components[1]);
    std::swap(model.weights[0], model.weights[1]);
  }
}

MixtureFit fit_mixture_em(std::span<const double> samples, MixtureKind kind, const EmOptions& opts) {
  if (kind == MixtureKind::Joint) throw std::invalid_argument("use fit_joint_mixture_em for joint models");
  std::vector<double> x;
  x.reserve(samples.size());
  for (double s : samples) {
    if (!std::isfinite(s)) continue;
    if (kind == MixtureKind::Beta) {
      if (s < 0.0 || s > 1.0) continue;
      x.push_back(std::clamp(s, kBetaBoundaryClamp, 1.0 - kBetaBoundaryClamp));
    } else if (s > 0.0) {
      x.push_back(s);
    }
  }
  return run_em(kind, x, {}, opts);
}

MixtureFit fit_joint_mixture_em(std::span<const double> spectrum, std::span<const double> uncertainty,
                                const EmOptions& opts) {
  if (spectrum.size() != uncertainty.size())
    throw std::invalid_argument("joint fit needs equally many spectrum and uncertainty samples");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    const double s = spectrum[i], u = uncertainty[i];
    if (!std::isfinite(s) || !std::isfinite(u) || s < 0.0 || s > 1.0 || !(u > 0.0)) continue;
    x.push_back(std::clamp(s, kBetaBoundaryClamp, 1.0 - kBetaBoundaryClamp));
    y.push_back(u);
  }
  return run_em(MixtureKind::Joint, x, y, opts);
}

double mixture_log_likelihood(const MixtureModel& model, std::span<const double> x, std::span<const double> y) {
  const bool joint = model.kind == MixtureKind::Joint;
  if (joint && y.size() != x.size()) throw std::invalid_argument("joint likelihood needs paired samples");
  double ll = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double yi = joint ? y[i] : 0.0;
    const double l1 = std::log(model.weights[0]) + component_log_pdf(model.components[0], x[i], yi);
    const double l2 = std::log(model.weights[1]) + component_log_pdf(model.components[1], x[i], yi);
    const double hi = std::max(l1, l2);
    if (hi == kNegInf) return kNegInf;
    ll += hi + std::log1p(std::exp(std::min(l1, l2) - hi));
  }
  return ll;
}

namespace {

nlohmann::json component_json(const ComponentParams& p, const char* role) {
  nlohmann::json j;
  j["role"] = role;
  switch (p.kind) {
    case MixtureKind::Gamma:
      j["shape"] = p.a;
      j["rate"] = p.b;
      break;
    case MixtureKind::Beta:
      j["a"] = p.a;
      j["b"] = p.b;
      break;
    case MixtureKind::Joint:
      j["beta_a"] = p.a;
      j["beta_b"] = p.b;
      j["gamma_shape"] = p.c;
      j["gamma_rate"] = p.d;
      break;
  }
  return j;
}

ComponentParams component_from_json(const nlohmann::json& j, MixtureKind kind) {
  switch (kind) {
    case MixtureKind::Gamma: return ComponentParams::gamma(j.at("shape").get<double>(), j.at("rate").get<double>());
    case MixtureKind::Beta: return ComponentParams::beta(j.at("a").get<double>(), j.at("b").get<double>());
    case MixtureKind::Joint:
      return ComponentParams::joint(j.at("beta_a").get<double>(), j.at("beta_b").get<double>(),
                                    j.at("gamma_shape").get<double>(), j.at("gamma_rate").get<double>());
  }
  throw std::logic_error("unknown mixture kind");
}

}  // namespace

std::string mixture_to_json(const MixtureModel& model, const FitDiagnostics* diagnostics) {
  nlohmann::ordered_json doc;
  doc["kind"] = to_string(model.kind);
  doc["weights"] = {model.weights[0], model.weights[1]};
  doc["components"] = {component_json(model.components[0], "reliable"),
                       component_json(model.components[1], "unreliable")};
  if (diagnostics) {
    nlohmann::ordered_json d;
    d["iterations_run"] = diagnostics->iterations_run;
    d["converged"] = diagnostics->converged;
    d["samples_used"] = diagnostics->samples_used;
    d["newton_fallbacks"] = diagnostics->newton_fallbacks;
    d["final_log_likelihood"] =
        diagnostics->log_likelihood_trace.empty() ? 0.0 : diagnostics->log_likelihood_trace.back();
    d["log_likelihood_trace"] = diagnostics->log_likelihood_trace;
    doc["diagnostics"] = d;
  }
  return doc.dump(2) + "\n";
}

MixtureModel mixture_from_json(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  MixtureModel m;
  m.kind = mixture_kind_from_string(doc.at("kind").get<std::string>());
  const auto& w = doc.at("weights");
  m.weights = {w.at(0).get<double>(), w.at(1).get<double>()};
  const auto& comps = doc.at("components");
  if (comps.size() != 2) throw std::invalid_argument("mixture JSON needs exactly two components");
  for (std::size_t j = 0; j < 2; ++j) m.components[j] = component_from_json(comps.at(j), m.kind);
  validate(m);
  return m;
}

}  // namespace vibus
