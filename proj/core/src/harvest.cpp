#include "vibus/harvest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace vibus {

namespace {

double clamp_open_unit(double v) { return std::clamp(v, kBetaBoundaryClamp, 1.0 - kBetaBoundaryClamp); }

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

const char* to_string(HarvestStrategy s) {
  switch (s) {
    case HarvestStrategy::Uncertainty: return "uncertainty";
    case HarvestStrategy::Spectrum: return "spectrum";
    case HarvestStrategy::Joint: return "joint";
  }
  return "unknown";
}

HarvestStrategy harvest_strategy_from_string(const std::string& name) {
  if (name == "uncertainty") return HarvestStrategy::Uncertainty;
  if (name == "spectrum") return HarvestStrategy::Spectrum;
  if (name == "joint") return HarvestStrategy::Joint;
  throw std::invalid_argument("unknown strategy '" + name + "' (expected uncertainty, spectrum, or joint)");
}

std::vector<double> min_max_normalize(std::span<const double> values) {
  std::vector<double> out(values.begin(), values.end());
  if (out.empty()) return out;
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double min = *lo, range = *hi - *lo;
  for (double& v : out) v = range > 0.0 ? (v - min) / range : 0.0;
  return out;
}

HarvestResult harvest_pseudo_labels(std::span<const int> predicted, std::span<const double> uncertainty,
                                    std::span<const double> spectrum, const SparseLabelSet& ground_truth,
                                    const HarvestConfig& cfg) {
  const std::size_t n = predicted.size();
  const bool use_unc = cfg.strategy != HarvestStrategy::Spectrum;
  const bool use_spec = cfg.strategy != HarvestStrategy::Uncertainty;
  if (use_unc && uncertainty.size() != n)
    throw std::invalid_argument("uncertainty field has " + std::to_string(uncertainty.size()) + " values for " +
                                std::to_string(n) + " vertices");
  if (use_spec && spectrum.size() != n)
    throw std::invalid_argument("spectrum field has " + std::to_string(spectrum.size()) + " values for " +
                                std::to_string(n) + " vertices");

  std::vector<double> unc;
  if (use_unc) {
    unc.assign(uncertainty.begin(), uncertainty.end());
    for (double& u : unc) u = std::max(u, kMinUncertainty);
  }
  std::vector<double> spec;
  if (use_spec) {
    spec = min_max_normalize(spectrum);
    for (double& s : spec) s = clamp_open_unit(s);
  }

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[predicted[i]].push_back(i);

  HarvestResult result;
  for (const auto& [cat, members] : groups) {
    CategoryFit cf;
    cf.category = cat;
    cf.members = members.size();
    result.categories.push_back(std::move(cf));
  }
  std::vector<std::vector<PseudoLabel>> kept(result.categories.size());

  const auto num_groups = static_cast<std::ptrdiff_t>(result.categories.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t g = 0; g < num_groups; ++g) {
    CategoryFit& cf = result.categories[static_cast<std::size_t>(g)];
    const std::vector<std::size_t>& members = groups.at(cf.category);
    if (members.size() < cfg.min_category_samples) {
      cf.skip_reason = "fewer than " + std::to_string(cfg.min_category_samples) + " members";
      continue;
    }
    std::vector<double> xs, ys;
    for (std::size_t i : members) {
      if (cfg.strategy == HarvestStrategy::Uncertainty) {
        xs.push_back(unc[i]);
      } else {
        xs.push_back(spec[i]);
        if (cfg.strategy == HarvestStrategy::Joint) ys.push_back(unc[i]);
      }
    }
    try {
      switch (cfg.strategy) {
        case HarvestStrategy::Uncertainty: cf.fit = fit_mixture_em(xs, MixtureKind::Gamma, cfg.em); break;
        case HarvestStrategy::Spectrum: cf.fit = fit_mixture_em(xs, MixtureKind::Beta, cfg.em); break;
        case HarvestStrategy::Joint: cf.fit = fit_joint_mixture_em(xs, ys, cfg.em); break;
      }
    } catch (const std::exception& e) {
      cf.skip_reason = e.what();
      continue;
    }
    cf.fitted = true;
    for (std::size_t k = 0; k < members.size(); ++k) {
      const double post = reliable_posterior(cf.fit.model, xs[k], ys.empty() ? 0.0 : ys[k]);
      if (post > 0.5) kept[static_cast<std::size_t>(g)].push_back({members[k], cf.category, post});
    }
    cf.harvested = kept[static_cast<std::size_t>(g)].size();
  }

  std::map<std::size_t, PseudoLabel> merged;
  for (const auto& group : kept)
    for (const PseudoLabel& p : group) merged[p.vertex] = p;
  for (const auto& [v, cat] : ground_truth.entries) {
    if (v >= n) throw std::out_of_range("labeled vertex " + std::to_string(v) + " outside the prediction field");
    merged[v] = PseudoLabel{v, cat, 1.0};
  }
  std::vector<PseudoLabel> entries;
  entries.reserve(merged.size());
  for (const auto& [v, p] : merged) entries.push_back(p);
  result.labels = PseudoLabelSet(std::move(entries));
  return result;
}

std::vector<HistogramRow> category_histograms(const std::string& scene_id, std::span<const int> predicted,
                                              std::span<const double> uncertainty,
                                              std::span<const double> normalized_spectrum, std::size_t bins) {
  if (bins < 1) throw std::invalid_argument("histograms need at least one bin");
  const std::size_t n = predicted.size();
  if ((!uncertainty.empty() && uncertainty.size() != n) ||
      (!normalized_spectrum.empty() && normalized_spectrum.size() != n))
    throw std::invalid_argument("histogram inputs differ in length");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[predicted[i]].push_back(i);

  std::vector<HistogramRow> rows;
  auto emit = [&](int cat, const std::vector<std::size_t>& members, std::span<const double> values,
                  const char* quantity, double hi) {
    std::vector<std::size_t> counts(bins, 0);
    for (std::size_t i : members) {
      const double v = std::clamp(values[i], 0.0, hi);
      auto b = hi > 0.0 ? static_cast<std::size_t>(v / hi * static_cast<double>(bins)) : 0;
      ++counts[std::min(b, bins - 1)];
    }
    for (std::size_t b = 0; b < bins; ++b)
      rows.push_back({scene_id, cat, quantity, hi * static_cast<double>(b) / static_cast<double>(bins),
                      hi * static_cast<double>(b + 1) / static_cast<double>(bins), counts[b]});
  };
  const double unc_max = uncertainty.empty() ? 0.0 : *std::max_element(uncertainty.begin(), uncertainty.end());
  for (const auto& [cat, members] : groups) {
    if (!uncertainty.empty()) emit(cat, members, uncertainty, "uncertainty", unc_max);
    if (!normalized_spectrum.empty()) emit(cat, members, normalized_spectrum, "spectrum", 1.0);
  }
  return rows;
}

void write_histograms_csv(std::span<const HistogramRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "scene_id,category_id,quantity,bin_low,bin_high,count\n";
  for (const auto& r : rows)
    out << r.scene_id << ',' << r.category << ',' << r.quantity << ',' << format_double(r.bin_low) << ','
        << format_double(r.bin_high) << ',' << r.count << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace vibus
