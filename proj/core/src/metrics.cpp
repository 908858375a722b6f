#include "vibus/harvest.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace vibus {

namespace {

void recompute(SegMetrics& m) {
  const auto c = static_cast<std::size_t>(m.num_categories);
  m.iou.assign(c, std::numeric_limits<double>::quiet_NaN());
  m.present.assign(c, false);
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t tp = m.confusion[k][k], gt = 0, pred = 0;
    for (std::size_t j = 0; j < c; ++j) {
      gt += m.confusion[k][j];
      pred += m.confusion[j][k];
    }
    const std::size_t uni = gt + pred - tp;
    if (uni == 0) continue;
    m.present[k] = true;
    m.iou[k] = static_cast<double>(tp) / static_cast<double>(uni);
    sum += m.iou[k];
    ++counted;
  }
  m.miou = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
}

}  // namespace

SegMetrics evaluate_segmentation(std::span<const int> predicted, std::span<const int> ground_truth,
                                 int num_categories) {
  if (predicted.size() != ground_truth.size())
    throw std::invalid_argument("prediction has " + std::to_string(predicted.size()) + " points, ground truth " +
                                std::to_string(ground_truth.size()));
  if (num_categories < 1) throw std::invalid_argument("evaluation needs at least one category");
  SegMetrics m;
  m.num_categories = num_categories;
  const auto c = static_cast<std::size_t>(num_categories);
  m.confusion.assign(c, std::vector<std::size_t>(c, 0));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int g = ground_truth[i];
    if (g < 0) continue;
    const int p = predicted[i];
    if (g >= num_categories || p < 0 || p >= num_categories)
      throw std::out_of_range("category outside [0, " + std::to_string(num_categories) + ") at point " +
                              std::to_string(i));
    ++m.confusion[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
    ++m.evaluated_points;
  }
  recompute(m);
  return m;
}

void accumulate(SegMetrics& total, const SegMetrics& other) {
  if (total.num_categories == 0) {
    total = other;
    return;
  }
  if (total.num_categories != other.num_categories) throw std::invalid_argument("metrics differ in category count");
  for (std::size_t g = 0; g < total.confusion.size(); ++g)
    for (std::size_t p = 0; p < total.confusion.size(); ++p) total.confusion[g][p] += other.confusion[g][p];
  total.evaluated_points += other.evaluated_points;
  recompute(total);
}

std::string metrics_to_json(const SegMetrics& m) {
  nlohmann::ordered_json doc;
  doc["miou"] = m.miou;
  doc["evaluated_points"] = m.evaluated_points;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < m.iou.size(); ++k)
    if (m.present[k]) per_class[std::to_string(k)] = m.iou[k];
  doc["per_class_iou"] = per_class;
  doc["confusion"] = m.confusion;
  return doc.dump(2) + "\n";
}

}  // namespace vibus
