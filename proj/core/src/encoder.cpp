#include "vibus/encoder.hpp"

#include "mlp.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace vibus {

namespace detail {

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= static_cast<std::size_t>(m.rows()))
      throw std::out_of_range("row index " + std::to_string(rows[i]) + " out of range");
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace detail

namespace {

constexpr std::size_t kHiddenLayers = 2;

DenseLayer he_layer(int in, int out, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / in));
  DenseLayer layer;
  layer.weight.resize(out, in);
  for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = normal(rng);
  layer.bias = Eigen::VectorXd::Zero(out);
  return layer;
}

std::vector<DenseLayer> stacked(const SegmentationModel& model) {
  std::vector<DenseLayer> layers = model.encoder.layers;
  layers.push_back(model.head);
  return layers;
}

}  // namespace

void validate(const EncoderParams& params) {
  if (params.layers.size() != kHiddenLayers + 1)
    throw std::invalid_argument("encoder must have exactly three dense layers");
  if (!(params.dropout_rate >= 0.0 && params.dropout_rate < 1.0))
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  Eigen::Index expected_in = kEncoderInputDim;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const DenseLayer& layer = params.layers[l];
    if (layer.in_dim() != expected_in || layer.bias.size() != layer.out_dim())
      throw std::invalid_argument("encoder layer " + std::to_string(l) + " has inconsistent shape");
    expected_in = layer.out_dim();
  }
}

EncoderParams init_encoder(const EncoderShape& shape, double dropout_rate, std::uint64_t seed) {
  if (shape.hidden1 < 1 || shape.hidden2 < 1 || shape.feature_dim < 1)
    throw std::invalid_argument("encoder widths must be positive");
  std::mt19937_64 rng(seed);
  EncoderParams params;
  params.dropout_rate = dropout_rate;
  params.layers.push_back(he_layer(kEncoderInputDim, shape.hidden1, rng));
  params.layers.push_back(he_layer(shape.hidden1, shape.hidden2, rng));
  params.layers.push_back(he_layer(shape.hidden2, shape.feature_dim, rng));
  validate(params);
  return params;
}

Eigen::MatrixXd point_inputs(const SceneMesh& cloud) {
  const auto n = static_cast<Eigen::Index>(cloud.num_vertices());
  Eigen::MatrixXd x(n, kEncoderInputDim);
  if (n == 0) return x;
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const Vec3f& p : cloud.vertices) {
    lo = lo.cwiseMin(p.cast<double>());
    hi = hi.cwiseMax(p.cast<double>());
  }
  const Eigen::Vector3d center = 0.5 * (lo + hi);
  const double half_extent = 0.5 * (hi - lo).maxCoeff();
  const double inv = half_extent > 0.0 ? 1.0 / half_extent : 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i).head<3>() = ((cloud.vertices[i].cast<double>() - center) * inv).transpose();
    if (cloud.has_colors()) {
      x.row(i).tail<3>() = (cloud.colors[i].cast<double>() / 255.0).transpose();
    } else {
      x.row(i).tail<3>().setZero();
    }
  }
  return x;
}

FeatureMatrix encoder_forward(const EncoderParams& params, const SceneMesh& cloud,
                              const SampleIndexSet& indices, bool dropout_on, std::uint64_t seed) {
  validate(params);
  const Eigen::MatrixXd x = detail::gather_rows(point_inputs(cloud), indices.indices);
  return detail::mlp_forward(params.layers, kHiddenLayers, x, params.dropout_rate, dropout_on, seed).output;
}

FeatureMatrix encoder_forward(const EncoderParams& params, const SceneMesh& cloud, bool dropout_on,
                              std::uint64_t seed) {
  validate(params);
  return detail::mlp_forward(params.layers, kHiddenLayers, point_inputs(cloud), params.dropout_rate,
                             dropout_on, seed)
      .output;
}

SegmentationModel attach_head(EncoderParams encoder, int num_categories, std::uint64_t seed) {
  validate(encoder);
  if (num_categories < 1) throw std::invalid_argument("number of categories must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / encoder.feature_dim()));
  SegmentationModel model;
  model.head.weight.resize(num_categories, encoder.feature_dim());
  for (Eigen::Index i = 0; i < model.head.weight.rows(); ++i)
    for (Eigen::Index j = 0; j < model.head.weight.cols(); ++j) model.head.weight(i, j) = normal(rng);
  model.head.bias = Eigen::VectorXd::Zero(num_categories);
  model.encoder = std::move(encoder);
  return model;
}

Eigen::MatrixXd model_logits(const SegmentationModel& model, const SceneMesh& cloud,
                             std::span<const std::size_t> vertices, bool dropout_on, std::uint64_t seed) {
  validate(model.encoder);
  if (model.head.in_dim() != model.encoder.feature_dim())
    throw std::invalid_argument("classifier head does not match encoder feature dimension");
  Eigen::MatrixXd x = point_inputs(cloud);
  if (!vertices.empty()) x = detail::gather_rows(x, vertices);
  return detail::mlp_forward(stacked(model), kHiddenLayers, x, model.encoder.dropout_rate, dropout_on, seed)
      .output;
}

PredictionField predict(const SegmentationModel& model, const SceneMesh& cloud) {
  return PredictionField(model_logits(model, cloud, {}, false, 0));
}

}  // namespace vibus
