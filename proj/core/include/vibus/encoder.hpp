#pragma once

#include "vibus/scene_data.hpp"
#include "vibus/transforms.hpp"
#include "vibus/viewpoint_bottleneck.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace vibus {

/// Fully connected layer, y = W x + b with W of shape (out, in).
struct DenseLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

/// Per-point input features: xyz (3) + rgb (3).
inline constexpr int kEncoderInputDim = 6;

struct EncoderShape {
  int hidden1 = 64;
  int hidden2 = 64;
  int feature_dim = 512;
};

/// Per-point MLP 6 -> hidden1 -> hidden2 -> feature_dim with ReLU on the two
/// hidden layers. Dropout (inverted, rate `dropout_rate`) follows each hidden
/// ReLU when enabled. Stands in for a sparse-convolution backbone; anything
/// with the encoder_forward() signature can replace it.
struct EncoderParams {
  std::vector<DenseLayer> layers;
  double dropout_rate = 0.5;

  int feature_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().out_dim()); }
};

void validate(const EncoderParams& params);

/// He-initialized encoder; biases start at zero.
EncoderParams init_encoder(const EncoderShape& shape, double dropout_rate, std::uint64_t seed);

/// N x 6 network inputs: positions centered on the bounding-box center and
/// divided by half the largest box extent, colors divided by 255 (zero when
/// the mesh has no colors).
Eigen::MatrixXd point_inputs(const SceneMesh& cloud);

/// Features of the rows `indices.indices` of `cloud`. With dropout_on the
/// masks are drawn from `seed`; with dropout off the seed is unused.
FeatureMatrix encoder_forward(const EncoderParams& params, const SceneMesh& cloud,
                              const SampleIndexSet& indices, bool dropout_on, std::uint64_t seed);

/// Features of every vertex.
FeatureMatrix encoder_forward(const EncoderParams& params, const SceneMesh& cloud, bool dropout_on,
                              std::uint64_t seed);

/// Encoder plus a linear classification head over its features.
struct SegmentationModel {
  EncoderParams encoder;
  DenseLayer head;

  int num_categories() const { return static_cast<int>(head.out_dim()); }
};

SegmentationModel attach_head(EncoderParams encoder, int num_categories, std::uint64_t seed);

/// Logits for the given vertices (all vertices when `vertices` is empty).
Eigen::MatrixXd model_logits(const SegmentationModel& model, const SceneMesh& cloud,
                             std::span<const std::size_t> vertices, bool dropout_on,
                             std::uint64_t seed);

/// Deterministic (dropout off) predictions for every vertex.
PredictionField predict(const SegmentationModel& model, const SceneMesh& cloud);

/// Network weights plus the VB configuration they were trained with.
struct Checkpoint {
  EncoderParams encoder;
  std::optional<DenseLayer> head;
  VBConfig vb;
};

/// Versioned little-endian blob: magic, version, config echo, then for every
/// layer (rows, cols, row-major float32 weights, float32 bias).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Also rejects layer shapes that differ from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const EncoderParams& expected);

}  // namespace vibus
