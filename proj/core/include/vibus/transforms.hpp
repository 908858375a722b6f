#pragma once

#include "vibus/scene_data.hpp"

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

namespace vibus {

/// Standard deviation of the per-channel chromatic jitter, 255 * 0.05.
inline constexpr double kDefaultJitterSigma = 255.0 * 0.05;
/// Number of points kept by farthest point sampling during pre-training.
inline constexpr std::size_t kDefaultFpsTarget = 1024;

/// One random viewpoint transformation: rotation about z, then per-axis
/// mirroring, plus Gaussian chromatic jitter drawn from `rng_seed`.
struct TransformSpec {
  double rotation_angle_z = 0.0;  // radians, [0, 2*pi)
  std::array<bool, 3> mirror_mask{false, false, false};
  double jitter_sigma = kDefaultJitterSigma;
  std::uint64_t rng_seed = 0;
};

void validate(const TransformSpec& spec);

/// Applies `spec` to positions and colors. Faces and scene id are copied.
/// Jittered colors are clamped to [0, 255].
SceneMesh apply_transform(const TransformSpec& spec, const SceneMesh& cloud);

/// Draws two independent specs: angle ~ U[0, 2*pi), each mirror axis with
/// probability 0.5, jitter seeds from the same stream.
std::pair<TransformSpec, TransformSpec> sample_transform_pair(std::uint64_t seed,
                                                              double jitter_sigma = kDefaultJitterSigma);

struct SampleIndexSet {
  std::vector<std::size_t> indices;
  std::size_t target_size = 0;
};

/// Greedy farthest point sampling in Euclidean distance starting from
/// `start_index`. Returns min(target, N) unique indices.
SampleIndexSet fps(const SceneMesh& cloud, std::size_t target, std::size_t start_index);
SampleIndexSet fps(const std::vector<Vec3f>& points, std::size_t target, std::size_t start_index);

/// FPS from a start vertex drawn uniformly with `seed`.
SampleIndexSet fps_random_start(const SceneMesh& cloud, std::size_t target, std::uint64_t seed);

}  // namespace vibus
