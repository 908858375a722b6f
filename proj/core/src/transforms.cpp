#include "vibus/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace vibus {

void validate(const TransformSpec& spec) {
  if (!(spec.rotation_angle_z >= 0.0 && spec.rotation_angle_z < 2.0 * std::numbers::pi))
    throw std::invalid_argument("rotation angle must lie in [0, 2*pi)");
  if (!(spec.jitter_sigma >= 0.0)) throw std::invalid_argument("jitter sigma must be non-negative");
}

SceneMesh apply_transform(const TransformSpec& spec, const SceneMesh& cloud) {
  validate(spec);
  SceneMesh out;
  out.scene_id = cloud.scene_id;
  out.faces = cloud.faces;
  out.vertices.resize(cloud.vertices.size());

  const double c = std::cos(spec.rotation_angle_z);
  const double s = std::sin(spec.rotation_angle_z);
  const double mx = spec.mirror_mask[0] ? -1.0 : 1.0;
  const double my = spec.mirror_mask[1] ? -1.0 : 1.0;
  const double mz = spec.mirror_mask[2] ? -1.0 : 1.0;
  for (std::size_t i = 0; i < cloud.vertices.size(); ++i) {
    const Vec3f& p = cloud.vertices[i];
    const double x = c * p.x() - s * p.y();
    const double y = s * p.x() + c * p.y();
    out.vertices[i] = Vec3f(static_cast<float>(mx * x), static_cast<float>(my * y),
                            static_cast<float>(mz * p.z()));
  }

  if (cloud.has_colors()) {
    out.colors.resize(cloud.colors.size());
    std::mt19937_64 rng(spec.rng_seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < cloud.colors.size(); ++i) {
      for (int ch = 0; ch < 3; ++ch) {
        double v = cloud.colors[i][ch];
        if (spec.jitter_sigma > 0.0) v += spec.jitter_sigma * noise(rng);
        out.colors[i][ch] = static_cast<float>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return out;
}

std::pair<TransformSpec, TransformSpec> sample_transform_pair(std::uint64_t seed, double jitter_sigma) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::bernoulli_distribution coin(0.5);
  auto draw = [&] {
    TransformSpec spec;
    spec.rotation_angle_z = angle(rng);
    // uniform_real_distribution may return b on some rounding paths.
    if (spec.rotation_angle_z >= 2.0 * std::numbers::pi) spec.rotation_angle_z = 0.0;
    for (auto& m : spec.mirror_mask) m = coin(rng);
    spec.jitter_sigma = jitter_sigma;
    spec.rng_seed = rng();
    return spec;
  };
  TransformSpec p = draw();
  TransformSpec q = draw();
  return {p, q};
}

SampleIndexSet fps(const std::vector<Vec3f>& points, std::size_t target, std::size_t start_index) {
  if (points.empty()) throw std::invalid_argument("fps: empty point cloud");
  if (target < 1) throw std::invalid_argument("fps: target must be at least 1");
  if (start_index >= points.size()) throw std::out_of_range("fps: start index out of range");

  const std::size_t n = points.size();
  const std::size_t m = std::min(target, n);
  SampleIndexSet result;
  result.target_size = target;
  result.indices.reserve(m);

  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  std::size_t current = start_index;
  for (std::size_t k = 0; k < m; ++k) {
    result.indices.push_back(current);
    min_dist[current] = -1.0;  // selected
    const Eigen::Vector3d c = points[current].cast<double>();
    std::size_t next = current;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (min_dist[i] < 0.0) continue;
      const double d = (points[i].cast<double>() - c).squaredNorm();
      if (d < min_dist[i]) min_dist[i] = d;
      if (min_dist[i] > best) {  // strict: ties go to the lowest index
        best = min_dist[i];
        next = i;
      }
    }
    current = next;
  }
  return result;
}

SampleIndexSet fps(const SceneMesh& cloud, std::size_t target, std::size_t start_index) {
  return fps(cloud.vertices, target, start_index);
}

SampleIndexSet fps_random_start(const SceneMesh& cloud, std::size_t target, std::uint64_t seed) {
  if (cloud.vertices.empty()) throw std::invalid_argument("fps: empty point cloud");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, cloud.vertices.size() - 1);
  return fps(cloud, target, pick(rng));
}

}  // namespace vibus
