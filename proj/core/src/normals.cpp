#include "vibus/mesh_geometry.hpp"

#include "spatial_index.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <stdexcept>
#include <string>

namespace vibus {

namespace {
// Second-largest over largest variance below this marks a colinear neighborhood.
constexpr double kColinearRatio = 1e-10;
}  // namespace

NormalField estimate_normals(const SceneMesh& mesh, std::size_t k) {
  const std::size_t n = mesh.num_vertices();
  if (n <= k)
    throw std::invalid_argument("normal estimation needs more than " + std::to_string(k) + " vertices, got " +
                                std::to_string(n));
  std::vector<Eigen::Vector3d> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = mesh.vertices[i].cast<double>();
  const detail::KdTree tree(pts);

  NormalField field;
  field.normals.resize(n, Eigen::Vector3d::Zero());
  field.degenerate.resize(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    // The vertex itself plus its k nearest neighbors.
    std::vector<std::size_t> hood = tree.knn(pts[i], k + 1);
    if (std::find(hood.begin(), hood.end(), i) == hood.end()) hood.back() = i;

    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (std::size_t j : hood) mean += pts[j];
    mean /= static_cast<double>(hood.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (std::size_t j : hood) {
      const Eigen::Vector3d d = pts[j] - mean;
      cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const Eigen::Vector3d ev = es.eigenvalues();  // ascending
    if (ev(2) <= 0.0 || ev(1) <= kColinearRatio * ev(2)) {
      field.degenerate[i] = true;
      continue;
    }
    field.normals[i] = es.eigenvectors().col(0).normalized();
  }
  return field;
}

}  // namespace vibus
