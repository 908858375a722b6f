#pragma once

#include "vibus/scene_data.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace vibus {

/// Default vertex budget of the decimation that precedes spectral analysis.
inline constexpr std::size_t kDefaultDecimationTarget = 8000;
/// Neighbors used (besides the vertex itself) for PCA normal estimation.
inline constexpr std::size_t kDefaultNormalNeighbors = 10;
/// Share of the geodesic term in the combined distance (geodesic:angular = 3:2).
inline constexpr double kDefaultGeodesicShare = 0.6;

struct DecimatedMesh {
  SceneMesh mesh;
  /// For every original vertex, the index of the nearest decimated vertex.
  std::vector<std::size_t> origin_map;
  /// False when no further valid collapse existed before reaching the target.
  bool target_reached = true;
};

/// Quadric-error-metric edge collapse (with boundary-preserving constraint
/// quadrics) until at most `target` vertices remain. Collapses that would
/// break manifoldness or flip a face are rejected.
DecimatedMesh decimate_qem(const SceneMesh& mesh, std::size_t target = kDefaultDecimationTarget);

/// One unit normal per vertex; sign carries no meaning.
struct NormalField {
  std::vector<Eigen::Vector3d> normals;
  std::vector<bool> degenerate;  // true: neighborhood was colinear, normal is zero
};

/// PCA plane fit over each vertex and its k Euclidean nearest neighbors.
NormalField estimate_normals(const SceneMesh& mesh, std::size_t k = kDefaultNormalNeighbors);

enum class DistanceKind : std::uint8_t { Geodesic = 0, Angular = 1, Combined = 2 };

struct DistanceMatrix {
  Eigen::MatrixXd values;  // symmetric, zero diagonal, non-negative
  DistanceKind kind = DistanceKind::Geodesic;

  Eigen::Index size() const { return values.rows(); }
};

struct HeatGeodesicConfig {
  /// t = time_scale * (mean edge length)^2
  double time_scale = 1.0;
};

/// All-pairs geodesic distances by the heat method: backward-Euler heat flow
/// from each source, normalized negative gradient, Poisson recovery, shift so
/// the source is at 0; the matrix is then symmetrized. Meshes with boundary
/// average the Neumann and Dirichlet heat solutions. Throws for disconnected
/// meshes.
DistanceMatrix heat_geodesics(const SceneMesh& mesh, const HeatGeodesicConfig& cfg = {});

/// Exact all-pairs shortest paths on the edge graph (edge weight = length).
DistanceMatrix dijkstra_geodesics(const SceneMesh& mesh);

/// 1 - |n1 . n2|. Throws if either input deviates from unit length by > 1e-4.
double angular_distance(const Eigen::Vector3d& n1, const Eigen::Vector3d& n2);

/// Pairwise angular distances; pairs involving a degenerate normal get 1.
DistanceMatrix angular_distance_matrix(const NormalField& normals);

struct CombinedDistanceConfig {
  double delta = kDefaultGeodesicShare;
};

/// delta * dg / mean(dg) + (1 - delta) * da / mean(da), means over the
/// off-diagonal entries.
DistanceMatrix combined_distance_matrix(const DistanceMatrix& dg, const DistanceMatrix& da,
                                        const CombinedDistanceConfig& cfg = {});

/// Number of connected components of the vertex-face graph (isolated vertices
/// count as components).
std::size_t connected_components(const SceneMesh& mesh);

/// Mean length over the unique edges of the faces.
double mean_edge_length(const SceneMesh& mesh);

/// Cache file: header (magic, N, kind, delta, t) + float32 row-major values.
struct DistanceCacheHeader {
  DistanceKind kind = DistanceKind::Combined;
  double delta = 0.0;
  double heat_time = 0.0;
};
void save_distance_cache(const DistanceMatrix& d, const DistanceCacheHeader& header,
                         const std::filesystem::path& path);
DistanceMatrix load_distance_cache(const std::filesystem::path& path, DistanceCacheHeader* header = nullptr);

}  // namespace vibus
