#pragma once

#include "vibus/mesh_geometry.hpp"
#include "vibus/scene_data.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace vibus {

/// Default number of eigenvectors in the spectral embedding.
inline constexpr std::size_t kDefaultEmbeddingLength = 50;

struct AffinityConfig {
  double sigma = 1.0;
  /// When set, sigma is the mean of all N'^2 entries of the distance matrix
  /// (zero diagonal included).
  bool auto_sigma = true;
  std::size_t embedding_length = kDefaultEmbeddingLength;
};

/// exp(-D_ij / (2 sigma^2)) normalized as W^{-1/2} Z W^{-1/2}, W = diag of
/// the column sums of Z.
Eigen::MatrixXd build_normalized_affinity(const DistanceMatrix& d, const AffinityConfig& cfg);

/// sigma actually used by build_normalized_affinity for `d`.
double resolve_sigma(const DistanceMatrix& d, const AffinityConfig& cfg);

struct LanczosOptions {
  double tolerance = 1e-8;     // residual bound relative to ||A||
  std::size_t max_krylov = 0;  // 0: min(N, max(20k, 1000))
  std::uint64_t seed = 0x5eed;
};

struct EigenPairs {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // N x k, orthonormal columns
  Eigen::VectorXd residuals;
  std::size_t krylov_dim = 0;
};

class EigenSolverError : public std::runtime_error {
 public:
  EigenSolverError(const std::string& what, Eigen::VectorXd residuals)
      : std::runtime_error(what), residuals_(std::move(residuals)) {}
  const Eigen::VectorXd& residuals() const { return residuals_; }

 private:
  Eigen::VectorXd residuals_;
};

/// The k algebraically largest eigenpairs of a symmetric matrix by Lanczos
/// iteration with full reorthogonalization.
EigenPairs top_k_eigenvectors(const Eigen::MatrixXd& a, std::size_t k, const LanczosOptions& opts = {});

struct SpectralEmbedding {
  Eigen::MatrixXd rows;     // N' x k, unit rows (zero rows flagged)
  Eigen::VectorXd eigenvalues;  // descending
  std::vector<bool> zero_row;
};

SpectralEmbedding spectral_embed(const Eigen::MatrixXd& affinity, const AffinityConfig& cfg);

/// Rescales every row to unit length; rows below 1e-12 become zero and are
/// flagged.
void normalize_rows(Eigen::MatrixXd& rows, std::vector<bool>* zero_row = nullptr);

struct ClusterResult {
  std::vector<std::size_t> assignment;  // cluster id per embedded vertex
  std::vector<double> center_distance;  // distance to the assigned final center
  std::vector<std::size_t> seeds;       // unique seed vertices, one cluster each
  Eigen::MatrixXd centers;              // clusters x k
  std::size_t iterations = 0;
  std::vector<double> inertia_trace;    // within-cluster sum of squares per assignment
  std::size_t duplicate_seed_embeddings = 0;
};

inline constexpr std::size_t kMaxKMeansIterations = 300;

/// Lloyd iterations starting from the embedding rows of `seeds` as centers,
/// until the assignment stops changing or the iteration cap. Ties go to the
/// lowest cluster id; empty clusters keep their previous center.
ClusterResult seeded_kmeans(const SpectralEmbedding& emb, std::span<const std::size_t> seeds,
                            std::size_t max_iterations = kMaxKMeansIterations);

/// d_i = center_distance[origin_map[i]] for every original vertex.
std::vector<double> map_distances(const ClusterResult& result, const DecimatedMesh& dec);

struct SpectrumConfig {
  std::size_t decimation_target = kDefaultDecimationTarget;
  std::size_t normal_neighbors = kDefaultNormalNeighbors;
  HeatGeodesicConfig heat;
  CombinedDistanceConfig combined;
  AffinityConfig affinity;
};

struct SpectrumAnalysis {
  std::vector<double> distances;  // per original vertex
  std::size_t decimated_vertices = 0;
  bool decimation_target_reached = true;
  std::size_t clusters = 0;
  std::size_t embedding_length = 0;
  double heat_time = 0.0;
  bool cache_hit = false;
};

/// Decimate, combine geodesic and angular distances, embed, cluster from the
/// labeled vertices (mapped to their nearest decimated vertex), and map the
/// spectrum distances back to every original vertex. The embedding length is
/// capped at the decimated vertex count. With a `distance_cache` path, the
/// combined distance matrix is read from it when its header matches and
/// written to it otherwise.
SpectrumAnalysis analyze_spectrum(const SceneMesh& mesh, const SparseLabelSet& labels, const SpectrumConfig& cfg,
                                  const std::filesystem::path& distance_cache = {});

}  // namespace vibus
