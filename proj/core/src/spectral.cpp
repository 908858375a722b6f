#include "vibus/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace vibus {

namespace {
constexpr double kZeroRow = 1e-12;
}  // namespace

double resolve_sigma(const DistanceMatrix& d, const AffinityConfig& cfg) {
  const auto n = d.values.rows();
  if (n == 0 || d.values.cols() != n) throw std::invalid_argument("affinity needs a non-empty square distance matrix");
  const double sigma = cfg.auto_sigma ? d.values.mean() : cfg.sigma;
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw std::invalid_argument("affinity sigma must be positive, got " + std::to_string(sigma));
  return sigma;
}

Eigen::MatrixXd build_normalized_affinity(const DistanceMatrix& d, const AffinityConfig& cfg) {
  const double sigma = resolve_sigma(d, cfg);
  const double scale = -1.0 / (2.0 * sigma * sigma);
  const auto n = d.values.rows();
  Eigen::MatrixXd z(n, n);
#pragma omp parallel for schedule(static)
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) z(i, j) = std::exp(scale * d.values(i, j));
  const Eigen::VectorXd colsum = z.colwise().sum().transpose();
  if ((colsum.array() <= 0.0).any()) throw std::invalid_argument("affinity has a zero column sum");
  const Eigen::VectorXd inv_sqrt = colsum.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd a = inv_sqrt.asDiagonal() * z * inv_sqrt.asDiagonal();
  // Exact symmetry regardless of rounding in the kernel of an asymmetric input.
  return 0.5 * (a + a.transpose());
}

void normalize_rows(Eigen::MatrixXd& rows, std::vector<bool>* zero_row) {
  if (zero_row) zero_row->assign(static_cast<std::size_t>(rows.rows()), false);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double norm = rows.row(i).norm();
    if (norm < kZeroRow) {
      rows.row(i).setZero();
      if (zero_row) (*zero_row)[static_cast<std::size_t>(i)] = true;
    } else {
      rows.row(i) /= norm;
    }
  }
}

SpectralEmbedding spectral_embed(const Eigen::MatrixXd& affinity, const AffinityConfig& cfg) {
  if (cfg.embedding_length < 1 || static_cast<Eigen::Index>(cfg.embedding_length) > affinity.rows())
    throw std::invalid_argument("embedding length " + std::to_string(cfg.embedding_length) +
                                " outside [1, " + std::to_string(affinity.rows()) + "]");
  const EigenPairs pairs = top_k_eigenvectors(affinity, cfg.embedding_length);
  SpectralEmbedding emb;
  emb.rows = pairs.vectors;
  emb.eigenvalues = pairs.values;
  normalize_rows(emb.rows, &emb.zero_row);
  return emb;
}

ClusterResult seeded_kmeans(const SpectralEmbedding& emb, std::span<const std::size_t> seeds,
                            std::size_t max_iterations) {
  const auto& x = emb.rows;
  const auto n = static_cast<std::size_t>(x.rows());
  if (seeds.empty()) throw std::invalid_argument("seeded k-means needs at least one seed");

  ClusterResult out;
  for (std::size_t s : seeds) {
    if (s >= n) throw std::out_of_range("seed vertex " + std::to_string(s) + " outside the embedding");
    if (std::find(out.seeds.begin(), out.seeds.end(), s) != out.seeds.end()) continue;
    const bool same_row = std::any_of(out.seeds.begin(), out.seeds.end(), [&](std::size_t t) {
      return x.row(static_cast<Eigen::Index>(t)) == x.row(static_cast<Eigen::Index>(s));
    });
    if (same_row) {
      ++out.duplicate_seed_embeddings;
      continue;
    }
    out.seeds.push_back(s);
  }

  const auto c = static_cast<Eigen::Index>(out.seeds.size());
  out.centers.resize(c, x.cols());
  for (Eigen::Index j = 0; j < c; ++j) out.centers.row(j) = x.row(static_cast<Eigen::Index>(out.seeds[j]));

  out.assignment.assign(n, 0);
  std::vector<double> sq(n, 0.0);
  auto assign = [&]() {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = x.row(static_cast<Eigen::Index>(i));
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < c; ++j) {
        const double dist = (row - out.centers.row(j)).squaredNorm();
        if (dist < best_d) {
          best_d = dist;
          best = static_cast<std::size_t>(j);
        }
      }
      if (best != out.assignment[i]) changed = true;
      out.assignment[i] = best;
      sq[i] = best_d;
      inertia += best_d;
    }
    out.inertia_trace.push_back(inertia);
    return changed;
  };

  assign();
  while (out.iterations < max_iterations) {
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(c, x.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(c), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(out.assignment[i])) += x.row(static_cast<Eigen::Index>(i));
      ++counts[out.assignment[i]];
    }
    for (Eigen::Index j = 0; j < c; ++j)
      if (counts[static_cast<std::size_t>(j)] > 0)
        out.centers.row(j) = sums.row(j) / static_cast<double>(counts[static_cast<std::size_t>(j)]);
    ++out.iterations;
    if (!assign()) break;
  }

  out.center_distance.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.center_distance[i] = std::sqrt(sq[i]);
  return out;
}

std::vector<double> map_distances(const ClusterResult& result, const DecimatedMesh& dec) {
  std::vector<double> out(dec.origin_map.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t j = dec.origin_map[i];
    if (j >= result.center_distance.size())
      throw std::out_of_range("origin map entry " + std::to_string(j) + " outside the clustered vertices");
    out[i] = result.center_distance[j];
  }
  return out;
}

namespace {

DistanceMatrix combined_distances(const SceneMesh& dec, const SpectrumConfig& cfg) {
  const std::size_t n = dec.num_vertices();
  const DistanceMatrix dg = heat_geodesics(dec, cfg.heat);
  const NormalField normals = estimate_normals(dec, std::min(cfg.normal_neighbors, n - 1));
  return combined_distance_matrix(dg, angular_distance_matrix(normals), cfg.combined);
}

}  // namespace

SpectrumAnalysis analyze_spectrum(const SceneMesh& mesh, const SparseLabelSet& labels, const SpectrumConfig& cfg,
                                  const std::filesystem::path& distance_cache) {
  if (labels.entries.empty()) throw std::invalid_argument("spectrum analysis needs at least one labeled vertex");
  const DecimatedMesh dec = decimate_qem(mesh, cfg.decimation_target);
  const std::size_t n_dec = dec.mesh.num_vertices();

  SpectrumAnalysis out;
  const double h = mean_edge_length(dec.mesh);
  out.heat_time = cfg.heat.time_scale * h * h;
  DistanceMatrix dc;
  if (!distance_cache.empty() && std::filesystem::exists(distance_cache)) {
    DistanceCacheHeader header;
    DistanceMatrix cached = load_distance_cache(distance_cache, &header);
    if (header.kind == DistanceKind::Combined && header.delta == cfg.combined.delta &&
        header.heat_time == out.heat_time && static_cast<std::size_t>(cached.size()) == n_dec) {
      dc = std::move(cached);
      out.cache_hit = true;
    }
  }
  if (!out.cache_hit) {
    dc = combined_distances(dec.mesh, cfg);
    // Cached matrices are float32; rounding here keeps cold and warm runs identical.
    dc.values = dc.values.cast<float>().cast<double>();
    if (!distance_cache.empty())
      save_distance_cache(dc, {DistanceKind::Combined, cfg.combined.delta, out.heat_time}, distance_cache);
  }

  AffinityConfig aff = cfg.affinity;
  aff.embedding_length = std::min(aff.embedding_length, n_dec);
  const SpectralEmbedding emb = spectral_embed(build_normalized_affinity(dc, aff), aff);

  std::vector<std::size_t> seeds;
  seeds.reserve(labels.entries.size());
  for (const auto& entry : labels.entries) {
    if (entry.first >= dec.origin_map.size()) throw std::out_of_range("labeled vertex outside the mesh");
    seeds.push_back(dec.origin_map[entry.first]);
  }
  const ClusterResult clusters = seeded_kmeans(emb, seeds);

  out.distances = map_distances(clusters, dec);
  out.decimated_vertices = n_dec;
  out.decimation_target_reached = dec.target_reached;
  out.clusters = clusters.seeds.size();
  out.embedding_length = aff.embedding_length;
  return out;
}

}  // namespace vibus
