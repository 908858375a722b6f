#include "vibus/spectral.hpp"
#include "vibus/synthetic.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <set>

using namespace vibus;
using vibus::testing::fresh_temp_dir;

namespace {

Eigen::MatrixXd random_symmetric(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = g(rng);
  return (a + a.transpose()) / 2.0;
}

DistanceMatrix random_distances(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> u(0.0, 3.0);
  Eigen::MatrixXd pts(n, 3);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) pts(i, c) = u(rng);
  DistanceMatrix d{Eigen::MatrixXd::Zero(n, n), DistanceKind::Combined};
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) d.values(i, j) = (pts.row(i) - pts.row(j)).norm();
  return d;
}

SpectralEmbedding embedding_from_rows(const Eigen::MatrixXd& rows) {
  SpectralEmbedding e;
  e.rows = rows;
  e.eigenvalues = Eigen::VectorXd::Ones(rows.cols());
  e.zero_row.assign(static_cast<std::size_t>(rows.rows()), false);
  return e;
}

double max_residual(const Eigen::MatrixXd& a, const EigenPairs& p) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < p.values.size(); ++j)
    worst = std::max(worst, (a * p.vectors.col(j) - p.values(j) * p.vectors.col(j)).norm());
  return worst;
}

}  // namespace

TEST(Affinity, ZeroDistancesHandExample) {
  const DistanceMatrix d{Eigen::MatrixXd::Zero(2, 2), DistanceKind::Combined};
  AffinityConfig cfg;
  cfg.auto_sigma = false;
  const Eigen::MatrixXd a = build_normalized_affinity(d, cfg);
  EXPECT_TRUE(a.isApprox(Eigen::MatrixXd::Constant(2, 2, 0.5), 1e-15));
}

TEST(Affinity, KernelAtTwoSigmaSquared) {
  AffinityConfig cfg;
  cfg.auto_sigma = false;
  cfg.sigma = 0.8;
  DistanceMatrix d{Eigen::MatrixXd::Zero(2, 2), DistanceKind::Combined};
  d.values(0, 1) = d.values(1, 0) = 2.0 * cfg.sigma * cfg.sigma;
  // Column sums are 1 + e^-1, so the normalized entry is e^-1 / (1 + e^-1).
  const double k = std::exp(-1.0);
  EXPECT_NEAR(k, 0.36788, 1e-5);
  EXPECT_NEAR(build_normalized_affinity(d, cfg)(0, 1), k / (1.0 + k), 1e-15);
}

TEST(Affinity, AutoSigmaIsMeanOfAllEntries) {
  std::mt19937_64 rng(1);
  const DistanceMatrix d = random_distances(rng, 12);
  EXPECT_NEAR(resolve_sigma(d, {}), d.values.sum() / 144.0, 1e-12);
  AffinityConfig fixed;
  fixed.auto_sigma = false;
  fixed.sigma = 2.5;
  EXPECT_EQ(resolve_sigma(d, fixed), 2.5);
}

TEST(AffinityProperty, SymmetricWithBoundedSpectrum) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd a = build_normalized_affinity(random_distances(rng, 30), {});
    EXPECT_LE((a - a.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    EXPECT_LE(es.eigenvalues().cwiseAbs().maxCoeff(), 1.0 + 1e-9);
  }
}

TEST(Affinity, InvalidSigmaRejected) {
  AffinityConfig cfg;
  cfg.auto_sigma = false;
  cfg.sigma = 0.0;
  EXPECT_THROW(build_normalized_affinity({Eigen::MatrixXd::Zero(2, 2), DistanceKind::Combined}, cfg),
               std::invalid_argument);
}

TEST(Lanczos, DiagonalMatrix) {
  const Eigen::MatrixXd a = Eigen::Vector3d(3, 2, 1).asDiagonal();
  const EigenPairs p = top_k_eigenvectors(a, 2);
  EXPECT_NEAR(p.values(0), 3.0, 1e-12);
  EXPECT_NEAR(p.values(1), 2.0, 1e-12);
  EXPECT_NEAR(std::abs(p.vectors(0, 0)), 1.0, 1e-10);
  EXPECT_NEAR(std::abs(p.vectors(1, 1)), 1.0, 1e-10);
}

TEST(Lanczos, IdentityHasOrthonormalPair) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(10, 10);
  const EigenPairs p = top_k_eigenvectors(a, 2);
  EXPECT_NEAR(p.values(0), 1.0, 1e-12);
  EXPECT_NEAR(p.values(1), 1.0, 1e-12);
  EXPECT_TRUE((p.vectors.transpose() * p.vectors).isApprox(Eigen::MatrixXd::Identity(2, 2), 1e-10));
  EXPECT_LT(max_residual(a, p), 1e-10);
}

TEST(LanczosProperty, MatchesDenseSolver) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 5; ++t) {
    const Eigen::MatrixXd a = random_symmetric(rng, 200);
    const EigenPairs p = top_k_eigenvectors(a, 50);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    for (Eigen::Index j = 0; j < 50; ++j) EXPECT_NEAR(p.values(j), es.eigenvalues()(199 - j), 1e-8);
    EXPECT_TRUE((p.vectors.transpose() * p.vectors).isApprox(Eigen::MatrixXd::Identity(50, 50), 1e-8));
    EXPECT_LT(max_residual(a, p), 1e-6);
  }
}

TEST(Lanczos, RepeatedTopEigenvalueFound) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1.0, 0.8);
  Eigen::VectorXd spectrum(120);
  for (Eigen::Index i = 0; i < 120; ++i) spectrum(i) = u(rng);
  spectrum(7) = spectrum(50) = spectrum(90) = 1.0;
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(random_symmetric(rng, 120)).householderQ();
  const Eigen::MatrixXd a = q * spectrum.asDiagonal() * q.transpose();
  const EigenPairs p = top_k_eigenvectors((a + a.transpose()) / 2.0, 5);
  std::sort(spectrum.data(), spectrum.data() + 120, std::greater<>());
  for (Eigen::Index j = 0; j < 5; ++j) EXPECT_NEAR(p.values(j), spectrum(j), 1e-8);
  EXPECT_TRUE((p.vectors.transpose() * p.vectors).isApprox(Eigen::MatrixXd::Identity(5, 5), 1e-8));
}

TEST(Lanczos, InvalidRequestsRejected) {
  EXPECT_THROW(top_k_eigenvectors(Eigen::MatrixXd::Identity(3, 3), 4), std::invalid_argument);
  Eigen::MatrixXd asym = Eigen::MatrixXd::Identity(3, 3);
  asym(0, 1) = 1.0;
  EXPECT_THROW(top_k_eigenvectors(asym, 1), std::invalid_argument);
}

TEST(Lanczos, TinyKrylovCapReportsResiduals) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd a = random_symmetric(rng, 100);
  LanczosOptions opts;
  opts.max_krylov = 6;
  try {
    top_k_eigenvectors(a, 5, opts);
    FAIL() << "expected EigenSolverError";
  } catch (const EigenSolverError& e) {
    EXPECT_EQ(e.residuals().size(), 5);
  }
}

TEST(SpectralEmbed, TwoBlocksCollapseToTwoRows) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(7, 7);
  a.topLeftCorner(3, 3).setConstant(1.0 / 3.0);
  a.bottomRightCorner(4, 4).setConstant(1.0 / 4.0);
  AffinityConfig cfg;
  cfg.embedding_length = 2;
  const SpectralEmbedding e = spectral_embed(a, cfg);
  for (int i = 1; i < 3; ++i) EXPECT_LT((e.rows.row(i) - e.rows.row(0)).norm(), 1e-8);
  for (int i = 4; i < 7; ++i) EXPECT_LT((e.rows.row(i) - e.rows.row(3)).norm(), 1e-8);
  EXPECT_NEAR(std::abs(e.rows.row(0).dot(e.rows.row(3))), 0.0, 1e-8);
}

TEST(SpectralEmbed, FullLengthOnIdentity) {
  AffinityConfig cfg;
  cfg.embedding_length = 6;
  const SpectralEmbedding e = spectral_embed(Eigen::MatrixXd::Identity(6, 6), cfg);
  for (Eigen::Index i = 0; i < 6; ++i) EXPECT_NEAR(e.rows.row(i).norm(), 1.0, 1e-10);
  EXPECT_TRUE((e.rows * e.rows.transpose()).isApprox(Eigen::MatrixXd::Identity(6, 6), 1e-8));
}

TEST(SpectralEmbed, LengthAboveSizeRejected) {
  AffinityConfig cfg;
  cfg.embedding_length = 9;
  EXPECT_THROW(spectral_embed(Eigen::MatrixXd::Identity(4, 4), cfg), std::invalid_argument);
}

TEST(NormalizeRows, IdempotentAndFlagsZeros) {
  Eigen::MatrixXd r(3, 2);
  r << 3, 4, 0, 0, -1, 1;
  std::vector<bool> zero;
  normalize_rows(r, &zero);
  EXPECT_EQ(zero, (std::vector<bool>{false, true, false}));
  EXPECT_NEAR(r(0, 0), 0.6, 1e-15);
  const Eigen::MatrixXd once = r;
  normalize_rows(r);
  EXPECT_TRUE(r.isApprox(once, 1e-15));
}

TEST(SeededKMeans, TwoPairs) {
  Eigen::MatrixXd rows(4, 2);
  rows << 1, 0, 1, 0, 0, 1, 0, 1;
  const std::vector<std::size_t> seeds{0, 2};
  const ClusterResult r = seeded_kmeans(embedding_from_rows(rows), seeds);
  EXPECT_EQ(r.assignment, (std::vector<std::size_t>{0, 0, 1, 1}));
  for (double d : r.center_distance) EXPECT_EQ(d, 0.0);
}

TEST(SeededKMeans, SingleSeedUsesCentroid) {
  std::mt19937_64 rng(5);
  Eigen::MatrixXd rows = Eigen::MatrixXd::Random(20, 3);
  const std::vector<std::size_t> seeds{4};
  const ClusterResult r = seeded_kmeans(embedding_from_rows(rows), seeds);
  const Eigen::RowVectorXd centroid = rows.colwise().mean();
  for (Eigen::Index i = 0; i < 20; ++i) {
    EXPECT_EQ(r.assignment[std::size_t(i)], 0u);
    EXPECT_NEAR(r.center_distance[std::size_t(i)], (rows.row(i) - centroid).norm(), 1e-12);
  }
}

TEST(SeededKMeans, SeparatedBlobsRecovered) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 0.05);
  const Eigen::Matrix3d centers = Eigen::Matrix3d::Identity();
  Eigen::MatrixXd rows(150, 3);
  for (int i = 0; i < 150; ++i)
    for (int c = 0; c < 3; ++c) rows(i, c) = centers(i / 50, c) + g(rng);
  const std::vector<std::size_t> seeds{7, 60, 130};
  const ClusterResult r = seeded_kmeans(embedding_from_rows(rows), seeds);
  for (int i = 0; i < 150; ++i) EXPECT_EQ(r.assignment[std::size_t(i)], std::size_t(i / 50));
}

TEST(SeededKMeans, DuplicateSeedsCollapse) {
  Eigen::MatrixXd rows(4, 2);
  rows << 1, 0, 1, 0, 0, 1, 0, 1;
  const std::vector<std::size_t> seeds{0, 1, 2, 2};
  const ClusterResult r = seeded_kmeans(embedding_from_rows(rows), seeds);
  EXPECT_EQ(r.centers.rows(), 2);
  EXPECT_EQ(r.duplicate_seed_embeddings, 1u);
}

TEST(SeededKMeansProperty, InertiaNeverIncreases) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd rows = Eigen::MatrixXd::Random(80, 4);
    std::vector<std::size_t> seeds;
    for (int s = 0; s < 6; ++s) seeds.push_back(rng() % 80);
    const ClusterResult r = seeded_kmeans(embedding_from_rows(rows), seeds);
    for (std::size_t k = 1; k < r.inertia_trace.size(); ++k)
      EXPECT_LE(r.inertia_trace[k], r.inertia_trace[k - 1] + 1e-12);
  }
}

TEST(SeededKMeansProperty, PermutationEquivariant) {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd rows = Eigen::MatrixXd::Random(60, 3);
  std::vector<std::size_t> perm(60);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd permuted(60, 3);
  for (std::size_t i = 0; i < 60; ++i) permuted.row(Eigen::Index(i)) = rows.row(Eigen::Index(perm[i]));
  std::vector<std::size_t> inverse(60);
  for (std::size_t i = 0; i < 60; ++i) inverse[perm[i]] = i;
  const std::vector<std::size_t> seeds{3, 17, 42};
  const std::vector<std::size_t> moved{inverse[3], inverse[17], inverse[42]};
  const ClusterResult a = seeded_kmeans(embedding_from_rows(rows), seeds);
  const ClusterResult b = seeded_kmeans(embedding_from_rows(permuted), moved);
  for (std::size_t i = 0; i < 60; ++i) {
    EXPECT_EQ(b.assignment[i], a.assignment[perm[i]]);
    EXPECT_NEAR(b.center_distance[i], a.center_distance[perm[i]], 1e-12);
  }
}

TEST(SeededKMeans, InvalidSeedsRejected) {
  const SpectralEmbedding e = embedding_from_rows(Eigen::MatrixXd::Random(5, 2));
  EXPECT_THROW(seeded_kmeans(e, std::vector<std::size_t>{}), std::invalid_argument);
  EXPECT_THROW(seeded_kmeans(e, std::vector<std::size_t>{9}), std::out_of_range);
}

TEST(MapDistances, IdentityAndSharedVertices) {
  ClusterResult r;
  r.center_distance = {0.5, 1.5, 2.5};
  DecimatedMesh dec;
  dec.origin_map = {0, 1, 2};
  EXPECT_EQ(map_distances(r, dec), r.center_distance);
  dec.origin_map = {2, 2, 0, 1};
  const auto d = map_distances(r, dec);
  EXPECT_EQ(d[0], d[1]);
  EXPECT_EQ(d[2], 0.5);
}

TEST(MapDistancesProperty, ValuesComeFromDecimatedVertices) {
  const SceneMesh m = make_random_mesh(9, 12, 12);
  const DecimatedMesh dec = decimate_qem(m, 50);
  ClusterResult r;
  std::mt19937_64 rng(10);
  for (std::size_t i = 0; i < dec.mesh.num_vertices(); ++i)
    r.center_distance.push_back(std::uniform_real_distribution<double>(0, 1)(rng));
  const std::set<double> allowed(r.center_distance.begin(), r.center_distance.end());
  for (double v : map_distances(r, dec)) EXPECT_TRUE(allowed.count(v));
}

TEST(AnalyzeSpectrum, ThreePlaneSceneWithCache) {
  const LabeledScene scene = make_three_plane_scene(3, 8);
  const SparseLabelSet labels = sample_sparse_labels(scene.labels, 10, 4, 3);
  SpectrumConfig cfg;
  const auto dir = fresh_temp_dir("spectrum_cache");
  const SpectrumAnalysis cold = analyze_spectrum(scene.mesh, labels, cfg, dir / "d.bin");
  EXPECT_FALSE(cold.cache_hit);
  EXPECT_EQ(cold.distances.size(), scene.mesh.num_vertices());
  EXPECT_EQ(cold.embedding_length, std::min<std::size_t>(50, cold.decimated_vertices));
  EXPECT_LE(cold.clusters, 10u);
  for (double d : cold.distances) EXPECT_GE(d, 0.0);
  const SpectrumAnalysis warm = analyze_spectrum(scene.mesh, labels, cfg, dir / "d.bin");
  EXPECT_TRUE(warm.cache_hit);
  EXPECT_EQ(warm.distances, cold.distances);
}

TEST(AnalyzeSpectrum, DecimatesLargeMeshes) {
  const LabeledScene scene = make_three_plane_scene(5, 12);
  SpectrumConfig cfg;
  cfg.decimation_target = 150;
  const SpectrumAnalysis a = analyze_spectrum(scene.mesh, sample_sparse_labels(scene.labels, 6, 1, 3), cfg);
  EXPECT_LE(a.decimated_vertices, 150u);
  EXPECT_EQ(a.distances.size(), scene.mesh.num_vertices());
}

TEST(AnalyzeSpectrum, NoLabelsRejected) {
  const LabeledScene scene = make_three_plane_scene(6, 4);
  EXPECT_THROW(analyze_spectrum(scene.mesh, SparseLabelSet{}, {}), std::invalid_argument);
}
