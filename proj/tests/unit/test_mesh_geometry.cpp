#include "vibus/mesh_geometry.hpp"
#include "vibus/synthetic.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>

using namespace vibus;
using vibus::testing::fresh_temp_dir;
using vibus::testing::pearson;

namespace {

std::map<std::pair<int, int>, int> edge_face_counts(const SceneMesh& m) {
  std::map<std::pair<int, int>, int> counts;
  for (const Face& f : m.faces)
    for (int k = 0; k < 3; ++k) {
      const int a = f[k], b = f[(k + 1) % 3];
      ++counts[{std::min(a, b), std::max(a, b)}];
    }
  return counts;
}

// Closest-point distance from p to triangle (a, b, c).
double point_triangle_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                               const Eigen::Vector3d& c) {
  const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return (p - a).norm();
  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return (p - b).norm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return (p - (a + ab * (d1 / (d1 - d3)))).norm();
  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return (p - c).norm();
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return (p - (a + ac * (d2 / (d2 - d6)))).norm();
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
    return (p - (b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6))))).norm();
  const double denom = 1.0 / (va + vb + vc);
  return (p - (a + ab * (vb * denom) + ac * (vc * denom))).norm();
}

std::vector<double> off_diagonal(const Eigen::MatrixXd& m) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (i != j) out.push_back(m(i, j));
  return out;
}

SceneMesh path_mesh() {
  SceneMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {1, 1, 0}};
  m.faces = {{0, 1, 3}, {1, 2, 3}};
  return m;
}

}  // namespace

TEST(Decimate, TargetAboveSizeIsIdentity) {
  const SceneMesh m = make_grid(5, 5);
  const DecimatedMesh d = decimate_qem(m, 100);
  EXPECT_EQ(d.mesh.vertices, m.vertices);
  EXPECT_EQ(d.mesh.faces, m.faces);
  for (std::size_t i = 0; i < m.num_vertices(); ++i) EXPECT_EQ(d.origin_map[i], i);
}

TEST(Decimate, IcosahedronKeepsSphereTopology) {
  const DecimatedMesh d = decimate_qem(make_icosahedron(), 8);
  EXPECT_LE(d.mesh.num_vertices(), 8u);
  const auto edges = edge_face_counts(d.mesh);
  const long euler = long(d.mesh.num_vertices()) - long(edges.size()) + long(d.mesh.num_faces());
  EXPECT_EQ(euler, 2);
  for (const auto& [e, count] : edges) EXPECT_EQ(count, 2) << "edge " << e.first << "-" << e.second;
  EXPECT_NO_THROW(validate(d.mesh));
}

TEST(Decimate, FlatGridStaysOnOriginalSurface) {
  const SceneMesh m = make_grid(10, 10, 1.0);
  const DecimatedMesh d = decimate_qem(m, 20);
  EXPECT_LE(d.mesh.num_vertices(), 20u);
  for (const Vec3f& v : m.vertices) {
    double best = std::numeric_limits<double>::infinity();
    for (const Face& f : d.mesh.faces)
      best = std::min(best, point_triangle_distance(v.cast<double>(), d.mesh.vertices[f[0]].cast<double>(),
                                                    d.mesh.vertices[f[1]].cast<double>(),
                                                    d.mesh.vertices[f[2]].cast<double>()));
    EXPECT_LT(best, 1e-6);
  }
}

TEST(DecimateProperty, NeverGrowsAndOriginMapTotal) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SceneMesh m = make_random_mesh(seed, 12, 12);
    const DecimatedMesh d = decimate_qem(m, 40 + seed * 10);
    EXPECT_LE(d.mesh.num_vertices(), m.num_vertices());
    ASSERT_EQ(d.origin_map.size(), m.num_vertices());
    for (std::size_t o : d.origin_map) EXPECT_LT(o, d.mesh.num_vertices());
    EXPECT_NO_THROW(validate(d.mesh));
  }
}

TEST(Decimate, InvalidInputsRejected) {
  EXPECT_THROW(decimate_qem(make_grid(3, 3), 3), std::invalid_argument);
  SceneMesh cloud = make_grid(3, 3);
  cloud.faces.clear();
  EXPECT_THROW(decimate_qem(cloud, 4), std::invalid_argument);
}

TEST(Normals, PlaneGivesZAxis) {
  const NormalField n = estimate_normals(make_random_mesh(1, 8, 8, 0.3), 10);
  SceneMesh flat = make_grid(8, 8);
  const NormalField f = estimate_normals(flat, 10);
  for (const auto& v : f.normals) EXPECT_NEAR(std::abs(v.z()), 1.0, 1e-9);
  EXPECT_EQ(n.normals.size(), 64u);
}

TEST(Normals, IcosphereNormalsAreRadial) {
  const SceneMesh s = make_icosphere(4);
  ASSERT_EQ(s.num_vertices(), 2562u);
  const NormalField n = estimate_normals(s);
  for (std::size_t i = 0; i < s.num_vertices(); ++i)
    EXPECT_GT(std::abs(n.normals[i].dot(s.vertices[i].cast<double>().normalized())), 0.99);
}

TEST(Normals, ColinearNeighborhoodIsDegenerate) {
  SceneMesh line;
  for (int i = 0; i < 11; ++i) line.vertices.emplace_back(float(i), 0.0f, 0.0f);
  const NormalField n = estimate_normals(line, 10);
  for (std::size_t i = 0; i < 11; ++i) {
    EXPECT_TRUE(n.degenerate[i]);
    EXPECT_TRUE(n.normals[i].isZero());
  }
}

TEST(Normals, TooFewVerticesFails) { EXPECT_THROW(estimate_normals(make_grid(2, 2), 10), std::invalid_argument); }

TEST(NormalsProperty, RotationEquivariant) {
  const SceneMesh m = make_random_mesh(2, 9, 9, 0.3);
  const Eigen::Matrix3d r = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  SceneMesh rotated = m;
  for (auto& v : rotated.vertices) v = (r * v.cast<double>()).cast<float>();
  const NormalField a = estimate_normals(m), b = estimate_normals(rotated);
  for (std::size_t i = 0; i < m.num_vertices(); ++i) {
    const Eigen::Vector3d expected = r * a.normals[i];
    EXPECT_NEAR(std::abs(expected.dot(b.normals[i])), 1.0, 1e-6);
  }
}

TEST(HeatGeodesics, ZeroDiagonalSymmetricNonNegative) {
  const DistanceMatrix d = heat_geodesics(make_random_mesh(3, 10, 10));
  EXPECT_EQ(d.kind, DistanceKind::Geodesic);
  EXPECT_TRUE(d.values.diagonal().isZero());
  EXPECT_TRUE(d.values.isApprox(d.values.transpose(), 1e-15));
  EXPECT_GE(d.values.minCoeff(), 0.0);
}

TEST(HeatGeodesics, IcosphereAntipodeNearPi) {
  const SceneMesh s = make_icosphere(3);
  const DistanceMatrix d = heat_geodesics(s);
  for (std::size_t src : {0u, 17u, 200u}) {
    std::size_t anti = 0;
    for (std::size_t i = 0; i < s.num_vertices(); ++i)
      if ((s.vertices[i] + s.vertices[src]).norm() < (s.vertices[anti] + s.vertices[src]).norm()) anti = i;
    EXPECT_NEAR(d.values(Eigen::Index(src), Eigen::Index(anti)), std::numbers::pi, 0.05 * std::numbers::pi);
  }
}

TEST(HeatGeodesics, CorrelatesWithDijkstra) {
  for (const SceneMesh& m : {make_icosphere(2), make_random_mesh(4, 12, 12), make_random_mesh(5, 20, 20, 0.4)}) {
    const DistanceMatrix heat = heat_geodesics(m);
    const DistanceMatrix graph = dijkstra_geodesics(m);
    EXPECT_GT(pearson(off_diagonal(heat.values), off_diagonal(graph.values)), 0.99);
  }
}

TEST(HeatGeodesics, CloserToEuclideanThanEdgePathsOnGrid) {
  const SceneMesh g = make_grid(15, 15, 0.5);
  const DistanceMatrix heat = heat_geodesics(g), graph = dijkstra_geodesics(g);
  double heat_err = 0.0, graph_err = 0.0;
  for (std::size_t i = 0; i < g.num_vertices(); ++i)
    for (std::size_t j = i + 1; j < g.num_vertices(); ++j) {
      const double e = (g.vertices[i] - g.vertices[j]).cast<double>().norm();
      heat_err += std::abs(heat.values(Eigen::Index(i), Eigen::Index(j)) - e) / e;
      graph_err += std::abs(graph.values(Eigen::Index(i), Eigen::Index(j)) - e) / e;
    }
  EXPECT_LT(heat_err, graph_err);
}

TEST(HeatGeodesics, DisconnectedMeshFails) {
  SceneMesh m = make_grid(3, 3);
  SceneMesh other = make_grid(3, 3);
  const auto offset = static_cast<std::int32_t>(m.num_vertices());
  for (auto v : other.vertices) m.vertices.push_back(v + Vec3f(10, 0, 0));
  for (auto f : other.faces) m.faces.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
  EXPECT_EQ(connected_components(m), 2u);
  EXPECT_THROW(heat_geodesics(m), std::invalid_argument);
}

TEST(Dijkstra, PathMesh) {
  const DistanceMatrix d = dijkstra_geodesics(path_mesh());
  EXPECT_DOUBLE_EQ(d.values(0, 2), 2.0);
  EXPECT_DOUBLE_EQ(d.values(0, 3), std::sqrt(2.0));
}

TEST(DijkstraProperty, TriangleInequality) {
  const DistanceMatrix d = dijkstra_geodesics(make_random_mesh(5, 7, 7));
  const Eigen::Index n = d.size();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index k = 0; k < n; ++k) ASSERT_LE(d.values(i, j), d.values(i, k) + d.values(k, j) + 1e-12);
}

TEST(AngularDistance, HandValues) {
  const Eigen::Vector3d z(0, 0, 1), x(1, 0, 0);
  EXPECT_DOUBLE_EQ(angular_distance(z, z), 0.0);
  EXPECT_DOUBLE_EQ(angular_distance(z, -z), 0.0);
  EXPECT_DOUBLE_EQ(angular_distance(z, x), 1.0);
  const Eigen::Vector3d d45 = Eigen::Vector3d(1, 0, 1).normalized();
  EXPECT_NEAR(angular_distance(z, d45), 1.0 - std::sqrt(2.0) / 2.0, 1e-12);
  EXPECT_THROW(angular_distance(z, Eigen::Vector3d(0, 0, 2)), std::invalid_argument);
}

TEST(AngularDistance, DegenerateNormalsGetOne) {
  NormalField f;
  f.normals = {Eigen::Vector3d(0, 0, 1), Eigen::Vector3d::Zero()};
  f.degenerate = {false, true};
  const DistanceMatrix d = angular_distance_matrix(f);
  EXPECT_EQ(d.values(0, 1), 1.0);
  EXPECT_EQ(d.values(1, 1), 0.0);
}

TEST(CombinedDistance, ExtremeDeltas) {
  const SceneMesh m = make_random_mesh(6, 6, 6);
  const DistanceMatrix dg = dijkstra_geodesics(m);
  const DistanceMatrix da = angular_distance_matrix(estimate_normals(m));
  const auto mean_off = [](const Eigen::MatrixXd& v) {
    return v.sum() / double(v.rows() * (v.rows() - 1));
  };
  EXPECT_TRUE(combined_distance_matrix(dg, da, {1.0}).values.isApprox(dg.values / mean_off(dg.values), 1e-12));
  EXPECT_TRUE(combined_distance_matrix(dg, da, {0.0}).values.isApprox(da.values / mean_off(da.values), 1e-12));
  EXPECT_EQ(combined_distance_matrix(dg, da).kind, DistanceKind::Combined);
}

TEST(CombinedDistance, ConstantOffDiagonalGivesOne) {
  DistanceMatrix dg{Eigen::MatrixXd::Constant(4, 4, 3.0), DistanceKind::Geodesic};
  DistanceMatrix da{Eigen::MatrixXd::Constant(4, 4, 0.2), DistanceKind::Angular};
  dg.values.diagonal().setZero();
  da.values.diagonal().setZero();
  for (double delta : {0.0, 0.3, 0.6, 1.0}) {
    const DistanceMatrix c = combined_distance_matrix(dg, da, {delta});
    for (const double v : off_diagonal(c.values)) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(CombinedDistanceProperty, InvariantUnderUniformScaling) {
  const SceneMesh m = make_random_mesh(7, 8, 8);
  SceneMesh scaled = m;
  for (auto& v : scaled.vertices) v *= 3.5f;
  auto combined = [](const SceneMesh& s) {
    return combined_distance_matrix(heat_geodesics(s), angular_distance_matrix(estimate_normals(s))).values;
  };
  EXPECT_TRUE(combined(m).isApprox(combined(scaled), 1e-5));
}

TEST(CombinedDistance, InvalidInputsRejected) {
  DistanceMatrix dg{Eigen::MatrixXd::Zero(3, 3), DistanceKind::Geodesic};
  DistanceMatrix da{Eigen::MatrixXd::Ones(3, 3), DistanceKind::Angular};
  EXPECT_THROW(combined_distance_matrix(dg, da), std::invalid_argument);
  EXPECT_THROW(combined_distance_matrix(da, dg), std::invalid_argument);
  EXPECT_THROW(combined_distance_matrix(dg, da, {1.5}), std::invalid_argument);
}

TEST(MeshUtilities, EdgeLengthAndComponents) {
  const SceneMesh g = make_grid(4, 4, 2.0);
  EXPECT_EQ(connected_components(g), 1u);
  const double diag = 2.0 * std::sqrt(2.0);
  // 24 axis edges of length 2 and 9 diagonals.
  EXPECT_NEAR(mean_edge_length(g), (24 * 2.0 + 9 * diag) / 33.0, 1e-6);
  SceneMesh isolated = g;
  isolated.vertices.emplace_back(9.0f, 9.0f, 9.0f);
  EXPECT_EQ(connected_components(isolated), 2u);
}

TEST(DistanceCache, RoundTripAtFloatPrecision) {
  const auto dir = fresh_temp_dir("cache");
  const DistanceMatrix d = dijkstra_geodesics(make_random_mesh(8, 6, 6));
  save_distance_cache(d, {DistanceKind::Geodesic, 0.6, 0.25}, dir / "d.bin");
  DistanceCacheHeader h;
  const DistanceMatrix back = load_distance_cache(dir / "d.bin", &h);
  EXPECT_EQ(h.kind, DistanceKind::Geodesic);
  EXPECT_EQ(h.delta, 0.6);
  EXPECT_EQ(h.heat_time, 0.25);
  EXPECT_TRUE(back.values.isApprox(d.values.cast<float>().cast<double>(), 0.0));
}

TEST(DistanceCache, GarbageRejected) {
  const auto dir = fresh_temp_dir("cache_bad");
  std::ofstream(dir / "x.bin") << "nonsense";
  EXPECT_THROW(load_distance_cache(dir / "x.bin"), std::runtime_error);
}
