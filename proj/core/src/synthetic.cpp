#include "vibus/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <tuple>

namespace vibus {

namespace {

std::int32_t to_index(std::size_t i) { return static_cast<std::int32_t>(i); }

}  // namespace

SceneMesh make_icosahedron() {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  const std::array<Eigen::Vector3d, 12> v{{{-1, t, 0},
                                           {1, t, 0},
                                           {-1, -t, 0},
                                           {1, -t, 0},
                                           {0, -1, t},
                                           {0, 1, t},
                                           {0, -1, -t},
                                           {0, 1, -t},
                                           {t, 0, -1},
                                           {t, 0, 1},
                                           {-t, 0, -1},
                                           {-t, 0, 1}}};
  SceneMesh mesh;
  mesh.scene_id = "icosahedron";
  for (const auto& p : v) mesh.vertices.push_back(p.normalized().cast<float>());
  mesh.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                {3, 8, 9},   {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  return mesh;
}

SceneMesh make_icosphere(int subdivisions, double radius) {
  if (subdivisions < 0) throw std::invalid_argument("subdivision count must be non-negative");
  if (!(radius > 0.0)) throw std::invalid_argument("sphere radius must be positive");
  const SceneMesh base = make_icosahedron();
  std::vector<Eigen::Vector3d> pts;
  for (const auto& p : base.vertices) pts.push_back(p.cast<double>());
  std::vector<Face> faces = base.faces;
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::int32_t, std::int32_t>, std::int32_t> midpoint;
    auto mid = [&](std::int32_t a, std::int32_t b) {
      const auto key = std::minmax(a, b);
      const auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      pts.push_back((pts[a] + pts[b]).normalized());
      const auto id = to_index(pts.size() - 1);
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(faces.size() * 4);
    for (const Face& f : faces) {
      const auto ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  SceneMesh mesh;
  mesh.scene_id = "icosphere";
  for (const auto& p : pts) mesh.vertices.push_back((radius * p).cast<float>());
  mesh.faces = std::move(faces);
  return mesh;
}

SceneMesh make_grid(int nx, int ny, double spacing) {
  if (nx < 2 || ny < 2) throw std::invalid_argument("grid needs at least 2 x 2 vertices");
  SceneMesh mesh;
  mesh.scene_id = "grid";
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      mesh.vertices.emplace_back(static_cast<float>(i * spacing), static_cast<float>(j * spacing), 0.0f);
  for (int j = 0; j + 1 < ny; ++j)
    for (int i = 0; i + 1 < nx; ++i) {
      const std::int32_t a = j * nx + i, b = a + 1, c = a + nx, d = c + 1;
      mesh.faces.push_back({a, b, d});
      mesh.faces.push_back({a, d, c});
    }
  return mesh;
}

SceneMesh make_random_mesh(std::uint64_t seed, int nx, int ny, double jitter) {
  SceneMesh mesh = make_grid(nx, ny, 1.0);
  mesh.scene_id = "random";
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-jitter, jitter);
  std::uniform_real_distribution<double> h(0.0, 1.0);
  for (auto& v : mesh.vertices) {
    v.x() += static_cast<float>(u(rng));
    v.y() += static_cast<float>(u(rng));
    v.z() = static_cast<float>(0.5 * h(rng));
  }
  mesh.colors.resize(mesh.vertices.size());
  std::uniform_real_distribution<double> c(0.0, 255.0);
  for (auto& col : mesh.colors)
    col = Vec3f(static_cast<float>(c(rng)), static_cast<float>(c(rng)), static_cast<float>(c(rng)));
  return mesh;
}

LabeledScene make_three_plane_scene(std::uint64_t seed, int resolution) {
  if (resolution < 2) throw std::invalid_argument("three-plane scene needs a resolution of at least 2");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> extent(2.0, 4.0);
  const double lx = extent(rng), ly = extent(rng), lz = 0.5 * extent(rng);
  const std::array<Eigen::Vector3d, 3> tint{{{140, 110, 80}, {200, 195, 185}, {120, 150, 190}}};
  std::normal_distribution<double> noise(0.0, 18.0);

  LabeledScene scene;
  SceneMesh& mesh = scene.mesh;
  mesh.scene_id = "three_plane_" + std::to_string(seed);
  std::map<std::tuple<long, long, long>, std::int32_t> index;
  const double q = 1e6;
  auto vertex = [&](const Eigen::Vector3d& p, int label) {
    const auto key = std::make_tuple(std::lround(p.x() * q), std::lround(p.y() * q), std::lround(p.z() * q));
    const auto it = index.find(key);
    if (it != index.end()) return it->second;
    const auto id = to_index(mesh.vertices.size());
    index.emplace(key, id);
    mesh.vertices.push_back(p.cast<float>());
    Eigen::Vector3d c = tint[static_cast<std::size_t>(label)];
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(c[k] + noise(rng), 0.0, 255.0);
    mesh.colors.push_back(c.cast<float>());
    scene.labels.push_back(label);
    return id;
  };
  // Each plane spans parameters (s, t) in [0,1]^2; the floor is emitted first
  // so shared seam vertices keep the floor label, then wall x = 0.
  auto plane = [&](int label, auto&& at) {
    const int n = resolution;
    std::vector<std::int32_t> ids((n + 1) * (n + 1));
    for (int j = 0; j <= n; ++j)
      for (int i = 0; i <= n; ++i)
        ids[j * (n + 1) + i] = vertex(at(static_cast<double>(i) / n, static_cast<double>(j) / n), label);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const auto a = ids[j * (n + 1) + i], b = ids[j * (n + 1) + i + 1];
        const auto c = ids[(j + 1) * (n + 1) + i], d = ids[(j + 1) * (n + 1) + i + 1];
        mesh.faces.push_back({a, b, d});
        mesh.faces.push_back({a, d, c});
      }
  };
  plane(0, [&](double s, double t) { return Eigen::Vector3d(s * lx, t * ly, 0.0); });
  plane(1, [&](double s, double t) { return Eigen::Vector3d(0.0, s * ly, t * lz); });
  plane(2, [&](double s, double t) { return Eigen::Vector3d(s * lx, 0.0, t * lz); });
  return scene;
}

SparseLabelSet sample_sparse_labels(const std::vector<int>& dense, std::size_t count, std::uint64_t seed,
                                    int num_categories) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < dense.size(); ++i)
    if (dense[i] >= 0) candidates.push_back(i);
  if (count > candidates.size()) throw std::invalid_argument("more labels requested than labeled vertices exist");
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  SparseLabelSet out;
  out.num_categories = num_categories;
  for (std::size_t k = 0; k < count; ++k) out.entries[candidates[k]] = dense[candidates[k]];
  return out;
}

}  // namespace vibus
