#include "vibus/mesh_geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>

namespace vibus {

namespace {

constexpr double kMinCotWeight = 1e-6;
constexpr double kMaxCotWeight = 1e6;

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

struct FaceGeometry {
  std::array<int, 3> v;
  std::array<Eigen::Vector3d, 3> grad_basis;  // grad u = sum_i u_i * grad_basis[i]
  std::array<Eigen::Vector3d, 3> edge_from;   // edge_from[i] = p[(i+1)%3] - p[i]
  std::array<double, 3> cot;                  // cotangent of the angle at corner i
};

std::vector<Eigen::Vector3d> positions(const SceneMesh& mesh) {
  std::vector<Eigen::Vector3d> p(mesh.num_vertices());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = mesh.vertices[i].cast<double>();
  return p;
}

std::size_t union_find_components(std::size_t n, const std::vector<Face>& faces) {
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const Face& f : faces) {
    const std::size_t a = find(f[0]);
    for (int c = 1; c < 3; ++c) {
      const std::size_t b = find(f[c]);
      if (a != b) parent[b] = a;
    }
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (find(i) == i) ++count;
  return count;
}

void require_connected(const SceneMesh& mesh) {
  if (mesh.num_vertices() == 0) throw std::invalid_argument("geodesics need a non-empty mesh");
  const std::size_t components = connected_components(mesh);
  if (components != 1)
    throw std::invalid_argument("geodesics need a connected mesh; found " + std::to_string(components) +
                                " components");
}

}  // namespace

std::size_t connected_components(const SceneMesh& mesh) {
  return union_find_components(mesh.num_vertices(), mesh.faces);
}

double mean_edge_length(const SceneMesh& mesh) {
  std::set<std::pair<std::int32_t, std::int32_t>> edges;
  for (const Face& f : mesh.faces)
    for (int e = 0; e < 3; ++e) edges.emplace(std::minmax(f[e], f[(e + 1) % 3]));
  double total = 0.0;
  for (const auto& [a, b] : edges) total += (mesh.vertices[a] - mesh.vertices[b]).cast<double>().norm();
  return edges.empty() ? 0.0 : total / static_cast<double>(edges.size());
}

DistanceMatrix heat_geodesics(const SceneMesh& mesh, const HeatGeodesicConfig& cfg) {
  validate(mesh);
  if (!(cfg.time_scale > 0.0)) throw std::invalid_argument("heat time scale must be positive");
  require_connected(mesh);
  const auto n = static_cast<Eigen::Index>(mesh.num_vertices());
  const std::vector<Eigen::Vector3d> p = positions(mesh);

  std::vector<FaceGeometry> geo;
  geo.reserve(mesh.num_faces());
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(n);
  std::vector<Triplet> weights;
  for (const Face& f : mesh.faces) {
    FaceGeometry g;
    g.v = {f[0], f[1], f[2]};
    const Eigen::Vector3d raw = (p[f[1]] - p[f[0]]).cross(p[f[2]] - p[f[0]]);
    const double area = 0.5 * raw.norm();
    if (area <= 0.0) continue;  // zero-area face carries no diffusion
    const Eigen::Vector3d normal = raw / (2.0 * area);
    for (int i = 0; i < 3; ++i) {
      const int j = (i + 1) % 3, k = (i + 2) % 3;
      g.edge_from[i] = p[f[j]] - p[f[i]];
      const Eigen::Vector3d opposite = p[f[k]] - p[f[j]];  // ccw edge opposite corner i
      g.grad_basis[i] = normal.cross(opposite) / (2.0 * area);
      const Eigen::Vector3d a = p[f[j]] - p[f[i]], b = p[f[k]] - p[f[i]];
      g.cot[i] = std::clamp(a.dot(b) / a.cross(b).norm(), -kMaxCotWeight, kMaxCotWeight);
      mass(f[i]) += area / 3.0;
    }
    for (int i = 0; i < 3; ++i) {
      const int j = (i + 1) % 3, k = (i + 2) % 3;
      // Edge (j, k) is opposite corner i.
      weights.emplace_back(f[j], f[k], 0.5 * g.cot[i]);
      weights.emplace_back(f[k], f[j], 0.5 * g.cot[i]);
    }
    geo.push_back(g);
  }

  SparseMatrix w(n, n);
  w.setFromTriplets(weights.begin(), weights.end());
  std::vector<Triplet> stiff;
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  for (Eigen::Index col = 0; col < w.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(w, col); it; ++it) {
      const double wij = std::clamp(it.value(), kMinCotWeight, kMaxCotWeight);
      stiff.emplace_back(it.row(), it.col(), -wij);
      diag(it.row()) += wij;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) stiff.emplace_back(i, i, diag(i));
  SparseMatrix stiffness(n, n);
  stiffness.setFromTriplets(stiff.begin(), stiff.end());
  SparseMatrix mass_matrix(n, n);
  {
    std::vector<Triplet> m;
    for (Eigen::Index i = 0; i < n; ++i) m.emplace_back(i, i, mass(i));
    mass_matrix.setFromTriplets(m.begin(), m.end());
  }

  const double h = mean_edge_length(mesh);
  const double t = cfg.time_scale * h * h;

  const SparseMatrix heat_op = mass_matrix + t * stiffness;
  Eigen::SimplicialLDLT<SparseMatrix> heat_neumann(heat_op);
  if (heat_neumann.info() != Eigen::Success) throw std::runtime_error("heat operator factorization failed");

  // Boundary handling: average Neumann and zero-Dirichlet heat solutions.
  std::vector<bool> on_boundary(static_cast<std::size_t>(n), false);
  {
    std::vector<Triplet> count;
    for (const Face& f : mesh.faces)
      for (int e = 0; e < 3; ++e) {
        const int a = std::min(f[e], f[(e + 1) % 3]), b = std::max(f[e], f[(e + 1) % 3]);
        count.emplace_back(a, b, 1.0);
      }
    SparseMatrix edge_count(n, n);
    edge_count.setFromTriplets(count.begin(), count.end());
    for (Eigen::Index col = 0; col < edge_count.outerSize(); ++col)
      for (SparseMatrix::InnerIterator it(edge_count, col); it; ++it)
        if (it.value() == 1.0) on_boundary[it.row()] = on_boundary[it.col()] = true;
  }
  std::vector<Eigen::Index> interior_index(static_cast<std::size_t>(n), -1);
  Eigen::Index n_interior = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!on_boundary[i]) interior_index[i] = n_interior++;
  const bool has_boundary = n_interior < n;
  Eigen::SimplicialLDLT<SparseMatrix> heat_dirichlet;
  if (has_boundary && n_interior > 0) {
    std::vector<Triplet> sub;
    for (Eigen::Index col = 0; col < heat_op.outerSize(); ++col)
      for (SparseMatrix::InnerIterator it(heat_op, col); it; ++it) {
        const Eigen::Index r = interior_index[it.row()], c = interior_index[it.col()];
        if (r >= 0 && c >= 0) sub.emplace_back(r, c, it.value());
      }
    SparseMatrix op(n_interior, n_interior);
    op.setFromTriplets(sub.begin(), sub.end());
    heat_dirichlet.compute(op);
    if (heat_dirichlet.info() != Eigen::Success) throw std::runtime_error("Dirichlet heat factorization failed");
  }

  // Poisson operator with a tiny mass shift to pin the constant mode.
  const double shift = 1e-10 * (diag.sum() / std::max(mass.sum(), 1e-300));
  Eigen::SimplicialLDLT<SparseMatrix> poisson(stiffness + shift * mass_matrix);
  if (poisson.info() != Eigen::Success) throw std::runtime_error("Poisson operator factorization failed");
  const double total_mass = mass.sum();

  DistanceMatrix out;
  out.kind = DistanceKind::Geodesic;
  out.values.resize(n, n);

#pragma omp parallel for schedule(dynamic, 16)
  for (Eigen::Index s = 0; s < n; ++s) {
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(n);
    delta(s) = 1.0;
    Eigen::VectorXd u = heat_neumann.solve(delta);
    if (has_boundary && !on_boundary[s] && n_interior > 0) {
      Eigen::VectorXd sub_delta = Eigen::VectorXd::Zero(n_interior);
      sub_delta(interior_index[s]) = 1.0;
      const Eigen::VectorXd sub_u = heat_dirichlet.solve(sub_delta);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double ud = interior_index[i] >= 0 ? sub_u(interior_index[i]) : 0.0;
        u(i) = 0.5 * (u(i) + ud);
      }
    }

    Eigen::VectorXd div = Eigen::VectorXd::Zero(n);
    for (const FaceGeometry& g : geo) {
      Eigen::Vector3d grad = Eigen::Vector3d::Zero();
      for (int i = 0; i < 3; ++i) grad += u(g.v[i]) * g.grad_basis[i];
      const double norm = grad.norm();
      if (norm <= 0.0) continue;
      const Eigen::Vector3d x = -grad / norm;
      for (int i = 0; i < 3; ++i) {
        const int j = (i + 1) % 3, k = (i + 2) % 3;
        // edge i->j is opposite corner k; edge i->k is opposite corner j
        const Eigen::Vector3d e_ij = g.edge_from[i];
        const Eigen::Vector3d e_ik = -g.edge_from[k];
        div(g.v[i]) += 0.5 * (g.cot[k] * e_ij.dot(x) + g.cot[j] * e_ik.dot(x));
      }
    }
    // K phi = -div, made compatible with the Neumann null space.
    Eigen::VectorXd rhs = -div;
    rhs -= mass * (rhs.sum() / total_mass);
    const Eigen::VectorXd phi = poisson.solve(rhs);
    for (Eigen::Index i = 0; i < n; ++i) out.values(s, i) = std::max(0.0, phi(i) - phi(s));
  }

  const Eigen::MatrixXd sym = 0.5 * (out.values + out.values.transpose());
  out.values = sym;
  out.values.diagonal().setZero();
  return out;
}

DistanceMatrix dijkstra_geodesics(const SceneMesh& mesh) {
  validate(mesh);
  require_connected(mesh);
  const std::size_t n = mesh.num_vertices();
  std::vector<std::vector<std::pair<std::size_t, double>>> adj(n);
  for (const Face& f : mesh.faces) {
    for (int e = 0; e < 3; ++e) {
      const std::size_t a = f[e], b = f[(e + 1) % 3];
      const double len = (mesh.vertices[a] - mesh.vertices[b]).cast<double>().norm();
      adj[a].emplace_back(b, len);
      adj[b].emplace_back(a, len);
    }
  }
  DistanceMatrix out;
  out.kind = DistanceKind::Geodesic;
  out.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));

#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    using Entry = std::pair<double, std::size_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    dist[s] = 0.0;
    heap.emplace(0.0, s);
    while (!heap.empty()) {
      const auto [d, v] = heap.top();
      heap.pop();
      if (d > dist[v]) continue;
      for (const auto& [w, len] : adj[v]) {
        if (d + len < dist[w]) {
          dist[w] = d + len;
          heap.emplace(dist[w], w);
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      out.values(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = dist[i];
  }
  return out;
}

}  // namespace vibus
