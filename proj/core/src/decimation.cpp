#include "vibus/mesh_geometry.hpp"

#include "spatial_index.hpp"

#include <Eigen/Geometry>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <tuple>

namespace vibus {

namespace {

// Symmetric 4x4 quadric stored as (A, b, c): Q(p) = p'Ap + 2b'p + c.
struct Quadric {
  Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  double c = 0.0;

  static Quadric plane(const Eigen::Vector3d& n, double d, double weight) {
    Quadric q;
    q.a = weight * n * n.transpose();
    q.b = weight * d * n;
    q.c = weight * d * d;
    return q;
  }
  Quadric& operator+=(const Quadric& o) {
    a += o.a;
    b += o.b;
    c += o.c;
    return *this;
  }
  double cost(const Eigen::Vector3d& p) const { return std::max(0.0, p.dot(a * p) + 2.0 * b.dot(p) + c); }

  // Minimizer closest to `anchor` (pseudo-inverse restricted to the well
  // conditioned eigen-directions of A).
  Eigen::Vector3d minimizer(const Eigen::Vector3d& anchor) const {
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(a);
    const Eigen::Vector3d ev = es.eigenvalues();
    const double tol = 1e-8 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    const Eigen::Vector3d residual = -b - a * anchor;
    Eigen::Vector3d p = anchor;
    for (int i = 0; i < 3; ++i) {
      if (ev(i) > tol) p += es.eigenvectors().col(i) * (es.eigenvectors().col(i).dot(residual) / ev(i));
    }
    return p;
  }
};

struct Candidate {
  double cost;
  int u, v;
  std::uint32_t version_u, version_v;
  Eigen::Vector3d target;
};

struct CandidateOrder {
  bool operator()(const Candidate& x, const Candidate& y) const {
    return std::tie(x.cost, x.u, x.v) > std::tie(y.cost, y.u, y.v);
  }
};

constexpr double kBoundaryWeight = 100.0;
constexpr double kMinNormalCosine = 0.2;

class Decimator {
 public:
  explicit Decimator(const SceneMesh& mesh) {
    const std::size_t n = mesh.num_vertices();
    pos_.resize(n);
    for (std::size_t i = 0; i < n; ++i) pos_[i] = mesh.vertices[i].cast<double>();
    colors_ = mesh.colors;
    faces_.reserve(mesh.num_faces());
    for (const Face& f : mesh.faces) faces_.push_back({f[0], f[1], f[2]});
    face_alive_.assign(faces_.size(), true);
    vertex_faces_.resize(n);
    for (std::size_t f = 0; f < faces_.size(); ++f)
      for (int c : faces_[f]) vertex_faces_[c].push_back(static_cast<int>(f));
    alive_.assign(n, true);
    version_.assign(n, 0);
    alive_count_ = n;
    build_quadrics();
  }

  bool run(std::size_t target) {
    while (alive_count_ > target) {
      std::priority_queue<Candidate, std::vector<Candidate>, CandidateOrder> queue;
      for (std::size_t f = 0; f < faces_.size(); ++f) {
        if (!face_alive_[f]) continue;
        for (int e = 0; e < 3; ++e) {
          const int a = faces_[f][e], b = faces_[f][(e + 1) % 3];
          if (a < b || edge_face_count(a, b) == 1) push(queue, std::min(a, b), std::max(a, b));
        }
      }
      bool progressed = false;
      while (!queue.empty() && alive_count_ > target) {
        const Candidate cand = queue.top();
        queue.pop();
        if (!alive_[cand.u] || !alive_[cand.v]) continue;
        if (version_[cand.u] != cand.version_u || version_[cand.v] != cand.version_v) continue;
        if (!collapse_is_valid(cand.u, cand.v, cand.target)) continue;
        collapse(cand.u, cand.v, cand.target);
        progressed = true;
        for (int w : neighbors(cand.u)) push(queue, std::min(cand.u, w), std::max(cand.u, w));
      }
      if (!progressed) break;
    }
    return alive_count_ <= target;
  }

  DecimatedMesh result(const SceneMesh& original, bool reached) const {
    DecimatedMesh out;
    out.target_reached = reached;
    out.mesh.scene_id = original.scene_id;
    std::vector<int> remap(pos_.size(), -1);
    std::vector<Eigen::Vector3d> kept;
    for (std::size_t i = 0; i < pos_.size(); ++i) {
      if (!alive_[i]) continue;
      remap[i] = static_cast<int>(out.mesh.vertices.size());
      out.mesh.vertices.push_back(pos_[i].cast<float>());
      if (!colors_.empty()) out.mesh.colors.push_back(colors_[i]);
      kept.push_back(out.mesh.vertices.back().cast<double>());
    }
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (!face_alive_[f]) continue;
      out.mesh.faces.push_back({remap[faces_[f][0]], remap[faces_[f][1]], remap[faces_[f][2]]});
    }
    const detail::KdTree tree(std::move(kept));
    out.origin_map.resize(original.num_vertices());
    for (std::size_t i = 0; i < original.num_vertices(); ++i)
      out.origin_map[i] = tree.nearest(original.vertices[i].cast<double>());
    return out;
  }

 private:
  Eigen::Vector3d face_normal_raw(const std::array<int, 3>& f) const {
    return (pos_[f[1]] - pos_[f[0]]).cross(pos_[f[2]] - pos_[f[0]]);
  }

  void build_quadrics() {
    quadric_.assign(pos_.size(), Quadric{});
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const Eigen::Vector3d raw = face_normal_raw(faces_[f]);
      const double area2 = raw.norm();
      if (area2 <= 0.0) continue;
      const Eigen::Vector3d n = raw / area2;
      const Quadric q = Quadric::plane(n, -n.dot(pos_[faces_[f][0]]), 0.5 * area2);
      for (int c : faces_[f]) quadric_[c] += q;
    }
    // Constraint planes through boundary edges, perpendicular to their face.
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const Eigen::Vector3d raw = face_normal_raw(faces_[f]);
      if (raw.norm() <= 0.0) continue;
      for (int e = 0; e < 3; ++e) {
        const int a = faces_[f][e], b = faces_[f][(e + 1) % 3];
        if (edge_face_count(a, b) != 1) continue;
        const Eigen::Vector3d edge = pos_[b] - pos_[a];
        Eigen::Vector3d n = edge.cross(raw);
        if (n.norm() <= 0.0) continue;
        n.normalize();
        const Quadric q = Quadric::plane(n, -n.dot(pos_[a]), kBoundaryWeight * edge.squaredNorm());
        quadric_[a] += q;
        quadric_[b] += q;
      }
    }
  }

  int edge_face_count(int a, int b) const {
    int count = 0;
    for (int f : vertex_faces_[a]) {
      if (!face_alive_[f]) continue;
      const auto& fc = faces_[f];
      if (fc[0] == b || fc[1] == b || fc[2] == b) ++count;
    }
    return count;
  }

  std::vector<int> neighbors(int v) const {
    std::vector<int> out;
    for (int f : vertex_faces_[v]) {
      if (!face_alive_[f]) continue;
      for (int c : faces_[f])
        if (c != v) out.push_back(c);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  bool is_boundary_vertex(int v) const {
    for (int w : neighbors(v))
      if (edge_face_count(v, w) == 1) return true;
    return false;
  }

  template <typename Queue>
  void push(Queue& queue, int u, int v) {
    Quadric q = quadric_[u];
    q += quadric_[v];
    const Eigen::Vector3d mid = 0.5 * (pos_[u] + pos_[v]);
    const Eigen::Vector3d p = q.minimizer(mid);
    queue.push({q.cost(p), u, v, version_[u], version_[v], p});
  }

  bool collapse_is_valid(int u, int v, const Eigen::Vector3d& target) const {
    const int shared = edge_face_count(u, v);
    if (shared < 1 || shared > 2) return false;
    // Link condition: common neighbors are exactly the apexes of the shared faces.
    const std::vector<int> nu = neighbors(u), nv = neighbors(v);
    std::vector<int> common;
    std::set_intersection(nu.begin(), nu.end(), nv.begin(), nv.end(), std::back_inserter(common));
    if (static_cast<int>(common.size()) != shared) return false;
    if (shared == 2 && is_boundary_vertex(u) && is_boundary_vertex(v)) return false;
    // Keep at least a tetrahedron's worth of structure around the merged vertex.
    if (nu.size() + nv.size() - common.size() - 2 < 3 && shared == 2) return false;

    for (int moving : {u, v}) {
      for (int f : vertex_faces_[moving]) {
        if (!face_alive_[f]) continue;
        const auto& fc = faces_[f];
        const bool has_u = fc[0] == u || fc[1] == u || fc[2] == u;
        const bool has_v = fc[0] == v || fc[1] == v || fc[2] == v;
        if (has_u && has_v) continue;  // removed by the collapse
        std::array<int, 3> moved = fc;
        const Eigen::Vector3d before = face_normal_raw(fc);
        std::array<Eigen::Vector3d, 3> p{pos_[fc[0]], pos_[fc[1]], pos_[fc[2]]};
        for (int c = 0; c < 3; ++c)
          if (moved[c] == moving) p[c] = target;
        const Eigen::Vector3d after = (p[1] - p[0]).cross(p[2] - p[0]);
        const double nb = before.norm(), na = after.norm();
        if (na <= 1e-12 * std::max(nb, 1e-300)) return false;
        if (before.dot(after) < kMinNormalCosine * nb * na) return false;
      }
    }
    return true;
  }

  void collapse(int u, int v, const Eigen::Vector3d& target) {
    for (int f : vertex_faces_[v]) {
      if (!face_alive_[f]) continue;
      auto& fc = faces_[f];
      const bool has_u = fc[0] == u || fc[1] == u || fc[2] == u;
      if (has_u) {
        face_alive_[f] = false;
        continue;
      }
      for (int& c : fc)
        if (c == v) c = u;
      vertex_faces_[u].push_back(f);
    }
    auto& fu = vertex_faces_[u];
    fu.erase(std::remove_if(fu.begin(), fu.end(), [&](int f) { return !face_alive_[f]; }), fu.end());
    std::sort(fu.begin(), fu.end());
    fu.erase(std::unique(fu.begin(), fu.end()), fu.end());
    vertex_faces_[v].clear();

    quadric_[u] += quadric_[v];
    pos_[u] = target;
    alive_[v] = false;
    ++version_[u];
    ++version_[v];
    --alive_count_;
  }

  std::vector<Eigen::Vector3d> pos_;
  std::vector<Vec3f> colors_;
  std::vector<std::array<int, 3>> faces_;
  std::vector<bool> face_alive_;
  std::vector<std::vector<int>> vertex_faces_;
  std::vector<bool> alive_;
  std::vector<std::uint32_t> version_;
  std::vector<Quadric> quadric_;
  std::size_t alive_count_ = 0;
};

}  // namespace

DecimatedMesh decimate_qem(const SceneMesh& mesh, std::size_t target) {
  validate(mesh);
  if (target < 4) throw std::invalid_argument("decimation target must be at least 4 vertices");
  if (mesh.faces.empty()) throw std::invalid_argument("decimation needs a mesh with at least one face");

  if (target >= mesh.num_vertices()) {
    DecimatedMesh out;
    out.mesh = mesh;
    out.origin_map.resize(mesh.num_vertices());
    std::iota(out.origin_map.begin(), out.origin_map.end(), std::size_t{0});
    return out;
  }
  Decimator d(mesh);
  const bool reached = d.run(target);
  return d.result(mesh, reached);
}

}  // namespace vibus
