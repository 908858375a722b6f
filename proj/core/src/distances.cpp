#include "vibus/mesh_geometry.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

namespace vibus {

namespace {

constexpr double kUnitTolerance = 1e-4;
constexpr std::array<char, 8> kCacheMagic{'V', 'I', 'B', 'U', 'S', 'D', 'M', '1'};

double off_diagonal_mean(const Eigen::MatrixXd& m) {
  const auto n = m.rows();
  if (n < 2) return 0.0;
  return (m.sum() - m.trace()) / static_cast<double>(n * (n - 1));
}

}  // namespace

double angular_distance(const Eigen::Vector3d& n1, const Eigen::Vector3d& n2) {
  if (std::abs(n1.norm() - 1.0) > kUnitTolerance || std::abs(n2.norm() - 1.0) > kUnitTolerance)
    throw std::invalid_argument("angular_distance expects unit normals");
  return 1.0 - std::min(1.0, std::abs(n1.dot(n2)));
}

DistanceMatrix angular_distance_matrix(const NormalField& normals) {
  const auto n = static_cast<Eigen::Index>(normals.normals.size());
  DistanceMatrix out;
  out.kind = DistanceKind::Angular;
  out.values.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const bool bad = normals.degenerate[i] || normals.degenerate[j];
      const double d = bad ? 1.0 : 1.0 - std::min(1.0, std::abs(normals.normals[i].dot(normals.normals[j])));
      out.values(i, j) = out.values(j, i) = d;
    }
  }
  return out;
}

DistanceMatrix combined_distance_matrix(const DistanceMatrix& dg, const DistanceMatrix& da,
                                        const CombinedDistanceConfig& cfg) {
  if (!(cfg.delta >= 0.0 && cfg.delta <= 1.0)) throw std::invalid_argument("delta must lie in [0, 1]");
  if (dg.kind != DistanceKind::Geodesic || da.kind != DistanceKind::Angular)
    throw std::invalid_argument("combined distance expects a geodesic and an angular matrix");
  if (dg.values.rows() != da.values.rows() || dg.values.cols() != da.values.cols())
    throw std::invalid_argument("geodesic and angular matrices differ in shape");
  const double mg = off_diagonal_mean(dg.values);
  const double ma = off_diagonal_mean(da.values);
  if (!(mg > 0.0)) throw std::invalid_argument("geodesic distances have zero mean");
  if (!(ma > 0.0)) throw std::invalid_argument("angular distances have zero mean");
  DistanceMatrix out;
  out.kind = DistanceKind::Combined;
  out.values = (cfg.delta / mg) * dg.values + ((1.0 - cfg.delta) / ma) * da.values;
  out.values.diagonal().setZero();
  return out;
}

void save_distance_cache(const DistanceMatrix& d, const DistanceCacheHeader& header,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(kCacheMagic.data(), kCacheMagic.size());
  const auto n = static_cast<std::uint64_t>(d.values.rows());
  const auto kind = static_cast<std::uint8_t>(header.kind);
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(&kind), sizeof(kind));
  out.write(reinterpret_cast<const char*>(&header.delta), sizeof(double));
  out.write(reinterpret_cast<const char*>(&header.heat_time), sizeof(double));
  for (Eigen::Index i = 0; i < d.values.rows(); ++i)
    for (Eigen::Index j = 0; j < d.values.cols(); ++j) {
      const auto v = static_cast<float>(d.values(i, j));
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

DistanceMatrix load_distance_cache(const std::filesystem::path& path, DistanceCacheHeader* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  const std::string data{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  constexpr std::size_t kHeaderBytes = 8 + 8 + 1 + 8 + 8;
  if (data.size() < kHeaderBytes || std::memcmp(data.data(), kCacheMagic.data(), kCacheMagic.size()) != 0)
    throw std::runtime_error("'" + path.string() + "' is not a distance cache");
  std::uint64_t n = 0;
  std::uint8_t kind = 0;
  DistanceCacheHeader h;
  std::memcpy(&n, data.data() + 8, 8);
  std::memcpy(&kind, data.data() + 16, 1);
  std::memcpy(&h.delta, data.data() + 17, 8);
  std::memcpy(&h.heat_time, data.data() + 25, 8);
  if (kind > 2) throw std::runtime_error("distance cache has unknown kind");
  h.kind = static_cast<DistanceKind>(kind);
  if (data.size() != kHeaderBytes + n * n * sizeof(float))
    throw std::runtime_error("distance cache size does not match its header");
  DistanceMatrix d;
  d.kind = h.kind;
  d.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const char* src = data.data() + kHeaderBytes;
  for (std::uint64_t i = 0; i < n; ++i)
    for (std::uint64_t j = 0; j < n; ++j) {
      float v;
      std::memcpy(&v, src, sizeof(v));
      src += sizeof(v);
      d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  if (header) *header = h;
  return d;
}

}  // namespace vibus
