#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace vibus {

using Vec3f = Eigen::Vector3f;
using Face = std::array<std::int32_t, 3>;

/// Default size of the category protocol (ScanNet uses 20 classes).
inline constexpr int kDefaultNumCategories = 20;

/// Triangle mesh with optional per-vertex RGB colors in [0, 255].
///
/// Positions are kept in float32 so a binary PLY round-trip is bitwise exact.
/// Colors are stored as floats so that jittered colors survive without
/// quantization; loaded colors are always integral.
struct SceneMesh {
  std::vector<Vec3f> vertices;
  std::vector<Vec3f> colors;  // empty, or one entry per vertex
  std::vector<Face> faces;
  std::string scene_id;

  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_faces() const { return faces.size(); }
  bool has_colors() const { return !colors.empty(); }
};

/// Thrown by validate() for meshes that break a SceneMesh invariant.
class MeshValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Checks every SceneMesh invariant: face indices in range, no repeated
/// index within a face, color count equal to vertex count when present.
void validate(const SceneMesh& mesh);

/// Parse or I/O failure while reading a PLY file. offset() is the byte
/// position in the file where the problem was detected.
class PlyError : public std::runtime_error {
 public:
  PlyError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

enum class PlyFormat { Ascii, BinaryLittleEndian };

/// Loads an ASCII or binary little-endian PLY. Only x,y,z, red,green,blue and
/// the face vertex list are consumed; other properties (normals, labels, ...)
/// are skipped. Polygons with more than three corners are fan-triangulated.
SceneMesh load_scene(const std::filesystem::path& path);

/// Writes x,y,z as float32, red,green,blue as uchar (rounded and clamped)
/// when colors are present, and faces as a uchar-count int32 list.
void save_scene(const SceneMesh& mesh, const std::filesystem::path& path,
                PlyFormat format = PlyFormat::BinaryLittleEndian);

/// Sparse ground-truth annotations of one scene.
struct SparseLabelSet {
  std::map<std::size_t, int> entries;  // vertex index -> category id
  int num_categories = kDefaultNumCategories;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
};

class LabelFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads `vertex_index,category_id` lines. A leading non-numeric header line
/// and blank lines are tolerated.
SparseLabelSet load_sparse_labels(const std::filesystem::path& path, const SceneMesh& mesh,
                                  int num_categories = kDefaultNumCategories);
void save_sparse_labels(const SparseLabelSet& labels, const std::filesystem::path& path);

/// Dense per-vertex labels (`vertex_index,category_id`, one line per vertex).
/// Vertices missing from the file get -1 (ignored by evaluation).
std::vector<int> load_dense_labels(const std::filesystem::path& path, const SceneMesh& mesh,
                                   int num_categories = kDefaultNumCategories);

/// Per-vertex class scores and the argmax category.
class PredictionField {
 public:
  PredictionField() = default;
  explicit PredictionField(Eigen::MatrixXd logits);

  const Eigen::MatrixXd& logits() const { return logits_; }
  const std::vector<int>& predicted() const { return predicted_; }
  std::size_t size() const { return predicted_.size(); }
  int num_categories() const { return static_cast<int>(logits_.cols()); }

 private:
  Eigen::MatrixXd logits_;
  std::vector<int> predicted_;
};

struct PseudoLabel {
  std::size_t vertex = 0;
  int category = 0;
  double posterior = 0.0;  // reliable-component posterior in [0, 1]

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

/// Harvested labels. Entries are kept sorted by vertex index.
class PseudoLabelSet {
 public:
  PseudoLabelSet() = default;
  explicit PseudoLabelSet(std::vector<PseudoLabel> entries);

  const std::vector<PseudoLabel>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<PseudoLabel> entries_;
};

/// CSV with header `vertex_index,category_id,posterior`; posteriors printed
/// with six decimals.
void save_pseudo_labels(const PseudoLabelSet& labels, const std::filesystem::path& path);
PseudoLabelSet load_pseudo_labels(const std::filesystem::path& path);

/// A labeled vertex used as a supervised training target.
struct PointTarget {
  std::size_t vertex = 0;
  int category = 0;
};

std::vector<PointTarget> to_targets(const SparseLabelSet& labels);
std::vector<PointTarget> to_targets(const PseudoLabelSet& labels);

}  // namespace vibus
