#include "vibus/scene_data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace vibus {

void validate(const SceneMesh& mesh) {
  const auto n = static_cast<std::int64_t>(mesh.vertices.size());
  if (!mesh.colors.empty() && mesh.colors.size() != mesh.vertices.size())
    throw MeshValidationError("color count " + std::to_string(mesh.colors.size()) +
                              " differs from vertex count " + std::to_string(n));
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Face& face = mesh.faces[f];
    for (const auto idx : face)
      if (idx < 0 || idx >= n)
        throw MeshValidationError("face " + std::to_string(f) + " references vertex " +
                                  std::to_string(idx) + " of " + std::to_string(n));
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
      throw MeshValidationError("face " + std::to_string(f) + " repeats a vertex index");
  }
}

namespace {

// Parses one CSV line of integers/reals. Returns false for a non-numeric line.
bool split_fields(const std::string& line, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    fields.push_back(field);
  }
  return !fields.empty();
}

template <typename T>
bool parse_int(const std::string& s, T& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool looks_numeric(const std::string& s) {
  return !s.empty() && (std::isdigit(static_cast<unsigned char>(s[0])) || s[0] == '-' || s[0] == '+');
}

std::ifstream open_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LabelFileError("cannot open '" + path.string() + "'");
  return in;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

}  // namespace

SparseLabelSet load_sparse_labels(const std::filesystem::path& path, const SceneMesh& mesh,
                                  int num_categories) {
  if (num_categories < 1) throw std::invalid_argument("num_categories must be positive");
  auto in = open_csv(path);
  SparseLabelSet labels;
  labels.num_categories = num_categories;
  std::string line;
  std::vector<std::string> fields;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!split_fields(line, fields) || (fields.size() == 1 && fields[0].empty())) continue;
    if (!looks_numeric(fields[0])) {
      if (line_no == 1) continue;  // header
      throw LabelFileError(where(path, line_no) + "non-numeric vertex index");
    }
    if (fields.size() < 2) throw LabelFileError(where(path, line_no) + "expected vertex_index,category_id");
    std::int64_t vertex = 0;
    int category = 0;
    if (!parse_int(fields[0], vertex) || !parse_int(fields[1], category))
      throw LabelFileError(where(path, line_no) + "malformed integer field");
    if (vertex < 0 || static_cast<std::uint64_t>(vertex) >= mesh.num_vertices())
      throw LabelFileError(where(path, line_no) + "vertex index " + std::to_string(vertex) +
                           " out of range for " + std::to_string(mesh.num_vertices()) + " vertices");
    if (category < 0 || category >= num_categories)
      throw LabelFileError(where(path, line_no) + "category " + std::to_string(category) +
                           " outside [0, " + std::to_string(num_categories) + ")");
    if (!labels.entries.emplace(static_cast<std::size_t>(vertex), category).second)
      throw LabelFileError(where(path, line_no) + "duplicate vertex index " + std::to_string(vertex));
  }
  return labels;
}

void save_sparse_labels(const SparseLabelSet& labels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  for (const auto& [vertex, category] : labels.entries) out << vertex << ',' << category << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<int> load_dense_labels(const std::filesystem::path& path, const SceneMesh& mesh,
                                   int num_categories) {
  const SparseLabelSet parsed = load_sparse_labels(path, mesh, num_categories);
  std::vector<int> dense(mesh.num_vertices(), -1);
  for (const auto& [vertex, category] : parsed.entries) dense[vertex] = category;
  return dense;
}

PredictionField::PredictionField(Eigen::MatrixXd logits) : logits_(std::move(logits)) {
  predicted_.resize(static_cast<std::size_t>(logits_.rows()));
  for (Eigen::Index i = 0; i < logits_.rows(); ++i) {
    Eigen::Index best = 0;
    logits_.row(i).maxCoeff(&best);
    predicted_[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
}

PseudoLabelSet::PseudoLabelSet(std::vector<PseudoLabel> entries) : entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(),
            [](const PseudoLabel& a, const PseudoLabel& b) { return a.vertex < b.vertex; });
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (i > 0 && entries_[i].vertex == entries_[i - 1].vertex)
      throw std::invalid_argument("duplicate pseudo-label vertex " + std::to_string(entries_[i].vertex));
    const double p = entries_[i].posterior;
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("pseudo-label posterior outside [0, 1]");
  }
}

void save_pseudo_labels(const PseudoLabelSet& labels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "vertex_index,category_id,posterior\n";
  char buf[64];
  for (const PseudoLabel& e : labels.entries()) {
    std::snprintf(buf, sizeof(buf), "%zu,%d,%.6f\n", e.vertex, e.category, e.posterior);
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

PseudoLabelSet load_pseudo_labels(const std::filesystem::path& path) {
  auto in = open_csv(path);
  std::vector<PseudoLabel> entries;
  std::string line;
  std::vector<std::string> fields;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!split_fields(line, fields) || (fields.size() == 1 && fields[0].empty())) continue;
    if (!looks_numeric(fields[0])) {
      if (line_no == 1) continue;
      throw LabelFileError(where(path, line_no) + "non-numeric vertex index");
    }
    if (fields.size() != 3) throw LabelFileError(where(path, line_no) + "expected vertex_index,category_id,posterior");
    PseudoLabel e;
    std::int64_t vertex = 0;
    if (!parse_int(fields[0], vertex) || vertex < 0 || !parse_int(fields[1], e.category))
      throw LabelFileError(where(path, line_no) + "malformed integer field");
    e.vertex = static_cast<std::size_t>(vertex);
    char* end = nullptr;
    e.posterior = std::strtod(fields[2].c_str(), &end);
    if (end != fields[2].c_str() + fields[2].size())
      throw LabelFileError(where(path, line_no) + "malformed posterior");
    entries.push_back(e);
  }
  try {
    return PseudoLabelSet(std::move(entries));
  } catch (const std::invalid_argument& e) {
    throw LabelFileError(path.string() + ": " + e.what());
  }
}

std::vector<PointTarget> to_targets(const SparseLabelSet& labels) {
  std::vector<PointTarget> out;
  out.reserve(labels.size());
  for (const auto& [vertex, category] : labels.entries) out.push_back({vertex, category});
  return out;
}

std::vector<PointTarget> to_targets(const PseudoLabelSet& labels) {
  std::vector<PointTarget> out;
  out.reserve(labels.size());
  for (const PseudoLabel& e : labels.entries()) out.push_back({e.vertex, e.category});
  return out;
}

}  // namespace vibus
