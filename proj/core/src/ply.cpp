#include "vibus/scene_data.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>

namespace vibus {

static_assert(std::endian::native == std::endian::little,
              "binary PLY I/O assumes a little-endian host");

PlyError::PlyError(const std::string& what, std::uint64_t offset)
    : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

namespace {

enum class ScalarType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

std::optional<ScalarType> parse_scalar_type(std::string_view name) {
  if (name == "char" || name == "int8") return ScalarType::Int8;
  if (name == "uchar" || name == "uint8") return ScalarType::UInt8;
  if (name == "short" || name == "int16") return ScalarType::Int16;
  if (name == "ushort" || name == "uint16") return ScalarType::UInt16;
  if (name == "int" || name == "int32") return ScalarType::Int32;
  if (name == "uint" || name == "uint32") return ScalarType::UInt32;
  if (name == "float" || name == "float32") return ScalarType::Float32;
  if (name == "double" || name == "float64") return ScalarType::Float64;
  return std::nullopt;
}

struct Property {
  std::string name;
  ScalarType type = ScalarType::Float32;
  bool is_list = false;
  ScalarType count_type = ScalarType::UInt8;
};

struct Element {
  std::string name;
  std::uint64_t count = 0;
  std::vector<Property> properties;
};

struct Header {
  PlyFormat format = PlyFormat::Ascii;
  std::vector<Element> elements;
  std::size_t body_offset = 0;
};

std::vector<std::string_view> split_words(std::string_view line) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) words.push_back(line.substr(i, j - i));
    i = j;
  }
  return words;
}

Header parse_header(std::string_view data) {
  Header header;
  std::size_t pos = 0;
  bool saw_format = false;
  bool first = true;
  for (;;) {
    const std::size_t line_start = pos;
    const std::size_t eol = data.find('\n', pos);
    if (eol == std::string_view::npos) throw PlyError("PLY header not terminated by end_header", line_start);
    std::string_view line = data.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = eol + 1;
    const auto words = split_words(line);
    if (first) {
      if (words.size() != 1 || words[0] != "ply") throw PlyError("missing 'ply' magic", line_start);
      first = false;
      continue;
    }
    if (words.empty() || words[0] == "comment" || words[0] == "obj_info") continue;
    if (words[0] == "format") {
      if (words.size() < 2) throw PlyError("malformed format line", line_start);
      if (words[1] == "ascii") {
        header.format = PlyFormat::Ascii;
      } else if (words[1] == "binary_little_endian") {
        header.format = PlyFormat::BinaryLittleEndian;
      } else {
        throw PlyError("unsupported PLY format '" + std::string(words[1]) + "'", line_start);
      }
      saw_format = true;
    } else if (words[0] == "element") {
      if (words.size() != 3) throw PlyError("malformed element line", line_start);
      Element e;
      e.name = std::string(words[1]);
      const auto [ptr, ec] = std::from_chars(words[2].data(), words[2].data() + words[2].size(), e.count);
      if (ec != std::errc() || ptr != words[2].data() + words[2].size())
        throw PlyError("invalid element count '" + std::string(words[2]) + "'", line_start);
      header.elements.push_back(std::move(e));
    } else if (words[0] == "property") {
      if (header.elements.empty()) throw PlyError("property declared before any element", line_start);
      Property p;
      if (words.size() == 5 && words[1] == "list") {
        const auto ct = parse_scalar_type(words[2]);
        const auto it = parse_scalar_type(words[3]);
        if (!ct || !it) throw PlyError("unknown list property type", line_start);
        p.is_list = true;
        p.count_type = *ct;
        p.type = *it;
        p.name = std::string(words[4]);
      } else if (words.size() == 3) {
        const auto t = parse_scalar_type(words[1]);
        if (!t) throw PlyError("unknown property type '" + std::string(words[1]) + "'", line_start);
        p.type = *t;
        p.name = std::string(words[2]);
      } else {
        throw PlyError("malformed property line", line_start);
      }
      header.elements.back().properties.push_back(std::move(p));
    } else if (words[0] == "end_header") {
      if (!saw_format) throw PlyError("PLY header has no format line", line_start);
      header.body_offset = pos;
      return header;
    } else {
      throw PlyError("unexpected header keyword '" + std::string(words[0]) + "'", line_start);
    }
  }
}

// Sequential reader over the body yielding numeric values regardless of encoding.
class BodyReader {
 public:
  BodyReader(std::string_view data, std::size_t offset, PlyFormat format)
      : data_(data), pos_(offset), format_(format) {}

  std::size_t position() const { return pos_; }

  double read(ScalarType type) {
    return format_ == PlyFormat::Ascii ? read_ascii() : read_binary(type);
  }

 private:
  double read_ascii() {
    while (pos_ < data_.size() && std::isspace(static_cast<unsigned char>(data_[pos_]))) ++pos_;
    if (pos_ >= data_.size()) throw PlyError("truncated ASCII payload", pos_);
    std::size_t end = pos_;
    while (end < data_.size() && !std::isspace(static_cast<unsigned char>(data_[end]))) ++end;
    const std::string token(data_.substr(pos_, end - pos_));
    char* parsed_end = nullptr;
    const double value = std::strtod(token.c_str(), &parsed_end);
    if (parsed_end != token.c_str() + token.size())
      throw PlyError("invalid numeric token '" + token + "'", pos_);
    pos_ = end;
    return value;
  }

  template <typename T>
  double take() {
    if (pos_ + sizeof(T) > data_.size()) throw PlyError("truncated binary payload", data_.size());
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return static_cast<double>(v);
  }

  double read_binary(ScalarType type) {
    switch (type) {
      case ScalarType::Int8: return take<std::int8_t>();
      case ScalarType::UInt8: return take<std::uint8_t>();
      case ScalarType::Int16: return take<std::int16_t>();
      case ScalarType::UInt16: return take<std::uint16_t>();
      case ScalarType::Int32: return take<std::int32_t>();
      case ScalarType::UInt32: return take<std::uint32_t>();
      case ScalarType::Float32: return take<float>();
      case ScalarType::Float64: return take<double>();
    }
    return 0.0;
  }

  std::string_view data_;
  std::size_t pos_;
  PlyFormat format_;
};

int find_property(const Element& e, std::string_view name) {
  for (std::size_t i = 0; i < e.properties.size(); ++i)
    if (e.properties[i].name == name) return static_cast<int>(i);
  return -1;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PlyError("cannot open '" + path.string() + "'", 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

SceneMesh load_scene(const std::filesystem::path& path) {
  const std::string buffer = read_file(path);
  const std::string_view data(buffer);
  const Header header = parse_header(data);

  SceneMesh mesh;
  mesh.scene_id = path.stem().string();
  BodyReader reader(data, header.body_offset, header.format);

  bool have_vertices = false;
  for (const Element& element : header.elements) {
    if (element.name == "vertex") {
      const int ix = find_property(element, "x");
      const int iy = find_property(element, "y");
      const int iz = find_property(element, "z");
      if (ix < 0 || iy < 0 || iz < 0) throw PlyError("vertex element lacks x/y/z", header.body_offset);
      const int ir = find_property(element, "red");
      const int ig = find_property(element, "green");
      const int ib = find_property(element, "blue");
      const bool colored = ir >= 0 && ig >= 0 && ib >= 0;
      mesh.vertices.resize(element.count);
      if (colored) mesh.colors.resize(element.count);
      std::vector<double> values(element.properties.size());
      for (std::uint64_t v = 0; v < element.count; ++v) {
        for (std::size_t p = 0; p < element.properties.size(); ++p) {
          const Property& prop = element.properties[p];
          if (prop.is_list) {
            const auto n = static_cast<std::int64_t>(reader.read(prop.count_type));
            for (std::int64_t k = 0; k < n; ++k) reader.read(prop.type);
            values[p] = 0.0;
          } else {
            values[p] = reader.read(prop.type);
          }
        }
        mesh.vertices[v] = Vec3f(static_cast<float>(values[ix]), static_cast<float>(values[iy]),
                                 static_cast<float>(values[iz]));
        if (colored)
          mesh.colors[v] = Vec3f(static_cast<float>(values[ir]), static_cast<float>(values[ig]),
                                 static_cast<float>(values[ib]));
      }
      have_vertices = true;
    } else if (element.name == "face") {
      int il = find_property(element, "vertex_indices");
      if (il < 0) il = find_property(element, "vertex_index");
      if (il < 0 || !element.properties[il].is_list)
        throw PlyError("face element lacks a vertex_indices list", header.body_offset);
      mesh.faces.reserve(element.count);
      std::vector<std::int64_t> corners;
      for (std::uint64_t f = 0; f < element.count; ++f) {
        const std::size_t record_offset = reader.position();
        for (std::size_t p = 0; p < element.properties.size(); ++p) {
          const Property& prop = element.properties[p];
          if (!prop.is_list) {
            reader.read(prop.type);
            continue;
          }
          const double count = reader.read(prop.count_type);
          if (count < 0) throw PlyError("negative list length", record_offset);
          const auto n = static_cast<std::int64_t>(count);
          if (static_cast<int>(p) != il) {
            for (std::int64_t k = 0; k < n; ++k) reader.read(prop.type);
            continue;
          }
          corners.clear();
          for (std::int64_t k = 0; k < n; ++k) corners.push_back(static_cast<std::int64_t>(reader.read(prop.type)));
        }
        if (corners.size() < 3) throw PlyError("face with fewer than 3 vertices", record_offset);
        if (!have_vertices) throw PlyError("face element precedes vertex element", record_offset);
        for (const auto c : corners) {
          if (c < 0 || static_cast<std::uint64_t>(c) >= mesh.vertices.size())
            throw PlyError("face index " + std::to_string(c) + " out of range for " +
                               std::to_string(mesh.vertices.size()) + " vertices",
                           record_offset);
        }
        for (std::size_t k = 1; k + 1 < corners.size(); ++k) {
          const Face face{static_cast<std::int32_t>(corners[0]), static_cast<std::int32_t>(corners[k]),
                          static_cast<std::int32_t>(corners[k + 1])};
          if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
            throw PlyError("face repeats a vertex index", record_offset);
          mesh.faces.push_back(face);
        }
      }
    } else {
      // Unknown element: consume its records.
      for (std::uint64_t r = 0; r < element.count; ++r) {
        for (const Property& prop : element.properties) {
          if (prop.is_list) {
            const auto n = static_cast<std::int64_t>(reader.read(prop.count_type));
            for (std::int64_t k = 0; k < n; ++k) reader.read(prop.type);
          } else {
            reader.read(prop.type);
          }
        }
      }
    }
  }
  if (!have_vertices) throw PlyError("PLY file has no vertex element", header.body_offset);
  validate(mesh);
  return mesh;
}

void save_scene(const SceneMesh& mesh, const std::filesystem::path& path, PlyFormat format) {
  validate(mesh);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");

  out << "ply\n"
      << (format == PlyFormat::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n");
  if (!mesh.scene_id.empty()) out << "comment scene " << mesh.scene_id << "\n";
  out << "element vertex " << mesh.vertices.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n";
  if (mesh.has_colors()) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << mesh.faces.size() << "\n"
      << "property list uchar int vertex_indices\n"
      << "end_header\n";

  auto to_byte = [](float c) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(c), 0L, 255L));
  };

  if (format == PlyFormat::Ascii) {
    std::ostringstream body;
    body.precision(9);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      const Vec3f& p = mesh.vertices[i];
      body << p.x() << ' ' << p.y() << ' ' << p.z();
      if (mesh.has_colors()) {
        const Vec3f& c = mesh.colors[i];
        body << ' ' << int(to_byte(c.x())) << ' ' << int(to_byte(c.y())) << ' ' << int(to_byte(c.z()));
      }
      body << '\n';
    }
    for (const Face& f : mesh.faces) body << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    out << body.str();
  } else {
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      const Vec3f& p = mesh.vertices[i];
      const float xyz[3] = {p.x(), p.y(), p.z()};
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
      if (mesh.has_colors()) {
        const Vec3f& c = mesh.colors[i];
        const std::uint8_t rgb[3] = {to_byte(c.x()), to_byte(c.y()), to_byte(c.z())};
        out.write(reinterpret_cast<const char*>(rgb), sizeof(rgb));
      }
    }
    for (const Face& f : mesh.faces) {
      const std::uint8_t n = 3;
      out.write(reinterpret_cast<const char*>(&n), 1);
      out.write(reinterpret_cast<const char*>(f.data()), sizeof(std::int32_t) * 3);
    }
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace vibus
