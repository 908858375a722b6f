#include "vibus/encoder.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

namespace vibus {

namespace {

constexpr std::array<char, 8> kMagic{'V', 'I', 'B', 'U', 'S', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void layer(const DenseLayer& l) {
    put<std::uint32_t>(static_cast<std::uint32_t>(l.weight.rows()));
    put<std::uint32_t>(static_cast<std::uint32_t>(l.weight.cols()));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) put<float>(static_cast<float>(l.weight(i, j)));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) put<float>(static_cast<float>(l.bias(i)));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos_));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  DenseLayer layer() {
    const auto rows = get<std::uint32_t>();
    const auto cols = get<std::uint32_t>();
    if (static_cast<std::uint64_t>(rows) * cols * 4 > data_.size())
      throw std::runtime_error("checkpoint layer shape exceeds file size");
    DenseLayer l;
    l.weight.resize(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) l.weight(i, j) = get<float>();
    l.bias.resize(rows);
    for (std::uint32_t i = 0; i < rows; ++i) l.bias(i) = get<float>();
    return l;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  validate(ckpt.encoder);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(kMagic.data(), kMagic.size());
  Writer w(out);
  w.put<std::uint32_t>(kVersion);
  w.put<double>(ckpt.vb.lambda);
  w.put<std::int32_t>(ckpt.vb.feature_dim);
  w.put<std::uint64_t>(ckpt.vb.fps_target);
  w.put<std::uint8_t>(ckpt.vb.squared_norm ? 1 : 0);
  w.put<double>(ckpt.encoder.dropout_rate);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.encoder.layers.size()));
  w.put<std::uint8_t>(ckpt.head ? 1 : 0);
  for (const DenseLayer& l : ckpt.encoder.layers) w.layer(l);
  if (ckpt.head) w.layer(*ckpt.head);
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  std::string data{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (data.size() < kMagic.size() || std::memcmp(data.data(), kMagic.data(), kMagic.size()) != 0)
    throw std::runtime_error("'" + path.string() + "' is not a vibus checkpoint");
  Reader r(data.substr(kMagic.size()));
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.vb.lambda = r.get<double>();
  ckpt.vb.feature_dim = r.get<std::int32_t>();
  ckpt.vb.fps_target = r.get<std::uint64_t>();
  ckpt.vb.squared_norm = r.get<std::uint8_t>() != 0;
  ckpt.encoder.dropout_rate = r.get<double>();
  const auto n_layers = r.get<std::uint32_t>();
  const bool has_head = r.get<std::uint8_t>() != 0;
  if (n_layers > 64) throw std::runtime_error("checkpoint declares an implausible layer count");
  for (std::uint32_t l = 0; l < n_layers; ++l) ckpt.encoder.layers.push_back(r.layer());
  if (has_head) ckpt.head = r.layer();
  if (!r.at_end()) throw std::runtime_error("trailing bytes after checkpoint payload");
  try {
    validate(ckpt.encoder);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("checkpoint rejected: ") + e.what());
  }
  if (ckpt.head && ckpt.head->in_dim() != ckpt.encoder.feature_dim())
    throw std::runtime_error("checkpoint rejected: head input does not match encoder output");
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const EncoderParams& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.encoder.layers.size() != expected.layers.size())
    throw std::runtime_error("checkpoint layer count differs from the expected encoder");
  for (std::size_t l = 0; l < expected.layers.size(); ++l) {
    const DenseLayer& a = ckpt.encoder.layers[l];
    const DenseLayer& b = expected.layers[l];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols())
      throw std::runtime_error("checkpoint layer " + std::to_string(l) + " shape " +
                               std::to_string(a.weight.rows()) + "x" + std::to_string(a.weight.cols()) +
                               " differs from expected " + std::to_string(b.weight.rows()) + "x" +
                               std::to_string(b.weight.cols()));
  }
  return ckpt;
}

}  // namespace vibus
