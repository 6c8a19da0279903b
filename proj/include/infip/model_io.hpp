#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "infip/digest.hpp"
#include "infip/error.hpp"
#include "infip/model.hpp"
#include "infip/pgm.hpp"

namespace infip {

inline constexpr char kModelMagic[4] = {'I', 'N', 'F', 'M'};
inline constexpr std::uint16_t kModelFormatVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(std::string_view bytes) { out_.append(bytes); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint64_t v) {
    if (v > UINT32_MAX) throw FormatError("model file: value exceeds 32 bits");
    le(v, 4);
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  std::string& bytes() { return out_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  double f64() { return std::bit_cast<double>(le(8)); }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptionError(name_ + ": unexpected end of data");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline void write_tensor(ByteWriter& w, const Tensor& t) {
  w.u32(t.rank());
  for (auto d : t.shape()) w.u32(d);
  for (double v : t.values()) w.f64(v);
}

inline Tensor read_tensor(ByteReader& r) {
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError("model file: tensor rank " + std::to_string(rank) + " out of range");
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = r.u32();
    if (d == 0 || d > (1u << 24)) throw FormatError("model file: tensor dimension out of range");
    count *= d;
    if (count > (1u << 28)) throw FormatError("model file: tensor too large");
  }
  std::vector<double> data(count);
  for (double& v : data) v = r.f64();
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace detail

/// Binary layout: "INFM", u16 version, u32-prefixed lineage text, input
/// shape, class count, layer records, then SHA-256 of everything before it.
/// All integers and floats are little-endian.
inline std::string encode_model(const Model& model) {
  detail::ByteWriter w;
  w.raw(std::string_view(kModelMagic, 4));
  w.u16(kModelFormatVersion);
  w.u32(model.lineage().size());
  w.raw(model.lineage());
  w.u32(model.input_shape().size());
  for (auto d : model.input_shape()) w.u32(d);
  w.u32(model.num_classes());
  w.u32(model.layers().size());
  for (const Layer& l : model.layers()) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.u32(l.stride);
    w.u32(l.padding);
    w.u32(l.pool);
    w.u8(static_cast<std::uint8_t>((l.weights ? 1 : 0) | (l.bias ? 2 : 0)));
    if (l.weights) detail::write_tensor(w, *l.weights);
    if (l.bias) detail::write_tensor(w, *l.bias);
  }
  const Digest d = Sha256().update(std::span(reinterpret_cast<const std::uint8_t*>(w.bytes().data()), w.bytes().size())).finish();
  w.raw(std::string_view(reinterpret_cast<const char*>(d.data()), d.size()));
  return std::move(w.bytes());
}

inline Model decode_model(std::string_view bytes, const std::string& name = "<memory>") {
  constexpr std::size_t kHeader = 6, kDigest = 32;
  if (bytes.size() < kHeader) throw CorruptionError(name + ": file too short to be a model");
  if (bytes.substr(0, 4) != std::string_view(kModelMagic, 4)) throw FormatError(name + ": not a model file (bad magic)");
  const std::uint16_t version = static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[4]) |
                                                           (static_cast<std::uint8_t>(bytes[5]) << 8));
  if (version != kModelFormatVersion)
    throw VersionError(name + ": model format version " + std::to_string(version) + " is not supported (expected version " +
                       std::to_string(kModelFormatVersion) + ")");
  if (bytes.size() < kHeader + kDigest) throw CorruptionError(name + ": truncated model file");
  const auto body = bytes.substr(0, bytes.size() - kDigest);
  const Digest expect = Sha256().update(std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size())).finish();
  if (std::memcmp(expect.data(), bytes.data() + body.size(), kDigest) != 0)
    throw CorruptionError(name + ": content digest mismatch (file is truncated or corrupted)");

  detail::ByteReader r(body, name);
  r.raw(kHeader);
  const std::uint32_t lineage_len = r.u32();
  std::string lineage(r.raw(lineage_len));
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError(name + ": input rank out of range");
  Shape input(rank);
  for (auto& d : input) d = r.u32();
  const std::size_t classes = r.u32();
  const std::uint32_t count = r.u32();
  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t kind = r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::Flatten)) throw FormatError(name + ": unknown layer kind " + std::to_string(kind));
    Layer l;
    l.kind = static_cast<LayerKind>(kind);
    l.stride = r.u32();
    l.padding = r.u32();
    l.pool = r.u32();
    const std::uint8_t flags = r.u8();
    if (flags & 1) l.weights = detail::read_tensor(r);
    if (flags & 2) l.bias = detail::read_tensor(r);
    if (l.weighted() != static_cast<bool>(flags & 1)) throw FormatError(name + ": layer " + std::to_string(i) + " weights inconsistent with kind");
    if (l.weighted() && ((l.kind == LayerKind::Dense && l.weights->rank() != 2) || (l.kind == LayerKind::Conv2d && l.weights->rank() != 4)))
      throw FormatError(name + ": layer " + std::to_string(i) + " has malformed weights");
    if (l.bias && (!l.weighted() || l.bias->shape() != Shape{l.weights->dim(0)}))
      throw FormatError(name + ": layer " + std::to_string(i) + " has malformed bias");
    if ((l.pooling() && l.pool == 0) || l.stride == 0) throw FormatError(name + ": layer " + std::to_string(i) + " has invalid hyperparameters");
    layers.push_back(std::move(l));
  }
  if (!r.done()) throw FormatError(name + ": trailing bytes after layer records");
  try {
    return Model(std::move(input), classes, std::move(layers), std::move(lineage));
  } catch (const ShapeError& e) {
    throw FormatError(name + ": " + e.what());
  }
}

inline void save_model(const Model& model, const std::filesystem::path& path) { write_file_bytes(path, encode_model(model)); }

inline Model load_model(const std::filesystem::path& path) { return decode_model(read_file_bytes(path), path.string()); }

}  // namespace infip
