#pragma once

// Named parameter registry and the "WCCW" weights container.
//
// Container layout (little-endian, no padding):
//   magic "WCCW" | version u16 | entry count u32 |
//   per entry: name length u16, UTF-8 name, rank u8, extents u32 x rank,
//              float32 values

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "wavecc/autodiff.hpp"

namespace wavecc {

template <class T>
class ParamRegistry {
 public:
  using Entry = std::pair<std::string, Var<T>>;

  Var<T> add(const std::string& name, Tensor<T> init) {
    if (index_.count(name) != 0) fail(ErrorKind::kState, "duplicate parameter name '" + name + "'");
    Var<T> v(std::move(init), true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, v);
    return v;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Var<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::kFormat, "unknown parameter '" + name + "'");
    return entries_[it->second].second;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  void zero_grad() const {
    for (const auto& e : entries_) const_cast<Var<T>&>(e.second).zero_grad();
  }

  /// Marks every parameter whose name starts with `prefix` as trainable or frozen.
  void set_trainable(const std::string& prefix, bool trainable) const {
    for (const auto& e : entries_) {
      if (e.first.rfind(prefix, 0) == 0) const_cast<Var<T>&>(e.second).set_requires_grad(trainable);
    }
  }

  void set_all_trainable(bool trainable) const { set_trainable("", trainable); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Copies values between registries of possibly different precision. Both
/// must have the same names and shapes.
template <class Dst, class Src>
void copy_values(const ParamRegistry<Src>& src, const ParamRegistry<Dst>& dst) {
  for (const auto& [name, var] : dst.entries()) {
    const Var<Src>& s = src.at(name);
    if (s.shape() != var.shape()) {
      fail(ErrorKind::kShape, "copy_values: '" + name + "' has shape " + shape_str(s.shape()) + " vs " +
                                  shape_str(var.shape()));
    }
    auto& out = const_cast<Var<Dst>&>(var).mutable_value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Dst>(s.value()[i]);
  }
}

inline constexpr char kWeightsMagic[4] = {'W', 'C', 'C', 'W'};
inline constexpr std::uint16_t kWeightsVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i))); }
  void u32(std::uint32_t v) { for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i))); }
  void u64(std::uint64_t v) { for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i))); }
  void i16(std::int16_t v) { u16(static_cast<std::uint16_t>(v)); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (pos_ + n > size_) fail(ErrorKind::kFormat, what_ + ": truncated at byte " + std::to_string(pos_));
  }
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace detail

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::kIo, "write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, "cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

template <class T>
std::vector<std::uint8_t> serialize_weights(const ParamRegistry<T>& registry) {
  detail::ByteWriter w;
  w.bytes(kWeightsMagic, 4);
  w.u16(kWeightsVersion);
  w.u32(static_cast<std::uint32_t>(registry.size()));
  for (const auto& [name, var] : registry.entries()) {
    if (!var.value().all_finite()) fail(ErrorKind::kNumeric, "weights: tensor '" + name + "' holds non-finite values");
    if (name.size() > 0xFFFF) fail(ErrorKind::kFormat, "weights: name too long");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(var.shape().size()));
    for (std::size_t e : var.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (std::size_t i = 0; i < var.size(); ++i) w.f32(static_cast<float>(var.value()[i]));
  }
  return std::move(w.buffer());
}

inline std::vector<StoredTensor> parse_weights(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size(), "weights container");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kWeightsMagic, 4) != 0) fail(ErrorKind::kFormat, "weights container: bad magic");
  const std::uint16_t version = r.u16();
  if (version != kWeightsVersion) {
    fail(ErrorKind::kFormat, "weights container: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<StoredTensor> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    StoredTensor t;
    t.name.resize(r.u16());
    r.bytes(t.name.data(), t.name.size());
    const std::uint8_t rank = r.u8();
    for (std::uint8_t d = 0; d < rank; ++d) t.shape.push_back(r.u32());
    const std::size_t n = numel(t.shape);
    r.need(n * 4);
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.values[i] = r.f32();
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) fail(ErrorKind::kFormat, "weights container: trailing bytes");
  return out;
}

/// 64-bit FNV-1a over a byte sequence.
inline std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

template <class T>
std::uint64_t weights_digest(const ParamRegistry<T>& registry) {
  const auto bytes = serialize_weights(registry);
  return fnv1a64(bytes.data(), bytes.size());
}

template <class T>
void save_weights(const ParamRegistry<T>& registry, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_weights(registry));
}

namespace detail {

template <class T>
void commit_tensors(const ParamRegistry<T>& registry,
                    const std::vector<std::pair<std::string, const StoredTensor*>>& plan) {
  for (const auto& [dst, src] : plan) {
    const Var<T>& v = registry.at(dst);
    if (v.shape() != src->shape) {
      fail(ErrorKind::kShape, "weights: tensor '" + src->name + "' has shape " + shape_str(src->shape) +
                                  ", slot '" + dst + "' expects " + shape_str(v.shape()));
    }
  }
  for (const auto& [dst, src] : plan) {
    auto& out = const_cast<Var<T>&>(registry.at(dst)).mutable_value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(src->values[i]);
  }
}

}  // namespace detail

/// Loads every registry entry from `bytes`. The name sets must match
/// exactly; on any error the registry is left untouched.
template <class T>
void load_weights_bytes(const ParamRegistry<T>& registry, const std::vector<std::uint8_t>& bytes) {
  const auto stored = parse_weights(bytes);
  std::map<std::string, const StoredTensor*> by_name;
  for (const auto& t : stored) {
    if (!registry.contains(t.name)) fail(ErrorKind::kFormat, "weights: unknown tensor '" + t.name + "'");
    by_name[t.name] = &t;
  }
  std::vector<std::pair<std::string, const StoredTensor*>> plan;
  for (const auto& [name, var] : registry.entries()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) fail(ErrorKind::kFormat, "weights: missing tensor '" + name + "'");
    plan.emplace_back(name, it->second);
  }
  detail::commit_tensors(registry, plan);
}

template <class T>
void load_weights(const ParamRegistry<T>& registry, const std::filesystem::path& path) {
  load_weights_bytes(registry, read_file_bytes(path));
}

/// Loads selected tensors under new names: `remap` maps container names to
/// registry names. Entries not named in the table are ignored.
template <class T>
void load_weights_remapped(const ParamRegistry<T>& registry, const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, std::string>>& remap) {
  const auto stored = parse_weights(read_file_bytes(path));
  std::map<std::string, const StoredTensor*> by_name;
  for (const auto& t : stored) by_name[t.name] = &t;
  std::vector<std::pair<std::string, const StoredTensor*>> plan;
  for (const auto& [src, dst] : remap) {
    auto it = by_name.find(src);
    if (it == by_name.end()) fail(ErrorKind::kFormat, "weights: missing tensor '" + src + "'");
    if (!registry.contains(dst)) fail(ErrorKind::kFormat, "weights: unknown target slot '" + dst + "'");
    plan.emplace_back(dst, it->second);
  }
  detail::commit_tensors(registry, plan);
}

}  // namespace wavecc
