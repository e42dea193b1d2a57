#pragma once
// Named parameter storage and the binary checkpoint container.
//
// Checkpoint layout (all integers and doubles little-endian):
//   magic "BLCKPT" + u16 version
//   u64 seed
//   u32 metadata count, then per entry: string key, string value
//   u32 parameter count, then per parameter:
//     string name, u32 rank, u64 extents[rank], f64 values[prod(extents)]
// where string = u32 byte length + bytes. Parameters appear in name order.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "borelog/core.hpp"

namespace borelog {

enum class Init { kFanInUniform, kZeros, kOnes };

using GradientMap = std::map<std::string, Tensor>;

class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 42) : seed_(seed) {}

  /// Returns the existing parameter, or creates it. Fan-in uniform draws come
  /// from a stream keyed by (seed, name) so initialization does not depend on
  /// declaration order.
  const Tensor& declare(const std::string& name, Shape shape, Init init, std::size_t fan_in = 0) {
    if (auto it = params_.find(name); it != params_.end()) {
      if (it->second.shape() != shape)
        throw Error("parameter '" + name + "' redeclared with shape " + shape_str(shape) + ", stored " +
                    shape_str(it->second.shape()));
      return it->second;
    }
    Tensor t(shape);
    switch (init) {
      case Init::kZeros: break;
      case Init::kOnes: t.fill(1.0); break;
      case Init::kFanInUniform: {
        if (fan_in == 0) throw Error("fan-in uniform init of '" + name + "' needs fan_in > 0");
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Rng rng = Rng::stream(seed_, name);
        for (double& v : t.values()) v = rng.uniform(-bound, bound);
        break;
      }
    }
    return params_.emplace(name, std::move(t)).first->second;
  }

  void set(const std::string& name, Tensor value) { params_[name] = std::move(value); }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Tensor>& entries() const noexcept { return params_; }
  std::map<std::string, Tensor>& entries() noexcept { return params_; }
  std::map<std::string, std::string>& metadata() noexcept { return metadata_; }
  const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  std::uint64_t seed_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, std::string> metadata_;
};

namespace detail {

inline constexpr char kCheckpointMagic[6] = {'B', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

inline void put_string(std::string& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto v = bytes_.substr(pos_, n);
    pos_ += n;
    return v;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const ParameterStore& store) {
  std::string out(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::put_le<std::uint16_t>(out, detail::kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, store.seed());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.metadata().size()));
  for (const auto& [k, v] : store.metadata()) {
    detail::put_string(out, k);
    detail::put_string(out, v);
  }
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store.entries()) {
    detail::put_string(out, name);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double v : t.values()) detail::put_le<double>(out, v);
  }
  return out;
}

inline ParameterStore deserialize_checkpoint(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.take(sizeof(detail::kCheckpointMagic)) != std::string_view(detail::kCheckpointMagic, 6))
    throw Error("not a borelog checkpoint (bad magic)");
  const auto version = in.get<std::uint16_t>();
  if (version != detail::kCheckpointVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version));
  ParameterStore store(in.get<std::uint64_t>());
  const auto n_meta = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto key = in.get_string();
    store.metadata()[key] = in.get_string();
  }
  const auto n_params = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    auto name = in.get_string();
    Shape shape(in.get<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
    Tensor t(shape);
    for (double& v : t.values()) v = in.get<double>();
    if (store.contains(name)) throw Error("duplicate parameter '" + name + "' in checkpoint");
    store.set(name, std::move(t));
  }
  if (!in.at_end()) throw Error("trailing bytes after checkpoint payload");
  return store;
}

inline void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const auto bytes = serialize_checkpoint(store);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline ParameterStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace borelog
