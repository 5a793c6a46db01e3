#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "mvke/tensor.hpp"

namespace mvke {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered, name-unique collection of learnable tensors.
template <typename T>
class ParameterStore {
 public:
  Tensor<T>& add(std::string name, Shape shape, std::vector<T> values) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), Tensor<T>::from(std::move(shape), std::move(values), true)});
    return params_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return params_[it->second].tensor;
  }
  Tensor<T>& get(const std::string& name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).get(name));
  }

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// Deep copy of every value (used for best-epoch snapshots).
  std::vector<std::vector<T>> snapshot() const {
    std::vector<std::vector<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor.values());
    return out;
  }

  void restore(const std::vector<std::vector<T>>& values) {
    if (values.size() != params_.size()) throw ConfigError("snapshot does not match parameter set");
    for (std::size_t i = 0; i < values.size(); ++i) {
      auto dst = params_[i].tensor.mutable_data();
      if (dst.size() != values[i].size()) throw ConfigError("snapshot size mismatch for " + params_[i].name);
      std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
  }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Checkpoint file: flat little-endian binary.
//
//   magic "MVKECKP1" | u32 scalar bytes (4|8) | u32 header length | header (JSON text)
//   u64 parameter count
//   per parameter: u32 name length | name | u32 rank | u64 dims[rank] | values
//
// The header carries the model configuration so a checkpoint is self-describing.
// ---------------------------------------------------------------------------

namespace detail {

template <typename U>
void write_le(std::ostream& os, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw DataError("unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U v;
  std::memcpy(&v, bytes, sizeof(U));
  return v;
}

inline constexpr char kCheckpointMagic[8] = {'M', 'V', 'K', 'E', 'C', 'K', 'P', '1'};

}  // namespace detail

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;  // widened; exact for both precisions
};

struct CheckpointContents {
  std::size_t scalar_bytes = 0;
  std::string header;
  std::vector<CheckpointTensor> tensors;
};

template <typename T>
void write_checkpoint(const std::string& path, const ParameterStore<T>& params, const std::string& header) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_le<std::uint32_t>(os, sizeof(T));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  detail::write_le<std::uint64_t>(os, params.size());
  for (const auto& p : params.all()) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) detail::write_le<std::uint64_t>(os, d);
    for (T v : p.tensor.data()) detail::write_le<T>(os, v);
  }
  if (!os) throw DataError("failed writing checkpoint: " + path);
}

inline CheckpointContents read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path);
  CheckpointContents out;
  out.scalar_bytes = detail::read_le<std::uint32_t>(is);
  if (out.scalar_bytes != 4 && out.scalar_bytes != 8) throw DataError("unsupported scalar width in " + path);
  const auto header_len = detail::read_le<std::uint32_t>(is);
  out.header.resize(header_len);
  if (!is.read(out.header.data(), header_len)) throw DataError("truncated checkpoint header: " + path);
  const auto count = detail::read_le<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name.resize(detail::read_le<std::uint32_t>(is));
    if (!is.read(t.name.data(), static_cast<std::streamsize>(t.name.size())))
      throw DataError("truncated checkpoint: " + path);
    const auto rank = detail::read_le<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(detail::read_le<std::uint64_t>(is));
    const std::size_t n = shape_size(t.shape);
    t.values.resize(n);
    for (std::size_t j = 0; j < n; ++j)
      t.values[j] = out.scalar_bytes == 4 ? static_cast<double>(detail::read_le<float>(is))
                                          : detail::read_le<double>(is);
    out.tensors.push_back(std::move(t));
  }
  return out;
}

/// Copies checkpoint values into an existing store with matching names/shapes.
template <typename T>
void load_into(ParameterStore<T>& params, const CheckpointContents& ckpt) {
  if (ckpt.tensors.size() != params.size())
    throw DataError("checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                    std::to_string(params.size()));
  for (const auto& t : ckpt.tensors) {
    if (!params.contains(t.name)) throw DataError("checkpoint tensor not in model: " + t.name);
    auto& dst = params.get(t.name);
    if (dst.shape() != t.shape)
      throw DataError("shape mismatch for " + t.name + ": " + shape_str(t.shape) + " vs " +
                      shape_str(dst.shape()));
    auto out = dst.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(t.values[i]);
  }
}

}  // namespace mvke
