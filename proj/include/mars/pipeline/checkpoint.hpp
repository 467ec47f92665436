#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mars/error.hpp"
#include "mars/tensor.hpp"

namespace mars {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kI64 = 2, kU8 = 3, kU64 = 4 };

std::size_t dtype_size(DType dtype);

/// One named array in a checkpoint: dtype, dims, little-endian payload.
struct CheckpointEntry {
  DType dtype = DType::kF32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
  }
};

/// Version-checked container for model weights, codebooks, optimizer state
/// and RNG state. Entries are kept sorted by name; saving twice yields
/// identical bytes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::map<std::string, CheckpointEntry> entries;

  bool has(const std::string& name) const { return entries.count(name) > 0; }

  const CheckpointEntry& at(const std::string& name) const {
    const auto it = entries.find(name);
    if (it == entries.end()) throw FormatError("checkpoint: missing entry '" + name + "'");
    return it->second;
  }

  void put_f32(const std::string& name, const float* data, std::vector<std::uint32_t> dims);
  void put_i64(const std::string& name, const std::vector<std::int64_t>& values);
  void put_u64(const std::string& name, const std::vector<std::uint64_t>& values);
  void put_string(const std::string& name, const std::string& text);

  std::vector<float> get_f32(const std::string& name) const;
  std::vector<std::int64_t> get_i64(const std::string& name) const;
  std::vector<std::uint64_t> get_u64(const std::string& name) const;
  std::string get_string(const std::string& name) const;
  std::int64_t get_scalar_i64(const std::string& name) const;

  template <typename S>
  void put_tensor(const std::string& name, const Tensor<S>& tensor) {
    std::vector<float> data(static_cast<std::size_t>(tensor.numel()));
    for (Index i = 0; i < tensor.numel(); ++i) data[static_cast<std::size_t>(i)] = static_cast<float>(tensor.at(i));
    std::vector<std::uint32_t> dims;
    for (Index d : tensor.shape()) dims.push_back(static_cast<std::uint32_t>(d));
    put_f32(name, data.data(), std::move(dims));
  }

  /// Copies stored 32-bit values into an existing tensor of matching shape.
  template <typename S>
  void load_into(const std::string& name, Tensor<S>& tensor) const {
    const CheckpointEntry& entry = at(name);
    if (entry.dtype != DType::kF32) throw FormatError("checkpoint: '" + name + "' is not f32");
    if (static_cast<Index>(entry.element_count()) != tensor.numel()) {
      throw FormatError("checkpoint: '" + name + "' has " + std::to_string(entry.element_count()) +
                        " values, expected " + std::to_string(tensor.numel()));
    }
    const std::vector<float> data = get_f32(name);
    for (Index i = 0; i < tensor.numel(); ++i) {
      tensor.mutable_values()[i] = static_cast<S>(data[static_cast<std::size_t>(i)]);
    }
  }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mars
