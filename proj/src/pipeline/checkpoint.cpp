#include "mars/pipeline/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace mars {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'R', 'S', 'C', 'K', 'P', 'T'};

// All payloads are little-endian; this codebase targets little-endian hosts
// and converts explicitly for the header fields.
void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, const std::string& path)
      : data_(data), size_(size), path_(path) {}

  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > size_) throw FormatError("checkpoint: truncated file '" + path_ + "'");
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::uint16_t u16() {
    const std::uint8_t* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  bool done() const { return pos_ == size_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string path_;
};

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kI64: return 8;
    case DType::kU8: return 1;
    case DType::kU64: return 8;
  }
  throw FormatError("checkpoint: unknown dtype tag");
}

void Checkpoint::put_f32(const std::string& name, const float* data, std::vector<std::uint32_t> dims) {
  CheckpointEntry entry;
  entry.dtype = DType::kF32;
  entry.dims = std::move(dims);
  entry.payload.resize(entry.element_count() * 4);
  std::memcpy(entry.payload.data(), data, entry.payload.size());
  entries[name] = std::move(entry);
}

void Checkpoint::put_i64(const std::string& name, const std::vector<std::int64_t>& values) {
  CheckpointEntry entry;
  entry.dtype = DType::kI64;
  entry.dims = {static_cast<std::uint32_t>(values.size())};
  entry.payload.resize(values.size() * 8);
  std::memcpy(entry.payload.data(), values.data(), entry.payload.size());
  entries[name] = std::move(entry);
}

void Checkpoint::put_u64(const std::string& name, const std::vector<std::uint64_t>& values) {
  CheckpointEntry entry;
  entry.dtype = DType::kU64;
  entry.dims = {static_cast<std::uint32_t>(values.size())};
  entry.payload.resize(values.size() * 8);
  std::memcpy(entry.payload.data(), values.data(), entry.payload.size());
  entries[name] = std::move(entry);
}

void Checkpoint::put_string(const std::string& name, const std::string& text) {
  CheckpointEntry entry;
  entry.dtype = DType::kU8;
  entry.dims = {static_cast<std::uint32_t>(text.size())};
  entry.payload.assign(text.begin(), text.end());
  entries[name] = std::move(entry);
}

std::vector<float> Checkpoint::get_f32(const std::string& name) const {
  const CheckpointEntry& entry = at(name);
  if (entry.dtype != DType::kF32) throw FormatError("checkpoint: '" + name + "' is not f32");
  std::vector<float> out(entry.element_count());
  std::memcpy(out.data(), entry.payload.data(), entry.payload.size());
  return out;
}

std::vector<std::int64_t> Checkpoint::get_i64(const std::string& name) const {
  const CheckpointEntry& entry = at(name);
  if (entry.dtype != DType::kI64) throw FormatError("checkpoint: '" + name + "' is not i64");
  std::vector<std::int64_t> out(entry.element_count());
  std::memcpy(out.data(), entry.payload.data(), entry.payload.size());
  return out;
}

std::vector<std::uint64_t> Checkpoint::get_u64(const std::string& name) const {
  const CheckpointEntry& entry = at(name);
  if (entry.dtype != DType::kU64) throw FormatError("checkpoint: '" + name + "' is not u64");
  std::vector<std::uint64_t> out(entry.element_count());
  std::memcpy(out.data(), entry.payload.data(), entry.payload.size());
  return out;
}

std::string Checkpoint::get_string(const std::string& name) const {
  const CheckpointEntry& entry = at(name);
  if (entry.dtype != DType::kU8) throw FormatError("checkpoint: '" + name + "' is not a byte string");
  return std::string(entry.payload.begin(), entry.payload.end());
}

std::int64_t Checkpoint::get_scalar_i64(const std::string& name) const {
  const auto values = get_i64(name);
  if (values.size() != 1) throw FormatError("checkpoint: '" + name + "' is not a scalar");
  return values[0];
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::vector<std::uint8_t> buffer;
  buffer.insert(buffer.end(), kMagic, kMagic + 8);
  append_u32(buffer, Checkpoint::kVersion);
  append_u32(buffer, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& [name, entry] : ckpt.entries) {  // std::map: sorted by name
    if (name.size() > 0xffff) throw ContractError("checkpoint: entry name too long");
    append_u16(buffer, static_cast<std::uint16_t>(name.size()));
    buffer.insert(buffer.end(), name.begin(), name.end());
    buffer.push_back(static_cast<std::uint8_t>(entry.dtype));
    if (entry.dims.size() > 0xff) throw ContractError("checkpoint: rank too large");
    buffer.push_back(static_cast<std::uint8_t>(entry.dims.size()));
    for (std::uint32_t d : entry.dims) append_u32(buffer, d);
    if (entry.payload.size() != entry.element_count() * dtype_size(entry.dtype)) {
      throw ContractError("checkpoint: entry '" + name + "' payload size mismatch");
    }
    buffer.insert(buffer.end(), entry.payload.begin(), entry.payload.end());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_checkpoint: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
  if (!out) throw IoError("save_checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open '" + path + "'");
  std::vector<std::uint8_t> buffer((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buffer.size() < 16 || std::memcmp(buffer.data(), kMagic, 8) != 0) {
    const std::string found(buffer.begin(), buffer.begin() + std::min<std::size_t>(8, buffer.size()));
    throw FormatError("load_checkpoint: bad magic in '" + path + "', expected MARSCKPT, found '" +
                      found + "'");
  }
  Reader reader(buffer.data() + 8, buffer.size() - 8, path);
  const std::uint32_t version = reader.u32();
  if (version != Checkpoint::kVersion) {
    throw FormatError("load_checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = reader.u32();
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = reader.u16();
    const std::uint8_t* name_bytes = reader.take(name_len);
    std::string name(name_bytes, name_bytes + name_len);
    CheckpointEntry entry;
    const std::uint8_t tag = *reader.take(1);
    if (tag > static_cast<std::uint8_t>(DType::kU64)) {
      throw FormatError("load_checkpoint: unknown dtype tag " + std::to_string(tag));
    }
    entry.dtype = static_cast<DType>(tag);
    const std::uint8_t rank = *reader.take(1);
    for (std::uint8_t r = 0; r < rank; ++r) entry.dims.push_back(reader.u32());
    const std::size_t bytes = entry.element_count() * dtype_size(entry.dtype);
    const std::uint8_t* payload = reader.take(bytes);
    entry.payload.assign(payload, payload + bytes);
    ckpt.entries[name] = std::move(entry);
  }
  if (!reader.done()) throw FormatError("load_checkpoint: trailing bytes in '" + path + "'");
  return ckpt;
}

}  // namespace mars
