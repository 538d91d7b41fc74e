#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lf/params.hpp"

namespace lf {

// Checkpoint binary layout: magic "LFCK", version u32, entry count u32, then
// per entry: name length u16, UTF-8 name, rank u8, dims as u32s, f32 payload.
// All integers and floats little-endian. Round-trips are bit-exact.

namespace detail {

inline void put_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32_array(std::ostream& os, const std::vector<float>& v) {
  for (const float f : v) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
}

inline void get_f32_array(std::istream& is, std::vector<float>& v) {
  for (auto& f : v) {
    const std::uint32_t bits = get_u32(is);
    std::memcpy(&f, &bits, 4);
  }
}

}  // namespace detail

struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint_entries(const std::string& path,
                                     const std::vector<CheckpointEntry>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
  os.write("LFCK", 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw CheckpointError("parameter name too long: " + e.name);
    detail::put_u16(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    os.put(static_cast<char>(e.shape.size()));
    for (const int d : e.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
    detail::put_f32_array(os, e.data);
  }
  if (!os) throw CheckpointError("write failed: " + path);
}

inline std::vector<CheckpointEntry> read_checkpoint_entries(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "LFCK", 4) != 0) {
    throw CheckpointError("bad checkpoint magic in " + path);
  }
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " +
                          path);
  }
  const std::uint32_t count = detail::get_u32(is);
  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    const std::uint16_t name_len = detail::get_u16(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    const int rank = is.get();
    if (rank < 0) throw CheckpointError("truncated checkpoint: " + path);
    e.shape.resize(static_cast<std::size_t>(rank));
    std::int64_t numel = 1;
    for (auto& d : e.shape) {
      d = static_cast<int>(detail::get_u32(is));
      numel *= d;
    }
    e.data.resize(static_cast<std::size_t>(numel));
    detail::get_f32_array(is, e.data);
    if (!is) throw CheckpointError("truncated checkpoint: " + path);
  }
  return entries;
}

/// Serializes all parameters and buffers of a store.
inline void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::vector<CheckpointEntry> entries;
  entries.reserve(store.params().size() + store.buffers().size());
  for (const auto& p : store.params()) {
    entries.push_back({p->name, p->tensor.shape(), p->tensor.data()});
  }
  for (const auto& [name, tensor] : store.buffers()) {
    entries.push_back({name, tensor.shape(), tensor.data()});
  }
  write_checkpoint_entries(path, entries);
}

/// Loads by name into an existing store; every entry must match an existing
/// parameter or buffer of identical shape, and every parameter must be filled.
inline void load_checkpoint(ParamStore& store, const std::string& path) {
  const auto entries = read_checkpoint_entries(path);
  std::size_t filled = 0;
  for (const auto& e : entries) {
    Tensor target;
    if (auto p = store.find(e.name)) {
      target = p->tensor;
    } else {
      target = store.find_buffer(e.name);
    }
    if (!target.valid()) throw CheckpointError("checkpoint entry '" + e.name + "' has no match in model");
    if (target.shape() != e.shape) {
      throw CheckpointError("shape mismatch for '" + e.name + "': checkpoint " +
                            shape_str(e.shape) + " vs model " + shape_str(target.shape()));
    }
    target.mutable_data() = e.data;
    ++filled;
  }
  const std::size_t expected = store.params().size() + store.buffers().size();
  if (filled != expected) {
    throw CheckpointError("checkpoint " + path + " fills " + std::to_string(filled) + " of " +
                          std::to_string(expected) + " tensors");
  }
}

}  // namespace lf
