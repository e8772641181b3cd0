#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "srdl/segnet.hpp"

namespace srdl {

// Versioned binary parameter container. Layout, all little-endian:
//   magic "SRDL", u32 version,
//   per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank],
//               f64 values (row-major)
// Tensors repeat until end of file. Round-trips are bit exact.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail_ckpt {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  bool eof() const { return pos >= bytes.size(); }

  void need(std::size_t n, const char* what) {
    if (pos + n > bytes.size())
      throw parse_error(std::string("checkpoint: truncated while reading ") + what + " at byte " +
                        std::to_string(pos));
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 8;
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail_ckpt

inline std::string serialize_checkpoint(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::string out = "SRDL";
  detail_ckpt::put_u32(out, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    detail_ckpt::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail_ckpt::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::int64_t d : t.shape) detail_ckpt::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data) detail_ckpt::put_f64(out, v);
  }
  return out;
}

inline std::vector<std::pair<std::string, Tensor>> parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != "SRDL")
    throw parse_error("checkpoint: bad magic (expected SRDL)");
  detail_ckpt::Reader r{bytes, 4};
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw parse_error("checkpoint: unsupported format version " + std::to_string(version));
  std::vector<std::pair<std::string, Tensor>> out;
  while (!r.eof()) {
    const std::uint32_t name_len = r.u32("name length");
    const std::string name = r.str(name_len, "name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw parse_error("checkpoint: implausible rank for tensor " + name);
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("dimension");
      if (d == 0) throw parse_error("checkpoint: zero dimension for tensor " + name);
      shape.push_back(static_cast<std::int64_t>(d));
      numel *= d;
    }
    Tensor t(shape);
    for (std::int64_t i = 0; i < numel; ++i) t.data[static_cast<std::size_t>(i)] = r.f64("value");
    out.emplace_back(name, std::move(t));
  }
  return out;
}

inline std::string serialize_segnet(const SegNetParams& params) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  visit_params(const_cast<SegNetParams&>(params), [&](const std::string& name, Tensor& t) {
    tensors.emplace_back(name, t);
  });
  return serialize_checkpoint(tensors);
}

// Loads values into an already-shaped parameter set; names and shapes must
// match the layout produced by the same config.
inline void deserialize_segnet(const std::string& bytes, SegNetParams& params) {
  const auto tensors = parse_checkpoint(bytes);
  std::size_t i = 0;
  visit_params(params, [&](const std::string& name, Tensor& t) {
    if (i >= tensors.size()) throw parse_error("checkpoint: missing tensor " + name);
    if (tensors[i].first != name)
      throw parse_error("checkpoint: expected tensor " + name + ", found " + tensors[i].first);
    if (tensors[i].second.shape != t.shape)
      throw parse_error("checkpoint: shape mismatch for " + name + ": file has " +
                        shape_str(tensors[i].second.shape) + ", config wants " + shape_str(t.shape));
    t = tensors[i].second;
    ++i;
  });
  if (i != tensors.size()) throw parse_error("checkpoint: file carries extra tensors");
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open file: " + path);
  std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return out;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw error("cannot write file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw error("short write to file: " + path);
}

inline void save_segnet(const std::string& path, const SegNetParams& params) {
  write_file(path, serialize_segnet(params));
}

inline void load_segnet(const std::string& path, SegNetParams& params) {
  deserialize_segnet(read_file(path), params);
}

}  // namespace srdl
