#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "racanet/core/error.hpp"
#include "racanet/core/tensor.hpp"

namespace racanet {

// Flat binary archive: named tensors (raw float64, little-endian) plus small
// string metadata. Save/load round-trips are bitwise; entries are stored in
// sorted-name order.
class TensorArchive {
 public:
  std::map<std::string, Tensor> items;
  std::map<std::string, std::string> meta;

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("malformed-file", "cannot write " + path);
    f.write(kMagic, 4);
    write_u32(f, 1);  // version
    write_u32(f, static_cast<uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      write_str(f, k);
      write_str(f, v);
    }
    write_u32(f, static_cast<uint32_t>(items.size()));
    for (const auto& [name, t] : items) {
      write_str(f, name);
      write_u32(f, static_cast<uint32_t>(t.ndim()));
      for (int i = 0; i < t.ndim(); ++i) write_u32(f, static_cast<uint32_t>(t.dim(i)));
      f.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(double)) * t.size());
    }
    if (!f) throw DataError("malformed-file", "write failed: " + path);
  }

  static TensorArchive load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("malformed-file", "cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
      throw DataError("malformed-file", "bad archive magic in " + path);
    uint32_t version = read_u32(f, path);
    if (version != 1) throw DataError("malformed-file", "unsupported archive version in " + path);
    TensorArchive a;
    uint32_t nmeta = read_u32(f, path);
    for (uint32_t i = 0; i < nmeta; ++i) {
      std::string k = read_str(f, path);
      a.meta[k] = read_str(f, path);
    }
    uint32_t nitems = read_u32(f, path);
    for (uint32_t i = 0; i < nitems; ++i) {
      std::string name = read_str(f, path);
      uint32_t ndim = read_u32(f, path);
      Shape shape;
      for (uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(read_u32(f, path)));
      Tensor t(shape);
      f.read(reinterpret_cast<char*>(t.data()),
             static_cast<std::streamsize>(sizeof(double)) * t.size());
      if (!f) throw DataError("malformed-file", "truncated archive " + path);
      a.items[name] = std::move(t);
    }
    return a;
  }

 private:
  static constexpr const char kMagic[5] = "RTA1";

  static void write_u32(std::ofstream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static void write_str(std::ofstream& f, const std::string& s) {
    write_u32(f, static_cast<uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static uint32_t read_u32(std::ifstream& f, const std::string& path) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!f) throw DataError("malformed-file", "truncated archive " + path);
    return v;
  }
  static std::string read_str(std::ifstream& f, const std::string& path) {
    uint32_t n = read_u32(f, path);
    std::string s(n, '\0');
    f.read(s.data(), n);
    if (!f) throw DataError("malformed-file", "truncated archive " + path);
    return s;
  }
};

}  // namespace racanet
