#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include "unirep/errors.hpp"

namespace unirep::io {

template <typename T>
T byteswap_value(T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  std::memcpy(&v, b, sizeof(T));
  return v;
}

/// Writes `values` as raw little-endian bytes.
template <typename T>
void write_le(std::ostream& os, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) {
      T s = byteswap_value(v);
      os.write(reinterpret_cast<const char*>(&s), sizeof(T));
    }
  }
}

template <typename T>
void read_le(std::istream& is, std::span<T> out) {
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()));
  if constexpr (std::endian::native != std::endian::little) {
    for (T& v : out) v = byteswap_value(v);
  }
}

template <typename T>
void write_blob(const std::filesystem::path& p, std::span<const T> values) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + p.string());
  write_le(os, values);
  if (!os) throw IoError("short write to " + p.string());
}

template <typename T>
std::vector<T> read_blob(const std::filesystem::path& p, std::size_t count) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot read " + p.string());
  std::vector<T> out(count);
  read_le(is, std::span<T>(out));
  if (!is) throw IoError("truncated blob " + p.string());
  return out;
}

}  // namespace unirep::io
