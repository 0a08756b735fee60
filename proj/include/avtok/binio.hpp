#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "avtok/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary file formats assume a little-endian host");

namespace avtok {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw FormatError(std::string("truncated while reading ") + what);
  return v;
}

inline void write_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* data, std::size_t n,
                       const char* what) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n))
    throw FormatError(std::string("truncated while reading ") + what);
}

inline std::ofstream open_out(const std::string& path, bool binary = true) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw FormatError("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path, bool binary = true) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw FormatError("cannot open for reading: " + path);
  return is;
}

inline std::string read_file(const std::string& path) {
  auto is = open_in(path);
  std::string s((std::istreambuf_iterator<char>(is)),
                std::istreambuf_iterator<char>());
  return s;
}

inline void write_file(const std::string& path, const std::string& content) {
  auto os = open_out(path);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw FormatError("failed writing: " + path);
}

}  // namespace avtok
