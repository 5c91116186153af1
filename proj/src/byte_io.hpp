#pragma once

// Little-endian encode/decode helpers shared by the binary file formats.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "dbprune/errors.hpp"

namespace dbprune::detail {

template <typename T>
T read_le(const unsigned char* p) {
  static_assert(std::is_unsigned_v<T>);
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= T(p[i]) << (8 * i);
  return v;
}

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline float read_f32(const unsigned char* p) {
  return std::bit_cast<float>(read_le<std::uint32_t>(p));
}

inline double read_f64(const unsigned char* p) {
  return std::bit_cast<double>(read_le<std::uint64_t>(p));
}

inline void put_f32(std::string& out, float f) {
  put_le(out, std::bit_cast<std::uint32_t>(f));
}

inline void put_f64(std::string& out, double f) {
  put_le(out, std::bit_cast<std::uint64_t>(f));
}

inline std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spill(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace dbprune::detail
