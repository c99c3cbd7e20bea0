#pragma once

// Little-endian 4-byte scalar I/O shared by the binary formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <ostream>

namespace corrseg::detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(sizeof(T) == 4);
  std::array<char, 4> bytes;
  std::memcpy(bytes.data(), &value, 4);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), 4);
}

template <typename T>
T get_le(const char* src) {
  static_assert(sizeof(T) == 4);
  std::array<char, 4> bytes;
  std::memcpy(bytes.data(), src, 4);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), 4);
  return value;
}

}  // namespace corrseg::detail
