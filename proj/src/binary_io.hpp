#pragma once

// Little-endian primitive IO shared by the checkpoint and dataset cache formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "eirm/errors.hpp"

namespace eirm::binio {

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, std::string_view what) {
  std::array<char, sizeof(T)> bytes;
  const auto offset = static_cast<long long>(in.tellg());
  if (!in.read(bytes.data(), sizeof(T))) {
    throw FormatError(std::string(what) + ": truncated at byte offset " + std::to_string(offset));
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& in, std::string_view magic, std::string_view what) {
  std::string got(magic.size(), '\0');
  if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw FormatError(std::string(what) + ": bad magic at byte offset 0, expected \"" +
                      std::string(magic) + "\"");
  }
}

}  // namespace eirm::binio
