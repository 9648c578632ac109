// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary helpers shared by the checkpoint and feature formats.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace midas {

/// File could not be opened, read, or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File opened fine but its contents are malformed.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, DimMismatch, Truncated, BadValue };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline const char* to_string(FormatError::Kind k) {
  switch (k) {
    case FormatError::Kind::BadMagic: return "bad magic";
    case FormatError::Kind::DimMismatch: return "dimension mismatch";
    case FormatError::Kind::Truncated: return "truncated payload";
    case FormatError::Kind::BadValue: return "bad value";
  }
  return "?";
}

namespace le {

template <typename T>
void write(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes;
  is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw FormatError(FormatError::Kind::Truncated, std::string("truncated while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace le
}  // namespace midas
