// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

// Little-endian primitives shared by the .rmds and .rmod formats.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "rme/error.hpp"
#include "rme/tensor.hpp"

namespace rme::io {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void write(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error(ErrorKind::io, "unexpected end of file");
  return to_little(v);
}

inline void write_string(std::ostream& os, const std::string& s) {
  write<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const auto n = read<std::uint16_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw Error(ErrorKind::io, "unexpected end of file in string");
  return s;
}

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct NamedBlob {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Manifest (count, then name/rank/dims per tensor) followed by the raw
/// little-endian f64 blobs in manifest order.
void write_parameters(std::ostream& os, const std::vector<NamedTensor>& params);
std::vector<NamedBlob> read_parameters(std::istream& is);

}  // namespace rme::io
