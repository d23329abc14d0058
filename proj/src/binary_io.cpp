// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include "rme/binary_io.hpp"

namespace rme::io {

void write_parameters(std::ostream& os, const std::vector<NamedTensor>& params) {
  write<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    write_string(os, p.name);
    const auto& shape = p.tensor.shape();
    write<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) write<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  for (const auto& p : params) {
    for (double v : p.tensor.data()) write<double>(os, v);
  }
}

std::vector<NamedBlob> read_parameters(std::istream& is) {
  const auto count = read<std::uint32_t>(is);
  std::vector<NamedBlob> blobs(count);
  for (auto& b : blobs) {
    b.name = read_string(is);
    const auto rank = read<std::uint32_t>(is);
    if (rank == 0 || rank > 8) throw Error(ErrorKind::io, "parameter '" + b.name + "' has invalid rank");
    for (std::uint32_t i = 0; i < rank; ++i) b.shape.push_back(read<std::uint32_t>(is));
  }
  for (auto& b : blobs) {
    b.values.resize(shape_size(b.shape));
    for (auto& v : b.values) v = read<double>(is);
  }
  return blobs;
}

}  // namespace rme::io
