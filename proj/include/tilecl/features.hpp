// SPDX-License-Identifier: Apache-2.0
//
// Synthetic feature generation and the raw binary feature format:
//
//   offset 0   4 bytes   magic "TLSE"
//   offset 4   u32 LE    b (rows)
//   offset 8   u32 LE    c (cols)
//   offset 12  b*c f64 LE  image features, row-major
//   ...        b*c f64 LE  text features, row-major
#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>

#include "tilecl/matrix.hpp"

namespace tilecl {

struct FeaturePair {
  Matrix<double> images;
  Matrix<double> texts;
};

// Rows drawn from an isotropic Gaussian and L2-normalized; images first,
// then texts, from one mt19937_64 stream seeded with `seed`.
FeaturePair generate_features(std::uint64_t seed, std::size_t b, std::size_t c);

void write_features(const std::filesystem::path& path, const FeaturePair& features);

// Throws IoError on open/read failure, bad magic, or truncated payload.
FeaturePair read_features(const std::filesystem::path& path);

}  // namespace tilecl
