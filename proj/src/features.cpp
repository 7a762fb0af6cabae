// SPDX-License-Identifier: Apache-2.0
#include "tilecl/features.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

namespace tilecl {

namespace {

constexpr char kMagic[4] = {'T', 'L', 'S', 'E'};

static_assert(std::endian::native == std::endian::little,
              "feature file I/O assumes a little-endian host");

void fill_unit_rows(Matrix<double>& m, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    double norm = 0;
    do {
      norm = 0;
      for (double& v : row) {
        v = normal(rng);
        norm += v * v;
      }
    } while (norm == 0);
    norm = std::sqrt(norm);
    for (double& v : row) v /= norm;
  }
}

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

FeaturePair generate_features(std::uint64_t seed, std::size_t b, std::size_t c) {
  if (b == 0 || c == 0) throw ConfigError("generate_features: b and c must be >= 1");
  std::mt19937_64 rng(seed);
  FeaturePair f{Matrix<double>(b, c), Matrix<double>(b, c)};
  fill_unit_rows(f.images, rng);
  fill_unit_rows(f.texts, rng);
  return f;
}

void write_features(const std::filesystem::path& path, const FeaturePair& features) {
  const auto& im = features.images;
  const auto& tx = features.texts;
  if (im.rows() != tx.rows() || im.cols() != tx.cols()) {
    throw ShapeError("write_features: images " + shape_string(im.rows(), im.cols()) +
                     " vs texts " + shape_string(tx.rows(), tx.cols()));
  }
  if (im.rows() > std::numeric_limits<std::uint32_t>::max() ||
      im.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw ShapeError("write_features: dimensions exceed u32");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  write_u32(out, static_cast<std::uint32_t>(im.rows()));
  write_u32(out, static_cast<std::uint32_t>(im.cols()));
  out.write(reinterpret_cast<const char*>(im.data()),
            static_cast<std::streamsize>(im.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(tx.data()),
            static_cast<std::streamsize>(tx.size() * sizeof(double)));
  if (!out) throw IoError("write to " + path.string() + " failed");
}

FeaturePair read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw IoError(path.string() + ": bad magic (expected \"TLSE\")");
  }
  const std::uint32_t b = read_u32(in);
  const std::uint32_t c = read_u32(in);
  if (!in) throw IoError(path.string() + ": truncated header");
  if (b == 0 || c == 0) throw IoError(path.string() + ": empty feature matrix");
  FeaturePair f{Matrix<double>(b, c), Matrix<double>(b, c)};
  for (Matrix<double>* m : {&f.images, &f.texts}) {
    in.read(reinterpret_cast<char*>(m->data()),
            static_cast<std::streamsize>(m->size() * sizeof(double)));
    if (!in) throw IoError(path.string() + ": truncated payload");
  }
  for (const Matrix<double>* m : {&f.images, &f.texts}) {
    for (double v : m->values()) {
      if (!std::isfinite(v)) throw IoError(path.string() + ": non-finite feature value");
    }
  }
  return f;
}

}  // namespace tilecl
