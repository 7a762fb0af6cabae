// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "tilecl/core_tiles.hpp"

namespace tilecl::serial {

template <class Real>
LseAccumulator<Real> local_lse_forward(const Matrix<Real>& images, const Matrix<Real>& texts,
                                       TileShape tiles, Real scale) {
  if (tiles.rows == 0 || tiles.cols == 0) throw ConfigError("tile sizes must be >= 1");
  LseAccumulator<Real> acc(images.rows());
  for (std::size_t r0 = 0; r0 < images.rows(); r0 += tiles.rows) {
    auto rows = images.view_rows(r0, std::min(tiles.rows, images.rows() - r0));
    for (std::size_t c0 = 0; c0 < texts.rows(); c0 += tiles.cols) {
      auto cols = texts.view_rows(c0, std::min(tiles.cols, texts.rows() - c0));
      auto tile = similarity_tile(rows, cols, scale);
      auto l = tile_lse(tile);
      for (std::size_t p = 0; p < l.size(); ++p) acc[r0 + p] = merge_lse(acc[r0 + p], l[p]);
    }
  }
  return acc;
}

template <class Real>
GradPair<Real> local_lse_backward(const Matrix<Real>& images, const Matrix<Real>& texts,
                                  std::span<const std::type_identity_t<Real>> lse, TileShape tiles, Real scale) {
  if (tiles.rows == 0 || tiles.cols == 0) throw ConfigError("tile sizes must be >= 1");
  if (lse.size() != images.rows()) throw ShapeError("serial::local_lse_backward: lse length");
  const std::size_t c = images.cols();
  GradPair<Real> out{Matrix<Real>(images.rows(), c), Matrix<Real>(texts.rows(), c)};
  for (std::size_t r0 = 0; r0 < images.rows(); r0 += tiles.rows) {
    auto rows = images.view_rows(r0, std::min(tiles.rows, images.rows() - r0));
    for (std::size_t c0 = 0; c0 < texts.rows(); c0 += tiles.cols) {
      auto cols = texts.view_rows(c0, std::min(tiles.cols, texts.rows() - c0));
      auto tile = similarity_tile(rows, cols, scale);
      for (std::size_t p = 0; p < tile.rows(); ++p) {
        for (std::size_t q = 0; q < tile.cols(); ++q) {
          const Real w = std::exp(tile.values(p, q) - lse[r0 + p]) * scale;
          for (std::size_t d = 0; d < c; ++d) {
            out.d_image(r0 + p, d) += w * texts(c0 + q, d);
            out.d_text(c0 + q, d) += w * images(r0 + p, d);
          }
        }
      }
    }
  }
  return out;
}

template LseAccumulator<float> local_lse_forward(const Matrix<float>&, const Matrix<float>&,
                                                 TileShape, float);
template LseAccumulator<double> local_lse_forward(const Matrix<double>&, const Matrix<double>&,
                                                  TileShape, double);
template GradPair<float> local_lse_backward(const Matrix<float>&, const Matrix<float>&,
                                            std::span<const float>, TileShape, float);
template GradPair<double> local_lse_backward(const Matrix<double>&, const Matrix<double>&,
                                             std::span<const double>, TileShape, double);

}  // namespace tilecl::serial
