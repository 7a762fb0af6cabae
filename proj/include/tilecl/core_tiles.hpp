// SPDX-License-Identifier: Apache-2.0
//
// Tile-level math for the tiled contrastive loss on one worker's shard.
//
// The similarity matrix X = scale * I * T^T is never materialized. Row
// blocks of t_r images are visited in parallel; within a block the text
// columns are walked in t_c-wide tiles, each tile's row-wise log-sum-exp is
// taken with a row-max shift and folded into a running accumulator. Backward
// recomputes the same tiles and turns them into softmax weights
// exp(x_ij - l_i) against the stored global LSE.
//
// All kernels are instantiated for float and double.
#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <type_traits>
#include <vector>

#include "tilecl/matrix.hpp"

namespace tilecl {

struct TileShape {
  std::size_t rows = 32;  // t_r
  std::size_t cols = 32;  // t_c
};

template <class Real>
struct SimilarityTile {
  std::size_t row_offset = 0;
  std::size_t col_offset = 0;
  Matrix<Real> values;

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t cols() const noexcept { return values.cols(); }
};

// Running log-sum-exp per row. Entries start at -inf, the identity of the
// merge, so the first merge is an assignment.
template <class Real>
class LseAccumulator {
 public:
  static constexpr Real identity() noexcept { return -std::numeric_limits<Real>::infinity(); }

  LseAccumulator() = default;
  explicit LseAccumulator(std::size_t n) : values_(n) {
    for (auto& v : values_) v = identity();
  }

  std::size_t size() const noexcept { return values_.size(); }
  Real operator[](std::size_t i) const noexcept { return values_[i]; }
  Real& operator[](std::size_t i) noexcept { return values_[i]; }
  bool is_identity(std::size_t i) const noexcept { return values_[i] == identity(); }

  std::span<const Real> values() const noexcept { return values_.span(); }
  std::span<Real> values() noexcept { return values_.span(); }
  std::vector<Real> to_vector() const { return {values_.begin(), values_.end()}; }

 private:
  TrackedBuffer<Real> values_;
};

template <class Real>
struct GradPair {
  Matrix<Real> d_image;
  Matrix<Real> d_text;
};

// Scaled similarity tile: values[p][q] = scale * <images[p], texts[q]>.
template <class Real>
SimilarityTile<Real> similarity_tile(RowsView<Real> images, RowsView<Real> texts, Real scale);

// Row-wise max of a tile.
template <class Real>
std::vector<Real> row_max(const SimilarityTile<Real>& tile);

// Row-wise log-sum-exp of a tile, shifted by the row max so entries far
// beyond exp overflow still give finite results. NaN entries propagate.
template <class Real>
std::vector<Real> tile_lse(const SimilarityTile<Real>& tile);

// log(exp(acc) + exp(incoming)) as max + log1p(exp(-|a - b|)); identity-aware.
template <class Real>
Real merge_lse(Real acc, Real incoming) noexcept;

// Folds the LSE of every (images x texts) tile into `acc`, one entry per
// image row. Row blocks run in parallel with `parallelism` OpenMP threads
// (0 = omp default). One t_r x t_c tile is live per thread.
template <class Real>
void accumulate_lse(LseAccumulator<Real>& acc, RowsView<Real> images, RowsView<Real> texts,
                    TileShape tiles, Real scale, std::size_t parallelism = 0);

template <class Real>
LseAccumulator<Real> local_lse_forward(RowsView<Real> images, RowsView<Real> texts,
                                       TileShape tiles, Real scale, std::size_t parallelism = 0);

template <class Real>
LseAccumulator<Real> local_lse_forward(const Matrix<Real>& images, const Matrix<Real>& texts,
                                       TileShape tiles, Real scale, std::size_t parallelism = 0) {
  return local_lse_forward(images.view(), texts.view(), tiles, scale, parallelism);
}

// LSE-term gradients: d_image[i] = sum_j w_ij * scale * T_j and
// d_text[j] = sum_i w_ij * scale * I_i with w_ij = exp(x_ij - lse_i).
// `lse` must hold global LSE values for the image rows. When
// `row_weight_sums` is non-empty it receives sum_j w_ij per image row.
template <class Real>
GradPair<Real> local_lse_backward(RowsView<Real> images, RowsView<Real> texts,
                                  std::span<const std::type_identity_t<Real>> lse, TileShape tiles, Real scale,
                                  std::size_t parallelism = 0,
                                  std::span<Real> row_weight_sums = {});

template <class Real>
GradPair<Real> local_lse_backward(const Matrix<Real>& images, const Matrix<Real>& texts,
                                  const LseAccumulator<Real>& lse, TileShape tiles, Real scale,
                                  std::size_t parallelism = 0,
                                  std::span<Real> row_weight_sums = {}) {
  return local_lse_backward(images.view(), texts.view(), lse.values(), tiles, scale, parallelism,
                            row_weight_sums);
}

// (1/b) * sum_i (lse_i - diag_i).
template <class Real>
Real loss_from_parts(std::span<const Real> diag, std::span<const Real> lse);

// scale * <images[i], texts[i]> for every aligned pair.
template <class Real>
std::vector<Real> diagonal_similarities(RowsView<Real> images, RowsView<Real> texts, Real scale);

// Adds the positive-pair term and the 1/b factor:
//   d_image[i] = (partial.d_image[i] - scale * T_i) / b
//   d_text[j]  = (partial.d_text[j]  - scale * I_j) / b
// Row i of `images` pairs with row i of `texts`.
template <class Real>
GradPair<Real> assemble_full_gradients(GradPair<Real> partial, RowsView<Real> images,
                                       RowsView<Real> texts, Real scale, std::size_t batch);

// Single-worker forward + backward over whole matrices.
template <class Real>
struct TiledResult {
  Real loss{};
  std::vector<Real> lse;
  GradPair<Real> grads;
};

template <class Real>
TiledResult<Real> tiled_loss_and_grads(const Matrix<Real>& images, const Matrix<Real>& texts,
                                       TileShape tiles, Real scale, std::size_t parallelism = 0);

std::size_t resolve_parallelism(std::size_t requested) noexcept;

// Threads a kernel will actually use for `row_count` rows.
std::size_t effective_parallelism(std::size_t requested, std::size_t row_count,
                                  std::size_t tile_rows) noexcept;

namespace serial {

// Straight-line reference versions of the kernels above: no OpenMP, one
// freshly allocated tile per step, built only from similarity_tile,
// tile_lse and merge_lse.
template <class Real>
LseAccumulator<Real> local_lse_forward(const Matrix<Real>& images, const Matrix<Real>& texts,
                                       TileShape tiles, Real scale);

template <class Real>
GradPair<Real> local_lse_backward(const Matrix<Real>& images, const Matrix<Real>& texts,
                                  std::span<const std::type_identity_t<Real>> lse, TileShape tiles, Real scale);

}  // namespace serial

}  // namespace tilecl
