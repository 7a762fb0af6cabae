// SPDX-License-Identifier: Apache-2.0
#include "tilecl/core_tiles.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

#include "tilecl/faults.hpp"

namespace tilecl {

namespace {

template <class Real>
Real dot(std::span<const Real> a, std::span<const Real> b) noexcept {
  Real s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": embedding dimensions differ (" + std::to_string(a) +
                     " vs " + std::to_string(b) + ")");
  }
}

void require_tiles(TileShape t) {
  if (t.rows == 0 || t.cols == 0) {
    throw ConfigError("tile sizes must be >= 1 (got " + shape_string(t.rows, t.cols) + ")");
  }
}

// Stable LSE of one tile row.
template <class Real>
Real row_lse(const Real* row, std::size_t n) noexcept {
  Real m = row[0];
  for (std::size_t q = 1; q < n; ++q) m = std::max(m, row[q]);
  if (active_fault() == Fault::no_max_shift) m = 0;
  if (std::isinf(m) && m > 0) return m;
  Real s = 0;
  for (std::size_t q = 0; q < n; ++q) s += std::exp(row[q] - m);
  return m + std::log(s);
}

template <class Real>
void fill_tile(Real* tile, std::size_t ld, RowsView<Real> images, std::size_t r0, std::size_t tr,
               RowsView<Real> texts, std::size_t c0, std::size_t tc, Real scale) noexcept {
  for (std::size_t p = 0; p < tr; ++p) {
    auto a = images.row(r0 + p);
    Real* out = tile + p * ld;
    for (std::size_t q = 0; q < tc; ++q) out[q] = scale * dot(a, texts.row(c0 + q));
  }
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

std::size_t resolve_parallelism(std::size_t requested) noexcept {
  if (requested > 0) return requested;
  return static_cast<std::size_t>(std::max(1, omp_get_max_threads()));
}

std::size_t effective_parallelism(std::size_t requested, std::size_t row_count,
                                  std::size_t tile_rows) noexcept {
  std::size_t blocks = tile_rows == 0 ? 1 : std::max<std::size_t>(1, ceil_div(row_count, tile_rows));
  return std::min(resolve_parallelism(requested), blocks);
}

template <class Real>
SimilarityTile<Real> similarity_tile(RowsView<Real> images, RowsView<Real> texts, Real scale) {
  require_same_dim(images.cols, texts.cols, "similarity_tile");
  SimilarityTile<Real> tile{images.first_row, texts.first_row, Matrix<Real>(images.rows, texts.rows)};
  fill_tile(tile.values.data(), texts.rows, images, 0, images.rows, texts, 0, texts.rows, scale);
  return tile;
}

template <class Real>
std::vector<Real> row_max(const SimilarityTile<Real>& tile) {
  std::vector<Real> out(tile.rows());
  for (std::size_t p = 0; p < tile.rows(); ++p) {
    auto r = tile.values.row(p);
    out[p] = *std::max_element(r.begin(), r.end());
  }
  return out;
}

template <class Real>
std::vector<Real> tile_lse(const SimilarityTile<Real>& tile) {
  if (tile.cols() == 0) throw ShapeError("tile_lse: tile has no columns");
  std::vector<Real> out(tile.rows());
  for (std::size_t p = 0; p < tile.rows(); ++p) out[p] = row_lse(tile.values.row(p).data(), tile.cols());
  return out;
}

template <class Real>
Real merge_lse(Real acc, Real incoming) noexcept {
  constexpr Real id = LseAccumulator<Real>::identity();
  if (acc == id) return incoming;
  if (incoming == id) return acc;
  Real hi = std::max(acc, incoming);
  Real lo = std::min(acc, incoming);
  Real correction = std::log1p(std::exp(lo - hi));
  if (active_fault() == Fault::merge_sign_flip) return hi - correction;
  return hi + correction;
}

template <class Real>
void accumulate_lse(LseAccumulator<Real>& acc, RowsView<Real> images, RowsView<Real> texts,
                    TileShape tiles, Real scale, std::size_t parallelism) {
  require_same_dim(images.cols, texts.cols, "local_lse_forward");
  require_tiles(tiles);
  if (acc.size() != images.rows) {
    throw ShapeError("local_lse_forward: accumulator has " + std::to_string(acc.size()) +
                     " entries for " + std::to_string(images.rows) + " image rows");
  }
  if (images.rows == 0 || texts.rows == 0) return;

  const std::size_t tr = std::min(tiles.rows, images.rows);
  const std::size_t tc = std::min(tiles.cols, texts.rows);
  const std::size_t row_blocks = ceil_div(images.rows, tr);
  const std::size_t p = effective_parallelism(parallelism, images.rows, tr);

  // One tile per thread, charged to the caller's scope.
  TrackerScope scope(Category::loss);
  std::vector<TrackedBuffer<Real>> workspace;
  workspace.reserve(p);
  for (std::size_t s = 0; s < p; ++s) workspace.emplace_back(tr * tc);

  Real* out = acc.values().data();
#pragma omp parallel for num_threads(static_cast<int>(p)) schedule(static)
  for (std::ptrdiff_t rb = 0; rb < static_cast<std::ptrdiff_t>(row_blocks); ++rb) {
    Real* tile = workspace[static_cast<std::size_t>(omp_get_thread_num())].data();
    const std::size_t r0 = static_cast<std::size_t>(rb) * tr;
    const std::size_t rows_here = std::min(tr, images.rows - r0);
    for (std::size_t c0 = 0; c0 < texts.rows; c0 += tc) {
      const std::size_t cols_here = std::min(tc, texts.rows - c0);
      fill_tile(tile, tc, images, r0, rows_here, texts, c0, cols_here, scale);
      for (std::size_t q = 0; q < rows_here; ++q) {
        out[r0 + q] = merge_lse(out[r0 + q], row_lse(tile + q * tc, cols_here));
      }
    }
  }
}

template <class Real>
LseAccumulator<Real> local_lse_forward(RowsView<Real> images, RowsView<Real> texts,
                                       TileShape tiles, Real scale, std::size_t parallelism) {
  require_same_dim(images.cols, texts.cols, "local_lse_forward");
  TrackerScope scope(Category::loss);
  LseAccumulator<Real> acc(images.rows);
  accumulate_lse(acc, images, texts, tiles, scale, parallelism);
  return acc;
}

template <class Real>
GradPair<Real> local_lse_backward(RowsView<Real> images, RowsView<Real> texts,
                                  std::span<const std::type_identity_t<Real>> lse, TileShape tiles, Real scale,
                                  std::size_t parallelism, std::span<Real> row_weight_sums) {
  require_same_dim(images.cols, texts.cols, "local_lse_backward");
  require_tiles(tiles);
  if (lse.size() != images.rows) {
    throw ShapeError("local_lse_backward: lse has " + std::to_string(lse.size()) +
                     " entries for " + std::to_string(images.rows) + " image rows");
  }
  if (!row_weight_sums.empty() && row_weight_sums.size() != images.rows) {
    throw ShapeError("local_lse_backward: weight-sum buffer has " +
                     std::to_string(row_weight_sums.size()) + " entries for " +
                     std::to_string(images.rows) + " image rows");
  }
  const std::size_t c = images.cols;

  TrackerScope grad_scope(Category::gradient);
  GradPair<Real> out{Matrix<Real>(images.rows, c), Matrix<Real>(texts.rows, c)};
  if (images.rows == 0 || texts.rows == 0) return out;

  const std::size_t tr = std::min(tiles.rows, images.rows);
  const std::size_t tc = std::min(tiles.cols, texts.rows);
  const std::size_t row_blocks = ceil_div(images.rows, tr);
  const std::size_t p = effective_parallelism(parallelism, images.rows, tr);

  // Per-thread text-gradient partials; thread 0 writes straight into the
  // output. Reduced in thread order afterwards.
  std::vector<Matrix<Real>> text_partials;
  for (std::size_t s = 1; s < p; ++s) text_partials.emplace_back(texts.rows, c);

  std::vector<TrackedBuffer<Real>> workspace;
  {
    TrackerScope loss_scope(Category::loss);
    workspace.reserve(p);
    for (std::size_t s = 0; s < p; ++s) workspace.emplace_back(tr * tc);
  }

  Real* weight_sums = row_weight_sums.empty() ? nullptr : row_weight_sums.data();
#pragma omp parallel for num_threads(static_cast<int>(p)) schedule(static)
  for (std::ptrdiff_t rb = 0; rb < static_cast<std::ptrdiff_t>(row_blocks); ++rb) {
    const std::size_t slot = static_cast<std::size_t>(omp_get_thread_num());
    Real* tile = workspace[slot].data();
    Matrix<Real>& d_text = slot == 0 ? out.d_text : text_partials[slot - 1];
    const std::size_t r0 = static_cast<std::size_t>(rb) * tr;
    const std::size_t rows_here = std::min(tr, images.rows - r0);
    for (std::size_t c0 = 0; c0 < texts.rows; c0 += tc) {
      const std::size_t cols_here = std::min(tc, texts.rows - c0);
      fill_tile(tile, tc, images, r0, rows_here, texts, c0, cols_here, scale);
      for (std::size_t q = 0; q < rows_here; ++q) {
        const Real l = lse[r0 + q];
        Real* w = tile + q * tc;
        Real row_sum = 0;
        for (std::size_t k = 0; k < cols_here; ++k) {
          w[k] = std::exp(w[k] - l);
          row_sum += w[k];
        }
        if (weight_sums) weight_sums[r0 + q] += row_sum;
      }
      for (std::size_t q = 0; q < rows_here; ++q) {
        auto di = out.d_image.row(r0 + q);
        const Real* w = tile + q * tc;
        for (std::size_t k = 0; k < cols_here; ++k) {
          const Real coef = w[k] * scale;
          auto t = texts.row(c0 + k);
          for (std::size_t d = 0; d < c; ++d) di[d] += coef * t[d];
        }
      }
      for (std::size_t k = 0; k < cols_here; ++k) {
        auto dt = d_text.row(c0 + k);
        for (std::size_t q = 0; q < rows_here; ++q) {
          const Real coef = tile[q * tc + k] * scale;
          auto a = images.row(r0 + q);
          for (std::size_t d = 0; d < c; ++d) dt[d] += coef * a[d];
        }
      }
    }
  }

  auto total = out.d_text.values();
  for (const auto& partial : text_partials) {
    auto v = partial.values();
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += v[i];
  }
  return out;
}

template <class Real>
Real loss_from_parts(std::span<const Real> diag, std::span<const Real> lse) {
  if (diag.size() != lse.size()) {
    throw ShapeError("loss_from_parts: " + std::to_string(diag.size()) + " diagonal entries vs " +
                     std::to_string(lse.size()) + " LSE entries");
  }
  if (diag.empty()) throw ShapeError("loss_from_parts: empty batch");
  Real s = 0;
  for (std::size_t i = 0; i < diag.size(); ++i) s += lse[i] - diag[i];
  return s / static_cast<Real>(diag.size());
}

template <class Real>
std::vector<Real> diagonal_similarities(RowsView<Real> images, RowsView<Real> texts, Real scale) {
  require_same_dim(images.cols, texts.cols, "diagonal_similarities");
  if (images.rows != texts.rows) {
    throw ShapeError("diagonal_similarities: " + std::to_string(images.rows) + " images vs " +
                     std::to_string(texts.rows) + " texts");
  }
  std::vector<Real> out(images.rows);
  for (std::size_t i = 0; i < images.rows; ++i) out[i] = scale * dot(images.row(i), texts.row(i));
  return out;
}

template <class Real>
GradPair<Real> assemble_full_gradients(GradPair<Real> partial, RowsView<Real> images,
                                       RowsView<Real> texts, Real scale, std::size_t batch) {
  if (images.rows != texts.rows || images.cols != texts.cols ||
      partial.d_image.rows() != images.rows || partial.d_image.cols() != images.cols ||
      partial.d_text.rows() != texts.rows || partial.d_text.cols() != texts.cols) {
    throw ShapeError("assemble_full_gradients: shapes disagree (images " +
                     shape_string(images.rows, images.cols) + ", texts " +
                     shape_string(texts.rows, texts.cols) + ", d_image " +
                     shape_string(partial.d_image.rows(), partial.d_image.cols()) + ", d_text " +
                     shape_string(partial.d_text.rows(), partial.d_text.cols()) + ")");
  }
  if (batch == 0) throw ShapeError("assemble_full_gradients: batch size is zero");
  const Real inv_b = Real(1) / static_cast<Real>(batch);
  for (std::size_t i = 0; i < images.rows; ++i) {
    auto di = partial.d_image.row(i);
    auto dt = partial.d_text.row(i);
    auto t = texts.row(i);
    auto a = images.row(i);
    for (std::size_t d = 0; d < images.cols; ++d) {
      di[d] = (di[d] - scale * t[d]) * inv_b;
      dt[d] = (dt[d] - scale * a[d]) * inv_b;
    }
  }
  return partial;
}

template <class Real>
TiledResult<Real> tiled_loss_and_grads(const Matrix<Real>& images, const Matrix<Real>& texts,
                                       TileShape tiles, Real scale, std::size_t parallelism) {
  if (images.rows() != texts.rows()) {
    throw ShapeError("tiled_loss_and_grads: " + std::to_string(images.rows()) + " images vs " +
                     std::to_string(texts.rows()) + " texts");
  }
  auto lse = local_lse_forward(images, texts, tiles, scale, parallelism);
  auto diag = diagonal_similarities(images.view(), texts.view(), scale);
  TiledResult<Real> r;
  r.loss = loss_from_parts<Real>(diag, lse.values());
  r.grads = assemble_full_gradients(
      local_lse_backward(images, texts, lse, tiles, scale, parallelism), images.view(),
      texts.view(), scale, images.rows());
  r.lse = lse.to_vector();
  return r;
}

#define TILECL_INSTANTIATE(Real)                                                                   \
  template SimilarityTile<Real> similarity_tile(RowsView<Real>, RowsView<Real>, Real);            \
  template std::vector<Real> row_max(const SimilarityTile<Real>&);                                \
  template std::vector<Real> tile_lse(const SimilarityTile<Real>&);                               \
  template Real merge_lse(Real, Real) noexcept;                                                   \
  template void accumulate_lse(LseAccumulator<Real>&, RowsView<Real>, RowsView<Real>, TileShape,  \
                               Real, std::size_t);                                                \
  template LseAccumulator<Real> local_lse_forward(RowsView<Real>, RowsView<Real>, TileShape, Real, \
                                                  std::size_t);                                   \
  template GradPair<Real> local_lse_backward(RowsView<Real>, RowsView<Real>,                      \
                                             std::span<const Real>, TileShape, Real, std::size_t, \
                                             std::span<Real>);                                    \
  template Real loss_from_parts(std::span<const Real>, std::span<const Real>);                    \
  template std::vector<Real> diagonal_similarities(RowsView<Real>, RowsView<Real>, Real);         \
  template GradPair<Real> assemble_full_gradients(GradPair<Real>, RowsView<Real>, RowsView<Real>, \
                                                  Real, std::size_t);                             \
  template TiledResult<Real> tiled_loss_and_grads(const Matrix<Real>&, const Matrix<Real>&,      \
                                                  TileShape, Real, std::size_t);

TILECL_INSTANTIATE(float)
TILECL_INSTANTIATE(double)

#undef TILECL_INSTANTIATE

}  // namespace tilecl
