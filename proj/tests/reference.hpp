// SPDX-License-Identifier: Apache-2.0
//
// Test-only dense reference in long double, written without any library
// kernel so library results can be checked against an independent oracle.
#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <vector>

#include "tilecl/matrix.hpp"

namespace tilecl::testing {

using LMat = std::vector<std::vector<long double>>;

inline Matrix<double> from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = rows.begin()->size();
  Matrix<double> m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

template <class Real>
LMat ref_similarity(const Matrix<Real>& images, const Matrix<Real>& texts, long double scale) {
  LMat x(images.rows(), std::vector<long double>(texts.rows(), 0.0L));
  for (std::size_t i = 0; i < images.rows(); ++i) {
    for (std::size_t j = 0; j < texts.rows(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < images.cols(); ++k) {
        s += static_cast<long double>(images(i, k)) * static_cast<long double>(texts(j, k));
      }
      x[i][j] = scale * s;
    }
  }
  return x;
}

inline std::vector<long double> ref_lse(const LMat& x) {
  std::vector<long double> out;
  for (const auto& row : x) {
    long double m = row[0];
    for (long double v : row) m = std::max(m, v);
    long double s = 0;
    for (long double v : row) s += std::exp(v - m);
    out.push_back(m + std::log(s));
  }
  return out;
}

template <class Real>
long double ref_loss(const Matrix<Real>& images, const Matrix<Real>& texts, long double scale) {
  const LMat x = ref_similarity(images, texts, scale);
  const auto l = ref_lse(x);
  long double total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) total += l[i] - x[i][i];
  return total / static_cast<long double>(x.size());
}

struct RefGrads {
  Matrix<double> d_image;
  Matrix<double> d_text;
};

// d_image[i] = (scale/b) sum_j (P_ij - delta_ij) T_j
// d_text[j]  = (scale/b) sum_i (P_ij - delta_ij) I_i
template <class Real>
RefGrads ref_grads(const Matrix<Real>& images, const Matrix<Real>& texts, long double scale) {
  const std::size_t b = images.rows();
  const std::size_t c = images.cols();
  const LMat x = ref_similarity(images, texts, scale);
  const auto l = ref_lse(x);
  LMat di(b, std::vector<long double>(c, 0.0L));
  LMat dt(b, std::vector<long double>(c, 0.0L));
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const long double w = std::exp(x[i][j] - l[i]) - (i == j ? 1.0L : 0.0L);
      for (std::size_t k = 0; k < c; ++k) {
        di[i][k] += w * static_cast<long double>(texts(j, k));
        dt[j][k] += w * static_cast<long double>(images(i, k));
      }
    }
  }
  RefGrads g{Matrix<double>(b, c), Matrix<double>(b, c)};
  const long double f = scale / static_cast<long double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      g.d_image(i, k) = static_cast<double>(f * di[i][k]);
      g.d_text(i, k) = static_cast<double>(f * dt[i][k]);
    }
  }
  return g;
}

// Central differences of ref_loss with respect to every entry of `param`.
inline Matrix<double> ref_fd(const std::function<long double()>& loss, Matrix<double>& param,
                             double h) {
  Matrix<double> g(param.rows(), param.cols());
  for (std::size_t i = 0; i < param.rows(); ++i) {
    for (std::size_t k = 0; k < param.cols(); ++k) {
      const double saved = param(i, k);
      param(i, k) = saved + h;
      const long double up = loss();
      param(i, k) = saved - h;
      const long double down = loss();
      param(i, k) = saved;
      g(i, k) = static_cast<double>((up - down) / (2.0L * h));
    }
  }
  return g;
}

}  // namespace tilecl::testing
