// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "tilecl/matrix.hpp"

namespace tilecl {

// |a - ref| / max(|ref|, floor). NaN or inf on either side yields +inf.
inline double relative_error(double a, double ref, double floor = 1e-8) {
  if (!std::isfinite(a) || !std::isfinite(ref)) return std::numeric_limits<double>::infinity();
  return std::abs(a - ref) / std::max(std::abs(ref), floor);
}

// max_k |a_k - ref_k| / max(max_k |ref_k|, floor): error relative to the
// reference's max-norm.
template <class A, class B>
double max_relative_error(std::span<const A> a, std::span<const B> ref, double floor = 1e-8) {
  if (a.size() != ref.size()) return std::numeric_limits<double>::infinity();
  double diff = 0;
  double scale = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double x = static_cast<double>(a[k]);
    const double y = static_cast<double>(ref[k]);
    if (!std::isfinite(x) || !std::isfinite(y)) return std::numeric_limits<double>::infinity();
    diff = std::max(diff, std::abs(x - y));
    scale = std::max(scale, std::abs(y));
  }
  return diff / std::max(scale, floor);
}

template <class A, class B>
double max_relative_error(const Matrix<A>& a, const Matrix<B>& ref, double floor = 1e-8) {
  if (a.rows() != ref.rows() || a.cols() != ref.cols()) {
    return std::numeric_limits<double>::infinity();
  }
  return max_relative_error<A, B>(a.values(), ref.values(), floor);
}

// Worst ratio |a_k - ref_k| / max(rel * |ref_k|, abs_tol) over entries;
// <= 1 means every coordinate is within the looser of the two tolerances.
template <class A, class B>
double coordinate_tolerance_ratio(const Matrix<A>& a, const Matrix<B>& ref, double rel,
                                  double abs_tol) {
  if (a.rows() != ref.rows() || a.cols() != ref.cols()) {
    return std::numeric_limits<double>::infinity();
  }
  double worst = 0;
  auto av = a.values();
  auto rv = ref.values();
  for (std::size_t k = 0; k < av.size(); ++k) {
    const double x = static_cast<double>(av[k]);
    const double y = static_cast<double>(rv[k]);
    if (!std::isfinite(x) || !std::isfinite(y)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, std::abs(x - y) / std::max(rel * std::abs(y), abs_tol));
  }
  return worst;
}

template <class T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

}  // namespace tilecl
