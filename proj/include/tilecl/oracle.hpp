// SPDX-License-Identifier: Apache-2.0
//
// Dense reference implementations. Everything here materializes the full
// b x b similarity matrix (charged to the loss category of the current
// tracker scope) and shares no code with the tiled kernels.
#pragma once

#include <functional>
#include <vector>

#include "tilecl/core_tiles.hpp"
#include "tilecl/matrix.hpp"

namespace tilecl::oracle {

template <class Real>
struct DenseLossResult {
  Real loss{};
  Matrix<Real> similarity;  // b x b, scale * I * T^T
  std::vector<Real> lse;    // row-wise log-sum-exp of `similarity`
};

// Image-to-text contrastive loss with a row-max-stabilized softmax.
template <class Real>
DenseLossResult<Real> naive_loss(const Matrix<Real>& images, const Matrix<Real>& texts, Real scale);

// Loss over a given logits matrix; rows are shifted by their max before
// exponentiation, and row i's positive is column i.
template <class Real>
DenseLossResult<Real> loss_from_logits(Matrix<Real> logits);

// log sum_j exp(x_ij) per row with no shift. Overflows for large logits.
template <class Real>
std::vector<Real> unshifted_lse(const Matrix<Real>& logits);

// Closed-form gradients of naive_loss.
template <class Real>
GradPair<Real> naive_grads(const Matrix<Real>& images, const Matrix<Real>& texts, Real scale);

// Same, reusing the similarity matrix of `dense` in place so peak memory
// stays at one b x b buffer.
template <class Real>
GradPair<Real> naive_grads_from(DenseLossResult<Real>&& dense, const Matrix<Real>& images,
                                const Matrix<Real>& texts, Real scale);

// (L_I + L_T) / 2, L_T being naive_loss with the roles swapped.
template <class Real>
Real bidirectional_loss(const Matrix<Real>& images, const Matrix<Real>& texts, Real scale);

// Gradients of bidirectional_loss.
template <class Real>
GradPair<Real> bidirectional_grads(const Matrix<Real>& images, const Matrix<Real>& texts,
                                   Real scale);

// (f(x + h) - f(x - h)) / 2h.
double central_difference(const std::function<double(double)>& f, double x, double h);

// Central differences of `loss` with respect to every entry of `param`.
// `param` is perturbed in place and restored.
Matrix<double> finite_diff_grad(const std::function<double()>& loss, Matrix<double>& param,
                                double h);

}  // namespace tilecl::oracle
