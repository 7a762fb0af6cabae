// SPDX-License-Identifier: Apache-2.0
#include "tilecl/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace tilecl::oracle {

namespace {

void require_pairs(std::size_t bi, std::size_t ci, std::size_t bt, std::size_t ct) {
  if (bi != bt || ci != ct) {
    throw ShapeError("oracle: images " + shape_string(bi, ci) + " vs texts " +
                     shape_string(bt, ct));
  }
  if (bi == 0) throw ShapeError("oracle: empty batch");
}

}  // namespace

template <class Real>
DenseLossResult<Real> loss_from_logits(Matrix<Real> logits) {
  const std::size_t b = logits.rows();
  if (b == 0 || logits.cols() != b) {
    throw ShapeError("loss_from_logits: logits must be square, got " +
                     shape_string(logits.rows(), logits.cols()));
  }
  DenseLossResult<Real> r;
  r.lse.resize(b);
  Real total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    auto row = logits.row(i);
    const Real m = *std::max_element(row.begin(), row.end());
    Real s = 0;
    for (Real x : row) s += std::exp(x - m);
    const Real log_norm = std::log(s);
    r.lse[i] = m + log_norm;
    // -log softmax_ii computed on shifted logits.
    total += log_norm - (row[i] - m);
  }
  r.loss = total / static_cast<Real>(b);
  r.similarity = std::move(logits);
  return r;
}

template <class Real>
DenseLossResult<Real> naive_loss(const Matrix<Real>& images, const Matrix<Real>& texts,
                                 Real scale) {
  require_pairs(images.rows(), images.cols(), texts.rows(), texts.cols());
  const std::size_t b = images.rows();
  const std::size_t c = images.cols();
  TrackerScope scope(Category::loss);
  Matrix<Real> x(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      Real s = 0;
      for (std::size_t k = 0; k < c; ++k) s += images(i, k) * texts(j, k);
      x(i, j) = scale * s;
    }
  }
  return loss_from_logits(std::move(x));
}

template <class Real>
std::vector<Real> unshifted_lse(const Matrix<Real>& logits) {
  std::vector<Real> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    Real s = 0;
    for (Real x : logits.row(i)) s += std::exp(x);
    out[i] = std::log(s);
  }
  return out;
}

template <class Real>
GradPair<Real> naive_grads_from(DenseLossResult<Real>&& dense, const Matrix<Real>& images,
                                const Matrix<Real>& texts, Real scale) {
  const std::size_t b = images.rows();
  const std::size_t c = images.cols();
  Matrix<Real>& p = dense.similarity;
  // dL/dx_ij = (softmax_ij - [i == j]) / b
  const Real inv_b = Real(1) / static_cast<Real>(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      p(i, j) = (std::exp(p(i, j) - dense.lse[i]) - (i == j ? Real(1) : Real(0))) * inv_b;
    }
  }
  TrackerScope scope(Category::gradient);
  GradPair<Real> g{Matrix<Real>(b, c), Matrix<Real>(b, c)};
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const Real coef = p(i, j) * scale;
      for (std::size_t k = 0; k < c; ++k) {
        g.d_image(i, k) += coef * texts(j, k);
        g.d_text(j, k) += coef * images(i, k);
      }
    }
  }
  return g;
}

template <class Real>
GradPair<Real> naive_grads(const Matrix<Real>& images, const Matrix<Real>& texts, Real scale) {
  return naive_grads_from(naive_loss(images, texts, scale), images, texts, scale);
}

template <class Real>
Real bidirectional_loss(const Matrix<Real>& images, const Matrix<Real>& texts, Real scale) {
  const Real li = naive_loss(images, texts, scale).loss;
  const Real lt = naive_loss(texts, images, scale).loss;
  return (li + lt) / 2;
}

template <class Real>
GradPair<Real> bidirectional_grads(const Matrix<Real>& images, const Matrix<Real>& texts,
                                   Real scale) {
  auto forward = naive_grads(images, texts, scale);
  auto reverse = naive_grads(texts, images, scale);
  auto di = forward.d_image.values();
  auto dt = forward.d_text.values();
  auto ri = reverse.d_image.values();  // w.r.t. texts
  auto rt = reverse.d_text.values();   // w.r.t. images
  for (std::size_t k = 0; k < di.size(); ++k) {
    di[k] = (di[k] + rt[k]) / 2;
    dt[k] = (dt[k] + ri[k]) / 2;
  }
  return forward;
}

double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

Matrix<double> finite_diff_grad(const std::function<double()>& loss, Matrix<double>& param,
                                double h) {
  Matrix<double> g(param.rows(), param.cols());
  auto v = param.values();
  auto out = g.values();
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double saved = v[k];
    v[k] = saved + h;
    const double up = loss();
    v[k] = saved - h;
    const double down = loss();
    v[k] = saved;
    out[k] = (up - down) / (2 * h);
  }
  return g;
}

#define TILECL_INSTANTIATE(Real)                                                                \
  template DenseLossResult<Real> naive_loss(const Matrix<Real>&, const Matrix<Real>&, Real);   \
  template DenseLossResult<Real> loss_from_logits(Matrix<Real>);                               \
  template std::vector<Real> unshifted_lse(const Matrix<Real>&);                               \
  template GradPair<Real> naive_grads(const Matrix<Real>&, const Matrix<Real>&, Real);         \
  template GradPair<Real> naive_grads_from(DenseLossResult<Real>&&, const Matrix<Real>&,       \
                                           const Matrix<Real>&, Real);                         \
  template Real bidirectional_loss(const Matrix<Real>&, const Matrix<Real>&, Real);            \
  template GradPair<Real> bidirectional_grads(const Matrix<Real>&, const Matrix<Real>&, Real);

TILECL_INSTANTIATE(float)
TILECL_INSTANTIATE(double)

#undef TILECL_INSTANTIATE

}  // namespace tilecl::oracle
