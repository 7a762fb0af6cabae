// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "reference.hpp"
#include "tilecl/errors.hpp"
#include "tilecl/features.hpp"
#include "tilecl/metrics.hpp"
#include "tilecl/oracle.hpp"
#include "tilecl/tracker.hpp"

namespace tilecl {
namespace {

using testing::from_rows;

TEST(NaiveLoss, SinglePairIsZero) {
  auto f = generate_features(1, 1, 5);
  EXPECT_EQ(oracle::naive_loss(f.images, f.texts, 2.0).loss, 0.0);
}

TEST(NaiveLoss, IdentityFeatures) {
  auto id = from_rows({{1, 0}, {0, 1}});
  EXPECT_NEAR(oracle::naive_loss(id, id, 1.0).loss, std::log(1 + std::exp(1.0)) - 1.0, 1e-15);
}

TEST(NaiveLoss, LargeScaleStaysFinite) {
  auto f = generate_features(2, 16, 4);
  auto r = oracle::naive_loss(f.images, f.texts, 1000.0);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_GE(r.loss, 0.0);
}

TEST(NaiveLoss, FieldsAreConsistent) {
  auto f = generate_features(3, 20, 6);
  auto r = oracle::naive_loss(f.images, f.texts, 1.3);
  auto x = testing::ref_similarity(f.images, f.texts, 1.3L);
  auto l = testing::ref_lse(x);
  double mean = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t j = 0; j < 20; ++j) {
      EXPECT_NEAR(r.similarity(i, j), static_cast<double>(x[i][j]), 1e-14);
    }
    EXPECT_NEAR(r.lse[i], static_cast<double>(l[i]), 1e-12 * std::abs(static_cast<double>(l[i])));
    mean += r.lse[i] - r.similarity(i, i);
  }
  EXPECT_NEAR(r.loss, mean / 20, 1e-14);
}

TEST(NaiveLoss, RowSoftmaxSumsToOne) {
  auto f = generate_features(4, 30, 6);
  auto r = oracle::naive_loss(f.images, f.texts, 5.0);
  for (std::size_t i = 0; i < 30; ++i) {
    double s = 0;
    for (double v : r.similarity.row(i)) s += std::exp(v - r.lse[i]);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(NaiveLoss, ShapeMismatch) {
  auto a = generate_features(5, 4, 3);
  auto b = generate_features(6, 5, 3);
  EXPECT_THROW(oracle::naive_loss(a.images, b.texts, 1.0), ShapeError);
}

TEST(NaiveLoss, ChargesQuadraticBufferToLoss) {
  auto f = generate_features(7, 32, 4);
  MemoryTracker t;
  TrackerScope s(t, Category::data);
  oracle::naive_loss(f.images, f.texts, 1.0);
  EXPECT_GE(t.peak(Category::loss), 32u * 32u * sizeof(double));
}

TEST(UnshiftedLse, OverflowsWhereShiftedDoesNot) {
  auto m = from_rows({{1000, 1000}, {0, 0}});
  EXPECT_TRUE(std::isinf(oracle::unshifted_lse(m)[0]));
  EXPECT_NEAR(oracle::loss_from_logits(m).lse[0], 1000 + std::log(2.0), 1e-12);
  EXPECT_THROW(oracle::loss_from_logits(from_rows({{1, 2}})), ShapeError);
}

TEST(NaiveGrads, SinglePairIsZero) {
  auto f = generate_features(8, 1, 3);
  auto g = oracle::naive_grads(f.images, f.texts, 1.0);
  for (double v : g.d_image.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.d_text.values()) EXPECT_EQ(v, 0.0);
}

TEST(NaiveGrads, MatchesReference) {
  auto f = generate_features(9, 24, 7);
  auto g = oracle::naive_grads(f.images, f.texts, 2.2);
  auto ref = testing::ref_grads(f.images, f.texts, 2.2L);
  EXPECT_LE(max_relative_error(g.d_image, ref.d_image), 1e-12);
  EXPECT_LE(max_relative_error(g.d_text, ref.d_text), 1e-12);
}

TEST(NaiveGrads, FiniteDifferencesOverSeeds) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto f = generate_features(100 + seed, 8, 4);
    auto g = oracle::naive_grads(f.images, f.texts, 1.0);
    auto loss = [&] { return testing::ref_loss(f.images, f.texts, 1.0L); };
    auto fd_i = testing::ref_fd(loss, f.images, 1e-6);
    auto fd_t = testing::ref_fd(loss, f.texts, 1e-6);
    ASSERT_LE(coordinate_tolerance_ratio(g.d_image, fd_i, 1e-5, 1e-8), 1.0) << "seed " << seed;
    ASSERT_LE(coordinate_tolerance_ratio(g.d_text, fd_t, 1e-5, 1e-8), 1.0) << "seed " << seed;
  }
}

TEST(NaiveGrads, ScaleDirectionalDerivative) {
  auto f = generate_features(10, 6, 5);
  const double s = 1.7;
  auto g = oracle::naive_grads(f.images, f.texts, s);
  double lhs = 0;
  for (std::size_t k = 0; k < f.images.size(); ++k) {
    lhs += g.d_image.values()[k] * f.images.values()[k] + g.d_text.values()[k] * f.texts.values()[k];
  }
  const double h = 1e-6;
  const double dlds = static_cast<double>((testing::ref_loss(f.images, f.texts, s + h) -
                                           testing::ref_loss(f.images, f.texts, s - h)) /
                                          (2 * h));
  EXPECT_NEAR(lhs, 2 * s * dlds, 1e-5 * std::abs(lhs) + 1e-8);
}

TEST(FiniteDiff, Quadratic) {
  EXPECT_NEAR(oracle::central_difference([](double x) { return x * x; }, 3.0, 1e-6), 6.0, 1e-6);
}

TEST(FiniteDiff, Constant) {
  EXPECT_NEAR(oracle::central_difference([](double) { return 4.2; }, 1.0, 1e-6), 0.0, 1e-9);
}

TEST(FiniteDiff, AgreesWithClosedForm) {
  auto f = generate_features(11, 4, 4);
  auto loss = [&] { return oracle::naive_loss(f.images, f.texts, 1.0).loss; };
  auto fd = oracle::finite_diff_grad(loss, f.images, 1e-6);
  auto g = oracle::naive_grads(f.images, f.texts, 1.0);
  EXPECT_LE(coordinate_tolerance_ratio(g.d_image, fd, 1e-5, 1e-8), 1.0);
}

TEST(Bidirectional, SinglePair) {
  auto f = generate_features(12, 1, 3);
  EXPECT_EQ(oracle::bidirectional_loss(f.images, f.texts, 1.0), 0.0);
}

TEST(Bidirectional, SymmetricInputs) {
  auto f = generate_features(13, 10, 3);
  const double one = oracle::naive_loss(f.images, f.images, 1.0).loss;
  EXPECT_NEAR(oracle::bidirectional_loss(f.images, f.images, 1.0), one, 1e-15);
}

TEST(Bidirectional, IsMeanOfDirections) {
  auto f = generate_features(14, 12, 5);
  const double li = static_cast<double>(testing::ref_loss(f.images, f.texts, 2.0L));
  const double lt = static_cast<double>(testing::ref_loss(f.texts, f.images, 2.0L));
  EXPECT_NEAR(oracle::bidirectional_loss(f.images, f.texts, 2.0), 0.5 * (li + lt), 1e-13);
  auto g = oracle::bidirectional_grads(f.images, f.texts, 2.0);
  auto gi = testing::ref_grads(f.images, f.texts, 2.0L);
  auto gt = testing::ref_grads(f.texts, f.images, 2.0L);
  Matrix<double> di(12, 5), dt(12, 5);
  for (std::size_t k = 0; k < di.size(); ++k) {
    di.values()[k] = 0.5 * (gi.d_image.values()[k] + gt.d_text.values()[k]);
    dt.values()[k] = 0.5 * (gi.d_text.values()[k] + gt.d_image.values()[k]);
  }
  EXPECT_LE(max_relative_error(g.d_image, di), 1e-12);
  EXPECT_LE(max_relative_error(g.d_text, dt), 1e-12);
}

}  // namespace
}  // namespace tilecl
