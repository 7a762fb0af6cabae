// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>
#include <thread>
#include <vector>

#include "tilecl/errors.hpp"
#include "tilecl/matrix.hpp"
#include "tilecl/tracker.hpp"

namespace tilecl {
namespace {

constexpr std::size_t kMB = 1 << 20;

TEST(Tracker, SingleAllocationPeaksThenFrees) {
  MemoryTracker t;
  {
    TrackerScope s(t, Category::loss);
    TrackedBuffer<char> a(kMB);
    EXPECT_EQ(t.live(Category::loss), kMB);
  }
  EXPECT_EQ(t.peak(Category::loss), kMB);
  EXPECT_EQ(t.live(Category::loss), 0u);
}

TEST(Tracker, SequentialAllocationsDoNotStack) {
  MemoryTracker t;
  TrackerScope s(t, Category::loss);
  { TrackedBuffer<char> a(kMB); }
  { TrackedBuffer<char> b(kMB); }
  EXPECT_EQ(t.peak(Category::loss), kMB);
}

TEST(Tracker, OverlappingAllocationsStack) {
  MemoryTracker t;
  TrackerScope s(t, Category::loss);
  TrackedBuffer<char> a(kMB);
  TrackedBuffer<char> b(kMB);
  EXPECT_EQ(t.peak(Category::loss), 2 * kMB);
}

TEST(Tracker, CategoriesAreDisjoint) {
  MemoryTracker t;
  TrackerScope d(t, Category::data);
  Matrix<double> x(4, 4);
  {
    TrackerScope l(Category::loss);
    Matrix<double> y(2, 2);
    {
      TrackerScope g(Category::gradient);
      Matrix<double> z(1, 3);
      EXPECT_EQ(t.live(Category::gradient), 3 * sizeof(double));
    }
    EXPECT_EQ(t.live(Category::loss), 4 * sizeof(double));
  }
  EXPECT_EQ(t.live(Category::data), 16 * sizeof(double));
  EXPECT_EQ(t.live(Category::loss), 0u);
  EXPECT_EQ(t.live(Category::gradient), 0u);
  EXPECT_EQ(t.peak_total(), (16 + 4 + 3) * sizeof(double));
}

TEST(Tracker, OutOfOrderCloseIsUsageError) {
  MemoryTracker t;
  TrackerScope outer(t, Category::data);
  TrackerScope inner(t, Category::loss);
  EXPECT_THROW(outer.close(), UsageError);
  inner.close();
  outer.close();
  EXPECT_EQ(t.scope_violations(), 0u);
}

TEST(Tracker, NoScopeMeansUntracked) {
  MemoryTracker t;
  TrackedBuffer<double> a(128);
  EXPECT_EQ(t.peak_total(), 0u);
  EXPECT_EQ(current_attribution().tracker, nullptr);
}

TEST(Tracker, LossCeilingRaisesBeforeAllocating) {
  MemoryTracker t(std::size_t{1000});
  TrackerScope s(t, Category::loss);
  TrackedBuffer<char> ok(600);
  EXPECT_THROW(TrackedBuffer<char>(500), MemoryBudgetError);
  EXPECT_EQ(t.live(Category::loss), 600u);
  TrackerScope d(Category::data);
  EXPECT_NO_THROW(TrackedBuffer<char>(5000));
}

TEST(Tracker, AdoptMovesChargeToCurrentScope) {
  MemoryTracker a, b;
  std::optional<Matrix<double>> m;
  {
    TrackerScope s(a, Category::data);
    m.emplace(8, 8);
  }
  {
    TrackerScope s(b, Category::data);
    m->adopt_current_attribution();
  }
  EXPECT_EQ(a.live(Category::data), 0u);
  EXPECT_EQ(b.live(Category::data), 64 * sizeof(double));
  m.reset();
  EXPECT_EQ(b.live(Category::data), 0u);
}

TEST(Tracker, ConcurrentAllocationsKeepPeakAboveLive) {
  MemoryTracker t;
  std::atomic<std::size_t> max_seen{0};
  std::vector<std::thread> threads;
  for (int k = 0; k < 4; ++k) {
    threads.emplace_back([&] {
      TrackerScope s(t, Category::loss);
      for (int r = 0; r < 2000; ++r) {
        TrackedBuffer<char> buf(64 + static_cast<std::size_t>(r % 7));
        const std::size_t live = t.live(Category::loss);
        std::size_t prev = max_seen.load();
        while (live > prev && !max_seen.compare_exchange_weak(prev, live)) {
        }
        ASSERT_GE(t.peak(Category::loss), live);
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(t.live(Category::loss), 0u);
  EXPECT_GE(t.peak(Category::loss), max_seen.load());
  EXPECT_LE(t.peak(Category::loss), 4u * 70u);
}

}  // namespace
}  // namespace tilecl
