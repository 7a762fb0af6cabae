// SPDX-License-Identifier: Apache-2.0
//
// Allocation tracker: byte-accurate live/peak accounting per category.
//
// Attribution is thread-local. A TrackerScope binds a tracker and a category
// to the calling thread; every TrackedBuffer allocated while the scope is the
// innermost one is charged to that (tracker, category) pair and refunded to
// the same pair on release, regardless of which thread frees it. Kernels that
// fan out to OpenMP threads allocate their workspaces before the parallel
// region so the charge lands on the caller's scope.
#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <utility>

namespace tilecl {

enum class Category : std::uint8_t { data = 0, loss = 1, gradient = 2 };
inline constexpr std::size_t kCategoryCount = 3;

std::string_view to_string(Category c);

class MemoryTracker {
 public:
  // `loss_ceiling` caps live bytes in the loss category; exceeding it throws
  // MemoryBudgetError before the host allocation happens.
  explicit MemoryTracker(std::optional<std::size_t> loss_ceiling = std::nullopt);

  MemoryTracker(const MemoryTracker&) = delete;
  MemoryTracker& operator=(const MemoryTracker&) = delete;

  void record_alloc(Category c, std::size_t bytes);
  void record_free(Category c, std::size_t bytes) noexcept;

  std::size_t live(Category c) const noexcept;
  std::size_t peak(Category c) const noexcept;
  std::size_t live_total() const noexcept;
  std::size_t peak_total() const noexcept;

  // Peaks restart from the current live values.
  void reset_peaks() noexcept;

  std::optional<std::size_t> loss_ceiling() const noexcept { return loss_ceiling_; }

  // Scopes destroyed out of order without an explicit close().
  std::size_t scope_violations() const noexcept { return violations_.load(); }
  void note_violation() noexcept { violations_.fetch_add(1); }

 private:
  static void raise_peak(std::atomic<std::size_t>& peak, std::size_t candidate) noexcept;

  std::array<std::atomic<std::size_t>, kCategoryCount> live_{};
  std::array<std::atomic<std::size_t>, kCategoryCount> peak_{};
  std::atomic<std::size_t> live_total_{0};
  std::atomic<std::size_t> peak_total_{0};
  std::atomic<std::size_t> violations_{0};
  std::optional<std::size_t> loss_ceiling_;
};

struct Attribution {
  MemoryTracker* tracker = nullptr;
  Category category = Category::data;
};

// Innermost attribution of the calling thread; tracker is null when unbound.
Attribution current_attribution() noexcept;

class TrackerScope {
 public:
  // Bind `tracker` with `category` on this thread.
  TrackerScope(MemoryTracker& tracker, Category category);
  // Re-categorize under whatever tracker is currently bound (no-op binding
  // when none is).
  explicit TrackerScope(Category category);

  TrackerScope(const TrackerScope&) = delete;
  TrackerScope& operator=(const TrackerScope&) = delete;
  ~TrackerScope();

  // Throws UsageError if this is not the innermost open scope.
  void close();
  bool open() const noexcept { return open_; }

 private:
  std::uint64_t id_;
  MemoryTracker* tracker_;
  bool open_ = true;
};

// Binds `tracker` with `category` when non-null; otherwise does nothing.
class OptionalScope {
 public:
  OptionalScope(MemoryTracker* tracker, Category category) {
    if (tracker) scope_.emplace(*tracker, category);
  }

 private:
  std::optional<TrackerScope> scope_;
};

// Owning, zero-initialized array whose bytes are charged to the attribution
// active at allocation time.
template <class T>
class TrackedBuffer {
 public:
  TrackedBuffer() = default;

  explicit TrackedBuffer(std::size_t n) : size_(n), owner_(current_attribution()) {
    charge();
    try {
      data_ = std::make_unique<T[]>(n);
    } catch (...) {
      refund();
      throw;
    }
  }

  TrackedBuffer(const TrackedBuffer& other) : TrackedBuffer(other.size_) {
    std::copy(other.begin(), other.end(), begin());
  }

  TrackedBuffer& operator=(const TrackedBuffer& other) {
    if (this != &other) {
      TrackedBuffer tmp(other);
      swap(tmp);
    }
    return *this;
  }

  TrackedBuffer(TrackedBuffer&& other) noexcept { swap(other); }

  TrackedBuffer& operator=(TrackedBuffer&& other) noexcept {
    if (this != &other) {
      TrackedBuffer tmp(std::move(other));
      swap(tmp);
    }
    return *this;
  }

  ~TrackedBuffer() { refund(); }

  void swap(TrackedBuffer& other) noexcept {
    std::swap(data_, other.data_);
    std::swap(size_, other.size_);
    std::swap(owner_, other.owner_);
  }

  // Move the charge to the calling thread's current attribution (used when a
  // buffer is handed to another worker).
  void adopt_current_attribution() {
    Attribution next = current_attribution();
    if (next.tracker == owner_.tracker && next.category == owner_.category) return;
    if (next.tracker) next.tracker->record_alloc(next.category, bytes());
    refund();
    owner_ = next;
  }

  // Stop charging anyone, e.g. while the buffer is in flight between workers.
  void release_attribution() noexcept { refund(); }

  std::size_t size() const noexcept { return size_; }
  std::size_t bytes() const noexcept { return size_ * sizeof(T); }
  bool empty() const noexcept { return size_ == 0; }

  T* data() noexcept { return data_.get(); }
  const T* data() const noexcept { return data_.get(); }
  T* begin() noexcept { return data_.get(); }
  T* end() noexcept { return data_.get() + size_; }
  const T* begin() const noexcept { return data_.get(); }
  const T* end() const noexcept { return data_.get() + size_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> span() noexcept { return {data_.get(), size_}; }
  std::span<const T> span() const noexcept { return {data_.get(), size_}; }

  Attribution owner() const noexcept { return owner_; }

 private:
  void charge() {
    if (owner_.tracker && size_ > 0) owner_.tracker->record_alloc(owner_.category, bytes());
  }
  void refund() noexcept {
    if (owner_.tracker && size_ > 0) owner_.tracker->record_free(owner_.category, bytes());
    owner_.tracker = nullptr;
  }

  std::unique_ptr<T[]> data_;
  std::size_t size_ = 0;
  Attribution owner_{};
};

}  // namespace tilecl
