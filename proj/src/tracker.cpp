// SPDX-License-Identifier: Apache-2.0
#include "tilecl/tracker.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "tilecl/errors.hpp"

namespace tilecl {

namespace {

struct Frame {
  std::uint64_t id;
  Attribution attribution;
};

thread_local std::vector<Frame> t_frames;
std::atomic<std::uint64_t> g_next_scope_id{1};

std::size_t index(Category c) { return static_cast<std::size_t>(c); }

}  // namespace

std::string_view to_string(Category c) {
  switch (c) {
    case Category::data:
      return "data";
    case Category::loss:
      return "loss";
    case Category::gradient:
      return "gradient";
  }
  return "?";
}

MemoryTracker::MemoryTracker(std::optional<std::size_t> loss_ceiling)
    : loss_ceiling_(loss_ceiling) {}

void MemoryTracker::raise_peak(std::atomic<std::size_t>& peak, std::size_t candidate) noexcept {
  std::size_t seen = peak.load(std::memory_order_relaxed);
  while (candidate > seen &&
         !peak.compare_exchange_weak(seen, candidate, std::memory_order_acq_rel)) {
  }
}

void MemoryTracker::record_alloc(Category c, std::size_t bytes) {
  auto& live = live_[index(c)];
  std::size_t now = live.fetch_add(bytes, std::memory_order_acq_rel) + bytes;
  if (c == Category::loss && loss_ceiling_ && now > *loss_ceiling_) {
    live.fetch_sub(bytes, std::memory_order_acq_rel);
    throw MemoryBudgetError("tracked loss buffers would reach " + std::to_string(now) +
                            " bytes, above the ceiling of " + std::to_string(*loss_ceiling_) +
                            " bytes");
  }
  raise_peak(peak_[index(c)], now);
  std::size_t total = live_total_.fetch_add(bytes, std::memory_order_acq_rel) + bytes;
  raise_peak(peak_total_, total);
}

void MemoryTracker::record_free(Category c, std::size_t bytes) noexcept {
  live_[index(c)].fetch_sub(bytes, std::memory_order_acq_rel);
  live_total_.fetch_sub(bytes, std::memory_order_acq_rel);
}

std::size_t MemoryTracker::live(Category c) const noexcept { return live_[index(c)].load(); }
std::size_t MemoryTracker::peak(Category c) const noexcept { return peak_[index(c)].load(); }
std::size_t MemoryTracker::live_total() const noexcept { return live_total_.load(); }
std::size_t MemoryTracker::peak_total() const noexcept { return peak_total_.load(); }

void MemoryTracker::reset_peaks() noexcept {
  for (std::size_t i = 0; i < kCategoryCount; ++i) peak_[i].store(live_[i].load());
  peak_total_.store(live_total_.load());
}

Attribution current_attribution() noexcept {
  if (t_frames.empty()) return {};
  return t_frames.back().attribution;
}

TrackerScope::TrackerScope(MemoryTracker& tracker, Category category)
    : id_(g_next_scope_id.fetch_add(1)), tracker_(&tracker) {
  t_frames.push_back({id_, {&tracker, category}});
}

TrackerScope::TrackerScope(Category category)
    : id_(g_next_scope_id.fetch_add(1)), tracker_(current_attribution().tracker) {
  t_frames.push_back({id_, {tracker_, category}});
}

void TrackerScope::close() {
  if (!open_) throw UsageError("tracker scope closed twice");
  if (t_frames.empty() || t_frames.back().id != id_) {
    throw UsageError("unbalanced tracker scope closure: scope is not the innermost open scope");
  }
  t_frames.pop_back();
  open_ = false;
}

TrackerScope::~TrackerScope() {
  if (!open_) return;
  if (!t_frames.empty() && t_frames.back().id == id_) {
    t_frames.pop_back();
    return;
  }
  auto it = std::find_if(t_frames.begin(), t_frames.end(),
                         [this](const Frame& f) { return f.id == id_; });
  if (it != t_frames.end()) t_frames.erase(it);
  if (tracker_) tracker_->note_violation();
}

}  // namespace tilecl
