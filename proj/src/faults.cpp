// SPDX-License-Identifier: Apache-2.0
#include "tilecl/faults.hpp"

#include <atomic>

namespace tilecl {

namespace {
std::atomic<Fault> g_fault{Fault::none};
}

void inject_fault(Fault f) noexcept { g_fault.store(f, std::memory_order_relaxed); }
Fault active_fault() noexcept { return g_fault.load(std::memory_order_relaxed); }

std::string_view to_string(Fault f) {
  switch (f) {
    case Fault::none:
      return "none";
    case Fault::merge_sign_flip:
      return "merge-sign";
    case Fault::schedule_off_by_one:
      return "schedule-off-by-one";
    case Fault::no_max_shift:
      return "no-max-shift";
  }
  return "?";
}

std::optional<Fault> parse_fault(std::string_view name) {
  for (Fault f : {Fault::none, Fault::merge_sign_flip, Fault::schedule_off_by_one,
                  Fault::no_max_shift}) {
    if (name == to_string(f)) return f;
  }
  return std::nullopt;
}

}  // namespace tilecl
