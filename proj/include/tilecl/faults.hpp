// SPDX-License-Identifier: Apache-2.0
//
// Deliberate-fault switches for mutation testing of the verification suite.
// Never set outside tests and `tilecl verify --inject-fault`.
#pragma once

#include <optional>
#include <string_view>

namespace tilecl {

enum class Fault {
  none,
  merge_sign_flip,      // merge_lse subtracts its correction term
  schedule_off_by_one,  // ring_schedule returns (i + j) mod n
  no_max_shift,         // tile LSE exponentiates without the row-max shift
};

void inject_fault(Fault f) noexcept;
Fault active_fault() noexcept;

std::string_view to_string(Fault f);
std::optional<Fault> parse_fault(std::string_view name);

// Restores the previous fault on destruction.
class FaultGuard {
 public:
  explicit FaultGuard(Fault f) : previous_(active_fault()) { inject_fault(f); }
  ~FaultGuard() { inject_fault(previous_); }
  FaultGuard(const FaultGuard&) = delete;
  FaultGuard& operator=(const FaultGuard&) = delete;

 private:
  Fault previous_;
};

}  // namespace tilecl
