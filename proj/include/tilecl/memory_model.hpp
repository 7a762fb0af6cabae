// SPDX-License-Identifier: Apache-2.0
//
// Loss-memory accounting for the four execution strategies:
//
//   vanilla  every worker gathers all features and materializes b x b
//   local    every worker gathers the texts and materializes b/n x b
//   cross    ring of workers, one b/n x b/n block per round
//   inf      ring of workers plus in-worker tiling, t_r x t_c per thread
//
// `analytic_loss_elements` predicts the peak number of live loss elements
// per worker; `measure_run` executes the strategy under allocation trackers
// and reports what was actually live.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tilecl/core_tiles.hpp"
#include "tilecl/ring_engine.hpp"

namespace tilecl {

enum class StrategyKind { vanilla, local_loss, cross_tile, multi_level };

std::string_view to_string(StrategyKind s);
std::optional<StrategyKind> parse_strategy(std::string_view name);
inline constexpr StrategyKind kAllStrategies[] = {StrategyKind::vanilla, StrategyKind::local_loss,
                                                  StrategyKind::cross_tile,
                                                  StrategyKind::multi_level};

// Peak live similarity-related elements per worker:
//   vanilla b^2, local b^2/n, cross b^2/n^2, inf b/n + p * t_r * t_c
// where tiles are clipped to the shard and p is the row-block parallelism
// the kernel will actually use (never more threads than row blocks).
std::uint64_t analytic_loss_elements(StrategyKind strategy, std::size_t b, std::size_t n,
                                     std::size_t t_r, std::size_t t_c, std::size_t parallelism = 1);

// data + max(loss, backbone)
std::uint64_t peak_total(std::uint64_t data_bytes, std::uint64_t loss_bytes,
                         std::uint64_t backbone_bytes) noexcept;

struct WorkerMemory {
  std::uint64_t data_bytes = 0;
  std::uint64_t loss_peak = 0;
  std::uint64_t grad_peak = 0;
};

struct MemoryReport {
  StrategyKind strategy = StrategyKind::multi_level;
  std::size_t b = 0, n = 0, c = 0, t_r = 0, t_c = 0, dtype_width = 8;
  // Largest per-worker value of each category.
  std::uint64_t data_bytes = 0;
  std::uint64_t loss_buffer_bytes = 0;
  std::uint64_t gradient_temp_bytes = 0;
  std::uint64_t backbone_bytes = 0;
  std::uint64_t peak_bytes = 0;  // peak_total(data, loss, backbone)
  std::vector<WorkerMemory> per_worker;
};

// Column order: strategy,b,n,c,t_r,t_c,dtype_width,data_bytes,loss_peak,grad_peak
std::string csv_header();
std::string to_csv_row(const MemoryReport& r);
std::string format_table(const MemoryReport& r);

struct StrategyConfig {
  std::size_t n = 1;
  TileShape tiles{};
  double scale = 1.0;
  std::size_t parallelism = 1;
  bool bidirectional = false;
  ring::Scheduler scheduler = ring::Scheduler::threaded;
};

template <class Real>
struct StrategyResult {
  Real loss{};
  Real loss_image{};
  Real loss_text{};       // equals loss_image unless bidirectional
  std::vector<Real> lse;  // image -> text LSE, concatenated over workers
  GradPair<Real> grads;
};

// Forward + backward of `strategy` with per-worker trackers (empty, or one
// per worker).
template <class Real>
StrategyResult<Real> run_strategy(StrategyKind strategy, const Matrix<Real>& images,
                                  const Matrix<Real>& texts, const StrategyConfig& config,
                                  const std::vector<MemoryTracker*>& trackers = {});

struct MeasureConfig {
  StrategyKind strategy = StrategyKind::multi_level;
  std::size_t b = 256;
  std::size_t n = 1;
  std::size_t c = 32;
  std::size_t t_r = 32;
  std::size_t t_c = 32;
  std::size_t dtype_width = 8;
  std::uint64_t seed = 0;
  double scale = 1.0;
  std::size_t parallelism = 1;
  bool bidirectional = false;
  std::uint64_t backbone_bytes = 0;
  std::optional<std::size_t> loss_ceiling_bytes;
  // Count only one accumulation micro-batch of rows as resident data.
  bool data_offload = false;
  std::size_t accumulation_batch = 0;
};

// Throws ConfigError for invalid configurations and MemoryBudgetError when
// the ceiling is hit or the host runs out of memory.
MemoryReport measure_run(const MeasureConfig& config);

// Builds a report from per-worker trackers after a run of `config`.
MemoryReport summarize_trackers(const MeasureConfig& config,
                                const std::vector<MemoryTracker*>& trackers);

// Validates divisibility and ranges for `config`; throws ConfigError.
void validate(const MeasureConfig& config);

}  // namespace tilecl
