// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the `tilecl` CLI: verify, bench, demo.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tilecl/faults.hpp"
#include "tilecl/memory_model.hpp"

namespace tilecl {

enum ExitCode : int {
  kExitOk = 0,
  kExitPropertyFailure = 1,
  kExitConfigError = 2,
  kExitIoError = 3,
};

inline constexpr std::size_t kDefaultMemCeiling = std::size_t{2} << 30;  // 2 GiB

struct RunConfig {
  std::vector<std::size_t> batch_sizes{256};
  std::size_t dim = 32;
  std::size_t workers = 4;
  std::size_t tile_rows = 32;
  std::size_t tile_cols = 32;
  // Empty means the command's default (bench: all four, demo: inf).
  std::vector<StrategyKind> strategies;
  double scale = 1.0;
  std::uint64_t seed = 0;
  std::size_t dtype_width = 8;
  bool bidirectional = false;
  std::uint64_t backbone_bytes = 0;
  std::size_t repeats = 1;
  std::size_t mem_ceiling_bytes = kDefaultMemCeiling;
  std::size_t parallelism = 0;  // OpenMP threads per worker; 0 = auto
  std::optional<std::filesystem::path> features_file;
  std::optional<std::filesystem::path> output;
  std::optional<std::filesystem::path> gnuplot;
  Fault fault = Fault::none;
};

// Throws ConfigError on any invalid field.
void validate(const RunConfig& config);

// Threads per worker when parallelism is 0: the OpenMP budget split evenly.
std::size_t resolve_worker_parallelism(const RunConfig& config);

struct PropertyResult {
  std::string name;
  bool passed = false;
  double max_error = 0;  // worst observed error (property-specific units)
  std::string detail;    // reproduction info on failure
};

// The full property suite on the instance described by `config`.
std::vector<PropertyResult> run_properties(const RunConfig& config);

// Each command writes its report to `out` and returns an ExitCode.
int cmd_verify(const RunConfig& config, std::ostream& out);
int cmd_bench(const RunConfig& config, std::ostream& out, std::ostream& log);
int cmd_demo(const RunConfig& config, std::ostream& out);

// Least-squares slope of log(y) against log(x).
double log_log_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace tilecl
