// SPDX-License-Identifier: Apache-2.0
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>

#include "tilecl/errors.hpp"
#include "tilecl/features.hpp"
#include "tilecl/harness.hpp"

namespace tilecl {

void validate(const RunConfig& c) {
  if (c.batch_sizes.empty()) throw ConfigError("at least one batch size is required");
  for (std::size_t b : c.batch_sizes) {
    if (b == 0) throw ConfigError("batch size must be >= 1");
  }
  if (c.dim == 0) throw ConfigError("--dim must be >= 1");
  if (c.workers == 0) throw ConfigError("--workers must be >= 1");
  if (c.tile_rows == 0 || c.tile_cols == 0) throw ConfigError("tile sizes must be >= 1");
  if (!(c.scale > 0) || !std::isfinite(c.scale)) throw ConfigError("--scale must be a finite value > 0");
  if (c.dtype_width != 4 && c.dtype_width != 8) throw ConfigError("--dtype must be f32 or f64");
  if (c.repeats == 0) throw ConfigError("--repeats must be >= 1");
  if (c.mem_ceiling_bytes == 0) throw ConfigError("--mem-ceiling-bytes must be >= 1");
  if (!c.features_file) {
    for (std::size_t b : c.batch_sizes) ring::make_assignment(b, c.workers);
  }
}

std::size_t resolve_worker_parallelism(const RunConfig& config) {
  if (config.parallelism > 0) return config.parallelism;
  const std::size_t budget = static_cast<std::size_t>(std::max(1, omp_get_max_threads()));
  return std::max<std::size_t>(1, budget / std::max<std::size_t>(1, config.workers));
}

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ArgumentError("log_log_slope needs at least two paired points");
  }
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(x[k] > 0) || !(y[k] > 0)) throw ArgumentError("log_log_slope needs positive values");
    mx += std::log(x[k]);
    my += std::log(y[k]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double dx = std::log(x[k]) - mx;
    sxy += dx * (std::log(y[k]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0) throw ArgumentError("log_log_slope needs at least two distinct x values");
  return sxy / sxx;
}

int cmd_verify(const RunConfig& config, std::ostream& out) {
  FaultGuard guard(config.fault);
  auto results = run_properties(config);
  std::size_t passed = 0;
  for (const auto& r : results) {
    out << (r.passed ? "[PASS] " : "[FAIL] ") << std::left << std::setw(24) << r.name
        << " max_err=" << std::scientific << std::setprecision(3) << r.max_error
        << std::defaultfloat;
    if (!r.passed) out << "  " << r.detail;
    out << '\n';
    passed += r.passed ? 1 : 0;
  }
  out << passed << '/' << results.size() << " properties passed\n";
  return passed == results.size() ? kExitOk : kExitPropertyFailure;
}

namespace {

struct BenchRow {
  MemoryReport report;
  double elapsed_ms = 0;
  bool oom = false;
};

MeasureConfig measure_config(const RunConfig& c, StrategyKind s, std::size_t b) {
  MeasureConfig m;
  m.strategy = s;
  m.b = b;
  m.n = c.workers;
  m.c = c.dim;
  m.t_r = c.tile_rows;
  m.t_c = c.tile_cols;
  m.dtype_width = c.dtype_width;
  m.seed = c.seed;
  m.scale = c.scale;
  m.parallelism = resolve_worker_parallelism(c);
  m.bidirectional = c.bidirectional;
  m.backbone_bytes = c.backbone_bytes;
  m.loss_ceiling_bytes = c.mem_ceiling_bytes;
  return m;
}

std::string csv_line(const BenchRow& row) {
  std::ostringstream os;
  if (row.oom) {
    const auto& r = row.report;
    os << to_string(r.strategy) << ',' << r.b << ',' << r.n << ',' << r.c << ',' << r.t_r << ','
       << r.t_c << ',' << r.dtype_width << ",,,,,oom";
  } else {
    os << to_csv_row(row.report) << ',' << std::fixed << std::setprecision(3) << row.elapsed_ms
       << ",ok";
  }
  return os.str();
}

void write_gnuplot(const std::filesystem::path& script, const std::filesystem::path& csv,
                   const std::vector<StrategyKind>& strategies) {
  std::ofstream f(script);
  if (!f) throw IoError("cannot write " + script.string());
  f << "set datafile separator ','\n"
       "set logscale xy\n"
       "set xlabel 'batch size'\n"
       "set ylabel 'peak loss bytes per worker'\n"
       "set key left top\n"
       "plot ";
  for (std::size_t k = 0; k < strategies.size(); ++k) {
    const auto name = to_string(strategies[k]);
    f << (k ? ", \\\n     " : "") << "'" << csv.string()
      << "' using (strcol(1) eq '" << name << "' && strcol(12) eq 'ok' ? $2 : 1/0):9 "
      << "with linespoints title '" << name << "'";
  }
  f << '\n';
}

}  // namespace

int cmd_bench(const RunConfig& config, std::ostream& out, std::ostream& log) {
  validate(config);
  if (config.features_file) throw ConfigError("bench generates its own features; drop --features-file");
  if (!std::is_sorted(config.batch_sizes.begin(), config.batch_sizes.end())) {
    throw ConfigError("bench batch sizes must be ascending");
  }
  const std::vector<StrategyKind> strategies =
      config.strategies.empty()
          ? std::vector<StrategyKind>(std::begin(kAllStrategies), std::end(kAllStrategies))
          : config.strategies;

  std::unique_ptr<std::ofstream> file;
  if (config.output) {
    file = std::make_unique<std::ofstream>(*config.output);
    if (!*file) throw IoError("cannot write " + config.output->string());
  }
  std::ostream& csv = file ? *file : out;
  csv << csv_header() << ",elapsed_ms,status\n";

  for (StrategyKind s : strategies) {
    std::vector<double> bs, peaks;
    for (std::size_t b : config.batch_sizes) {
      const MeasureConfig mc = measure_config(config, s, b);
      BenchRow row;
      row.report.strategy = s;
      row.report.b = b;
      row.report.n = mc.n;
      row.report.c = mc.c;
      row.report.t_r = mc.t_r;
      row.report.t_c = mc.t_c;
      row.report.dtype_width = mc.dtype_width;
      const std::uint64_t predicted =
          analytic_loss_elements(s, b, mc.n, mc.t_r, mc.t_c, mc.parallelism) * mc.dtype_width;
      if (predicted > config.mem_ceiling_bytes) {
        row.oom = true;
        log << to_string(s) << " b=" << b << ": predicted loss buffer " << predicted
            << " bytes exceeds the ceiling; try a smaller batch size\n";
      } else {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t rep = 0; rep < config.repeats && !row.oom; ++rep) {
          try {
            const auto t0 = std::chrono::steady_clock::now();
            row.report = measure_run(mc);
            const auto t1 = std::chrono::steady_clock::now();
            best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
          } catch (const MemoryBudgetError& e) {
            row.oom = true;
            log << e.what() << '\n';
          }
        }
        row.elapsed_ms = best;
      }
      csv << csv_line(row) << '\n';
      csv.flush();
      if (!row.oom) {
        bs.push_back(static_cast<double>(b));
        peaks.push_back(static_cast<double>(row.report.loss_buffer_bytes));
      }
    }
    if (bs.size() >= 2) {
      log << "slope " << to_string(s) << " d log(loss_peak) / d log(b) = " << std::fixed
          << std::setprecision(3) << log_log_slope(bs, peaks) << std::defaultfloat << '\n';
    }
  }
  if (config.gnuplot) {
    if (!config.output) throw ConfigError("--gnuplot needs --output so the script can read the CSV");
    write_gnuplot(*config.gnuplot, *config.output, strategies);
  }
  return kExitOk;
}

namespace {

double frobenius(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

template <class Real>
int demo_typed(const RunConfig& config, FeaturePair features, std::ostream& out) {
  const StrategyKind strategy =
      config.strategies.empty() ? StrategyKind::multi_level : config.strategies.front();
  const std::size_t b = features.images.rows();
  Matrix<Real> images = cast_matrix<Real>(features.images);
  Matrix<Real> texts = cast_matrix<Real>(features.texts);

  MeasureConfig mc = measure_config(config, strategy, b);
  mc.c = features.images.cols();
  std::vector<std::unique_ptr<MemoryTracker>> owned;
  std::vector<MemoryTracker*> trackers;
  for (std::size_t w = 0; w < mc.n; ++w) {
    owned.push_back(std::make_unique<MemoryTracker>(mc.loss_ceiling_bytes));
    trackers.push_back(owned.back().get());
  }
  StrategyConfig sc;
  sc.n = mc.n;
  sc.tiles = {mc.t_r, mc.t_c};
  sc.scale = mc.scale;
  sc.parallelism = mc.parallelism;
  sc.bidirectional = mc.bidirectional;
  auto result = run_strategy(strategy, images, texts, sc, trackers);

  out << std::setprecision(15);
  out << "strategy " << to_string(strategy) << "  b=" << b << " c=" << mc.c << " n=" << mc.n
      << " scale=" << mc.scale << (mc.bidirectional ? " bidirectional" : "") << '\n';
  out << "loss   " << static_cast<double>(result.loss) << '\n';
  if (mc.bidirectional) {
    out << "L_I    " << static_cast<double>(result.loss_image) << '\n';
    out << "L_T    " << static_cast<double>(result.loss_text) << '\n';
  }
  auto di = cast_matrix<double>(result.grads.d_image);
  auto dt = cast_matrix<double>(result.grads.d_text);
  out << "|dL/dI| " << frobenius(di.values()) << "  |dL/dT| " << frobenius(dt.values()) << '\n';
  const std::size_t shard = b / mc.n;
  out << std::setprecision(6) << "per-worker LSE (min / mean / max)\n";
  for (std::size_t w = 0; w < mc.n; ++w) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0;
    for (std::size_t r = w * shard; r < (w + 1) * shard; ++r) {
      const double v = static_cast<double>(result.lse[r]);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    out << "  worker " << w << "  " << lo << " / " << sum / static_cast<double>(shard) << " / "
        << hi << '\n';
  }
  out << format_table(summarize_trackers(mc, trackers));
  return kExitOk;
}

}  // namespace

int cmd_demo(const RunConfig& config, std::ostream& out) {
  validate(config);
  FeaturePair features = config.features_file
                             ? read_features(*config.features_file)
                             : generate_features(config.seed, config.batch_sizes.front(), config.dim);
  ring::make_assignment(features.images.rows(), config.workers);
  if (config.dtype_width == 4) return demo_typed<float>(config, std::move(features), out);
  return demo_typed<double>(config, std::move(features), out);
}

}  // namespace tilecl
