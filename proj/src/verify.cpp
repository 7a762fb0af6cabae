// SPDX-License-Identifier: Apache-2.0
//
// Property suite behind `tilecl verify`. Every property compares the tiled
// or ring path against the dense oracle (or an independent enumeration) and
// reports the worst error it saw.
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include "tilecl/features.hpp"
#include "tilecl/harness.hpp"
#include "tilecl/metrics.hpp"
#include "tilecl/oracle.hpp"
#include "tilecl/ring_engine.hpp"

namespace tilecl {

namespace {

constexpr double kLossTol = 1e-12;
constexpr double kLseTol = 1e-12;
constexpr double kGradTol = 1e-10;
constexpr double kInvarianceTol = 1e-12;
constexpr double kStabilityTol = 1e-9;
constexpr double kFdRel = 1e-5;
constexpr double kFdAbs = 1e-8;
constexpr double kFdStep = 1e-6;
constexpr double kWeightSumTol = 1e-10;
constexpr double kF32Tol = 1e-4;
constexpr double kStabilityMagnitude = 1e4;

struct Instance {
  Matrix<double> images;
  Matrix<double> texts;
  std::size_t b = 0;
  std::size_t c = 0;
};

struct Outcome {
  bool passed = true;
  double max_error = 0;
  std::string detail;

  // Records `err` against `tol`; the first violation keeps its note.
  void check(double err, double tol, const std::string& note) {
    if (!(err <= tol) || std::isnan(err)) {
      if (passed) detail = note + " (error " + format(err) + " > " + format(tol) + ")";
      passed = false;
    }
    if (std::isnan(err) || err > max_error) max_error = std::isnan(err) ? INFINITY : err;
  }
  void require(bool ok, const std::string& note) {
    if (!ok && passed) {
      detail = note;
      passed = false;
    }
  }
  static std::string format(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
  }
};

std::string repro(const RunConfig& cfg, const Instance& inst) {
  std::ostringstream os;
  os << "seed=" << cfg.seed << " b=" << inst.b << " c=" << inst.c << " n=" << cfg.workers
     << " t_r=" << cfg.tile_rows << " t_c=" << cfg.tile_cols << " scale=" << cfg.scale;
  if (cfg.features_file) os << " features=" << cfg.features_file->string();
  return os.str();
}

Instance load_instance(const RunConfig& cfg) {
  FeaturePair f = cfg.features_file ? read_features(*cfg.features_file)
                                    : generate_features(cfg.seed, cfg.batch_sizes.front(), cfg.dim);
  Instance inst;
  inst.b = f.images.rows();
  inst.c = f.images.cols();
  inst.images = std::move(f.images);
  inst.texts = std::move(f.texts);
  return inst;
}

std::vector<std::size_t> divisor_workers(std::size_t b) {
  std::vector<std::size_t> out;
  for (std::size_t n : {1, 2, 4, 8}) {
    if (b % n == 0) out.push_back(n);
  }
  return out;
}

ring::RingOptions ring_options(const RunConfig& cfg, std::size_t parallelism) {
  ring::RingOptions o;
  o.tiles = {cfg.tile_rows, cfg.tile_cols};
  o.scale = cfg.scale;
  o.parallelism = parallelism;
  return o;
}

// --- core tiles -----------------------------------------------------------

Outcome similarity_tile_property(const RunConfig& cfg, const Instance& inst) {
  Outcome o;
  const std::size_t r = std::min<std::size_t>(3, inst.b);
  const std::size_t q = std::min<std::size_t>(2, inst.b);
  auto tile = similarity_tile(inst.images.view_rows(0, r), inst.texts.view_rows(inst.b - q, q),
                              cfg.scale);
  Matrix<double> expect(r, q);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < q; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < inst.c; ++k) s += inst.images(i, k) * inst.texts(inst.b - q + j, k);
      expect(i, j) = cfg.scale * s;
    }
  }
  o.check(max_relative_error(tile.values, expect), kLseTol, "tile vs triple loop");
  o.require(tile.row_offset == 0 && tile.col_offset == inst.b - q, "tile offsets");
  Matrix<double> other(1, inst.c + 1);
  bool threw = false;
  try {
    similarity_tile(inst.images.view_rows(0, 1), other.view(), cfg.scale);
  } catch (const ShapeError&) {
    threw = true;
  }
  o.require(threw, "dimension mismatch did not raise a shape error");
  return o;
}

Outcome lse_equivalence_property(const RunConfig& cfg, const Instance& inst, std::size_t p) {
  Outcome o;
  auto dense = oracle::naive_loss(inst.images, inst.texts, cfg.scale);
  const std::vector<TileShape> shapes = {
      {1, 1}, {3, 3}, {cfg.tile_rows, cfg.tile_cols}, {cfg.tile_rows, 1}, {inst.b, inst.b}};
  for (TileShape t : shapes) {
    for (std::size_t threads : {std::size_t{1}, p}) {
      auto lse = local_lse_forward(inst.images, inst.texts, t, cfg.scale, threads);
      o.check(max_relative_error<double, double>(lse.values(), dense.lse), kLseTol,
              "tiled LSE vs dense, tiles " + shape_string(t.rows, t.cols) + ", threads " +
                  std::to_string(threads));
    }
  }
  auto ref = serial::local_lse_forward(inst.images, inst.texts, {cfg.tile_rows, cfg.tile_cols},
                                       cfg.scale);
  o.check(max_relative_error<double, double>(ref.values(), dense.lse), kLseTol,
          "serial reference LSE vs dense");
  return o;
}

Outcome merge_order_property(const RunConfig& cfg, const Instance& inst) {
  Outcome o;
  const std::size_t rows = std::min<std::size_t>(inst.b, 16);
  std::vector<std::vector<double>> parts;  // per column tile, LSE of each row
  const std::size_t width = 3;
  for (std::size_t c0 = 0; c0 < inst.b; c0 += width) {
    auto tile = similarity_tile(inst.images.view_rows(0, rows),
                                inst.texts.view_rows(c0, std::min(width, inst.b - c0)), cfg.scale);
    parts.push_back(tile_lse(tile));
  }
  auto fold = [&](const std::vector<std::size_t>& order) {
    std::vector<double> acc(rows, LseAccumulator<double>::identity());
    for (std::size_t idx : order) {
      for (std::size_t r = 0; r < rows; ++r) acc[r] = merge_lse(acc[r], parts[idx][r]);
    }
    return acc;
  };
  std::vector<std::size_t> order(parts.size());
  std::iota(order.begin(), order.end(), 0);
  const auto in_order = fold(order);
  std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);
  for (int trial = 0; trial < 8; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    auto permuted = fold(order);
    o.check(max_relative_error<double, double>(permuted, in_order), kLseTol,
            "merge result depends on column order");
  }
  return o;
}

Outcome merge_monotonicity_property(const RunConfig& cfg) {
  Outcome o;
  std::mt19937_64 rng(cfg.seed + 17);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  const double id = LseAccumulator<double>::identity();
  o.require(merge_lse(id, 2.5) == 2.5, "identity merge is not assignment");
  o.check(relative_error(merge_lse(std::log(2.0), std::log(2.0)), std::log(4.0)), kLseTol,
          "log 2 merged with log 2");
  for (int k = 0; k < 1000; ++k) {
    const double a = u(rng);
    const double b = u(rng) * 1e-3;
    const double m = merge_lse(a, b);
    o.require(std::isfinite(m), "merge of finite inputs is not finite");
    o.require(m >= std::max(a, b), "merge result below the larger input");
  }
  return o;
}

Outcome stability_property(const RunConfig& cfg, const Instance& inst, std::size_t p) {
  Outcome o;
  const std::size_t rows = std::min<std::size_t>(inst.b, 64);
  Matrix<double> images = copy_rows(inst.images, 0, rows);
  Matrix<double> texts = copy_rows(inst.texts, 0, rows);
  const double scale = kStabilityMagnitude;
  auto tiled = tiled_loss_and_grads(images, texts, {cfg.tile_rows, cfg.tile_cols}, scale, p);
  o.require(std::isfinite(tiled.loss), "tiled loss not finite at |x| ~ 1e4");
  o.require(all_finite<double>(tiled.lse) && all_finite<double>(tiled.grads.d_image.values()) &&
                all_finite<double>(tiled.grads.d_text.values()),
            "tiled LSE or gradients not finite at |x| ~ 1e4");
  auto dense = oracle::naive_loss(images, texts, scale);
  o.check(relative_error(tiled.loss, dense.loss), kStabilityTol, "large-logit loss vs oracle");
  auto ref = oracle::naive_grads(images, texts, scale);
  o.check(max_relative_error(tiled.grads.d_image, ref.d_image), kStabilityTol,
          "large-logit d_image vs oracle");
  o.check(max_relative_error(tiled.grads.d_text, ref.d_text), kStabilityTol,
          "large-logit d_text vs oracle");
  double biggest = 0;
  for (double x : dense.similarity.values()) biggest = std::max(biggest, x);
  if (biggest > 709.8) {
    auto naive = oracle::unshifted_lse(dense.similarity);
    o.require(std::any_of(naive.begin(), naive.end(), [](double v) { return std::isinf(v); }),
              "unshifted exponentiation did not overflow");
  }
  return o;
}

Outcome softmax_normalization_property(const RunConfig& cfg, const Instance& inst,
                                       std::size_t p) {
  Outcome o;
  auto lse = local_lse_forward(inst.images, inst.texts, {cfg.tile_rows, cfg.tile_cols},
                               cfg.scale, p);
  std::vector<double> sums(inst.b, 0.0);
  local_lse_backward(inst.images, inst.texts, lse, {cfg.tile_rows, cfg.tile_cols}, cfg.scale, p,
                     std::span<double>(sums));
  for (double s : sums) o.check(std::abs(s - 1.0), kWeightSumTol, "tiled softmax weights");
  auto dense = oracle::naive_loss(inst.images, inst.texts, cfg.scale);
  for (std::size_t i = 0; i < inst.b; ++i) {
    double s = 0;
    for (double x : dense.similarity.row(i)) s += std::exp(x - dense.lse[i]);
    o.check(std::abs(s - 1.0), kLseTol, "oracle softmax row sum");
  }
  return o;
}

Outcome loss_equivalence_property(const RunConfig& cfg, const Instance& inst, std::size_t p) {
  Outcome o;
  auto dense = oracle::naive_loss(inst.images, inst.texts, cfg.scale);
  auto tiled = tiled_loss_and_grads(inst.images, inst.texts, {cfg.tile_rows, cfg.tile_cols},
                                    cfg.scale, p);
  o.check(relative_error(tiled.loss, dense.loss), kLossTol, "tiled loss vs oracle");
  o.require(tiled.loss >= 0 && dense.loss >= 0, "negative loss");
  auto diag = diagonal_similarities(inst.images.view(), inst.texts.view(), cfg.scale);
  o.check(relative_error(loss_from_parts<double>(diag, dense.lse), dense.loss), kLossTol,
          "loss_from_parts on oracle LSE");
  return o;
}

Outcome gradient_equivalence_property(const RunConfig& cfg, const Instance& inst,
                                      std::size_t p) {
  Outcome o;
  const TileShape t{cfg.tile_rows, cfg.tile_cols};
  auto tiled = tiled_loss_and_grads(inst.images, inst.texts, t, cfg.scale, p);
  auto ref = oracle::naive_grads(inst.images, inst.texts, cfg.scale);
  o.check(max_relative_error(tiled.grads.d_image, ref.d_image), kGradTol, "tiled d_image");
  o.check(max_relative_error(tiled.grads.d_text, ref.d_text), kGradTol, "tiled d_text");

  auto lse = local_lse_forward(inst.images, inst.texts, t, cfg.scale, p);
  auto fast = local_lse_backward(inst.images, inst.texts, lse, t, cfg.scale, p);
  auto slow = serial::local_lse_backward(inst.images, inst.texts, lse.values(), t, cfg.scale);
  o.check(max_relative_error(fast.d_image, slow.d_image), kInvarianceTol,
          "parallel vs serial reference d_image");
  o.check(max_relative_error(fast.d_text, slow.d_text), kInvarianceTol,
          "parallel vs serial reference d_text");
  return o;
}

Outcome finite_difference_property(const RunConfig& cfg, std::size_t p) {
  Outcome o;
  for (std::uint64_t k = 0; k < 6; ++k) {
    const std::size_t b = k % 2 == 0 ? 4 : 8;
    const std::size_t c = k % 3 == 0 ? 8 : 4;
    auto f = generate_features(cfg.seed + 1000 + k, b, c);
    const double scale = cfg.scale;
    auto loss = [&] { return oracle::naive_loss(f.images, f.texts, scale).loss; };
    auto fd_image = oracle::finite_diff_grad(loss, f.images, kFdStep);
    auto fd_text = oracle::finite_diff_grad(loss, f.texts, kFdStep);
    auto closed = oracle::naive_grads(f.images, f.texts, scale);
    auto tiled = tiled_loss_and_grads(f.images, f.texts, {3, 2}, scale, p);
    const std::string where = " (seed " + std::to_string(cfg.seed + 1000 + k) + ", b=" +
                              std::to_string(b) + ", c=" + std::to_string(c) + ")";
    o.check(coordinate_tolerance_ratio(closed.d_image, fd_image, kFdRel, kFdAbs), 1.0,
            "oracle d_image vs finite differences" + where);
    o.check(coordinate_tolerance_ratio(closed.d_text, fd_text, kFdRel, kFdAbs), 1.0,
            "oracle d_text vs finite differences" + where);
    o.check(coordinate_tolerance_ratio(tiled.grads.d_image, fd_image, kFdRel, kFdAbs), 1.0,
            "tiled d_image vs finite differences" + where);
    o.check(coordinate_tolerance_ratio(tiled.grads.d_text, fd_text, kFdRel, kFdAbs), 1.0,
            "tiled d_text vs finite differences" + where);

    // sum_i dI_i.I_i + sum_j dT_j.T_j = 2 * scale * dL/dscale
    double lhs = 0;
    for (std::size_t i = 0; i < f.images.size(); ++i) {
      lhs += closed.d_image.values()[i] * f.images.values()[i] +
             closed.d_text.values()[i] * f.texts.values()[i];
    }
    const double dscale = oracle::central_difference(
        [&](double s) { return oracle::naive_loss(f.images, f.texts, s).loss; }, scale, kFdStep);
    o.check(std::abs(lhs - 2 * scale * dscale) / std::max(std::abs(lhs) * kFdRel, kFdAbs), 1.0,
            "directional derivative along scale" + where);
  }
  return o;
}

// --- ring engine ----------------------------------------------------------

Outcome ring_forward_property(const RunConfig& cfg, const Instance& inst, std::size_t p) {
  Outcome o;
  auto dense = oracle::naive_loss(inst.images, inst.texts, cfg.scale);
  auto run = ring::run_ring(inst.images, inst.texts, cfg.workers, ring_options(cfg, p));
  o.check(relative_error(run.loss, dense.loss), kLossTol, "ring loss vs oracle");
  o.check(max_relative_error<double, double>(run.lse, dense.lse), kLseTol, "ring LSE vs oracle");
  return o;
}

Outcome ring_backward_property(const RunConfig& cfg, const Instance& inst, std::size_t p) {
  Outcome o;
  auto ref = oracle::naive_grads(inst.images, inst.texts, cfg.scale);
  auto run = ring::run_ring(inst.images, inst.texts, cfg.workers, ring_options(cfg, p));
  o.check(max_relative_error(run.grads.d_image, ref.d_image), kGradTol, "ring d_image vs oracle");
  o.check(max_relative_error(run.grads.d_text, ref.d_text), kGradTol, "ring d_text vs oracle");

  auto workers = ring::partition(inst.images, inst.texts, cfg.workers);
  bool threw = false;
  try {
    ring::backward_ring(workers, ring_options(cfg, p));
  } catch (const StateError&) {
    threw = true;
  }
  o.require(threw, "backward before forward did not raise a state error");
  return o;
}

Outcome worker_invariance_property(const RunConfig& cfg, const Instance& inst, std::size_t p) {
  Outcome o;
  auto opts = ring_options(cfg, p);
  opts.scheduler = ring::Scheduler::round_robin;
  auto base = ring::run_ring(inst.images, inst.texts, 1, opts);
  std::mt19937_64 rng(cfg.seed + 99);
  for (std::size_t n : divisor_workers(inst.b)) {
    for (auto sched : {ring::Scheduler::round_robin, ring::Scheduler::threaded}) {
      auto o2 = opts;
      o2.scheduler = sched;
      if (sched == ring::Scheduler::threaded) {
        std::vector<int> delays(n * (n + 1));
        for (int& d : delays) d = static_cast<int>(rng() % 300);
        o2.send_delay = [delays, n](std::size_t w, std::size_t round) {
          return std::chrono::microseconds(delays[w * (n + 1) + round]);
        };
      }
      auto run = ring::run_ring(inst.images, inst.texts, n, o2);
      const std::string note = "n=" + std::to_string(n) +
                               (sched == ring::Scheduler::threaded ? " threaded" : " round-robin");
      o.check(relative_error(run.loss, base.loss), kInvarianceTol, "loss differs at " + note);
      o.check(max_relative_error(run.grads.d_image, base.grads.d_image), kInvarianceTol,
              "d_image differs at " + note);
      o.check(max_relative_error(run.grads.d_text, base.grads.d_text), kInvarianceTol,
              "d_text differs at " + note);
    }
  }
  return o;
}

Outcome tile_invariance_property(const RunConfig& cfg, const Instance& inst, std::size_t p) {
  Outcome o;
  auto opts = ring_options(cfg, p);
  auto base = ring::run_ring(inst.images, inst.texts, cfg.workers, opts);
  for (TileShape t : std::vector<TileShape>{{1, 1}, {3, 16}, {16, 3}, {64, 64}, {inst.b, inst.b}}) {
    auto o2 = opts;
    o2.tiles = t;
    auto run = ring::run_ring(inst.images, inst.texts, cfg.workers, o2);
    const std::string note = "tiles " + shape_string(t.rows, t.cols);
    o.check(relative_error(run.loss, base.loss), kInvarianceTol, "loss differs at " + note);
    o.check(max_relative_error(run.grads.d_image, base.grads.d_image), kInvarianceTol,
            "d_image differs at " + note);
    o.check(max_relative_error(run.grads.d_text, base.grads.d_text), kInvarianceTol,
            "d_text differs at " + note);
  }
  return o;
}

Outcome ring_schedule_property(const RunConfig& cfg, const Instance& inst) {
  Outcome o;
  for (std::size_t n = 1; n <= 16; ++n) {
    // Independent model: shards hop to the predecessor after every round.
    std::vector<std::size_t> holder(n);
    std::iota(holder.begin(), holder.end(), 0);
    std::vector<std::size_t> cache_of = holder;  // which shard's gradient each worker carries
    std::vector<int> seen(n * n, 0);
    for (std::size_t j = 1; j <= n; ++j) {
      for (std::size_t w = 0; w < n; ++w) {
        const std::size_t k = ring::ring_schedule(w, j, n);
        if (k != holder[w] || k != cache_of[w]) {
          o.require(false, "ring_schedule(" + std::to_string(w) + ", " + std::to_string(j) + ", " +
                               std::to_string(n) + ") = " + std::to_string(k) +
                               " but the rotation delivers shard " + std::to_string(holder[w]));
        }
        ++seen[w * n + k];
      }
      std::vector<std::size_t> next(n), next_cache(n);
      for (std::size_t w = 0; w < n; ++w) {
        next[ring::send_target(w, n)] = holder[w];
        next_cache[ring::send_target(w, n)] = cache_of[w];
      }
      holder = next;
      cache_of = next_cache;
    }
    for (std::size_t w = 0; w < n; ++w) {
      o.require(cache_of[w] == w, "gradient cache of shard " + std::to_string(cache_of[w]) +
                                      " ends on worker " + std::to_string(w));
    }
    o.require(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }),
              "some (image shard, text shard) pair not visited exactly once for n=" +
                  std::to_string(n));
  }
  if (active_fault() == Fault::none || o.passed) {
    o.require(ring::ring_schedule(2, 3, 4) == 0, "ring_schedule(2, 3, 4) != 0");
  }

  // Coverage from an actual run.
  ring::RingTrace trace;
  auto opts = ring_options(cfg, 1);
  opts.trace = &trace;
  opts.scheduler = ring::Scheduler::round_robin;
  const std::size_t n = cfg.workers;
  try {
    ring::run_ring(inst.images, inst.texts, n, opts);
  } catch (const Error& e) {
    o.require(false, std::string("ring run failed: ") + e.what());
    return o;
  }
  for (bool backward : {false, true}) {
    std::vector<int> pairs(n * n, 0);
    std::vector<std::size_t> rows_per_round(n + 1, 0);
    for (const auto& v : trace.visits()) {
      if (v.backward != backward) continue;
      ++pairs[v.image_shard * n + v.text_shard];
      rows_per_round[v.round] += v.rows;
    }
    o.require(std::all_of(pairs.begin(), pairs.end(), [](int v) { return v == 1; }),
              "traced run did not compute every shard pair exactly once");
    for (std::size_t j = 1; j <= n; ++j) {
      o.require(rows_per_round[j] == inst.b, "rows processed in round " + std::to_string(j) +
                                                 " != b");
    }
  }
  return o;
}

Outcome bidirectional_property(const RunConfig& cfg, const Instance& inst, std::size_t p) {
  Outcome o;
  auto run = ring::run_ring_bidirectional(inst.images, inst.texts, cfg.workers,
                                          ring_options(cfg, p));
  o.check(relative_error(run.loss, oracle::bidirectional_loss(inst.images, inst.texts, cfg.scale)),
          kLossTol, "bidirectional loss vs oracle");
  auto ref = oracle::bidirectional_grads(inst.images, inst.texts, cfg.scale);
  o.check(max_relative_error(run.grads.d_image, ref.d_image), kGradTol,
          "bidirectional d_image vs oracle");
  o.check(max_relative_error(run.grads.d_text, ref.d_text), kGradTol,
          "bidirectional d_text vs oracle");
  auto sym = ring::run_ring_bidirectional(inst.images, inst.images, cfg.workers,
                                          ring_options(cfg, p));
  o.check(relative_error(sym.loss_image, sym.loss_text), kLossTol,
          "symmetric inputs give different directional losses");
  return o;
}

Outcome f32_property(const RunConfig& cfg, const Instance& inst, std::size_t p) {
  Outcome o;
  auto images = cast_matrix<float>(inst.images);
  auto texts = cast_matrix<float>(inst.texts);
  auto o32 = ring_options(cfg, p);
  auto run = ring::run_ring(images, texts, cfg.workers, o32);
  auto dense = oracle::naive_loss(inst.images, inst.texts, cfg.scale);
  auto ref = oracle::naive_grads(inst.images, inst.texts, cfg.scale);
  o.check(relative_error(run.loss, dense.loss), kF32Tol, "f32 loss vs f64 oracle");
  o.check(max_relative_error(run.grads.d_image, ref.d_image), kF32Tol, "f32 d_image vs f64 oracle");
  o.check(max_relative_error(run.grads.d_text, ref.d_text), kF32Tol, "f32 d_text vs f64 oracle");
  return o;
}

Outcome oracle_consistency_property(const RunConfig& cfg, const Instance& inst) {
  Outcome o;
  auto dense = oracle::naive_loss(inst.images, inst.texts, cfg.scale);
  double total = 0;
  for (std::size_t i = 0; i < inst.b; ++i) {
    double m = -INFINITY;
    for (double x : dense.similarity.row(i)) m = std::max(m, x);
    double s = 0;
    for (double x : dense.similarity.row(i)) s += std::exp(x - m);
    o.check(relative_error(dense.lse[i], m + std::log(s)), kLseTol, "oracle LSE row");
    total += dense.lse[i] - dense.similarity(i, i);
  }
  o.check(relative_error(dense.loss, total / static_cast<double>(inst.b)), kLossTol,
          "oracle loss vs mean(lse - diag)");
  o.require(dense.loss >= 0, "oracle loss negative");
  auto one = generate_features(cfg.seed, 1, inst.c);
  o.check(std::abs(oracle::naive_loss(one.images, one.texts, cfg.scale).loss), 1e-15,
          "b=1 loss is not zero");
  return o;
}

// --- memory model ---------------------------------------------------------

Outcome memory_analytic_property(const RunConfig& cfg) {
  Outcome o;
  for (StrategyKind s : kAllStrategies) {
    for (std::size_t b : {64, 128, 256}) {
      MeasureConfig mc;
      mc.strategy = s;
      mc.b = b;
      mc.n = 2;
      mc.c = 8;
      mc.t_r = 8;
      mc.t_c = 8;
      mc.seed = cfg.seed;
      mc.parallelism = 1;
      mc.backbone_bytes = 4096;
      auto r = measure_run(mc);
      const double analytic = static_cast<double>(
          analytic_loss_elements(s, b, mc.n, mc.t_r, mc.t_c, mc.parallelism) * mc.dtype_width);
      const double ratio = static_cast<double>(r.loss_buffer_bytes) / analytic;
      const std::string note = std::string(to_string(s)) + " b=" + std::to_string(b);
      o.require(ratio >= 0.8 && ratio <= 1.25,
                "measured/analytic loss bytes " + Outcome::format(ratio) + " outside [0.8, 1.25] for " +
                    note);
      o.max_error = std::max(o.max_error, std::abs(ratio - 1.0));
      for (const auto& w : r.per_worker) {
        o.require(w.loss_peak <= r.loss_buffer_bytes && w.data_bytes <= r.data_bytes &&
                      w.grad_peak <= r.gradient_temp_bytes,
                  "per-worker value above reported maximum for " + note);
      }
      o.require(r.peak_bytes == peak_total(r.data_bytes, r.loss_buffer_bytes, r.backbone_bytes),
                "report peak disagrees with data + max(loss, backbone) for " + note);
    }
  }
  return o;
}

Outcome tracker_property() {
  Outcome o;
  constexpr std::size_t mb = 1 << 20;
  {
    MemoryTracker t;
    {
      TrackerScope s(t, Category::loss);
      TrackedBuffer<char> a(mb);
    }
    o.require(t.peak(Category::loss) == mb && t.live(Category::loss) == 0,
              "single allocation: peak 1 MB, final 0");
  }
  {
    MemoryTracker t;
    TrackerScope s(t, Category::loss);
    { TrackedBuffer<char> a(mb); }
    { TrackedBuffer<char> b(mb); }
    o.require(t.peak(Category::loss) == mb, "sequential allocations peak at 1 MB");
  }
  {
    MemoryTracker t;
    TrackerScope s(t, Category::loss);
    TrackedBuffer<char> a(mb);
    TrackedBuffer<char> b(mb);
    o.require(t.peak(Category::loss) == 2 * mb, "overlapping allocations peak at 2 MB");
    TrackerScope g(Category::gradient);
    TrackedBuffer<char> c(mb);
    o.require(t.live(Category::loss) == 2 * mb && t.live(Category::gradient) == mb,
              "categories not disjoint");
    o.require(t.peak_total() >= t.live_total(), "total peak below live total");
  }
  {
    MemoryTracker t;
    TrackerScope outer(t, Category::data);
    TrackerScope inner(t, Category::loss);
    bool threw = false;
    try {
      outer.close();
    } catch (const UsageError&) {
      threw = true;
    }
    o.require(threw, "unbalanced scope closure not reported");
  }
  o.require(peak_total(0, 5, 3) == 5 && peak_total(2, 3, 7) == 9, "peak_total formula");
  return o;
}

Outcome feature_property(const RunConfig& cfg, const Instance& inst) {
  Outcome o;
  auto a = generate_features(cfg.seed, inst.b, inst.c);
  auto b = generate_features(cfg.seed, inst.b, inst.c);
  o.require(std::equal(a.images.values().begin(), a.images.values().end(),
                       b.images.values().begin()) &&
                std::equal(a.texts.values().begin(), a.texts.values().end(),
                           b.texts.values().begin()),
            "same seed produced different features");
  for (const Matrix<double>* m : {&a.images, &a.texts}) {
    for (std::size_t i = 0; i < m->rows(); ++i) {
      double s = 0;
      for (double v : m->row(i)) s += v * v;
      o.check(std::abs(std::sqrt(s) - 1.0), 1e-6, "row norm");
    }
  }
  auto other = generate_features(cfg.seed + 1, inst.b, inst.c);
  o.require(!std::equal(a.images.values().begin(), a.images.values().end(),
                        other.images.values().begin()),
            "different seeds produced identical features");
  return o;
}

}  // namespace

std::vector<PropertyResult> run_properties(const RunConfig& config) {
  validate(config);
  Instance inst = load_instance(config);
  RunConfig cfg = config;
  ring::make_assignment(inst.b, cfg.workers);
  const std::size_t p = resolve_worker_parallelism(cfg);

  std::vector<std::pair<std::string, std::function<Outcome()>>> suite = {
      {"feature-generation", [&] { return feature_property(cfg, inst); }},
      {"similarity-tile", [&] { return similarity_tile_property(cfg, inst); }},
      {"lse-equivalence", [&] { return lse_equivalence_property(cfg, inst, p); }},
      {"merge-order", [&] { return merge_order_property(cfg, inst); }},
      {"merge-monotonicity", [&] { return merge_monotonicity_property(cfg); }},
      {"stability", [&] { return stability_property(cfg, inst, p); }},
      {"softmax-normalization", [&] { return softmax_normalization_property(cfg, inst, p); }},
      {"oracle-consistency", [&] { return oracle_consistency_property(cfg, inst); }},
      {"loss-equivalence", [&] { return loss_equivalence_property(cfg, inst, p); }},
      {"gradient-equivalence", [&] { return gradient_equivalence_property(cfg, inst, p); }},
      {"finite-difference", [&] { return finite_difference_property(cfg, p); }},
      {"ring-schedule", [&] { return ring_schedule_property(cfg, inst); }},
      {"ring-forward", [&] { return ring_forward_property(cfg, inst, p); }},
      {"ring-backward", [&] { return ring_backward_property(cfg, inst, p); }},
      {"worker-invariance", [&] { return worker_invariance_property(cfg, inst, p); }},
      {"tile-invariance", [&] { return tile_invariance_property(cfg, inst, p); }},
      {"bidirectional", [&] { return bidirectional_property(cfg, inst, p); }},
      {"f32-mode", [&] { return f32_property(cfg, inst, p); }},
      {"tracker", [] { return tracker_property(); }},
      {"memory-analytic", [&] { return memory_analytic_property(cfg); }},
  };

  std::vector<PropertyResult> results;
  for (auto& [name, fn] : suite) {
    PropertyResult r;
    r.name = name;
    try {
      Outcome o = fn();
      r.passed = o.passed;
      r.max_error = o.max_error;
      if (!o.passed) r.detail = o.detail + "; " + repro(cfg, inst);
    } catch (const std::exception& e) {
      r.passed = false;
      r.max_error = INFINITY;
      r.detail = std::string(e.what()) + "; " + repro(cfg, inst);
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace tilecl
