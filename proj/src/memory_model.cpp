// SPDX-License-Identifier: Apache-2.0
#include "tilecl/memory_model.hpp"

#include <algorithm>
#include <iomanip>
#include <memory>
#include <new>
#include <optional>
#include <sstream>

#include "tilecl/features.hpp"
#include "tilecl/oracle.hpp"

namespace tilecl {

std::string_view to_string(StrategyKind s) {
  switch (s) {
    case StrategyKind::vanilla:
      return "vanilla";
    case StrategyKind::local_loss:
      return "local";
    case StrategyKind::cross_tile:
      return "cross";
    case StrategyKind::multi_level:
      return "inf";
  }
  return "?";
}

std::optional<StrategyKind> parse_strategy(std::string_view name) {
  for (StrategyKind s : kAllStrategies) {
    if (name == to_string(s)) return s;
  }
  return std::nullopt;
}

std::uint64_t analytic_loss_elements(StrategyKind strategy, std::size_t b, std::size_t n,
                                     std::size_t t_r, std::size_t t_c, std::size_t parallelism) {
  const auto a = ring::make_assignment(b, n);
  const std::uint64_t bb = b;
  const std::uint64_t bs = a.shard_size;
  switch (strategy) {
    case StrategyKind::vanilla:
      return bb * bb;
    case StrategyKind::local_loss:
      return bb * bs;
    case StrategyKind::cross_tile:
      return bs * bs;
    case StrategyKind::multi_level: {
      if (t_r == 0 || t_c == 0) throw ConfigError("tile sizes must be >= 1");
      const std::uint64_t tr = std::min<std::uint64_t>(t_r, bs);
      const std::uint64_t tc = std::min<std::uint64_t>(t_c, bs);
      const std::uint64_t p = effective_parallelism(parallelism, a.shard_size, tr);
      return bs + p * tr * tc;
    }
  }
  return 0;
}

std::uint64_t peak_total(std::uint64_t data_bytes, std::uint64_t loss_bytes,
                         std::uint64_t backbone_bytes) noexcept {
  return data_bytes + std::max(loss_bytes, backbone_bytes);
}

std::string csv_header() {
  return "strategy,b,n,c,t_r,t_c,dtype_width,data_bytes,loss_peak,grad_peak";
}

std::string to_csv_row(const MemoryReport& r) {
  std::ostringstream os;
  os << to_string(r.strategy) << ',' << r.b << ',' << r.n << ',' << r.c << ',' << r.t_r << ','
     << r.t_c << ',' << r.dtype_width << ',' << r.data_bytes << ',' << r.loss_buffer_bytes << ','
     << r.gradient_temp_bytes;
  return os.str();
}

std::string format_table(const MemoryReport& r) {
  std::ostringstream os;
  os << "strategy " << to_string(r.strategy) << "  b=" << r.b << " n=" << r.n << " c=" << r.c
     << " tiles=" << r.t_r << "x" << r.t_c << " dtype=f" << r.dtype_width * 8 << '\n';
  os << std::left << std::setw(8) << "worker" << std::right << std::setw(16) << "data"
     << std::setw(16) << "loss peak" << std::setw(16) << "grad peak" << '\n';
  for (std::size_t w = 0; w < r.per_worker.size(); ++w) {
    const auto& m = r.per_worker[w];
    os << std::left << std::setw(8) << w << std::right << std::setw(16) << m.data_bytes
       << std::setw(16) << m.loss_peak << std::setw(16) << m.grad_peak << '\n';
  }
  os << std::left << std::setw(8) << "max" << std::right << std::setw(16) << r.data_bytes
     << std::setw(16) << r.loss_buffer_bytes << std::setw(16) << r.gradient_temp_bytes << '\n';
  os << "backbone " << r.backbone_bytes << " bytes, peak (data + max(loss, backbone)) "
     << r.peak_bytes << " bytes\n";
  return os.str();
}

namespace {

MemoryTracker* tracker_for(const std::vector<MemoryTracker*>& trackers, std::size_t w) {
  return trackers.empty() ? nullptr : trackers[w];
}

template <class Real>
void gather_rows(Matrix<Real>& dst, std::size_t first, const Matrix<Real>& src) {
  std::copy(src.values().begin(), src.values().end(), dst.row(first).data());
}

// Every worker gathers all features and computes the dense loss.
template <class Real>
StrategyResult<Real> run_vanilla(const Matrix<Real>& images, const Matrix<Real>& texts,
                                 const StrategyConfig& cfg,
                                 const std::vector<MemoryTracker*>& trackers) {
  const auto a = ring::make_assignment(images.rows(), cfg.n);
  const Real scale = static_cast<Real>(cfg.scale);
  StrategyResult<Real> out;
  out.grads = {Matrix<Real>(images.rows(), images.cols()), Matrix<Real>(texts.rows(), texts.cols())};
  for (std::size_t w = 0; w < cfg.n; ++w) {
    OptionalScope scope(tracker_for(trackers, w), Category::data);
    Matrix<Real> all_images = images;
    Matrix<Real> all_texts = texts;
    auto dense = oracle::naive_loss(all_images, all_texts, scale);
    if (w == 0) {
      out.loss = dense.loss;
      out.lse = dense.lse;
    }
    auto g = oracle::naive_grads_from(std::move(dense), all_images, all_texts, scale);
    const std::size_t first = a.first_row(w);
    for (std::size_t i = 0; i < a.shard_size; ++i) {
      std::copy(g.d_image.row(first + i).begin(), g.d_image.row(first + i).end(),
                out.grads.d_image.row(first + i).begin());
      std::copy(g.d_text.row(first + i).begin(), g.d_text.row(first + i).end(),
                out.grads.d_text.row(first + i).begin());
    }
  }
  return out;
}

// Every worker gathers the texts and computes its b/n rows against all of
// them in one block. Text gradients are summed across workers.
template <class Real>
StrategyResult<Real> run_local(const Matrix<Real>& images, const Matrix<Real>& texts,
                               const StrategyConfig& cfg,
                               const std::vector<MemoryTracker*>& trackers) {
  const auto a = ring::make_assignment(images.rows(), cfg.n);
  const Real scale = static_cast<Real>(cfg.scale);
  const std::size_t b = images.rows();
  const std::size_t c = images.cols();
  const TileShape block{a.shard_size, b};
  GradPair<Real> partial{Matrix<Real>(b, c), Matrix<Real>(b, c)};
  StrategyResult<Real> out;
  out.lse.reserve(b);
  for (std::size_t w = 0; w < cfg.n; ++w) {
    OptionalScope scope(tracker_for(trackers, w), Category::data);
    Matrix<Real> shard = copy_rows(images, a.first_row(w), a.shard_size);
    Matrix<Real> all_texts = texts;
    auto lse = local_lse_forward(shard, all_texts, block, scale, 1);
    auto g = local_lse_backward(shard, all_texts, lse, block, scale, 1);
    gather_rows(partial.d_image, a.first_row(w), g.d_image);
    auto dst = partial.d_text.values();
    auto src = g.d_text.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    auto v = lse.to_vector();
    out.lse.insert(out.lse.end(), v.begin(), v.end());
  }
  auto diag = diagonal_similarities(images.view(), texts.view(), scale);
  out.loss = loss_from_parts<Real>(diag, out.lse);
  out.grads = assemble_full_gradients(std::move(partial), images.view(), texts.view(), scale, b);
  return out;
}

template <class Real>
StrategyResult<Real> run_ring_strategy(const Matrix<Real>& images, const Matrix<Real>& texts,
                                       const StrategyConfig& cfg, TileShape tiles,
                                       std::size_t parallelism,
                                       const std::vector<MemoryTracker*>& trackers) {
  ring::RingOptions opts;
  opts.tiles = tiles;
  opts.scale = cfg.scale;
  opts.parallelism = parallelism;
  opts.scheduler = cfg.scheduler;
  opts.trackers = trackers;
  auto run = ring::run_ring(images, texts, cfg.n, opts);
  StrategyResult<Real> out;
  out.loss = run.loss;
  out.lse = std::move(run.lse);
  out.grads = std::move(run.grads);
  return out;
}

template <class Real>
StrategyResult<Real> run_one_direction(StrategyKind strategy, const Matrix<Real>& images,
                                       const Matrix<Real>& texts, const StrategyConfig& cfg,
                                       const std::vector<MemoryTracker*>& trackers) {
  const auto a = ring::make_assignment(images.rows(), cfg.n);
  switch (strategy) {
    case StrategyKind::vanilla:
      return run_vanilla(images, texts, cfg, trackers);
    case StrategyKind::local_loss:
      return run_local(images, texts, cfg, trackers);
    case StrategyKind::cross_tile:
      return run_ring_strategy(images, texts, cfg, {a.shard_size, a.shard_size}, 1, trackers);
    case StrategyKind::multi_level:
      return run_ring_strategy(images, texts, cfg, cfg.tiles, cfg.parallelism, trackers);
  }
  throw ConfigError("unknown strategy");
}

}  // namespace

template <class Real>
StrategyResult<Real> run_strategy(StrategyKind strategy, const Matrix<Real>& images,
                                  const Matrix<Real>& texts, const StrategyConfig& config,
                                  const std::vector<MemoryTracker*>& trackers) {
  if (images.rows() != texts.rows() || images.cols() != texts.cols()) {
    throw ShapeError("run_strategy: images " + shape_string(images.rows(), images.cols()) +
                     " vs texts " + shape_string(texts.rows(), texts.cols()));
  }
  if (!trackers.empty() && trackers.size() != config.n) {
    throw ConfigError("tracker count does not match worker count");
  }
  auto forward = run_one_direction(strategy, images, texts, config, trackers);
  forward.loss_image = forward.loss;
  forward.loss_text = forward.loss;
  if (!config.bidirectional) return forward;

  auto reverse = run_one_direction(strategy, texts, images, config, trackers);
  forward.loss_text = reverse.loss;
  forward.loss = (forward.loss_image + reverse.loss) / 2;
  auto di = forward.grads.d_image.values();
  auto dt = forward.grads.d_text.values();
  auto ri = reverse.grads.d_image.values();
  auto rt = reverse.grads.d_text.values();
  for (std::size_t k = 0; k < di.size(); ++k) {
    di[k] = (di[k] + rt[k]) / 2;
    dt[k] = (dt[k] + ri[k]) / 2;
  }
  return forward;
}

template StrategyResult<float> run_strategy(StrategyKind, const Matrix<float>&,
                                            const Matrix<float>&, const StrategyConfig&,
                                            const std::vector<MemoryTracker*>&);
template StrategyResult<double> run_strategy(StrategyKind, const Matrix<double>&,
                                             const Matrix<double>&, const StrategyConfig&,
                                             const std::vector<MemoryTracker*>&);

MemoryReport summarize_trackers(const MeasureConfig& cfg,
                                const std::vector<MemoryTracker*>& trackers) {
  MemoryReport r;
  r.strategy = cfg.strategy;
  r.b = cfg.b;
  r.n = cfg.n;
  r.c = cfg.c;
  r.t_r = cfg.t_r;
  r.t_c = cfg.t_c;
  r.dtype_width = cfg.dtype_width;
  r.backbone_bytes = cfg.backbone_bytes;
  const std::size_t shard = cfg.b / cfg.n;
  for (const auto* t : trackers) {
    WorkerMemory m{t->peak(Category::data), t->peak(Category::loss), t->peak(Category::gradient)};
    if (cfg.data_offload && cfg.accumulation_batch > 0) {
      m.data_bytes = m.data_bytes * std::min(cfg.accumulation_batch, shard) / shard;
    }
    r.per_worker.push_back(m);
    r.data_bytes = std::max(r.data_bytes, m.data_bytes);
    r.loss_buffer_bytes = std::max(r.loss_buffer_bytes, m.loss_peak);
    r.gradient_temp_bytes = std::max(r.gradient_temp_bytes, m.grad_peak);
  }
  r.peak_bytes = peak_total(r.data_bytes, r.loss_buffer_bytes, r.backbone_bytes);
  return r;
}

void validate(const MeasureConfig& cfg) {
  if (cfg.b == 0 || cfg.c == 0 || cfg.n == 0 || cfg.t_r == 0 || cfg.t_c == 0) {
    throw ConfigError("b, c, n and tile sizes must all be >= 1");
  }
  if (cfg.dtype_width != 4 && cfg.dtype_width != 8) {
    throw ConfigError("dtype width must be 4 (f32) or 8 (f64), got " +
                      std::to_string(cfg.dtype_width));
  }
  if (!(cfg.scale > 0)) throw ConfigError("scale must be > 0");
  ring::make_assignment(cfg.b, cfg.n);
}

namespace {

template <class Real>
MemoryReport measure_typed(const MeasureConfig& cfg) {
  auto features = generate_features(cfg.seed, cfg.b, cfg.c);
  Matrix<Real> images = cast_matrix<Real>(features.images);
  Matrix<Real> texts = cast_matrix<Real>(features.texts);

  std::vector<std::unique_ptr<MemoryTracker>> owned;
  std::vector<MemoryTracker*> trackers;
  for (std::size_t w = 0; w < cfg.n; ++w) {
    owned.push_back(std::make_unique<MemoryTracker>(cfg.loss_ceiling_bytes));
    trackers.push_back(owned.back().get());
  }

  StrategyConfig sc;
  sc.n = cfg.n;
  sc.tiles = {cfg.t_r, cfg.t_c};
  sc.scale = cfg.scale;
  sc.parallelism = cfg.parallelism;
  sc.bidirectional = cfg.bidirectional;
  try {
    run_strategy(cfg.strategy, images, texts, sc, trackers);
  } catch (const MemoryBudgetError& e) {
    throw MemoryBudgetError(std::string(to_string(cfg.strategy)) + " at b=" +
                            std::to_string(cfg.b) + ": " + e.what() +
                            "; try a smaller batch size");
  } catch (const std::bad_alloc&) {
    throw MemoryBudgetError(std::string(to_string(cfg.strategy)) + " at b=" +
                            std::to_string(cfg.b) +
                            ": host out of memory; try a smaller batch size");
  }

  return summarize_trackers(cfg, trackers);
}

}  // namespace

MemoryReport measure_run(const MeasureConfig& config) {
  validate(config);
  if (config.dtype_width == 4) return measure_typed<float>(config);
  return measure_typed<double>(config);
}

}  // namespace tilecl
