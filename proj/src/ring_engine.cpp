// SPDX-License-Identifier: Apache-2.0
#include "tilecl/ring_engine.hpp"

#include <condition_variable>
#include <deque>
#include <exception>
#include <optional>
#include <thread>

#include "tilecl/errors.hpp"
#include "tilecl/faults.hpp"

namespace tilecl::ring {

ShardAssignment make_assignment(std::size_t batch, std::size_t n_workers) {
  if (n_workers == 0) throw ConfigError("worker count must be >= 1");
  if (batch == 0) throw ConfigError("batch size must be >= 1");
  if (batch % n_workers != 0) {
    throw ConfigError("batch size " + std::to_string(batch) + " is not divisible by worker count " +
                      std::to_string(n_workers));
  }
  return {n_workers, batch / n_workers, batch};
}

std::size_t ring_schedule(std::size_t worker, std::size_t round, std::size_t n_workers) {
  if (n_workers == 0 || worker >= n_workers || round == 0 || round > n_workers) {
    throw ArgumentError("ring_schedule: need 0 <= worker < n and 1 <= round <= n (worker " +
                        std::to_string(worker) + ", round " + std::to_string(round) + ", n " +
                        std::to_string(n_workers) + ")");
  }
  if (active_fault() == Fault::schedule_off_by_one) return (worker + round) % n_workers;
  return (worker + round - 1) % n_workers;
}

void RingTrace::record(const RingVisit& v) {
  std::lock_guard lock(mu_);
  visits_.push_back(v);
}

std::vector<RingVisit> RingTrace::visits() const {
  std::lock_guard lock(mu_);
  return visits_;
}

namespace {

const char* kind_name(PayloadKind k) {
  return k == PayloadKind::text_features ? "text_features" : "text_gradients";
}

// Raised in workers blocked on a mailbox after a peer failed.
struct Aborted {};

template <class Real>
class Mailbox {
 public:
  // In-flight payloads are charged to nobody until the receiver adopts them.
  void post(RingMessage<Real> msg) {
    msg.data.release_attribution();
    {
      std::lock_guard lock(mu_);
      queue_.push_back(std::move(msg));
    }
    cv_.notify_all();
  }

  void abort() {
    {
      std::lock_guard lock(mu_);
      aborted_ = true;
    }
    cv_.notify_all();
  }

  // First queued message of `kind`, FIFO per kind.
  RingMessage<Real> take(PayloadKind kind, std::size_t round, std::size_t worker,
                         std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    typename std::deque<RingMessage<Real>>::iterator it;
    auto ready = [&] {
      if (aborted_) return true;
      it = std::find_if(queue_.begin(), queue_.end(),
                        [&](const RingMessage<Real>& m) { return m.kind == kind; });
      return it != queue_.end();
    };
    if (!cv_.wait_for(lock, timeout, ready)) {
      throw ProtocolError(round, worker,
                          std::string("no ") + kind_name(kind) + " message arrived within " +
                              std::to_string(timeout.count()) + " ms");
    }
    if (aborted_) throw Aborted{};
    RingMessage<Real> msg = std::move(*it);
    queue_.erase(it);
    return msg;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<RingMessage<Real>> queue_;
  bool aborted_ = false;
};

// Runs `phase(w, round, step)` for every worker and round under the chosen
// scheduler. Steps: 0 = compute, 1 = send, 2 = receive.
template <class Real, class Phase>
void drive(std::size_t n, const RingOptions& opts, std::vector<Mailbox<Real>>& boxes,
           Phase&& phase) {
  auto tracker = [&](std::size_t w) { return opts.trackers.empty() ? nullptr : opts.trackers[w]; };

  if (opts.scheduler == Scheduler::round_robin) {
    for (std::size_t round = 1; round <= n; ++round) {
      for (int step = 0; step < 3; ++step) {
        for (std::size_t w = 0; w < n; ++w) {
          OptionalScope scope(tracker(w), Category::data);
          phase(w, round, step);
        }
      }
    }
    return;
  }

  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> threads;
    threads.reserve(n);
    for (std::size_t w = 0; w < n; ++w) {
      threads.emplace_back([&, w] {
        OptionalScope scope(tracker(w), Category::data);
        try {
          for (std::size_t round = 1; round <= n; ++round) {
            for (int step = 0; step < 3; ++step) phase(w, round, step);
          }
        } catch (const Aborted&) {
        } catch (...) {
          errors[w] = std::current_exception();
          for (auto& box : boxes) box.abort();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

template <class Real>
void validate_workers(const std::vector<WorkerState<Real>>& workers, const RingOptions& opts) {
  if (workers.empty()) throw ConfigError("ring needs at least one worker");
  if (!opts.trackers.empty() && opts.trackers.size() != workers.size()) {
    throw ConfigError("tracker count " + std::to_string(opts.trackers.size()) +
                      " does not match worker count " + std::to_string(workers.size()));
  }
  if (opts.tiles.rows == 0 || opts.tiles.cols == 0) throw ConfigError("tile sizes must be >= 1");
  for (std::size_t w = 0; w < workers.size(); ++w) {
    if (workers[w].worker_id != w) throw StateError("worker list is not in ring order");
  }
}

template <class Real>
void delay(const RingOptions& opts, std::size_t w, std::size_t round) {
  if (!opts.send_delay) return;
  auto d = opts.send_delay(w, round);
  if (d.count() > 0) std::this_thread::sleep_for(d);
}

}  // namespace

template <class Real>
std::vector<WorkerState<Real>> partition(const Matrix<Real>& images, const Matrix<Real>& texts,
                                         std::size_t n_workers,
                                         const std::vector<MemoryTracker*>& trackers) {
  if (images.rows() != texts.rows() || images.cols() != texts.cols()) {
    throw ShapeError("partition: images " + shape_string(images.rows(), images.cols()) +
                     " vs texts " + shape_string(texts.rows(), texts.cols()));
  }
  const ShardAssignment a = make_assignment(images.rows(), n_workers);
  if (!trackers.empty() && trackers.size() != n_workers) {
    throw ConfigError("tracker count does not match worker count");
  }
  std::vector<WorkerState<Real>> workers(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) {
    OptionalScope scope(trackers.empty() ? nullptr : trackers[w], Category::data);
    auto& s = workers[w];
    s.worker_id = w;
    s.image_shard = copy_rows(images, a.first_row(w), a.shard_size);
    s.text_shard = copy_rows(texts, a.first_row(w), a.shard_size);
    s.in_transit_text = s.text_shard;
    s.in_transit_owner = w;
  }
  return workers;
}

template <class Real>
ForwardResult<Real> forward_ring(std::vector<WorkerState<Real>>& workers,
                                 const RingOptions& opts) {
  validate_workers(workers, opts);
  const std::size_t n = workers.size();
  const Real scale = static_cast<Real>(opts.scale);
  std::vector<Mailbox<Real>> boxes(n);

  for (auto& s : workers) {
    s.forward_done = false;
    s.partial_loss_sum = 0;
  }

  drive<Real>(n, opts, boxes, [&](std::size_t w, std::size_t round, int step) {
    WorkerState<Real>& s = workers[w];
    if (step == 0) {
      const std::size_t k = ring_schedule(w, round, n);
      if (s.in_transit_owner != k) {
        throw ProtocolError(round, w,
                            "holds text shard " + std::to_string(s.in_transit_owner) +
                                " but the schedule expects shard " + std::to_string(k));
      }
      if (round == 1) {
        TrackerScope scope(Category::loss);
        s.lse = LseAccumulator<Real>(s.image_shard.rows());
      }
      accumulate_lse(s.lse, s.image_shard.view(), s.in_transit_text.view(), opts.tiles, scale,
                     opts.parallelism);
      if (opts.trace) {
        opts.trace->record({round, w, w, s.in_transit_owner, s.image_shard.rows(), false});
      }
      if (round == n) {
        // Positive-pair term, one row at a time.
        Real sum = 0;
        for (std::size_t i = 0; i < s.image_shard.rows(); ++i) {
          auto a = s.image_shard.row(i);
          auto t = s.text_shard.row(i);
          Real dot = 0;
          for (std::size_t d = 0; d < a.size(); ++d) dot += a[d] * t[d];
          sum += s.lse[i] - scale * dot;
        }
        s.partial_loss_sum = sum;
        s.forward_done = true;
      }
    } else if (step == 1) {
      delay<Real>(opts, w, round);
      boxes[send_target(w, n)].post({PayloadKind::text_features, w, round + 1, s.in_transit_owner,
                                     std::move(s.in_transit_text)});
    } else {
      auto msg = boxes[w].take(PayloadKind::text_features, round + 1, w, opts.receive_timeout);
      if (msg.round != round + 1 || msg.source != (w + 1) % n) {
        throw ProtocolError(round + 1, w,
                            "text features from worker " + std::to_string(msg.source) +
                                " tagged round " + std::to_string(msg.round));
      }
      s.in_transit_text = std::move(msg.data);
      s.in_transit_text.adopt_current_attribution();
      s.in_transit_owner = msg.shard;
    }
  });

  ForwardResult<Real> out;
  std::size_t rows = 0;
  Real total = 0;
  for (auto& s : workers) {
    out.lse.push_back(s.lse.to_vector());
    total += s.partial_loss_sum;
    rows += s.image_shard.rows();
  }
  out.loss = total / static_cast<Real>(rows);
  return out;
}

template <class Real>
std::vector<GradPair<Real>> backward_ring(std::vector<WorkerState<Real>>& workers,
                                          const RingOptions& opts) {
  validate_workers(workers, opts);
  const std::size_t n = workers.size();
  for (const auto& s : workers) {
    if (!s.forward_done) {
      throw StateError("backward_ring called before forward_ring on worker " +
                       std::to_string(s.worker_id));
    }
  }
  const Real scale = static_cast<Real>(opts.scale);
  std::size_t batch = 0;
  for (const auto& s : workers) batch += s.image_shard.rows();
  std::vector<Mailbox<Real>> boxes(n);
  std::vector<GradPair<Real>> grads(n);

  drive<Real>(n, opts, boxes, [&](std::size_t w, std::size_t round, int step) {
    WorkerState<Real>& s = workers[w];
    const std::size_t rows = s.image_shard.rows();
    const std::size_t c = s.image_shard.cols();
    if (step == 0) {
      if (round == 1) {
        TrackerScope scope(Category::gradient);
        s.d_image = Matrix<Real>(rows, c);
        s.d_text_cache = Matrix<Real>(rows, c);
        s.cache_owner = w;
      }
      const std::size_t k = ring_schedule(w, round, n);
      if (s.in_transit_owner != k || s.cache_owner != k) {
        throw ProtocolError(round, w,
                            "holds text shard " + std::to_string(s.in_transit_owner) +
                                " and gradient cache " + std::to_string(s.cache_owner) +
                                " but the schedule expects shard " + std::to_string(k));
      }
      auto partial = local_lse_backward(s.image_shard.view(), s.in_transit_text.view(),
                                        s.lse.values(), opts.tiles, scale, opts.parallelism);
      auto di = s.d_image.values();
      auto pi = partial.d_image.values();
      for (std::size_t i = 0; i < di.size(); ++i) di[i] += pi[i];
      auto dt = s.d_text_cache.values();
      auto pt = partial.d_text.values();
      for (std::size_t i = 0; i < dt.size(); ++i) dt[i] += pt[i];
      if (opts.trace) opts.trace->record({round, w, w, k, rows, true});
    } else if (step == 1) {
      delay<Real>(opts, w, round);
      const std::size_t to = send_target(w, n);
      boxes[to].post({PayloadKind::text_gradients, w, round + 1, s.cache_owner,
                      std::move(s.d_text_cache)});
      boxes[to].post({PayloadKind::text_features, w, round + 1, s.in_transit_owner,
                      std::move(s.in_transit_text)});
    } else {
      auto cache = boxes[w].take(PayloadKind::text_gradients, round + 1, w, opts.receive_timeout);
      auto text = boxes[w].take(PayloadKind::text_features, round + 1, w, opts.receive_timeout);
      for (const auto* m : {&cache, &text}) {
        if (m->round != round + 1 || m->source != (w + 1) % n) {
          throw ProtocolError(round + 1, w,
                              std::string(kind_name(m->kind)) + " from worker " +
                                  std::to_string(m->source) + " tagged round " +
                                  std::to_string(m->round));
        }
      }
      {
        TrackerScope scope(Category::gradient);
        s.d_text_cache = std::move(cache.data);
        s.d_text_cache.adopt_current_attribution();
        s.cache_owner = cache.shard;
      }
      s.in_transit_text = std::move(text.data);
      s.in_transit_text.adopt_current_attribution();
      s.in_transit_owner = text.shard;
      if (round == n) {
        if (s.cache_owner != w) {
          throw ProtocolError(round, w,
                              "gradient cache of shard " + std::to_string(s.cache_owner) +
                                  " ended on the wrong worker");
        }
        TrackerScope scope(Category::gradient);
        GradPair<Real> partial{std::move(s.d_image), std::move(s.d_text_cache)};
        grads[w] = assemble_full_gradients(std::move(partial), s.image_shard.view(),
                                           s.text_shard.view(), scale, batch);
      }
    }
  });
  return grads;
}

template <class Real>
RingRun<Real> run_ring(const Matrix<Real>& images, const Matrix<Real>& texts,
                       std::size_t n_workers, const RingOptions& opts) {
  auto workers = partition(images, texts, n_workers, opts.trackers);
  auto fwd = forward_ring(workers, opts);
  auto grads = backward_ring(workers, opts);

  RingRun<Real> out;
  out.loss = fwd.loss;
  for (const auto& l : fwd.lse) out.lse.insert(out.lse.end(), l.begin(), l.end());
  const std::size_t c = images.cols();
  out.grads = {Matrix<Real>(images.rows(), c), Matrix<Real>(texts.rows(), c)};
  std::size_t row = 0;
  for (const auto& g : grads) {
    std::copy(g.d_image.values().begin(), g.d_image.values().end(), out.grads.d_image.row(row).data());
    std::copy(g.d_text.values().begin(), g.d_text.values().end(), out.grads.d_text.row(row).data());
    row += g.d_image.rows();
  }
  return out;
}

template <class Real>
BidirectionalRun<Real> run_ring_bidirectional(const Matrix<Real>& images,
                                              const Matrix<Real>& texts, std::size_t n_workers,
                                              const RingOptions& opts) {
  auto forward = run_ring(images, texts, n_workers, opts);
  auto reverse = run_ring(texts, images, n_workers, opts);
  BidirectionalRun<Real> out;
  out.loss_image = forward.loss;
  out.loss_text = reverse.loss;
  out.loss = (forward.loss + reverse.loss) / 2;
  auto di = forward.grads.d_image.values();
  auto dt = forward.grads.d_text.values();
  auto ri = reverse.grads.d_image.values();  // w.r.t. texts
  auto rt = reverse.grads.d_text.values();   // w.r.t. images
  for (std::size_t k = 0; k < di.size(); ++k) {
    di[k] = (di[k] + rt[k]) / 2;
    dt[k] = (dt[k] + ri[k]) / 2;
  }
  out.grads = std::move(forward.grads);
  return out;
}

#define TILECL_INSTANTIATE(Real)                                                                  \
  template std::vector<WorkerState<Real>> partition(const Matrix<Real>&, const Matrix<Real>&,    \
                                                    std::size_t,                                 \
                                                    const std::vector<MemoryTracker*>&);         \
  template ForwardResult<Real> forward_ring(std::vector<WorkerState<Real>>&, const RingOptions&); \
  template std::vector<GradPair<Real>> backward_ring(std::vector<WorkerState<Real>>&,            \
                                                     const RingOptions&);                        \
  template RingRun<Real> run_ring(const Matrix<Real>&, const Matrix<Real>&, std::size_t,         \
                                  const RingOptions&);                                           \
  template BidirectionalRun<Real> run_ring_bidirectional(const Matrix<Real>&,                    \
                                                         const Matrix<Real>&, std::size_t,       \
                                                         const RingOptions&);

TILECL_INSTANTIATE(float)
TILECL_INSTANTIATE(double)

#undef TILECL_INSTANTIATE

}  // namespace tilecl::ring
