// SPDX-License-Identifier: Apache-2.0
//
// Simulated ring of logical workers computing the tiled contrastive loss.
//
// Worker w owns image rows and text rows [w*b_s, (w+1)*b_s). In round j
// (1-indexed) it holds text shard k = (w + j - 1) mod n, folds the LSE of its
// image shard against that shard into its accumulator, and passes the text
// shard on. Passing goes to the predecessor (w - 1) mod n, which is the
// direction that makes the index rule hold. Backward walks the same
// schedule; a per-shard gradient cache travels with the text shard and is
// back at its owner after n hops.
//
// Workers run as threads exchanging messages through per-worker mailboxes,
// or on a single thread in round-robin order for deterministic tests.
#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <mutex>
#include <vector>

#include "tilecl/core_tiles.hpp"
#include "tilecl/matrix.hpp"
#include "tilecl/tracker.hpp"

namespace tilecl::ring {

struct ShardAssignment {
  std::size_t n_workers = 1;
  std::size_t shard_size = 0;
  std::size_t batch = 0;

  std::size_t first_row(std::size_t worker) const noexcept { return worker * shard_size; }
};

// Throws ConfigError unless n >= 1 and batch % n == 0.
ShardAssignment make_assignment(std::size_t batch, std::size_t n_workers);

// Owner of the text shard worker `worker` holds in `round` (1-indexed):
// (worker + round - 1) mod n. Throws ArgumentError when out of range.
std::size_t ring_schedule(std::size_t worker, std::size_t round, std::size_t n_workers);

// Where a worker sends its shard at the end of a round.
inline std::size_t send_target(std::size_t worker, std::size_t n) noexcept {
  return (worker + n - 1) % n;
}

enum class PayloadKind { text_features, text_gradients };

template <class Real>
struct RingMessage {
  PayloadKind kind = PayloadKind::text_features;
  std::size_t source = 0;
  std::size_t round = 0;  // round the receiver will use the payload in
  std::size_t shard = 0;  // text shard the payload belongs to
  Matrix<Real> data;
};

template <class Real>
struct WorkerState {
  std::size_t worker_id = 0;
  Matrix<Real> image_shard;
  Matrix<Real> text_shard;
  Matrix<Real> in_transit_text;
  std::size_t in_transit_owner = 0;
  LseAccumulator<Real> lse;
  bool forward_done = false;
  Real partial_loss_sum = 0;  // sum over own rows of (lse_i - x_ii)
  Matrix<Real> d_image;
  Matrix<Real> d_text_cache;
  std::size_t cache_owner = 0;
};

struct RingVisit {
  std::size_t round = 0;
  std::size_t worker = 0;
  std::size_t image_shard = 0;
  std::size_t text_shard = 0;
  std::size_t rows = 0;
  bool backward = false;
};

// Thread-safe log of which (image shard, text shard) pair each worker
// computed in each round.
class RingTrace {
 public:
  void record(const RingVisit& v);
  std::vector<RingVisit> visits() const;

 private:
  mutable std::mutex mu_;
  std::vector<RingVisit> visits_;
};

enum class Scheduler { threaded, round_robin };

struct RingOptions {
  TileShape tiles{};
  double scale = 1.0;
  std::size_t parallelism = 1;  // OpenMP threads per worker
  Scheduler scheduler = Scheduler::threaded;
  // Sleep injected before a worker posts its message for `round`.
  std::function<std::chrono::microseconds(std::size_t worker, std::size_t round)> send_delay;
  std::chrono::milliseconds receive_timeout{60000};
  // Empty, or one tracker per worker.
  std::vector<MemoryTracker*> trackers;
  RingTrace* trace = nullptr;
};

// Splits aligned image/text batches into n contiguous shards. When trackers
// are given, each worker's shards are charged to its tracker as data.
template <class Real>
std::vector<WorkerState<Real>> partition(const Matrix<Real>& images, const Matrix<Real>& texts,
                                         std::size_t n_workers,
                                         const std::vector<MemoryTracker*>& trackers = {});

template <class Real>
struct ForwardResult {
  std::vector<std::vector<Real>> lse;  // per worker, global LSE of its rows
  Real loss{};
};

template <class Real>
ForwardResult<Real> forward_ring(std::vector<WorkerState<Real>>& workers, const RingOptions& opts);

// Requires forward_ring on the same workers. Returns each worker's full
// gradient for its own image and text shards.
template <class Real>
std::vector<GradPair<Real>> backward_ring(std::vector<WorkerState<Real>>& workers,
                                          const RingOptions& opts);

template <class Real>
struct RingRun {
  Real loss{};
  std::vector<Real> lse;  // concatenated over workers
  GradPair<Real> grads;   // concatenated, b x c each
};

template <class Real>
RingRun<Real> run_ring(const Matrix<Real>& images, const Matrix<Real>& texts,
                       std::size_t n_workers, const RingOptions& opts);

template <class Real>
struct BidirectionalRun {
  Real loss_image{};  // image -> text
  Real loss_text{};   // text -> image
  Real loss{};        // mean of the two
  GradPair<Real> grads;
};

// Runs the ring twice with roles swapped; gradients are those of the mean loss.
template <class Real>
BidirectionalRun<Real> run_ring_bidirectional(const Matrix<Real>& images,
                                              const Matrix<Real>& texts, std::size_t n_workers,
                                              const RingOptions& opts);

}  // namespace tilecl::ring
