#ifndef PBF_PARALLEL_HPP
#define PBF_PARALLEL_HPP

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace pbf
{
  /// Persistent worker threads executing chunked loops. The calling thread
  /// takes part as worker 0. In deterministic mode chunk c always runs on
  /// worker c % n_workers; otherwise chunks are handed out dynamically. Every
  /// kernel in this library writes disjoint output per chunk, so both modes
  /// give identical results; the flag only pins the schedule.
  class WorkerPool
  {
  public:
    explicit WorkerPool(int n_workers = 1, bool deterministic = true);
    ~WorkerPool();

    WorkerPool(const WorkerPool &) = delete;
    WorkerPool &
    operator=(const WorkerPool &) = delete;

    int
    n_workers() const
    {
      return n_workers_;
    }
    bool
    deterministic() const
    {
      return deterministic_;
    }

    /// Runs body(chunk) for chunk in [0, n_chunks) and waits for completion.
    /// The first exception thrown by any chunk is rethrown here.
    void
    run(std::size_t n_chunks, const std::function<void(std::size_t)> &body);

    /// Runs body(begin, end) over [0, n) split in chunks of `grain`.
    void
    for_range(std::size_t n, std::size_t grain, const std::function<void(std::size_t, std::size_t)> &body);

  private:
    void
    worker_loop(int id);
    void
    execute(int id);

    int                      n_workers_;
    bool                     deterministic_;
    std::vector<std::thread> threads_;

    std::mutex              mutex_;
    std::condition_variable wake_;
    std::condition_variable done_;
    std::uint64_t           generation_ = 0;
    bool                    stop_       = false;
    int                     busy_       = 0;

    const std::function<void(std::size_t)> *body_ = nullptr;
    std::size_t                             n_chunks_ = 0;
    std::atomic<std::size_t>                next_{0};
    std::exception_ptr                      error_;
  };

  /// Sum of f(i) over [0, n). Partial sums are formed over fixed blocks and
  /// combined in block order, so the result does not depend on the number of
  /// workers.
  double
  blocked_sum(WorkerPool &pool, std::size_t n, const std::function<double(std::size_t, std::size_t)> &block_sum);

  inline constexpr std::size_t reduction_block = 4096;
} // namespace pbf

#endif
