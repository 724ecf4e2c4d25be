#include <pbf/parallel.hpp>

#include <algorithm>

namespace pbf
{
  WorkerPool::WorkerPool(int n_workers, bool deterministic)
    : n_workers_(std::max(1, n_workers))
    , deterministic_(deterministic)
  {
    for (int id = 1; id < n_workers_; ++id)
      threads_.emplace_back([this, id] { worker_loop(id); });
  }

  WorkerPool::~WorkerPool()
  {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    wake_.notify_all();
    for (auto &t : threads_)
      t.join();
  }

  void
  WorkerPool::execute(int id)
  {
    try
      {
        if (deterministic_)
          {
            for (std::size_t c = id; c < n_chunks_; c += n_workers_)
              (*body_)(c);
          }
        else
          {
            for (std::size_t c = next_.fetch_add(1); c < n_chunks_; c = next_.fetch_add(1))
              (*body_)(c);
          }
      }
    catch (...)
      {
        std::lock_guard lock(mutex_);
        if (!error_)
          error_ = std::current_exception();
      }
  }

  void
  WorkerPool::worker_loop(int id)
  {
    std::uint64_t seen = 0;
    while (true)
      {
        {
          std::unique_lock lock(mutex_);
          wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
          if (stop_)
            return;
          seen = generation_;
        }
        execute(id);
        {
          std::lock_guard lock(mutex_);
          --busy_;
        }
        done_.notify_one();
      }
  }

  void
  WorkerPool::run(std::size_t n_chunks, const std::function<void(std::size_t)> &body)
  {
    if (n_chunks == 0)
      return;
    if (n_workers_ == 1 || n_chunks == 1)
      {
        for (std::size_t c = 0; c < n_chunks; ++c)
          body(c);
        return;
      }
    {
      std::lock_guard lock(mutex_);
      body_     = &body;
      n_chunks_ = n_chunks;
      next_.store(0);
      error_ = nullptr;
      busy_  = n_workers_ - 1;
      ++generation_;
    }
    wake_.notify_all();
    execute(0);
    std::exception_ptr err;
    {
      std::unique_lock lock(mutex_);
      done_.wait(lock, [&] { return busy_ == 0; });
      body_ = nullptr;
      err   = error_;
    }
    if (err)
      std::rethrow_exception(err);
  }

  void
  WorkerPool::for_range(std::size_t n, std::size_t grain, const std::function<void(std::size_t, std::size_t)> &body)
  {
    grain                  = std::max<std::size_t>(1, grain);
    const std::size_t n_ch = (n + grain - 1) / grain;
    run(n_ch, [&](std::size_t c) { body(c * grain, std::min(n, (c + 1) * grain)); });
  }

  double
  blocked_sum(WorkerPool &pool, std::size_t n, const std::function<double(std::size_t, std::size_t)> &block_sum)
  {
    const std::size_t   n_blocks = (n + reduction_block - 1) / reduction_block;
    std::vector<double> partial(n_blocks, 0.0);
    pool.run(n_blocks, [&](std::size_t b) {
      partial[b] = block_sum(b * reduction_block, std::min(n, (b + 1) * reduction_block));
    });
    double s = 0.0;
    for (double p : partial)
      s += p;
    return s;
  }
} // namespace pbf
