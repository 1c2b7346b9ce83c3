#include "af/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace af {

namespace {

int default_threads() {
  if (const char* env = std::getenv("AF_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

int g_threads = default_threads();

thread_local bool t_inside_pool = false;

// Persistent worker pool. Chunk boundaries depend only on (n, worker count),
// and every index is processed by exactly one worker, so outputs are
// bit-identical for any pool size. Kernels passed here must not throw.
class Pool {
 public:
  static Pool& instance() {
    static Pool p;
    return p;
  }

  void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn, int workers) {
    ensure_workers(workers - 1);
    const int64_t chunk = (n + workers - 1) / workers;
    {
      std::unique_lock lk(m_);
      job_fn_ = &fn;
      job_n_ = n;
      job_chunk_ = chunk;
      job_workers_ = workers;
      pending_.store(workers - 1, std::memory_order_release);
      ++generation_;
    }
    cv_.notify_all();
    fn(0, std::min<int64_t>(n, chunk));
    std::unique_lock lk(m_);
    done_cv_.wait(lk, [&] { return pending_.load(std::memory_order_acquire) == 0; });
  }

  ~Pool() {
    {
      std::unique_lock lk(m_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

 private:
  void ensure_workers(int count) {
    if (static_cast<int>(threads_.size()) >= count) return;
    int have = static_cast<int>(threads_.size());
    for (int i = have; i < count; ++i) {
      threads_.emplace_back([this, i] { worker_loop(i); });
    }
  }

  void worker_loop(int index) {
    t_inside_pool = true;
    uint64_t seen = 0;
    while (true) {
      const std::function<void(int64_t, int64_t)>* fn;
      int64_t n, chunk;
      int workers;
      {
        std::unique_lock lk(m_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        fn = job_fn_;
        n = job_n_;
        chunk = job_chunk_;
        workers = job_workers_;
      }
      const int slot = index + 1;
      if (slot < workers) {
        const int64_t begin = slot * chunk;
        const int64_t end = std::min(n, begin + chunk);
        if (begin < end) (*fn)(begin, end);
        if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
          std::unique_lock lk(m_);
          done_cv_.notify_one();
        }
      }
    }
  }

  std::mutex m_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_n_ = 0;
  int64_t job_chunk_ = 0;
  int job_workers_ = 1;
  uint64_t generation_ = 0;
  std::atomic<int> pending_{0};
  bool stop_ = false;
};

}  // namespace

int num_threads() { return g_threads; }

void set_num_threads(int n) { g_threads = std::max(1, n); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<int64_t>(g_threads, n));
  if (workers <= 1 || t_inside_pool) {
    fn(0, n);
    return;
  }
  Pool::instance().run(n, fn, workers);
}

}  // namespace af
