#include "rose/threads.hpp"

#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rose {

namespace {

thread_local bool in_worker = false;

class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void run(int64_t n, int threads,
           const std::function<void(int64_t, int64_t)>& body) {
    const int64_t chunk = (n + threads - 1) / threads;
    {
      std::unique_lock<std::mutex> lock(mu_);
      ensure_workers(threads - 1);
      for (int t = 1; t < threads; ++t) {
        const int64_t begin = t * chunk;
        const int64_t end = std::min<int64_t>(n, begin + chunk);
        if (begin >= end) break;
        queue_.push_back({&body, begin, end});
        ++pending_;
      }
    }
    cv_.notify_all();

    // calling thread takes the first chunk
    try {
      body(0, std::min<int64_t>(n, chunk));
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu_);
      if (!error_) error_ = std::current_exception();
    }

    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [&] { return pending_ == 0; });
    if (error_) {
      std::exception_ptr err = error_;
      error_ = nullptr;
      std::rethrow_exception(err);
    }
  }

 private:
  struct Task {
    const std::function<void(int64_t, int64_t)>* body;
    int64_t begin, end;
  };

  ~Pool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  void ensure_workers(int count) {  // caller holds mu_
    while (int(workers_.size()) < count) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  void worker_loop() {
    in_worker = true;
    for (;;) {
      Task task;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return stop_ || !queue_.empty(); });
        if (stop_ && queue_.empty()) return;
        task = queue_.front();
        queue_.pop_front();
      }
      try {
        (*task.body)(task.begin, task.end);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu_);
        if (!error_) error_ = std::current_exception();
      }
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::deque<Task> queue_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  int64_t pending_ = 0;
  std::exception_ptr error_;
  bool stop_ = false;
};

}  // namespace

int default_threads() {
  if (const char* env = std::getenv("ROSE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? int(hw) : 1;
}

void parallel_for(int64_t n, int threads,
                  const std::function<void(int64_t, int64_t)>& body) {
  if (n <= 0) return;
  // inline when parallelism cannot help (or we're already on a worker:
  // blocking a worker on sub-tasks could starve the pool)
  if (threads <= 1 || n == 1 || in_worker) {
    body(0, n);
    return;
  }
  Pool::instance().run(n, std::min<int64_t>(threads, n), body);
}

}  // namespace rose
