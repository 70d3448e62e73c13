#include "bifa/profile.hpp"

#include <sys/resource.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <thread>

namespace bifa {

double current_rss_mib() {
  std::ifstream in("/proc/self/statm");
  long pages_total = 0, pages_rss = 0;
  if (!(in >> pages_total >> pages_rss)) return 0.0;
  return static_cast<double>(pages_rss) * static_cast<double>(sysconf(_SC_PAGESIZE)) / (1024.0 * 1024.0);
}

namespace {

double max_rss_mib() {
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  return static_cast<double>(ru.ru_maxrss) / 1024.0;  // kilobytes on Linux
}

}  // namespace

ProfileResult profile(const std::function<void()>& run, double sample_ms) {
  const double hwm_before = max_rss_mib();
  std::atomic<double> peak{current_rss_mib()};
  std::mutex mu;
  std::condition_variable cv;
  bool done = false;
  std::thread sampler([&] {
    std::unique_lock lock(mu);
    const auto period = std::chrono::duration<double, std::milli>(sample_ms);
    while (!cv.wait_for(lock, period, [&] { return done; })) {
      const double now = current_rss_mib();
      if (now > peak.load()) peak.store(now);
    }
  });

  const auto t0 = std::chrono::steady_clock::now();
  try {
    run();
  } catch (...) {
    {
      std::lock_guard lock(mu);
      done = true;
    }
    cv.notify_all();
    sampler.join();
    throw;
  }
  const auto t1 = std::chrono::steady_clock::now();
  {
    std::lock_guard lock(mu);
    done = true;
  }
  cv.notify_all();
  sampler.join();

  ProfileResult out;
  out.seconds = std::chrono::duration<double>(t1 - t0).count();
  out.peak_mib = std::max(peak.load(), current_rss_mib());
  // A raised high-water mark was reached during the run, so it is exact.
  const double hwm_after = max_rss_mib();
  if (hwm_after > hwm_before) out.peak_mib = std::max(out.peak_mib, hwm_after);
  return out;
}

}  // namespace bifa
