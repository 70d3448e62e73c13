#pragma once

#include <functional>

namespace bifa {

struct ProfileResult {
  double seconds = 0.0;
  double peak_mib = 0.0;  // peak resident set of the process while `run` executed
};

/// Wall clock plus resident-memory sampling around `run`.
ProfileResult profile(const std::function<void()>& run, double sample_ms = 2.0);

/// Current resident set size in MiB (0 if unavailable).
double current_rss_mib();

}  // namespace bifa
