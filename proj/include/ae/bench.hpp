#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ae {

struct BenchPoint {
  std::string impl;  // "window" or "full"
  int64_t n = 0;     // token count
  double median_seconds = 0;
};

struct BenchResult {
  std::vector<BenchPoint> points;
  double window_slope = 0;  // log-log fit over n
  double full_slope = 0;
};

// Times windowed attention (partition + per-window attention + merge) against
// full global attention over the same token counts. Sizes must be perfect
// squares with sides divisible by the window so no padding distorts the
// scaling. Each point is the median of `repeats` wall-clock samples.
BenchResult run_attention_bench(const std::vector<int64_t>& sizes, int64_t repeats,
                                uint64_t seed);

// Least-squares slope of ln(seconds) against ln(n).
double loglog_slope(const std::vector<int64_t>& n, const std::vector<double>& seconds);

}  // namespace ae
