#include "ae/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ae/am.hpp"
#include "ae/ops.hpp"
#include "ae/rng.hpp"

namespace ae {

namespace {

constexpr int64_t kDim = 32;
constexpr int64_t kHeads = 4;
constexpr int64_t kWindow = 4;

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

Tensor random_map(int64_t side, Rng& rng) {
  Tensor t = Tensor::zeros({1, kDim, side, side});
  double* d = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) d[i] = rng.uniform(-1.0, 1.0);
  return t;
}

// Median of `repeats` per-call times. Cheap calls are folded into blocks so
// one sample never sits under the clock's noise floor; expensive calls run
// solo, relying on the median to shed a cold first sample.
template <typename F>
double median_seconds(F&& fn, int64_t repeats) {
  std::vector<double> samples;
  samples.reserve(static_cast<size_t>(repeats));
  int64_t iters = 1;
  for (int64_t rep = 0; rep < repeats; ++rep) {
    for (;;) {
      const double t0 = now_seconds();
      for (int64_t i = 0; i < iters; ++i) fn();
      const double elapsed = now_seconds() - t0;
      if (elapsed >= 0.03 || iters >= 1024) {
        samples.push_back(elapsed / static_cast<double>(iters));
        break;
      }
      iters *= 4;  // re-time the block at the larger count
    }
  }
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

}  // namespace

double loglog_slope(const std::vector<int64_t>& n, const std::vector<double>& seconds) {
  if (n.size() != seconds.size() || n.size() < 2) {
    throw ValueError("slope fit needs at least two points");
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double count = static_cast<double>(n.size());
  for (size_t i = 0; i < n.size(); ++i) {
    const double x = std::log(static_cast<double>(n[i]));
    const double y = std::log(seconds[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (count * sxy - sx * sy) / (count * sxx - sx * sx);
}

BenchResult run_attention_bench(const std::vector<int64_t>& sizes, int64_t repeats,
                                uint64_t seed) {
  if (repeats < 3) throw ValueError("need at least 3 repeats for a stable median");
  for (size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] <= sizes[i - 1]) throw ValueError("sizes must be strictly ascending");
  }

  Rng rng(seed);
  MhaParams params(kDim, rng);

  BenchResult result;
  std::vector<double> window_times, full_times;
  std::vector<int64_t> ns;
  for (int64_t n : sizes) {
    const int64_t side = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (side * side != n || side % kWindow != 0) {
      throw ValueError("bench sizes must be squares with sides divisible by " +
                       std::to_string(kWindow));
    }
    Tensor map = random_map(side, rng);
    const double window_t = median_seconds(
        [&]() {
          WindowPartition part = window_partition(map, kWindow);
          Tensor att = mha_forward(part.windows, params, kHeads, &part.mask);
          volatile double sink = window_merge(part, att).at(0);
          (void)sink;
        },
        repeats);

    Tensor tokens = ops::reshape(ops::transpose(map, {0, 2, 3, 1}), {1, n, kDim});
    const double full_t = median_seconds(
        [&]() {
          volatile double sink = mha_forward_streaming(tokens, params, kHeads, nullptr).at(0);
          (void)sink;
        },
        repeats);

    result.points.push_back({"window", n, window_t});
    result.points.push_back({"full", n, full_t});
    ns.push_back(n);
    window_times.push_back(window_t);
    full_times.push_back(full_t);
  }
  result.window_slope = loglog_slope(ns, window_times);
  result.full_slope = loglog_slope(ns, full_times);
  return result;
}

}  // namespace ae
