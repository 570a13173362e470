#include <algorithm>
#include <chrono>
#include <cmath>

#include "mi2v/attention.hpp"
#include "mi2v/error.hpp"

namespace mi2v {

std::string to_string(AttentionKind kind) {
  return kind == AttentionKind::Softmax ? "softmax" : "linear";
}

AttentionKind parse_attention_kind(const std::string& name) {
  if (name == "softmax") return AttentionKind::Softmax;
  if (name == "linear") return AttentionKind::Linear;
  fail("bench_attention", "unknown attention kind '" + name + "'");
}

std::vector<LatencyRow> bench_attention(AttentionKind kind, const ExecStrategy& strategy,
                                        std::span<const std::int64_t> lengths, int reps, Rng& rng,
                                        const BenchShape& shape) {
  constexpr const char* where = "bench_attention";
  require(reps >= 3, where, "reps must be at least 3, got " + std::to_string(reps));
  require(!lengths.empty(), where, "no sequence lengths given");
  std::vector<std::int64_t> sorted(lengths.begin(), lengths.end());
  std::sort(sorted.begin(), sorted.end());
  for (auto s : sorted) require(s >= 1, where, "sequence lengths must be positive");

  const std::int64_t channels = shape.heads * shape.head_dim;
  const AttentionParams params = AttentionParams::random(rng, channels, shape.heads);

  std::vector<LatencyRow> rows;
  for (auto length : sorted) {
    const Tensor x = random_normal(rng, {shape.batch, length, channels});
    auto run = [&] {
      return kind == AttentionKind::Softmax ? softmax_attention(x, params, strategy)
                                            : linear_attention_streaming(x, params, strategy);
    };
    volatile float sink = run()[0];  // warm-up
    std::vector<std::int64_t> times;
    times.reserve(static_cast<std::size_t>(reps));
    for (int r = 0; r < reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor y = run();
      const auto t1 = std::chrono::steady_clock::now();
      sink = y[0];
      times.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    }
    (void)sink;
    std::sort(times.begin(), times.end());
    const std::size_t n = times.size();
    const std::int64_t median = n % 2 ? times[n / 2] : (times[n / 2 - 1] + times[n / 2]) / 2;
    rows.push_back({kind, strategy, length, reps, median, times.front()});
  }
  return rows;
}

double loglog_slope(std::span<const LatencyRow> rows) {
  require(rows.size() >= 2, "loglog_slope", "need at least two rows");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    const double x = std::log(static_cast<double>(r.length));
    const double y = std::log(static_cast<double>(std::max<std::int64_t>(r.median_ns, 1)));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = n * sxx - sx * sx;
  require(denom > 0.0, "loglog_slope", "lengths must not all be equal");
  return (n * sxy - sx * sy) / denom;
}

}  // namespace mi2v
