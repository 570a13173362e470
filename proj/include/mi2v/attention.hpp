#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mi2v/rng.hpp"
#include "mi2v/tensor.hpp"

namespace mi2v {

// Latent-grid coordinate of a token: frame, row, column.
struct Position3 {
  std::int32_t t = 0;
  std::int32_t h = 0;
  std::int32_t w = 0;
};

// 3-D rotary embedding. The head dimension is split into three contiguous
// even-sized blocks for the frame, row and column axes. Inside a block of
// width n, pair (2i, 2i+1) is rotated by pos * base^(-2i/n).
struct RopeConfig {
  double base = 10000.0;
  std::int64_t t_dim = 0;
  std::int64_t h_dim = 0;
  std::int64_t w_dim = 0;

  std::int64_t head_dim() const { return t_dim + h_dim + w_dim; }
  // Row and column blocks get 2*floor(d/6) each; the frame block takes the rest.
  static RopeConfig split_for(std::int64_t head_dim, double base = 10000.0);
};

// Projection weights for one attention layer. Projections are right
// multiplications: Q = x * w_q with w_q of shape (C, C).
struct AttentionParams {
  Tensor w_q, w_k, w_v, w_o;
  std::int64_t heads = 1;
  bool qk_norm = false;
  // Length-C gains, head h owns [h*d, (h+1)*d). Only read when qk_norm is set.
  Tensor q_gain, k_gain;
  std::optional<RopeConfig> rope;

  std::int64_t channels() const { return w_q.rank() == 2 ? w_q.dim(0) : 0; }
  std::int64_t head_dim() const { return heads > 0 ? channels() / heads : 0; }

  void validate() const;

  // Normal weights scaled by 1/sqrt(C); unit gains.
  static AttentionParams random(Rng& rng, std::int64_t channels, std::int64_t heads,
                                bool qk_norm = false);
};

// Execution strategy. Only the execution path changes; every combination
// computes the same function as the all-false baseline.
struct ExecStrategy {
  // Q/K/V live in (B, C, 1, S) with projections run as 1x1 convolutions.
  bool channels_first_4d = false;
  // Heads execute one at a time as a per-head kernel list over (1, d, S)
  // tiles instead of stage-by-stage across all heads.
  bool head_tiling = false;
  // Heads are projected straight into their working buffers and only K is
  // transposed. Without it the path performs the literal reshape/transpose
  // copies of a framework implementation.
  bool reduced_data_movement = false;

  static ExecStrategy baseline() { return {}; }
  static ExecStrategy all() { return {true, true, true}; }
  // All eight combinations, baseline first.
  static std::vector<ExecStrategy> combinations();

  // "baseline", "all", or a '+'-joined subset of {4dc, ht, rdm}.
  std::string name() const;
  static ExecStrategy parse(const std::string& name);

  bool operator==(const ExecStrategy&) const = default;
};

// Denominator stabilizer of both linear-attention forms.
inline constexpr float kLinearAttentionDelta = 1e-6f;

// Rope is applied to Q and K whenever params.rope is set; `positions` must
// then hold one entry per token (shared across the batch).
Tensor softmax_attention(const Tensor& x, const AttentionParams& params,
                         const ExecStrategy& strategy = {},
                         std::span<const Position3> positions = {});

// Quadratic evaluation of the ReLU-kernel ratio, token pair by token pair.
Tensor linear_attention_reference(const Tensor& x, const AttentionParams& params,
                                  std::span<const Position3> positions = {});

// Factored O(S) evaluation: per head M = sum_j relu(K_j)^T V_j and
// kbar = sum_j relu(K_j) are accumulated once and shared by every query.
Tensor linear_attention_streaming(const Tensor& x, const AttentionParams& params,
                                  const ExecStrategy& strategy = {},
                                  std::span<const Position3> positions = {});

// Rotates a (..., S, k*d) tensor; each d-wide channel chunk is one head.
Tensor apply_rope3d(const Tensor& q_or_k, std::span<const Position3> positions,
                    const RopeConfig& rope);

// ---------------------------------------------------------------------------
// Latency harness

enum class AttentionKind { Softmax, Linear };

std::string to_string(AttentionKind kind);
AttentionKind parse_attention_kind(const std::string& name);

struct LatencyRow {
  AttentionKind kind = AttentionKind::Linear;
  ExecStrategy strategy;
  std::int64_t length = 0;
  int reps = 0;
  std::int64_t median_ns = 0;
  std::int64_t min_ns = 0;
};

struct BenchShape {
  std::int64_t batch = 1;
  std::int64_t heads = 4;
  std::int64_t head_dim = 32;
};

// One untimed warm-up call, then `reps` timed calls per length on a monotonic
// clock. Rows come back sorted by ascending length.
std::vector<LatencyRow> bench_attention(AttentionKind kind, const ExecStrategy& strategy,
                                        std::span<const std::int64_t> lengths, int reps, Rng& rng,
                                        const BenchShape& shape = {});

// Least-squares slope of log(median_ns) against log(length).
double loglog_slope(std::span<const LatencyRow> rows);

namespace testing {
// Fault-injection hook for the verification harness: while set, the streaming
// linear kernel perturbs its output.
void set_streaming_fault(bool enabled);
bool streaming_fault_enabled();
}  // namespace testing

}  // namespace mi2v
