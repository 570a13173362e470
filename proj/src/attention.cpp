#include "mi2v/attention.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "mi2v/error.hpp"
#include "mi2v/kernels.hpp"
#include "mi2v/ops.hpp"

namespace mi2v {

using kernels::Index;

// ===========================================================================
// Parameters and strategies
// ===========================================================================

RopeConfig RopeConfig::split_for(std::int64_t head_dim, double base) {
  RopeConfig r;
  r.base = base;
  r.h_dim = 2 * (head_dim / 6);
  r.w_dim = r.h_dim;
  r.t_dim = head_dim - r.h_dim - r.w_dim;
  return r;
}

void AttentionParams::validate() const {
  constexpr const char* where = "AttentionParams";
  const Index c = channels();
  require(c > 0, where, "empty projection matrices");
  for (const Tensor* w : {&w_q, &w_k, &w_v, &w_o}) {
    require(w->rank() == 2 && w->dim(0) == c && w->dim(1) == c, where,
            "projection must be (C, C), got " + to_string(w->dims()));
    require(w->all_finite(), where, "non-finite projection weight");
  }
  require(heads > 0 && c % heads == 0, where,
          "channels " + std::to_string(c) + " not divisible by heads " + std::to_string(heads));
  if (qk_norm) {
    require(q_gain.size() == static_cast<std::size_t>(c) && k_gain.size() == static_cast<std::size_t>(c),
            where, "qk-norm gains must have length C");
  }
  if (rope) {
    const Index d = head_dim();
    require(rope->t_dim >= 0 && rope->h_dim >= 0 && rope->w_dim >= 0 &&
                rope->t_dim % 2 == 0 && rope->h_dim % 2 == 0 && rope->w_dim % 2 == 0,
            where, "rope sub-blocks must be even");
    require(rope->head_dim() == d, where,
            "rope split covers " + std::to_string(rope->head_dim()) + " of head_dim " + std::to_string(d));
  }
}

AttentionParams AttentionParams::random(Rng& rng, std::int64_t channels, std::int64_t heads,
                                        bool qk_norm) {
  AttentionParams p;
  p.heads = heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(channels));
  for (Tensor* w : {&p.w_q, &p.w_k, &p.w_v, &p.w_o}) {
    *w = random_normal(rng, {channels, channels});
    for (auto& v : w->values()) v *= scale;
  }
  p.qk_norm = qk_norm;
  p.q_gain = Tensor::filled({channels}, 1.0f);
  p.k_gain = Tensor::filled({channels}, 1.0f);
  p.validate();
  return p;
}

std::vector<ExecStrategy> ExecStrategy::combinations() {
  std::vector<ExecStrategy> out;
  for (int bits = 0; bits < 8; ++bits)
    out.push_back({(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0});
  return out;
}

std::string ExecStrategy::name() const {
  if (!channels_first_4d && !head_tiling && !reduced_data_movement) return "baseline";
  if (channels_first_4d && head_tiling && reduced_data_movement) return "all";
  std::string s;
  auto add = [&](const char* part) {
    if (!s.empty()) s += '+';
    s += part;
  };
  if (channels_first_4d) add("4dc");
  if (head_tiling) add("ht");
  if (reduced_data_movement) add("rdm");
  return s;
}

ExecStrategy ExecStrategy::parse(const std::string& name) {
  if (name == "baseline") return baseline();
  if (name == "all") return all();
  ExecStrategy s;
  std::stringstream ss(name);
  std::string part;
  bool any = false;
  while (std::getline(ss, part, '+')) {
    if (part == "4dc") s.channels_first_4d = true;
    else if (part == "ht") s.head_tiling = true;
    else if (part == "rdm") s.reduced_data_movement = true;
    else fail("ExecStrategy", "unknown strategy '" + name + "'");
    any = true;
  }
  require(any, "ExecStrategy", "empty strategy name");
  return s;
}

namespace testing {
namespace {
std::atomic<bool> g_streaming_fault{false};
}
void set_streaming_fault(bool enabled) { g_streaming_fault = enabled; }
bool streaming_fault_enabled() { return g_streaming_fault; }
}  // namespace testing

// ===========================================================================
// Shared helpers
// ===========================================================================

namespace {

constexpr Index kQueryBlock = 64;

void check_inputs(const Tensor& x, const AttentionParams& params,
                  std::span<const Position3> positions, const char* where) {
  params.validate();
  require(x.rank() == 3 && x.layout() == Layout::RowMajor, where,
          "expected row-major (B, S, C), got " + to_string(x.dims()));
  require(x.dim(2) == params.channels(), where,
          "channel extent " + std::to_string(x.dim(2)) + " != params C " +
              std::to_string(params.channels()));
  require(x.all_finite(), where, "non-finite input");
  if (params.rope) {
    require(static_cast<Index>(positions.size()) == x.dim(1), where,
            "rope needs one position per token");
  }
}

// cos/sin for every (token, pair) of one head.
struct RopeTable {
  Index pairs = 0;
  std::vector<double> cos, sin;
};

RopeTable build_rope_table(std::span<const Position3> positions, const RopeConfig& rope) {
  RopeTable table;
  table.pairs = rope.head_dim() / 2;
  table.cos.resize(positions.size() * table.pairs);
  table.sin.resize(positions.size() * table.pairs);
  for (std::size_t s = 0; s < positions.size(); ++s) {
    Index pair = 0;
    auto fill_block = [&](Index width, std::int32_t pos) {
      for (Index i = 0; i < width / 2; ++i, ++pair) {
        const double angle =
            double(pos) * std::pow(rope.base, -2.0 * double(i) / double(width));
        table.cos[s * table.pairs + pair] = std::cos(angle);
        table.sin[s * table.pairs + pair] = std::sin(angle);
      }
    };
    fill_block(rope.t_dim, positions[s].t);
    fill_block(rope.h_dim, positions[s].h);
    fill_block(rope.w_dim, positions[s].w);
  }
  return table;
}

// Element (s, j) of a head lives at data[s * ts + j * cs].
void rope_rotate(float* data, Index tokens, Index ts, Index cs, const RopeTable& table) {
  for (Index s = 0; s < tokens; ++s) {
    for (Index p = 0; p < table.pairs; ++p) {
      const double c = table.cos[s * table.pairs + p];
      const double sn = table.sin[s * table.pairs + p];
      float& x = data[s * ts + (2 * p) * cs];
      float& y = data[s * ts + (2 * p + 1) * cs];
      const double xv = x, yv = y;
      x = static_cast<float>(xv * c - yv * sn);
      y = static_cast<float>(xv * sn + yv * c);
    }
  }
}

void rms_rows_strided(float* data, Index tokens, Index d, Index ts, Index cs, const float* gain) {
  for (Index s = 0; s < tokens; ++s) {
    double ss = 0.0;
    for (Index i = 0; i < d; ++i) {
      const double v = data[s * ts + i * cs];
      ss += v * v;
    }
    const double denom = std::sqrt(ss / double(d) + double(kDefaultRmsEps));
    for (Index i = 0; i < d; ++i) {
      float& v = data[s * ts + i * cs];
      v = static_cast<float>(double(v) / denom * double(gain[i]));
    }
  }
}

void relu_inplace(std::vector<float>& v) {
  for (auto& x : v) x = x > 0.0f ? x : 0.0f;
}

// Runs two per-head stages either head by head (tiled) or stage by stage
// across all heads (batched). Stage functions receive (head, scratch slot).
template <class StageA, class StageB>
void schedule_heads(Index count, bool tiled, StageA&& a, StageB&& b) {
  if (tiled) {
    for (Index i = 0; i < count; ++i) {
      a(i, 0);
      b(i, 0);
    }
  } else {
    for (Index i = 0; i < count; ++i) a(i, i);
    for (Index i = 0; i < count; ++i) b(i, i);
  }
}

void softmax_row_inplace(float* row, Index n) {
  const float mx = *std::max_element(row, row + n);
  double sum = 0.0;
  for (Index j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  require(std::isfinite(sum) && sum > 0.0, "softmax_attention", "non-finite attention logits");
  const float inv = static_cast<float>(1.0 / sum);
  for (Index j = 0; j < n; ++j) row[j] *= inv;
}

// Softmax down each column of a (rows x cols) block.
void softmax_cols_inplace(float* block, Index rows, Index cols, std::vector<float>& mx,
                          std::vector<double>& sum) {
  mx.assign(cols, -INFINITY);
  sum.assign(cols, 0.0);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) mx[c] = std::max(mx[c], block[r * cols + c]);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      float& v = block[r * cols + c];
      v = std::exp(v - mx[c]);
      sum[c] += v;
    }
  }
  for (Index c = 0; c < cols; ++c) {
    require(std::isfinite(sum[c]) && sum[c] > 0.0, "softmax_attention",
            "non-finite attention logits");
    mx[c] = static_cast<float>(1.0 / sum[c]);
  }
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) block[r * cols + c] *= mx[c];
}

// ===========================================================================
// Projection into per-head buffers
// ===========================================================================

enum class Orientation { TokenMajor, ChannelMajor };

// q, k, v hold batch*heads contiguous blocks; (S, d) when token-major,
// (d, S) when channel-major.
struct HeadBuffers {
  Orientation orient = Orientation::TokenMajor;
  Index batch = 0, heads = 0, tokens = 0, head_dim = 0;
  std::vector<float> q, k, v;

  Index block() const { return tokens * head_dim; }
  Index count() const { return batch * heads; }
  Index ts() const { return orient == Orientation::TokenMajor ? head_dim : 1; }
  Index cs() const { return orient == Orientation::TokenMajor ? 1 : tokens; }
};

// Framework-style head split: full projection, a materialized reshape to
// (B, S, h, d), then a transpose copy to (B, h, S, d).
void project_naive_rowmajor(const Tensor& x, const Tensor& w, Index heads, std::vector<float>& dst) {
  const Index b = x.dim(0), s = x.dim(1), c = x.dim(2), d = c / heads;
  const Tensor full = batched_contract(x, w.reshaped({1, c, c}), ContractPattern::BatchedNN);
  const Tensor split = full.reshaped({b, s, heads, d});
  dst.assign(split.size(), 0.0f);
  for (Index bi = 0; bi < b; ++bi)
    for (Index si = 0; si < s; ++si)
      for (Index h = 0; h < heads; ++h)
        for (Index i = 0; i < d; ++i)
          dst[((bi * heads + h) * s + si) * d + i] = split[((bi * s + si) * heads + h) * d + i];
}

// Each head's column block of W is multiplied straight into its buffer.
void project_direct_rowmajor(const Tensor& x, const Tensor& w, Index heads, std::vector<float>& dst) {
  const Index b = x.dim(0), s = x.dim(1), c = x.dim(2), d = c / heads;
  dst.assign(static_cast<std::size_t>(b * s * c), 0.0f);
  for (Index bi = 0; bi < b; ++bi)
    for (Index h = 0; h < heads; ++h)
      kernels::gemm_nn(s, d, c, x.data() + bi * s * c, c, w.data() + h * d, c,
                       dst.data() + (bi * heads + h) * s * d, d);
}

// 1x1 convolution on (B, C, 1, S): out[co, s] = sum_ci W[ci, co] x[ci, s].
void project_channels_first(const Tensor& x_cf, const Tensor& w, Index heads, bool direct,
                            std::vector<float>& dst) {
  const Index b = x_cf.dim(0), c = x_cf.dim(1), s = x_cf.dim(3), d = c / heads;
  dst.assign(static_cast<std::size_t>(b * c * s), 0.0f);
  for (Index bi = 0; bi < b; ++bi) {
    const float* xb = x_cf.data() + bi * c * s;
    if (direct) {
      for (Index h = 0; h < heads; ++h)
        kernels::gemm_tn(d, s, c, w.data() + h * d, c, xb, s, dst.data() + (bi * c + h * d) * s, s);
    } else {
      std::vector<float> full(static_cast<std::size_t>(c * s));
      kernels::gemm_tn(c, s, c, w.data(), c, xb, s, full.data(), s);
      // Materialized reshape (C, S) -> (h, d, S).
      Tensor reshaped = Tensor({c, s}, std::move(full)).reshaped({heads, d, s});
      std::copy(reshaped.values().begin(), reshaped.values().end(), dst.begin() + bi * c * s);
    }
  }
}

HeadBuffers project_heads(const Tensor& x, const AttentionParams& p, const ExecStrategy& strat) {
  HeadBuffers hb;
  hb.batch = x.dim(0);
  hb.tokens = x.dim(1);
  hb.heads = p.heads;
  hb.head_dim = p.head_dim();
  if (strat.channels_first_4d) {
    hb.orient = Orientation::ChannelMajor;
    const Tensor x_cf = layout_convert(x, Layout::ChannelsFirst4D);
    const bool direct = strat.reduced_data_movement;
    project_channels_first(x_cf, p.w_q, p.heads, direct, hb.q);
    project_channels_first(x_cf, p.w_k, p.heads, direct, hb.k);
    project_channels_first(x_cf, p.w_v, p.heads, direct, hb.v);
  } else {
    hb.orient = Orientation::TokenMajor;
    auto project = strat.reduced_data_movement ? project_direct_rowmajor : project_naive_rowmajor;
    project(x, p.w_q, p.heads, hb.q);
    project(x, p.w_k, p.heads, hb.k);
    project(x, p.w_v, p.heads, hb.v);
  }
  return hb;
}

void prepare_qk(HeadBuffers& hb, const AttentionParams& p, std::span<const Position3> positions) {
  const Index d = hb.head_dim;
  if (p.qk_norm) {
    for (Index i = 0; i < hb.count(); ++i) {
      const Index h = i % hb.heads;
      rms_rows_strided(hb.q.data() + i * hb.block(), hb.tokens, d, hb.ts(), hb.cs(),
                       p.q_gain.data() + h * d);
      rms_rows_strided(hb.k.data() + i * hb.block(), hb.tokens, d, hb.ts(), hb.cs(),
                       p.k_gain.data() + h * d);
    }
  }
  if (p.rope) {
    const RopeTable table = build_rope_table(positions, *p.rope);
    for (Index i = 0; i < hb.count(); ++i) {
      rope_rotate(hb.q.data() + i * hb.block(), hb.tokens, hb.ts(), hb.cs(), table);
      rope_rotate(hb.k.data() + i * hb.block(), hb.tokens, hb.ts(), hb.cs(), table);
    }
  }
}

// ===========================================================================
// Head merge and output projection
// ===========================================================================

// Where each head writes its (S, d) or (d, S) result.
struct OutputBuffer {
  std::vector<float> data;
  Index head_offset(const HeadBuffers& hb, Index i, bool merged) const {
    const Index b = i / hb.heads, h = i % hb.heads;
    if (hb.orient == Orientation::TokenMajor && merged)
      return b * hb.tokens * hb.heads * hb.head_dim + h * hb.head_dim;
    return i * hb.block();
  }
};

// Leading dimension of a head's output rows.
Index output_ld(const HeadBuffers& hb, bool merged) {
  if (hb.orient == Orientation::ChannelMajor) return hb.tokens;
  return merged ? hb.heads * hb.head_dim : hb.head_dim;
}

Tensor finish_output(const HeadBuffers& hb, std::vector<float>&& out, const AttentionParams& p,
                     const ExecStrategy& strat) {
  const Index b = hb.batch, s = hb.tokens, heads = hb.heads, d = hb.head_dim, c = heads * d;
  const bool merged = strat.reduced_data_movement;
  if (hb.orient == Orientation::ChannelMajor) {
    std::vector<float> o_cf;
    if (merged) {
      o_cf = std::move(out);
    } else {
      // Materialized reshape (B, h, d, S) -> (B, C, 1, S).
      o_cf.assign(out.begin(), out.end());
    }
    Tensor y_cf({b, c, 1, s}, Layout::ChannelsFirst4D);
    for (Index bi = 0; bi < b; ++bi)
      kernels::gemm_tn(c, s, c, p.w_o.data(), c, o_cf.data() + bi * c * s, s,
                       y_cf.data() + bi * c * s, s);
    return layout_convert(y_cf, Layout::RowMajor);
  }
  Tensor merged_t;
  if (merged) {
    merged_t = Tensor({b, s, c}, std::move(out));
  } else {
    // (B, h, S, d) -> transpose copy (B, S, h, d) -> reshape copy (B, S, C).
    Tensor swapped({b, s, heads, d});
    for (Index bi = 0; bi < b; ++bi)
      for (Index h = 0; h < heads; ++h)
        for (Index si = 0; si < s; ++si)
          for (Index i = 0; i < d; ++i)
            swapped[((bi * s + si) * heads + h) * d + i] = out[((bi * heads + h) * s + si) * d + i];
    merged_t = swapped.reshaped({b, s, c});
  }
  return batched_contract(merged_t, p.w_o.reshaped({1, c, c}), ContractPattern::BatchedNN);
}

// ===========================================================================
// Cores
// ===========================================================================

std::vector<float> linear_core(HeadBuffers& hb, const ExecStrategy& strat) {
  const Index s = hb.tokens, d = hb.head_dim;
  const bool merged = strat.reduced_data_movement;
  const bool rdm = strat.reduced_data_movement;
  std::vector<float> out(static_cast<std::size_t>(hb.count() * hb.block()));
  OutputBuffer ob;
  const Index ldo = output_ld(hb, merged);
  const Index slots = strat.head_tiling ? 1 : hb.count();
  // Per slot: the d x d key-value summary (M or its transpose) and kbar.
  std::vector<float> summary(static_cast<std::size_t>(slots * d * d));
  std::vector<float> kbar(static_cast<std::size_t>(slots * d));
  std::vector<float> scratch(static_cast<std::size_t>(s * d));
  std::vector<float> den(static_cast<std::size_t>(s));

  auto accumulate = [&](Index i, Index slot) {
    const float* k = hb.k.data() + i * hb.block();
    const float* v = hb.v.data() + i * hb.block();
    float* m = summary.data() + slot * d * d;
    float* kb = kbar.data() + slot * d;
    if (hb.orient == Orientation::TokenMajor) {
      if (rdm) {
        kernels::gemm_tn(d, d, s, k, d, v, d, m, d);
        for (Index j = 0; j < d; ++j) kb[j] = 0.0f;
        for (Index t = 0; t < s; ++t)
          for (Index j = 0; j < d; ++j) kb[j] += k[t * d + j];
      } else {
        kernels::transpose(s, d, k, d, scratch.data(), s);
        kernels::gemm_nn(d, d, s, scratch.data(), s, v, d, m, d);
        for (Index j = 0; j < d; ++j) {
          float acc = 0.0f;
          for (Index t = 0; t < s; ++t) acc += scratch[j * s + t];
          kb[j] = acc;
        }
      }
    } else {
      for (Index j = 0; j < d; ++j) {
        float acc = 0.0f;
        for (Index t = 0; t < s; ++t) acc += k[j * s + t];
        kb[j] = acc;
      }
      if (rdm) {
        // The one transpose on K; m receives M^T.
        kernels::transpose(d, s, k, s, scratch.data(), d);
        kernels::gemm_nn(d, d, s, v, s, scratch.data(), d, m, d);
      } else {
        std::vector<float> plain(static_cast<std::size_t>(d * d));
        kernels::gemm_nt(d, d, s, k, s, v, s, plain.data(), d);
        kernels::transpose(d, d, plain.data(), d, m, d);
      }
    }
  };

  auto apply = [&](Index i, Index slot) {
    const float* q = hb.q.data() + i * hb.block();
    const float* m = summary.data() + slot * d * d;
    const float* kb = kbar.data() + slot * d;
    float* o = out.data() + ob.head_offset(hb, i, merged);
    if (hb.orient == Orientation::TokenMajor) {
      kernels::gemm_nn(s, d, d, q, d, m, d, o, ldo);
      for (Index t = 0; t < s; ++t) {
        float acc = 0.0f;
        for (Index j = 0; j < d; ++j) acc += q[t * d + j] * kb[j];
        const float inv_den = acc + kLinearAttentionDelta;
        for (Index j = 0; j < d; ++j) o[t * ldo + j] /= inv_den;
      }
    } else {
      kernels::gemm_nn(d, s, d, m, d, q, s, o, s);
      kernels::gemm_nn(1, s, d, kb, d, q, s, den.data(), s);
      for (Index t = 0; t < s; ++t) den[t] += kLinearAttentionDelta;
      for (Index j = 0; j < d; ++j)
        for (Index t = 0; t < s; ++t) o[j * s + t] /= den[t];
    }
  };

  schedule_heads(hb.count(), strat.head_tiling, accumulate, apply);
  return out;
}

std::vector<float> softmax_core(HeadBuffers& hb, const ExecStrategy& strat) {
  const Index s = hb.tokens, d = hb.head_dim;
  const bool merged = strat.reduced_data_movement;
  std::vector<float> out(static_cast<std::size_t>(hb.count() * hb.block()));
  OutputBuffer ob;
  const Index ldo = output_ld(hb, merged);
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));

  // Token-major heads need K^T; this is the single transpose.
  std::vector<float> kt;
  if (hb.orient == Orientation::TokenMajor) {
    kt.resize(hb.k.size());
    for (Index i = 0; i < hb.count(); ++i)
      kernels::transpose(s, d, hb.k.data() + i * hb.block(), d, kt.data() + i * hb.block(), s);
  }

  const Index blocks = (s + kQueryBlock - 1) / kQueryBlock;
  const Index slots = strat.head_tiling ? 1 : hb.count();
  std::vector<float> scores(static_cast<std::size_t>(slots * kQueryBlock * s));
  std::vector<float> col_tmp;
  std::vector<double> col_sum;

  for (Index blk_outer = 0; blk_outer < (strat.head_tiling ? 1 : blocks); ++blk_outer) {
    // Tiled: each head walks all query blocks. Batched: each query block
    // visits all heads stage by stage.
    auto run_block = [&](Index i, Index slot, Index blk, bool stage_a) {
      const Index q0 = blk * kQueryBlock;
      const Index nb = std::min(kQueryBlock, s - q0);
      float* sc = scores.data() + slot * kQueryBlock * s;
      const float* q = hb.q.data() + i * hb.block();
      const float* v = hb.v.data() + i * hb.block();
      float* o = out.data() + ob.head_offset(hb, i, merged);
      if (hb.orient == Orientation::TokenMajor) {
        if (stage_a) {
          kernels::gemm_nn(nb, s, d, q + q0 * d, d, kt.data() + i * hb.block(), s, sc, s);
          for (Index e = 0; e < nb * s; ++e) sc[e] *= scale;
          for (Index r = 0; r < nb; ++r) softmax_row_inplace(sc + r * s, s);
        } else {
          kernels::gemm_nn(nb, d, s, sc, s, v, d, o + q0 * ldo, ldo);
        }
      } else {
        const float* k = hb.k.data() + i * hb.block();
        if (stage_a) {
          kernels::gemm_tn(s, nb, d, k, s, q + q0, s, sc, nb);
          for (Index e = 0; e < nb * s; ++e) sc[e] *= scale;
          softmax_cols_inplace(sc, s, nb, col_tmp, col_sum);
        } else {
          kernels::gemm_nn(d, nb, s, v, s, sc, nb, o + q0, s);
        }
      }
    };
    if (strat.head_tiling) {
      for (Index i = 0; i < hb.count(); ++i)
        for (Index blk = 0; blk < blocks; ++blk) {
          run_block(i, 0, blk, true);
          run_block(i, 0, blk, false);
        }
    } else {
      schedule_heads(
          hb.count(), false, [&](Index i, Index slot) { run_block(i, slot, blk_outer, true); },
          [&](Index i, Index slot) { run_block(i, slot, blk_outer, false); });
    }
  }
  return out;
}

}  // namespace

// ===========================================================================
// Public operations
// ===========================================================================

Tensor softmax_attention(const Tensor& x, const AttentionParams& params, const ExecStrategy& strategy,
                         std::span<const Position3> positions) {
  constexpr const char* where = "softmax_attention";
  check_inputs(x, params, positions, where);
  require(x.dim(1) >= 1, where, "sequence length must be at least 1");
  HeadBuffers hb = project_heads(x, params, strategy);
  prepare_qk(hb, params, positions);
  Tensor y = finish_output(hb, softmax_core(hb, strategy), params, strategy);
  check_finite(y, where);
  return y;
}

Tensor linear_attention_streaming(const Tensor& x, const AttentionParams& params,
                                  const ExecStrategy& strategy, std::span<const Position3> positions) {
  constexpr const char* where = "linear_attention_streaming";
  check_inputs(x, params, positions, where);
  HeadBuffers hb = project_heads(x, params, strategy);
  prepare_qk(hb, params, positions);
  relu_inplace(hb.q);
  relu_inplace(hb.k);
  Tensor y = finish_output(hb, linear_core(hb, strategy), params, strategy);
  if (testing::streaming_fault_enabled()) {
    for (auto& v : y.values()) v += 1e-2f;
  }
  check_finite(y, where);
  return y;
}

Tensor linear_attention_reference(const Tensor& x, const AttentionParams& params,
                                  std::span<const Position3> positions) {
  constexpr const char* where = "linear_attention_reference";
  check_inputs(x, params, positions, where);
  HeadBuffers hb = project_heads(x, params, ExecStrategy::baseline());
  prepare_qk(hb, params, positions);
  relu_inplace(hb.q);
  relu_inplace(hb.k);
  const Index s = hb.tokens, d = hb.head_dim;
  std::vector<float> out(static_cast<std::size_t>(hb.count() * hb.block()));
  std::vector<double> num(static_cast<std::size_t>(d));
  for (Index i = 0; i < hb.count(); ++i) {
    const float* q = hb.q.data() + i * hb.block();
    const float* k = hb.k.data() + i * hb.block();
    const float* v = hb.v.data() + i * hb.block();
    for (Index a = 0; a < s; ++a) {
      std::fill(num.begin(), num.end(), 0.0);
      double den = 0.0;
      for (Index b = 0; b < s; ++b) {
        double sim = 0.0;
        for (Index j = 0; j < d; ++j) sim += double(q[a * d + j]) * double(k[b * d + j]);
        den += sim;
        for (Index j = 0; j < d; ++j) num[j] += sim * double(v[b * d + j]);
      }
      den += double(kLinearAttentionDelta);
      for (Index j = 0; j < d; ++j)
        out[i * hb.block() + a * d + j] = static_cast<float>(num[j] / den);
    }
  }
  Tensor y = finish_output(hb, std::move(out), params, ExecStrategy::baseline());
  check_finite(y, where);
  return y;
}

Tensor apply_rope3d(const Tensor& q_or_k, std::span<const Position3> positions, const RopeConfig& rope) {
  constexpr const char* where = "apply_rope3d";
  require(rope.t_dim % 2 == 0 && rope.h_dim % 2 == 0 && rope.w_dim % 2 == 0, where,
          "odd rope sub-block");
  require(rope.t_dim >= 0 && rope.h_dim >= 0 && rope.w_dim >= 0, where, "negative rope sub-block");
  const Index d = rope.head_dim();
  require(d > 0, where, "empty rope config");
  require(q_or_k.rank() >= 2, where, "expected (..., S, C)");
  const Index s = q_or_k.dims()[q_or_k.rank() - 2];
  const Index c = q_or_k.dims().back();
  require(c % d == 0, where, "channel extent " + std::to_string(c) + " not a multiple of head_dim " +
                                 std::to_string(d));
  require(static_cast<Index>(positions.size()) == s, where, "one position per token required");
  Tensor out = q_or_k;
  const RopeTable table = build_rope_table(positions, rope);
  const Index outer = static_cast<Index>(out.size()) / std::max<Index>(s * c, 1);
  for (Index o = 0; o < outer; ++o)
    for (Index h = 0; h < c / d; ++h) rope_rotate(out.data() + o * s * c + h * d, s, c, 1, table);
  check_finite(out, where);
  return out;
}

}  // namespace mi2v
