#pragma once

// Independent reference evaluations used by the unit and acceptance suites.
// Nothing here calls into the kernels it is used to check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "mi2v/tensor.hpp"

namespace mi2v::oracle {

// out[b,m,n] = sum_k a[b,m,k] * b[b,k,n], float accumulation, k ascending.
inline Tensor naive_bmm(const Tensor& a, const Tensor& b) {
  const auto batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor out({batch, m, n});
  for (std::int64_t bi = 0; bi < batch; ++bi)
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        float acc = 0.0f;
        for (std::int64_t p = 0; p < k; ++p)
          acc += a[(bi * m + i) * k + p] * b[(bi * k + p) * n + j];
        out[(bi * m + i) * n + j] = acc;
      }
  return out;
}

// Central finite differences of a scalar function of a flat parameter vector.
inline std::vector<double> central_difference(const std::function<double(const std::vector<float>&)>& f,
                                              std::vector<float> x, float step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = x[i];
    x[i] = orig + step;
    const float up = x[i];
    const double hi = f(x);
    x[i] = orig - step;
    const float down = x[i];
    const double lo = f(x);
    x[i] = orig;
    // Divide by the spacing actually realized in float.
    g[i] = (hi - lo) / (double(up) - double(down));
  }
  return g;
}

inline double max_relative_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::fabs(a[i] - b[i]));
    scale = std::max(scale, std::fabs(b[i]));
  }
  return diff == 0.0 ? 0.0 : diff / std::max(scale, 1e-30);
}

}  // namespace mi2v::oracle

#include <span>

#include "mi2v/attention.hpp"

namespace mi2v::oracle {

// Dense double-precision evaluation of one attention layer. `kind` selects the
// similarity: exp(q.k / sqrt(d)) or relu(q).relu(k). No qk-norm. When the
// params carry a rope config, q and k rows are rotated with `positions`.
enum class Similarity { Softmax, ReluKernel };

inline Tensor dense_attention(const Tensor& x, const AttentionParams& p, Similarity kind,
                              double delta = 1e-6, std::span<const Position3> positions = {}) {
  const auto B = x.dim(0), S = x.dim(1), C = x.dim(2), H = p.heads, D = C / H;
  auto project = [&](const Tensor& w) {
    std::vector<double> out(static_cast<std::size_t>(B * S * C), 0.0);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t s = 0; s < S; ++s)
        for (std::int64_t co = 0; co < C; ++co) {
          double acc = 0.0;
          for (std::int64_t ci = 0; ci < C; ++ci)
            acc += double(x[(b * S + s) * C + ci]) * double(w[ci * C + co]);
          out[(b * S + s) * C + co] = acc;
        }
    return out;
  };
  auto q = project(p.w_q), k = project(p.w_k);
  const auto v = project(p.w_v);
  if (p.rope) {
    auto rotate = [&](std::vector<double>& m) {
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t s = 0; s < S; ++s)
          for (std::int64_t h = 0; h < H; ++h) {
            double* row = m.data() + (b * S + s) * C + h * D;
            const std::int64_t widths[3] = {p.rope->t_dim, p.rope->h_dim, p.rope->w_dim};
            const double coords[3] = {double(positions[s].t), double(positions[s].h), double(positions[s].w)};
            std::int64_t off = 0;
            for (int axis = 0; axis < 3; ++axis) {
              const auto n = widths[axis];
              for (std::int64_t i = 0; i < n / 2; ++i) {
                const double ang = coords[axis] * std::pow(p.rope->base, -2.0 * double(i) / double(n));
                const double x0 = row[off + 2 * i], x1 = row[off + 2 * i + 1];
                row[off + 2 * i] = x0 * std::cos(ang) - x1 * std::sin(ang);
                row[off + 2 * i + 1] = x0 * std::sin(ang) + x1 * std::cos(ang);
              }
              off += n;
            }
          }
    };
    rotate(q);
    rotate(k);
  }
  std::vector<double> heads_out(static_cast<std::size_t>(B * S * C), 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t i = 0; i < S; ++i) {
        std::vector<double> w(static_cast<std::size_t>(S));
        double total = 0.0;
        for (std::int64_t j = 0; j < S; ++j) {
          double dot = 0.0;
          for (std::int64_t e = 0; e < D; ++e) {
            const double qv = q[(b * S + i) * C + h * D + e];
            const double kv = k[(b * S + j) * C + h * D + e];
            dot += kind == Similarity::Softmax ? qv * kv : std::max(qv, 0.0) * std::max(kv, 0.0);
          }
          w[j] = kind == Similarity::Softmax ? std::exp(dot / std::sqrt(double(D))) : dot;
          total += w[j];
        }
        if (kind == Similarity::ReluKernel) total += delta;
        for (std::int64_t e = 0; e < D; ++e) {
          double acc = 0.0;
          for (std::int64_t j = 0; j < S; ++j) acc += w[j] * v[(b * S + j) * C + h * D + e];
          heads_out[(b * S + i) * C + h * D + e] = acc / total;
        }
      }
  Tensor y({B, S, C});
  for (std::int64_t r = 0; r < B * S; ++r)
    for (std::int64_t co = 0; co < C; ++co) {
      double acc = 0.0;
      for (std::int64_t ci = 0; ci < C; ++ci) acc += heads_out[r * C + ci] * double(p.w_o[ci * C + co]);
      y[r * C + co] = static_cast<float>(acc);
    }
  return y;
}

}  // namespace mi2v::oracle
