#include "mi2v/ops.hpp"

#include <algorithm>
#include <cmath>

#include "mi2v/error.hpp"
#include "mi2v/kernels.hpp"

namespace mi2v {

using kernels::Index;

std::string_view to_string(ContractPattern p) {
  switch (p) {
    case ContractPattern::BatchedNN: return "bmk,bkn->bmn";
    case ContractPattern::BatchedTN: return "bkm,bkn->bmn";
    case ContractPattern::BatchedNT: return "bmk,bnk->bmn";
    case ContractPattern::ChannelsFirstHeads: return "bchq,bkhc->bkhq";
  }
  return "?";
}

ContractPattern parse_contract_pattern(std::string_view einsum) {
  for (auto p : {ContractPattern::BatchedNN, ContractPattern::BatchedTN, ContractPattern::BatchedNT,
                 ContractPattern::ChannelsFirstHeads}) {
    if (to_string(p) == einsum) return p;
  }
  fail("batched_contract", "unknown pattern '" + std::string(einsum) + "'");
}

namespace {

Tensor contract_rank3(const Tensor& a, const Tensor& b, ContractPattern pattern) {
  constexpr const char* where = "batched_contract";
  require(a.rank() == 3 && b.rank() == 3, where,
          "pattern " + std::string(to_string(pattern)) + " needs rank-3 operands, got " +
              to_string(a.dims()) + " and " + to_string(b.dims()));
  const Index ba = a.dim(0), bb = b.dim(0);
  require(ba == bb || ba == 1 || bb == 1, where,
          "batch extents " + std::to_string(ba) + " and " + std::to_string(bb) + " do not match");
  const Index batch = std::max(ba, bb);

  Index m = 0, n = 0, k = 0, kb = 0;
  switch (pattern) {
    case ContractPattern::BatchedNN: m = a.dim(1); k = a.dim(2); kb = b.dim(1); n = b.dim(2); break;
    case ContractPattern::BatchedTN: k = a.dim(1); m = a.dim(2); kb = b.dim(1); n = b.dim(2); break;
    case ContractPattern::BatchedNT: m = a.dim(1); k = a.dim(2); n = b.dim(1); kb = b.dim(2); break;
    default: fail(where, "not a rank-3 pattern");
  }
  require(k == kb, where,
          "contracted extents differ: " + to_string(a.dims()) + " vs " + to_string(b.dims()));

  Tensor out({batch, m, n});
  const Index stride_a = ba == 1 ? 0 : a.dim(1) * a.dim(2);
  const Index stride_b = bb == 1 ? 0 : b.dim(1) * b.dim(2);
  for (Index i = 0; i < batch; ++i) {
    const float* pa = a.data() + i * stride_a;
    const float* pb = b.data() + i * stride_b;
    float* pc = out.data() + i * m * n;
    switch (pattern) {
      case ContractPattern::BatchedNN: kernels::gemm_nn(m, n, k, pa, k, pb, n, pc, n); break;
      case ContractPattern::BatchedTN: kernels::gemm_tn(m, n, k, pa, m, pb, n, pc, n); break;
      case ContractPattern::BatchedNT: kernels::gemm_nt(m, n, k, pa, k, pb, k, pc, n); break;
      default: break;
    }
  }
  return out;
}

// out[b,k,h,q] = sum_c rhs[b,k,h,c] * lhs[b,c,h,q]
Tensor contract_channels_first_heads(const Tensor& lhs, const Tensor& rhs) {
  constexpr const char* where = "batched_contract";
  require(lhs.rank() == 4 && rhs.rank() == 4, where,
          "pattern bchq,bkhc->bkhq needs rank-4 operands");
  const Index batch = lhs.dim(0), c = lhs.dim(1), heads = lhs.dim(2), q = lhs.dim(3);
  const Index kk = rhs.dim(1);
  require(rhs.dim(0) == batch && rhs.dim(2) == heads && rhs.dim(3) == c, where,
          "extents " + to_string(lhs.dims()) + " and " + to_string(rhs.dims()) + " do not match");
  Tensor out({batch, kk, heads, q});
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      // With h fixed this is a strided NN product: (kk x c) * (c x q).
      const float* pr = rhs.data() + (b * kk * heads + h) * c;
      const float* pl = lhs.data() + (b * c * heads + h) * q;
      float* po = out.data() + (b * kk * heads + h) * q;
      kernels::gemm_nn(kk, q, c, pr, heads * c, pl, heads * q, po, heads * q);
    }
  }
  return out;
}

}  // namespace

Tensor batched_contract(const Tensor& a, const Tensor& b, ContractPattern pattern) {
  Tensor out = pattern == ContractPattern::ChannelsFirstHeads ? contract_channels_first_heads(a, b)
                                                              : contract_rank3(a, b, pattern);
  check_finite(out, "batched_contract");
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require(x.rank() >= 1 && x.dims().back() >= 1, "softmax_rows", "empty last axis");
  Tensor out(x.dims(), x.layout());
  const auto n = static_cast<std::size_t>(x.dims().back());
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = x.data() + r * n;
    float* o = out.data() + r * n;
    const float mx = *std::max_element(in, in + n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  check_finite(out, "softmax_rows");
  return out;
}

Tensor rms_normalize(const Tensor& x, const Tensor& gain, float eps) {
  constexpr const char* where = "rms_normalize";
  require(x.rank() >= 1, where, "scalar input");
  require(eps >= 0.0f, where, "eps must be non-negative");
  const auto n = static_cast<std::size_t>(x.dims().back());
  require(gain.size() == n, where,
          "gain length " + std::to_string(gain.size()) + " != last extent " + std::to_string(n));
  Tensor out(x.dims(), x.layout());
  if (n == 0) return out;
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = x.data() + r * n;
    float* o = out.data() + r * n;
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += double(in[j]) * double(in[j]);
    const double denom = std::sqrt(ss / double(n) + double(eps));
    for (std::size_t j = 0; j < n; ++j)
      o[j] = denom == 0.0 ? 0.0f : static_cast<float>(double(in[j]) / denom * double(gain[j]));
  }
  check_finite(out, where);
  return out;
}

Tensor layout_convert(const Tensor& x, Layout target) {
  constexpr const char* where = "layout_convert";
  if (x.layout() == Layout::RowMajor && x.rank() == 3 && target == Layout::ChannelsFirst4D) {
    const Index b = x.dim(0), s = x.dim(1), c = x.dim(2);
    Tensor out({b, c, 1, s}, Layout::ChannelsFirst4D);
    for (Index i = 0; i < b; ++i)
      kernels::transpose(s, c, x.data() + i * s * c, c, out.data() + i * s * c, s);
    return out;
  }
  if (x.layout() == Layout::ChannelsFirst4D && target == Layout::RowMajor) {
    const Index b = x.dim(0), c = x.dim(1), s = x.dim(3);
    Tensor out({b, s, c});
    for (Index i = 0; i < b; ++i)
      kernels::transpose(c, s, x.data() + i * s * c, s, out.data() + i * s * c, c);
    return out;
  }
  fail(where, "no conversion from " + to_string(x.layout()) + " " + to_string(x.dims()) + " to " +
                  to_string(target));
}

}  // namespace mi2v
