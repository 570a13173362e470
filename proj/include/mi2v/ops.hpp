#pragma once

#include <string_view>

#include "mi2v/tensor.hpp"

namespace mi2v {

// The fixed set of contractions the engine uses. Names follow einsum notation.
//
//   BatchedNN          "bmk,bkn->bmn"
//   BatchedTN          "bkm,bkn->bmn"
//   BatchedNT          "bmk,bnk->bmn"
//   ChannelsFirstHeads "bchq,bkhc->bkhq"   (c contracted)
//
// For the three rank-3 patterns a batch extent of 1 on either operand
// broadcasts against the other. Every output element is a float sum over the
// contracted axis in ascending order, starting from +0.
enum class ContractPattern {
  BatchedNN,
  BatchedTN,
  BatchedNT,
  ChannelsFirstHeads,
};

std::string_view to_string(ContractPattern p);
ContractPattern parse_contract_pattern(std::string_view einsum);

Tensor batched_contract(const Tensor& a, const Tensor& b, ContractPattern pattern);

// Softmax over the last axis with max subtraction.
Tensor softmax_rows(const Tensor& x);

inline constexpr float kDefaultRmsEps = 1e-6f;

// x / sqrt(mean(x^2) + eps) * gain over the last axis. A slice whose
// denominator is exactly zero maps to zeros.
Tensor rms_normalize(const Tensor& x, const Tensor& gain, float eps = kDefaultRmsEps);

// (B, S, C) row-major <-> (B, C, 1, S) channels-first. Element (b, s, c) of the
// row-major tensor sits at (b, c, 0, s) of the channels-first one.
Tensor layout_convert(const Tensor& x, Layout target);

}  // namespace mi2v
