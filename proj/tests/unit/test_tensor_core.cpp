#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mi2v/error.hpp"
#include "mi2v/ops.hpp"
#include "mi2v/rng.hpp"
#include "support/oracles.hpp"

using namespace mi2v;

TEST_CASE("tensor rejects inconsistent shapes") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), Error);
  CHECK_THROWS_AS(Tensor({1, 1, 1, 1, 1, 1}), Error);
  CHECK_THROWS_AS(Tensor({1, 2, 3}, Layout::ChannelsFirst4D), Error);
  CHECK_THROWS_AS(Tensor({1, 2, 2, 3}, Layout::ChannelsFirst4D), Error);
  CHECK_NOTHROW(Tensor({1, 2, 1, 3}, Layout::ChannelsFirst4D));
}

TEST_CASE("check_finite flags NaN and Inf") {
  Tensor t = Tensor::from({3}, {1.0f, 2.0f, 3.0f});
  CHECK_NOTHROW(check_finite(t, "t"));
  t[1] = NAN;
  CHECK_THROWS_AS(check_finite(t, "t"), Error);
  t[1] = INFINITY;
  CHECK_THROWS_AS(check_finite(t, "t"), Error);
}

// ---------------------------------------------------------------------------
// random_normal

TEST_CASE("random_normal is deterministic per seed") {
  Rng a(42), b(42);
  const Tensor x = random_normal(a, {2, 2});
  const Tensor y = random_normal(b, {2, 2});
  CHECK(x.bit_equal(y));
  Rng c(43);
  CHECK_FALSE(random_normal(c, {2, 2}).bit_equal(x));
}

TEST_CASE("random_normal empty tensor leaves the stream alone") {
  Rng rng(7);
  const Tensor e = random_normal(rng, {0});
  CHECK(e.size() == 0);
  CHECK(rng.normals_drawn() == 0);
  CHECK(rng.counter() == 0);
  random_normal(rng, {3, 5});
  CHECK(rng.normals_drawn() == 15);
}

TEST_CASE("random_normal rejects rank above five") {
  Rng rng(1);
  CHECK_THROWS_AS(random_normal(rng, {1, 1, 1, 1, 1, 1}), Error);
}

TEST_CASE("random_normal stream matches the published recurrence") {
  // Word 1 of seed 0 is splitmix64(0x9E3779B97F4A7C15), the first output of
  // the reference SplitMix64 generator seeded with 0.
  Rng rng(0);
  CHECK(rng.next_u64() == 0xE220A8397B1DCDAFull);
}

TEST_CASE("random_normal moments over 10^6 draws") {
  Rng rng(2024);
  const Tensor x = random_normal(rng, {1000, 1000});
  double sum = 0.0, sq = 0.0;
  for (float v : x.values()) {
    sum += v;
    sq += double(v) * v;
  }
  const double n = double(x.size());
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::fabs(mean) < 0.01);
  CHECK(std::fabs(var - 1.0) < 0.01);
}

// ---------------------------------------------------------------------------
// batched_contract

TEST_CASE("batched_contract identity operand reproduces the other") {
  Rng rng(3);
  const Tensor b = random_normal(rng, {2, 3, 4});
  Tensor eye({2, 3, 3});
  for (int bi = 0; bi < 2; ++bi)
    for (int i = 0; i < 3; ++i) eye.at({bi, i, i}) = 1.0f;
  CHECK(batched_contract(eye, b, ContractPattern::BatchedNN).bit_equal(b));
  CHECK(batched_contract(eye, b, ContractPattern::BatchedTN).bit_equal(b));
  // a * I^T with a (2,4,3) -> a
  const Tensor a = random_normal(rng, {2, 4, 3});
  CHECK(batched_contract(a, eye, ContractPattern::BatchedNT).bit_equal(a));
}

TEST_CASE("batched_contract degenerate extents give a scalar product") {
  const Tensor a = Tensor::from({1, 1, 1}, {3.0f});
  const Tensor b = Tensor::from({1, 1, 1}, {-2.5f});
  for (auto p : {ContractPattern::BatchedNN, ContractPattern::BatchedTN, ContractPattern::BatchedNT}) {
    const Tensor c = batched_contract(a, b, p);
    CHECK(c.dims() == Dims{1, 1, 1});
    CHECK(c[0] == -7.5f);
  }
  const Tensor a4 = Tensor::from({1, 1, 1, 1}, {2.0f});
  const Tensor b4 = Tensor::from({1, 1, 1, 1}, {4.0f});
  CHECK(batched_contract(a4, b4, ContractPattern::ChannelsFirstHeads)[0] == 8.0f);
}

namespace {

Tensor transpose_last2(const Tensor& t) {
  const auto b = t.dim(0), r = t.dim(1), c = t.dim(2);
  Tensor out({b, c, r});
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) out.at({bi, j, i}) = t.at({bi, i, j});
  return out;
}

}  // namespace

TEST_CASE("batched_contract 3x3 batch 2 matches naive loops bit for bit") {
  Rng rng(11);
  const Tensor a = random_normal(rng, {2, 3, 3});
  const Tensor b = random_normal(rng, {2, 3, 3});
  const Tensor want = oracle::naive_bmm(a, b);
  CHECK(batched_contract(a, b, ContractPattern::BatchedNN).bit_equal(want));
  CHECK(batched_contract(transpose_last2(a), b, ContractPattern::BatchedTN).bit_equal(want));
  CHECK(batched_contract(a, transpose_last2(b), ContractPattern::BatchedNT).bit_equal(want));
}

TEST_CASE("batched_contract property: all shapes up to 8 match the oracle exactly") {
  Rng shapes(99);
  for (int trial = 0; trial < 200; ++trial) {
    const auto batch = std::int64_t(1 + shapes.below(8));
    const auto m = std::int64_t(1 + shapes.below(8));
    const auto k = std::int64_t(1 + shapes.below(8));
    const auto n = std::int64_t(1 + shapes.below(8));
    const Tensor a = random_normal(shapes, {batch, m, k});
    const Tensor b = random_normal(shapes, {batch, k, n});
    const Tensor want = oracle::naive_bmm(a, b);
    REQUIRE(batched_contract(a, b, ContractPattern::BatchedNN).bit_equal(want));
    REQUIRE(batched_contract(transpose_last2(a), b, ContractPattern::BatchedTN).bit_equal(want));
    REQUIRE(batched_contract(a, transpose_last2(b), ContractPattern::BatchedNT).bit_equal(want));
  }
}

TEST_CASE("batched_contract channels-first head pattern matches an explicit einsum") {
  Rng rng(5);
  const std::int64_t B = 2, C = 3, H = 2, Q = 4, K = 5;
  const Tensor a = random_normal(rng, {B, C, H, Q});
  const Tensor b = random_normal(rng, {B, K, H, C});
  const Tensor out = batched_contract(a, b, ContractPattern::ChannelsFirstHeads);
  REQUIRE(out.dims() == Dims{B, K, H, Q});
  for (std::int64_t bi = 0; bi < B; ++bi)
    for (std::int64_t k = 0; k < K; ++k)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t q = 0; q < Q; ++q) {
          float acc = 0.0f;
          for (std::int64_t c = 0; c < C; ++c) acc += b.at({bi, k, h, c}) * a.at({bi, c, h, q});
          CHECK(out.at({bi, k, h, q}) == acc);
        }
}

TEST_CASE("batched_contract broadcasts a unit batch") {
  Rng rng(8);
  const Tensor x = random_normal(rng, {3, 2, 4});
  const Tensor w = random_normal(rng, {1, 4, 5});
  const Tensor y = batched_contract(x, w, ContractPattern::BatchedNN);
  CHECK(y.dims() == Dims{3, 2, 5});
  Tensor w3({3, 4, 5});
  for (int b = 0; b < 3; ++b)
    std::copy(w.values().begin(), w.values().end(), w3.values().begin() + b * 20);
  CHECK(y.bit_equal(oracle::naive_bmm(x, w3)));
}

TEST_CASE("batched_contract errors") {
  const Tensor a({2, 3, 4});
  CHECK_THROWS_AS(batched_contract(a, Tensor({2, 5, 4}), ContractPattern::BatchedNN), Error);
  CHECK_THROWS_AS(batched_contract(a, Tensor({3, 4, 4}), ContractPattern::BatchedNN), Error);
  CHECK_THROWS_AS(batched_contract(a, Tensor({2, 4}), ContractPattern::BatchedNN), Error);
  CHECK_THROWS_AS(parse_contract_pattern("ij,jk->ik"), Error);
  CHECK(parse_contract_pattern("bkm,bkn->bmn") == ContractPattern::BatchedTN);
}

// ---------------------------------------------------------------------------
// softmax_rows

TEST_CASE("softmax_rows equal entries give a uniform row") {
  for (int n : {1, 3, 7, 64}) {
    const Tensor x = Tensor::filled({2, n}, 0.37f);
    const Tensor y = softmax_rows(x);
    for (float v : y.values()) CHECK(v == doctest::Approx(1.0 / n).epsilon(1e-6));
  }
}

TEST_CASE("softmax_rows closed form for [0, ln 2]") {
  const Tensor y = softmax_rows(Tensor::from({2}, {0.0f, std::log(2.0f)}));
  CHECK(std::fabs(y[0] - 1.0 / 3.0) < 1e-6);
  CHECK(std::fabs(y[1] - 2.0 / 3.0) < 1e-6);
}

TEST_CASE("softmax_rows property: shift invariance, non-negativity, unit row sums") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = std::int64_t(1 + rng.below(40));
    Tensor x = random_normal(rng, {3, n});
    for (auto& v : x.values()) v *= 8.0f;
    const Tensor y = softmax_rows(x);
    Tensor shifted = x;
    const float c = static_cast<float>(rng.uniform(-20.0, 20.0));
    for (auto& v : shifted.values()) v += c;
    const Tensor ys = softmax_rows(shifted);
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(y[i] >= 0.0f);
      CHECK(std::fabs(y[i] - ys[i]) < 1e-6);
    }
    for (std::int64_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::int64_t j = 0; j < n; ++j) s += y[r * n + j];
      CHECK(std::fabs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax_rows rejects an empty last axis") {
  CHECK_THROWS_AS(softmax_rows(Tensor({3, 0})), Error);
}

// ---------------------------------------------------------------------------
// rms_normalize

TEST_CASE("rms_normalize constant, zero and closed-form slices") {
  const Tensor ones = Tensor::filled({4}, 1.0f);
  const Tensor c = rms_normalize(Tensor::filled({2, 4}, 2.5f), ones, 1e-12f);
  for (float v : c.values()) CHECK(std::fabs(v - 1.0f) < 1e-5);

  const Tensor z = rms_normalize(Tensor::zeros({2, 4}), ones);
  for (float v : z.values()) CHECK(v == 0.0f);
  const Tensor z0 = rms_normalize(Tensor::zeros({4}), ones, 0.0f);
  for (float v : z0.values()) CHECK(v == 0.0f);

  const Tensor r = rms_normalize(Tensor::from({2}, {3.0f, 4.0f}), Tensor::filled({2}, 1.0f), 0.0f);
  CHECK(std::fabs(r[0] - 0.848528f) < 1e-5);
  CHECK(std::fabs(r[1] - 1.131371f) < 1e-5);
}

TEST_CASE("rms_normalize applies the gain and checks its length") {
  const Tensor r = rms_normalize(Tensor::from({2}, {3.0f, 4.0f}), Tensor::from({2}, {2.0f, -1.0f}), 0.0f);
  CHECK(std::fabs(r[0] - 2 * 0.848528f) < 1e-5);
  CHECK(std::fabs(r[1] + 1.131371f) < 1e-5);
  CHECK_THROWS_AS(rms_normalize(Tensor({2, 3}), Tensor::filled({2}, 1.0f)), Error);
}

// ---------------------------------------------------------------------------
// layout_convert

TEST_CASE("layout_convert index map for (1, 2, 3)") {
  Tensor x({1, 2, 3});
  std::iota(x.values().begin(), x.values().end(), 0.0f);
  const Tensor y = layout_convert(x, Layout::ChannelsFirst4D);
  CHECK(y.dims() == Dims{1, 3, 1, 2});
  CHECK(y.layout() == Layout::ChannelsFirst4D);
  // (b, s, c) -> (b, c, 0, s): value s*3+c lands at flat index c*2+s.
  const std::vector<float> want{0, 3, 1, 4, 2, 5};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(y[i] == want[i]);
}

TEST_CASE("layout_convert property: round trip is bitwise identity") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const Dims d{std::int64_t(1 + rng.below(3)), std::int64_t(1 + rng.below(70)),
                 std::int64_t(1 + rng.below(40))};
    const Tensor x = random_normal(rng, d);
    const Tensor back = layout_convert(layout_convert(x, Layout::ChannelsFirst4D), Layout::RowMajor);
    CHECK(back.bit_equal(x));
  }
}

TEST_CASE("layout_convert rejects undefined combinations") {
  CHECK_THROWS_AS(layout_convert(Tensor({1, 2, 3, 4, 5}), Layout::ChannelsFirst4D), Error);
  CHECK_THROWS_AS(layout_convert(Tensor({2, 3}), Layout::ChannelsFirst4D), Error);
  CHECK_THROWS_AS(layout_convert(Tensor({1, 2, 3}), Layout::RowMajor), Error);
}

TEST_CASE("operations are pure: repeated calls agree bitwise") {
  Rng rng(4);
  const Tensor a = random_normal(rng, {2, 5, 6});
  const Tensor b = random_normal(rng, {2, 6, 3});
  CHECK(batched_contract(a, b, ContractPattern::BatchedNN)
            .bit_equal(batched_contract(a, b, ContractPattern::BatchedNN)));
  CHECK(softmax_rows(a).bit_equal(softmax_rows(a)));
}
