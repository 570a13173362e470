#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mi2v/denoiser.hpp"
#include "mi2v/error.hpp"
#include "mi2v/rng.hpp"
#include "support/oracles.hpp"

using namespace mi2v;

namespace {

using Index = std::int64_t;
using Mat = std::vector<double>;

ConditioningInputs make_cond(Index n, float t, float motion) {
  ConditioningInputs c;
  c.token_timesteps.assign(static_cast<std::size_t>(n), t);
  c.motion_score = motion;
  for (Index i = 0; i < n; ++i)
    c.positions.push_back({std::int32_t(i / 4), std::int32_t((i / 2) % 2), std::int32_t(i % 2)});
  return c;
}

// Overwrite every weight with seeded noise so no path is trivially zero.
void scramble(DenoiserWeights& w, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : w.named_mut())
    for (auto& v : t->values()) v = static_cast<float>(0.4 * rng.normal());
}

Mat to_mat(const Tensor& t) { return Mat(t.values().begin(), t.values().end()); }

// rows x in times in x out, plus a bias row.
Mat dense(const Mat& x, Index rows, const Tensor& w, const Tensor& b) {
  const Index in = w.dim(0), out = w.dim(1);
  Mat y(static_cast<std::size_t>(rows * out));
  for (Index r = 0; r < rows; ++r)
    for (Index o = 0; o < out; ++o) {
      double acc = b.empty() ? 0.0 : double(b[o]);
      for (Index i = 0; i < in; ++i) acc += x[r * in + i] * double(w[i * out + o]);
      y[r * out + o] = acc;
    }
  return y;
}

double ref_silu(double x) { return x / (1.0 + std::exp(-x)); }
double ref_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Mat rms_rows(const Mat& x, Index rows, Index c, const Tensor* gain) {
  Mat y(x.size());
  for (Index r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (Index j = 0; j < c; ++j) ss += x[r * c + j] * x[r * c + j];
    const double den = std::sqrt(ss / double(c) + 1e-6);
    for (Index j = 0; j < c; ++j) y[r * c + j] = x[r * c + j] / den * (gain ? double((*gain)[j]) : 1.0);
  }
  return y;
}

Mat ladder(double v, Index width) {
  Mat e(static_cast<std::size_t>(width));
  const Index half = width / 2;
  for (Index k = 0; k < half; ++k) {
    const double f = std::pow(10000.0, -double(k) / double(half));
    e[k] = std::cos(v * f);
    e[half + k] = std::sin(v * f);
  }
  return e;
}

// Straight-line recomposition of the block stack for a single batch entry.
Mat reference_forward(const Tensor& x, const ConditioningInputs& cond, const DenoiserWeights& w,
                      const DenoiserConfig& cfg) {
  const Index n = x.dim(1), c = cfg.hidden, f = cfg.freq_dim;
  Mat feats(static_cast<std::size_t>(n * f));
  const Mat m = ladder(100.0 * cond.motion_score, f);
  for (Index i = 0; i < n; ++i) {
    const Mat t = ladder(1000.0 * cond.token_timesteps[i], f);
    for (Index j = 0; j < f; ++j) feats[i * f + j] = t[j] + m[j];
  }
  Mat e = dense(feats, n, w.cond_w1, w.cond_b1);
  for (auto& v : e) v = ref_silu(v);
  Mat cv = dense(e, n, w.cond_w2, w.cond_b2);
  for (auto& v : cv) v = ref_silu(v);

  Mat h = dense(to_mat(x), n, w.in_w, w.in_b);
  for (Index l = 0; l < cfg.layers; ++l) {
    const auto& blk = w.blocks[l];
    const Mat mod = dense(cv, n, blk.mod_w, blk.mod_b);
    auto chunk = [&](Index i, Index k, Index j) { return mod[i * 6 * c + k * c + j]; };

    Mat a_in = rms_rows(h, n, c, nullptr);
    Tensor a_in_t({1, n, c});
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < c; ++j)
        a_in_t[i * c + j] = static_cast<float>(a_in[i * c + j] * (1.0 + chunk(i, 1, j)) + chunk(i, 0, j));
    AttentionParams p = blk.attn;
    if (cfg.layer_uses_rope(l)) p.rope = RopeConfig::split_for(cfg.head_dim(), cfg.rope_base);
    else p.rope.reset();
    const auto kind = cfg.layer_kind(l) == AttentionKind::Softmax ? oracle::Similarity::Softmax
                                                                   : oracle::Similarity::ReluKernel;
    const Tensor att = oracle::dense_attention(a_in_t, p, kind, 1e-6, cond.positions);
    for (Index i = 0; i < n * c; ++i) h[i] += chunk(i / c, 2, i % c) * double(att[i]);

    Mat f_in = rms_rows(h, n, c, nullptr);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < c; ++j) f_in[i * c + j] = f_in[i * c + j] * (1.0 + chunk(i, 4, j)) + chunk(i, 3, j);
    Mat f1 = dense(f_in, n, blk.ffn_w1, blk.ffn_b1);
    for (auto& v : f1) v = ref_gelu(v);
    const Mat f2 = dense(f1, n, blk.ffn_w2, blk.ffn_b2);
    for (Index i = 0; i < n * c; ++i) h[i] += chunk(i / c, 5, i % c) * f2[i];
  }
  return dense(rms_rows(h, n, c, &w.final_gain), n, w.out_w, w.out_b);
}

double rel_gap(const Tensor& got, const Mat& ref) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    diff = std::max(diff, std::fabs(double(got[i]) - ref[i]));
    scale = std::max(scale, std::fabs(ref[i]));
  }
  return diff / scale;
}

}  // namespace

TEST_CASE("config validation and layer schedule") {
  const auto cfg = DenoiserConfig::full_scale();
  for (Index l = 0; l < 16; ++l) {
    const bool softmax = l == 7 || l == 15;
    CHECK((cfg.layer_kind(l) == AttentionKind::Softmax) == softmax);
    CHECK(cfg.layer_uses_rope(l) == softmax);
  }
  auto bad = cfg;
  bad.softmax_layers = {16};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.heads = 5;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(parse_rope_placement(to_string(RopePlacement::AllLayers)) == RopePlacement::AllLayers);
  CHECK_THROWS_AS(parse_rope_placement("sometimes"), Error);
}

TEST_CASE("init is deterministic and zero at the output") {
  const auto cfg = DenoiserConfig::micro();
  const auto a = init_weights(cfg, 11), b = init_weights(cfg, 11), c = init_weights(cfg, 12);
  CHECK(a.checksum() == b.checksum());
  CHECK(a.checksum() != c.checksum());
  const auto na = a.named(), nb = b.named();
  REQUIRE(na.size() == nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    CHECK(na[i].second->bit_equal(*nb[i].second));
  }
  for (float v : a.out_w.values()) CHECK(v == 0.0f);
  for (const auto& blk : a.blocks)
    for (Index r = 0; r < cfg.cond_dim; ++r)
      for (Index j = 0; j < cfg.hidden; ++j) {
        CHECK(blk.mod_w[r * 6 * cfg.hidden + 2 * cfg.hidden + j] == 0.0f);
        CHECK(blk.mod_w[r * 6 * cfg.hidden + 5 * cfg.hidden + j] == 0.0f);
      }
}

TEST_CASE("init variance of a 64x64 matrix is close to 1/64") {
  DenoiserConfig cfg = DenoiserConfig::micro();
  cfg.hidden = 64;
  cfg.heads = 4;
  const auto w = init_weights(cfg, 5);
  const auto& m = w.blocks[0].attn.w_q;
  REQUIRE(m.dims() == Dims{64, 64});
  double sum = 0.0, sq = 0.0;
  for (float v : m.values()) {
    sum += v;
    sq += double(v) * v;
  }
  const double n = double(m.size()), mean = sum / n, var = sq / n - mean * mean;
  CHECK(var > 0.8 / 64.0);
  CHECK(var < 1.2 / 64.0);
}

TEST_CASE("fresh model predicts exactly zero; perturbed output is nonzero") {
  const auto cfg = DenoiserConfig::micro();
  auto w = init_weights(cfg, 3);
  Rng rng(4);
  const Tensor x = random_normal(rng, {2, 6, 128});
  const auto cond = make_cond(6, 0.4f, 2.0f);
  const Tensor y = denoiser_forward(x, cond, w, cfg);
  CHECK(y.dims() == x.dims());
  for (float v : y.values()) CHECK(v == 0.0f);
  w.out_w[17] = 0.5f;
  const Tensor y2 = denoiser_forward(x, cond, w, cfg);
  CHECK(std::any_of(y2.values().begin(), y2.values().end(), [](float v) { return v != 0.0f; }));
}

TEST_CASE("condition embedding") {
  const auto cfg = DenoiserConfig::micro();
  const auto w = init_weights(cfg, 8);
  ConditioningInputs cond;
  cond.token_timesteps = {0.3f, 0.3f, 0.0f, 1.0f};
  cond.motion_score = 4.0f;
  const Tensor e = condition_embed(cond, cfg, w);
  REQUIRE(e.dims() == Dims{4, cfg.cond_dim});
  const Index d = cfg.cond_dim;
  double dist01 = 0.0, dist23 = 0.0;
  for (Index j = 0; j < d; ++j) {
    dist01 += std::pow(e[j] - e[d + j], 2);
    dist23 += std::pow(e[2 * d + j] - e[3 * d + j], 2);
  }
  CHECK(dist01 == 0.0);
  CHECK(dist23 > 0.0);

  cond.token_timesteps = {1.5f};
  CHECK_THROWS_AS(condition_embed(cond, cfg, w), Error);
  cond.token_timesteps = {0.5f};
  cond.motion_score = NAN;
  CHECK_THROWS_AS(condition_embed(cond, cfg, w), Error);
}

TEST_CASE("sinusoid ladder at t=0.5 matches a direct evaluation") {
  for (Index width : {8, 32, 256}) {
    const Tensor got = sinusoidal_embedding(kTimestepScale * 0.5, width);
    const Mat want = ladder(500.0, width);
    CHECK(rel_gap(got, want) <= 1e-6);
  }
  DenoiserConfig cfg = DenoiserConfig::micro();
  ConditioningInputs cond;
  cond.token_timesteps = {0.5f};
  cond.motion_score = 0.0f;
  const Tensor feats = condition_features(cond, cfg);
  Mat want = ladder(500.0, cfg.freq_dim);
  const Mat m = ladder(0.0, cfg.freq_dim);
  for (std::size_t j = 0; j < want.size(); ++j) want[j] += m[j];
  CHECK(rel_gap(feats, want) <= 1e-6);
  CHECK_THROWS_AS(sinusoidal_embedding(1.0, 7), Error);
}

TEST_CASE("micro forward matches a straight-line recomposition") {
  const auto cfg = DenoiserConfig::micro();
  REQUIRE(cfg.layers == 2);
  REQUIRE(cfg.softmax_layers == std::vector<Index>{1});
  auto w = init_weights(cfg, 21);
  scramble(w, 22);
  Rng rng(23);
  const Tensor x = random_normal(rng, {1, 7, 128});
  auto cond = make_cond(7, 0.6f, 3.0f);
  cond.token_timesteps[0] = 0.0f;
  cond.token_timesteps[1] = 0.0f;
  for (const auto& s : {ExecStrategy::baseline(), ExecStrategy::all()}) {
    auto c2 = cfg;
    c2.strategy = s;
    const Tensor y = denoiser_forward(x, cond, w, c2);
    const double gap = rel_gap(y, reference_forward(x, cond, w, c2));
    INFO("strategy " << s.name() << " gap " << gap);
    CHECK(gap <= 1e-6);
  }
  auto all_rope = cfg;
  all_rope.rope = RopePlacement::AllLayers;
  CHECK(rel_gap(denoiser_forward(x, cond, w, all_rope), reference_forward(x, cond, w, all_rope)) <= 1e-6);
}

TEST_CASE("forward shape at 2760 tokens and determinism") {
  const auto cfg = DenoiserConfig::desk();
  const auto w = init_weights(cfg, 1);
  auto w2 = w;
  w2.out_w[0] = 1.0f;
  w2.out_w[129] = -1.0f;
  Rng rng(2);
  const Tensor x = random_normal(rng, {1, 2760, 128});
  ConditioningInputs cond;
  cond.token_timesteps.assign(2760, 0.7f);
  std::fill_n(cond.token_timesteps.begin(), 920, 0.0f);
  for (Index i = 0; i < 2760; ++i)
    cond.positions.push_back({std::int32_t(i / 920), std::int32_t((i % 920) / 40), std::int32_t(i % 40)});
  const Tensor y = denoiser_forward(x, cond, w2, cfg);
  CHECK(y.dims() == Dims{1, 2760, 128});
  CHECK(y.bit_equal(denoiser_forward(x, cond, w2, cfg)));
}

TEST_CASE("forward errors") {
  const auto cfg = DenoiserConfig::micro();
  const auto w = init_weights(cfg, 1);
  const auto cond = make_cond(4, 0.5f, 1.0f);
  CHECK_THROWS_AS(denoiser_forward(Tensor::zeros({1, 4, 64}), cond, w, cfg), Error);
  CHECK_THROWS_AS(denoiser_forward(Tensor::zeros({1, 5, 128}), cond, w, cfg), Error);
  auto no_pos = cond;
  no_pos.positions.clear();
  CHECK_THROWS_AS(denoiser_forward(Tensor::zeros({1, 4, 128}), no_pos, w, cfg), Error);
  auto deeper = cfg;
  deeper.layers = 3;
  CHECK_THROWS_AS(denoiser_forward(Tensor::zeros({1, 4, 128}), cond, w, deeper), Error);
}

TEST_CASE("per-token conditioning locality with zeroed attention") {
  const auto cfg = DenoiserConfig::micro();
  auto w = init_weights(cfg, 31);
  scramble(w, 32);
  Rng rng(33);
  const Tensor x = random_normal(rng, {1, 6, 128});
  const auto base = make_cond(6, 0.5f, 1.0f);
  auto moved = base;
  moved.token_timesteps[3] = 0.9f;

  const Tensor y0 = denoiser_forward(x, base, w, cfg);
  const Tensor y1 = denoiser_forward(x, moved, w, cfg);
  CHECK(y1.bit_equal(denoiser_forward(x, moved, w, cfg)));
  CHECK_FALSE(y0.bit_equal(y1));

  for (auto& blk : w.blocks) {
    blk.attn.w_v = Tensor::zeros({cfg.hidden, cfg.hidden});
    blk.attn.w_o = Tensor::zeros({cfg.hidden, cfg.hidden});
  }
  const Tensor z0 = denoiser_forward(x, base, w, cfg);
  const Tensor z1 = denoiser_forward(x, moved, w, cfg);
  for (Index i = 0; i < 6; ++i) {
    bool same = true;
    for (Index j = 0; j < 128; ++j) same = same && z0[i * 128 + j] == z1[i * 128 + j];
    CHECK(same == (i != 3));
  }
}

TEST_CASE("forward stays finite for bounded inputs over 100 seeds") {
  const auto cfg = DenoiserConfig::micro();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto w = init_weights(cfg, seed);
    scramble(w, seed + 1000);
    Rng rng(seed);
    Tensor x({1, 5, 128});
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-10.0, 10.0));
    auto cond = make_cond(5, static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform(0.0, 10.0)));
    CHECK(denoiser_forward(x, cond, w, cfg).all_finite());
  }
}

TEST_CASE("parameter count") {
  DenoiserConfig cfg = DenoiserConfig::micro();
  cfg.layers = 1;
  cfg.softmax_layers = {0};
  // input 128*8+8, cond 8*8+8+8*8+8, block (4*64) + (8*32+32+32*8+8) + (8*48+48),
  // final 8 + output 8*128+128
  CHECK(parameter_count(cfg) == 1032 + 144 + (256 + 552 + 432) + 1160);
  CHECK(parameter_count(cfg) == 3576);

  std::int64_t stored = 0;
  for (const auto& [name, t] : init_weights(cfg, 0).named()) stored += static_cast<std::int64_t>(t->size());
  CHECK(stored == 3576);

  auto empty = cfg;
  empty.layers = 0;
  empty.softmax_layers.clear();
  CHECK(parameter_count(empty) == (128 * 8 + 8) + 8 + (8 * 128 + 128));

  auto qk = DenoiserConfig::desk();
  std::int64_t qk_stored = 0;
  for (const auto& [name, t] : init_weights(qk, 0).named()) qk_stored += static_cast<std::int64_t>(t->size());
  CHECK(parameter_count(qk) == qk_stored);

  std::int64_t prev = 0;
  for (Index c : {8, 16, 24, 32, 64}) {
    auto g = cfg;
    g.hidden = c;
    const auto count = parameter_count(g);
    CHECK(count > prev);
    prev = count;
  }
  MESSAGE("full estimate: " << parameter_count(DenoiserConfig::full_scale()) << " parameters");
}
