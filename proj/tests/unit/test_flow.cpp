#include <cmath>

#include "doctest.h"
#include "mi2v/error.hpp"
#include "mi2v/flow.hpp"
#include "mi2v/rng.hpp"

using namespace mi2v;

namespace {

using Index = std::int64_t;

Tensor ones_like(const Dims& d) { return Tensor::filled(d, 1.0f); }

}  // namespace

TEST_CASE("schedule closed forms") {
  const auto s = schedule_eval(0.5);
  CHECK(s.a == 0.5);
  CHECK(s.b == 0.5);
  CHECK(s.lambda == 0.0);
  CHECK(s.dlambda == doctest::Approx(-8.0).epsilon(1e-12));
  CHECK(s.weight == doctest::Approx(1.0).epsilon(1e-12));

  const auto e0 = flow_coefficients(0.0), e1 = flow_coefficients(1.0);
  CHECK(e0.a == 1.0);
  CHECK(e0.b == 0.0);
  CHECK(e1.a == 0.0);
  CHECK(e1.b == 1.0);
  CHECK_THROWS_AS(schedule_eval(0.0), Error);
  CHECK_THROWS_AS(schedule_eval(1.0), Error);
  CHECK_THROWS_AS(flow_coefficients(1.1), Error);

  // lambda' against a central difference of lambda
  for (double t : {0.1, 0.3, 0.77}) {
    const double h = 1e-6;
    const double fd = (schedule_eval(t + h).lambda - schedule_eval(t - h).lambda) / (2 * h);
    CHECK(schedule_eval(t).dlambda == doctest::Approx(fd).epsilon(1e-6));
    CHECK(schedule_eval(t).weight * schedule_eval(t).dlambda < 0.0);
  }
}

TEST_CASE("noise_forward endpoints are bit-exact and interior is linear") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(9)), c = 1 + static_cast<Index>(rng.below(7));
    const Tensor x0 = random_normal(rng, {2, n, c}), eps = random_normal(rng, {2, n, c});
    CHECK(noise_forward(x0, eps, std::vector<float>(n, 0.0f)).bit_equal(x0));
    CHECK(noise_forward(x0, eps, std::vector<float>(n, 1.0f)).bit_equal(eps));
    const Tensor z = noise_forward(x0, eps, std::vector<float>(n, 0.25f));
    for (std::size_t i = 0; i < z.size(); ++i)
      CHECK(std::fabs(z[i] - (0.75 * x0[i] + 0.25 * eps[i])) <= 1e-7 * std::max(1.0, std::fabs(double(z[i]))));
  }
  const Tensor a = Tensor::zeros({3, 2}), b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(noise_forward(a, b, std::vector<float>(3, 0.5f)), Error);
  CHECK_THROWS_AS(noise_forward(a, a, std::vector<float>(2, 0.5f)), Error);
  CHECK_THROWS_AS(noise_forward(a, a, std::vector<float>(3, 1.5f)), Error);
}

TEST_CASE("latent shape arithmetic") {
  const auto hd = LatentSpec::parse("1280x720x17");
  CHECK(hd.latent_width() == 40);
  CHECK(hd.latent_height() == 23);
  CHECK(hd.latent_frames() == 3);
  CHECK(token_count(hd) == 2760);
  CHECK(token_count(LatentSpec{32, 32, 1}) == 1);
  CHECK(token_count(LatentSpec{256, 256, 17}) == 192);
  CHECK(hd.to_string() == "1280x720x17");
  CHECK_THROWS_AS(token_count(LatentSpec{256, 256, 16}), Error);
  CHECK_THROWS_AS(LatentSpec::parse("1280x720"), Error);
  CHECK_THROWS_AS(LatentSpec::parse("1280x720x17x2"), Error);
  CHECK_THROWS_AS(LatentSpec::parse("0x720x17"), Error);

  const auto pos = hd.positions();
  REQUIRE(pos.size() == 2760);
  CHECK(pos[0].t == 0);
  CHECK(pos[39].w == 39);
  CHECK(pos[40].h == 1);
  CHECK(pos[40].w == 0);
  CHECK(pos[919].t == 0);
  CHECK(pos[920].t == 1);
  CHECK(pos[920].h == 0);
}

TEST_CASE("token timesteps hold the reference frame at zero") {
  const auto hd = LatentSpec::parse("1280x720x17");
  const auto t = token_timesteps(hd, 0.7f);
  REQUIRE(t.size() == 2760);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == (i < 920 ? 0.0f : 0.7f));
  for (float v : token_timesteps(hd, 0.0f)) CHECK(v == 0.0f);
  CHECK_THROWS_AS(token_timesteps(hd, 1.5f), Error);

  for (Index w : {32, 33, 100, 640})
    for (Index h : {32, 65, 480})
      for (Index f : {1, 9, 25}) {
        const LatentSpec s{w, h, f};
        CHECK(static_cast<Index>(token_timesteps(s, 0.3f).size()) == token_count(s));
      }
}

TEST_CASE("sampler grid") {
  for (int n : {1, 2, 7, 20, 30}) {
    const auto g = SamplerConfig{n}.grid();
    REQUIRE(g.size() == std::size_t(n) + 1);
    CHECK(g.front() == 1.0);
    CHECK(g.back() == 0.0);
    for (int k = 0; k < n; ++k) CHECK(g[k] > g[k + 1]);
  }
  CHECK_THROWS_AS(SamplerConfig{0}.grid(), Error);
  CHECK(parse_prediction_mode("noise") == PredictionMode::Noise);
  CHECK_THROWS_AS(parse_prediction_mode("x0"), Error);
}

TEST_CASE("sampler keeps the reference frame bit-exact") {
  const LatentSpec spec{96, 64, 9};  // 3 x 2 x 2 = 12 tokens, 6 reference
  Rng rng(5);
  const Tensor ref = random_normal(rng, {6, 16});
  const I2VModel model = [](const Tensor& z, std::span<const float> t, float m) {
    Tensor v(z.dims());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(z[i] * 3.0f) + t[i / 16] * m;
    return v;
  };
  for (int steps : {1, 2, 20, 30})
    for (auto mode : {PredictionMode::Velocity, PredictionMode::Noise}) {
      const Tensor out = euler_sample_i2v(model, spec, {steps, mode}, ref, 2.0f, 9);
      REQUIRE(out.dims() == Dims{12, 16});
      for (Index i = 0; i < 6 * 16; ++i) CHECK(out[i] == ref[i]);
    }
  CHECK_THROWS_AS(euler_sample_i2v(model, spec, {0}, ref, 0.0f, 1), Error);
  CHECK_THROWS_AS(euler_sample_i2v(model, spec, {2}, Tensor::zeros({5, 16}), 0.0f, 1), Error);

  const I2VModel wrong = [](const Tensor& z, std::span<const float>, float) {
    return Tensor::zeros({z.dim(0), z.dim(1) + 1});
  };
  CHECK_THROWS_AS(euler_sample_i2v(wrong, spec, {1}, ref, 0.0f, 1), Error);
  const I2VModel blowup = [](const Tensor& z, std::span<const float>, float) {
    return Tensor::filled(z.dims(), INFINITY);
  };
  CHECK_THROWS_AS(euler_sample_i2v(blowup, spec, {1}, ref, 0.0f, 1), Error);
}

TEST_CASE("one Euler step integrates a constant linear field exactly") {
  const LatentSpec spec{64, 64, 9};  // 8 tokens, 4 reference
  const std::uint64_t seed = 77;
  Rng data(1);
  const Tensor x0 = random_normal(data, {8, 8});
  Tensor ref({4, 8});
  std::copy_n(x0.data(), 32, ref.data());

  // The initial state the sampler builds from `seed`.
  Rng noise(seed);
  Tensor eps = random_normal(noise, {8, 8});
  std::copy_n(ref.data(), 32, eps.data());

  const I2VModel velocity = [&](const Tensor&, std::span<const float>, float) {
    Tensor v(eps.dims());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = eps[i] - x0[i];
    return v;
  };
  const Tensor out = euler_sample_i2v(velocity, spec, {1}, ref, 0.0f, seed);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::fabs(out[i] - x0[i]) <= 1e-5);

  // Any constant field: the state moves by exactly the integrated displacement.
  Rng cf(3);
  const Tensor field = random_normal(cf, {8, 8});
  const I2VModel constant = [&](const Tensor&, std::span<const float>, float) { return field; };
  for (int steps : {1, 4, 10}) {
    const Tensor o = euler_sample_i2v(constant, spec, {steps}, ref, 0.0f, seed);
    for (std::size_t i = 32; i < o.size(); ++i) CHECK(std::fabs(o[i] - (eps[i] - field[i])) <= 1e-5);
  }
}

TEST_CASE("training loss weights") {
  Rng rng(4);
  const Tensor eps = random_normal(rng, {1, 5, 3});
  const std::vector<float> t(5, 0.5f);
  CHECK(training_loss_flow(eps, eps, t) == 0.0);
  Tensor pred = eps;
  for (auto& v : pred.values()) v += 1.0f;
  CHECK(training_loss_flow(pred, eps, t) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(training_loss_flow(pred, eps, t, LossWeightMode::Literal) == doctest::Approx(-8.0).epsilon(1e-6));
  CHECK_THROWS_AS(training_loss_flow(pred, eps, std::vector<float>(5, 0.0f), LossWeightMode::Literal), Error);
  CHECK_NOTHROW(training_loss_flow(pred, eps, std::vector<float>(5, 0.0f)));
  CHECK_THROWS_AS(training_loss_flow(pred, ones_like({1, 5, 4}), t), Error);
}

TEST_CASE("denoiser adapter samples end to end") {
  const LatentSpec spec{64, 64, 9};
  auto cfg = DenoiserConfig::micro();
  auto w = init_weights(cfg, 1);
  Rng rng(2);
  for (auto& v : w.out_w.values()) v = static_cast<float>(0.1 * rng.normal());
  const Tensor ref = random_normal(rng, {4, 128});
  const auto model = make_denoiser_model(w, cfg, spec);
  const Tensor a = euler_sample_i2v(model, spec, {2}, ref, 3.0f, 42);
  const Tensor b = euler_sample_i2v(model, spec, {2}, ref, 3.0f, 42);
  CHECK(a.bit_equal(b));
  CHECK(a.all_finite());
  for (Index i = 0; i < 4 * 128; ++i) CHECK(a[i] == ref[i]);
}
