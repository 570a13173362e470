#include "mi2v/flow.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <memory>

#include "mi2v/error.hpp"
#include "mi2v/rng.hpp"

namespace mi2v {

using Index = std::int64_t;

FlowCoefficients flow_coefficients(double t) {
  require(t >= 0.0 && t <= 1.0, "flow_coefficients", "t outside [0, 1]");
  return {1.0 - t, t};
}

ScheduleValues schedule_eval(double t) {
  require(t > 0.0 && t < 1.0, "schedule_eval",
          "log-SNR terms are undefined at t=" + std::to_string(t) + "; need 0 < t < 1");
  ScheduleValues s;
  s.a = 1.0 - t;
  s.b = t;
  const double da = -1.0, db = 1.0;
  s.lambda = std::log((s.a * s.a) / (s.b * s.b));
  s.dlambda = 2.0 * (da / s.a - db / s.b);
  s.weight = -0.5 * s.dlambda * s.b * s.b;
  return s;
}

namespace {

Index token_axis_extent(const Tensor& x) { return x.dims()[x.rank() - 2]; }

}  // namespace

Tensor noise_forward(const Tensor& x0, const Tensor& eps, std::span<const float> t) {
  constexpr const char* where = "noise_forward";
  require(x0.dims() == eps.dims(), where,
          "shape mismatch " + to_string(x0.dims()) + " vs " + to_string(eps.dims()));
  require(x0.rank() >= 2, where, "expected (..., N, C)");
  const Index n = token_axis_extent(x0), c = x0.dims().back();
  require(static_cast<Index>(t.size()) == n, where, "need one t per token");
  for (float ti : t) require(ti >= 0.0f && ti <= 1.0f, where, "t outside [0, 1]");
  Tensor z(x0.dims(), x0.layout());
  const Index outer = n * c == 0 ? 0 : static_cast<Index>(x0.size()) / (n * c);
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < n; ++i) {
      const float ti = t[i];
      const Index base = (o * n + i) * c;
      if (ti == 0.0f) {
        std::copy_n(x0.data() + base, c, z.data() + base);
      } else if (ti == 1.0f) {
        std::copy_n(eps.data() + base, c, z.data() + base);
      } else {
        const float a = 1.0f - ti;
        for (Index j = 0; j < c; ++j) z[base + j] = a * x0[base + j] + ti * eps[base + j];
      }
    }
  check_finite(z, where);
  return z;
}

// ===========================================================================
// LatentSpec
// ===========================================================================

void LatentSpec::validate() const {
  constexpr const char* where = "LatentSpec";
  require(width > 0 && height > 0 && frames > 0, where, "extents must be positive");
  require((frames - 1) % kTemporalFactor == 0, where,
          "frame count " + std::to_string(frames) + " is not 1 mod 8");
}

std::int64_t LatentSpec::latent_width() const { return (width + kSpatialFactor - 1) / kSpatialFactor; }
std::int64_t LatentSpec::latent_height() const { return (height + kSpatialFactor - 1) / kSpatialFactor; }
std::int64_t LatentSpec::latent_frames() const { return 1 + (frames - 1) / kTemporalFactor; }

std::vector<Position3> LatentSpec::positions() const {
  validate();
  std::vector<Position3> out;
  out.reserve(static_cast<std::size_t>(token_count(*this)));
  for (Index f = 0; f < latent_frames(); ++f)
    for (Index r = 0; r < latent_height(); ++r)
      for (Index c = 0; c < latent_width(); ++c)
        out.push_back({std::int32_t(f), std::int32_t(r), std::int32_t(c)});
  return out;
}

LatentSpec LatentSpec::parse(const std::string& text) {
  LatentSpec s;
  long long w = 0, h = 0, t = 0;
  char tail = 0;
  const int got = std::sscanf(text.c_str(), "%lldx%lldx%lld%c", &w, &h, &t, &tail);
  require(got == 3, "LatentSpec", "expected WxHxT, got '" + text + "'");
  s.width = w;
  s.height = h;
  s.frames = t;
  s.validate();
  return s;
}

std::string LatentSpec::to_string() const {
  return std::to_string(width) + "x" + std::to_string(height) + "x" + std::to_string(frames);
}

std::int64_t token_count(const LatentSpec& spec) {
  spec.validate();
  return spec.latent_width() * spec.latent_height() * spec.latent_frames();
}

std::vector<float> token_timesteps(const LatentSpec& spec, float t_global) {
  require(t_global >= 0.0f && t_global <= 1.0f, "token_timesteps",
          "t=" + std::to_string(t_global) + " outside [0, 1]");
  std::vector<float> t(static_cast<std::size_t>(token_count(spec)), t_global);
  std::fill_n(t.begin(), spec.frame_tokens(), 0.0f);
  return t;
}

// ===========================================================================
// Sampler
// ===========================================================================

std::string to_string(PredictionMode mode) { return mode == PredictionMode::Velocity ? "velocity" : "noise"; }

PredictionMode parse_prediction_mode(const std::string& name) {
  if (name == "velocity") return PredictionMode::Velocity;
  if (name == "noise") return PredictionMode::Noise;
  fail("SamplerConfig", "unknown prediction mode '" + name + "'");
}

std::vector<double> SamplerConfig::grid() const {
  require(steps >= 1, "SamplerConfig", "steps must be at least 1");
  std::vector<double> g(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) g[k] = 1.0 - double(k) / double(steps);
  g.back() = 0.0;
  return g;
}

Tensor euler_sample_i2v(const I2VModel& model, const LatentSpec& spec, const SamplerConfig& sampler,
                        const Tensor& reference_latent, float motion, std::uint64_t seed) {
  constexpr const char* where = "euler_sample_i2v";
  require(sampler.steps >= 1, where, "steps must be at least 1");
  const Index n = token_count(spec), prefix = spec.frame_tokens();
  require(reference_latent.rank() == 2 && reference_latent.dim(0) == prefix, where,
          "reference latent must be (" + std::to_string(prefix) + ", C), got " +
              to_string(reference_latent.dims()));
  const Index c = reference_latent.dim(1);
  require(reference_latent.all_finite(), where, "non-finite reference latent");

  Rng rng(seed);
  Tensor z = random_normal(rng, {n, c});
  std::copy_n(reference_latent.data(), prefix * c, z.data());

  const auto grid = sampler.grid();
  for (int k = 0; k < sampler.steps; ++k) {
    const double t = grid[k], dt = grid[k] - grid[k + 1];
    const auto tt = token_timesteps(spec, static_cast<float>(t));
    const Tensor pred = model(z, tt, motion);
    require(pred.dims() == z.dims(), where,
            "model returned " + to_string(pred.dims()) + " for state " + to_string(z.dims()));
    const float step = static_cast<float>(dt);
    if (sampler.mode == PredictionMode::Velocity) {
      for (Index i = prefix * c; i < n * c; ++i) z[i] -= step * pred[i];
    } else {
      const double te = std::min(t, kNoiseModeMaxT);
      for (Index i = prefix * c; i < n * c; ++i) {
        const double x0 = (double(z[i]) - te * double(pred[i])) / (1.0 - te);
        const double v = double(pred[i]) - x0;
        z[i] -= static_cast<float>(dt * v);
      }
    }
    // Reference rows were not touched; restating them keeps the contract
    // independent of what the update loop covers.
    std::copy_n(reference_latent.data(), prefix * c, z.data());
    require(z.all_finite(), where, "non-finite state at step " + std::to_string(k));
  }
  return z;
}

I2VModel make_denoiser_model(const DenoiserWeights& weights, const DenoiserConfig& config,
                             const LatentSpec& spec) {
  auto positions = std::make_shared<const std::vector<Position3>>(spec.positions());
  return [&weights, &config, positions](const Tensor& z, std::span<const float> t, float motion) {
    ConditioningInputs cond;
    cond.token_timesteps.assign(t.begin(), t.end());
    cond.motion_score = motion;
    cond.positions = *positions;
    const Tensor out = denoiser_forward(z.reshaped({1, z.dim(0), z.dim(1)}), cond, weights, config);
    return out.reshaped({z.dim(0), z.dim(1)});
  };
}

// ===========================================================================
// Training loss
// ===========================================================================

std::string to_string(LossWeightMode mode) {
  return mode == LossWeightMode::Unit ? "unit" : "literal";
}

double training_loss_flow(const Tensor& pred, const Tensor& eps, std::span<const float> t,
                          LossWeightMode mode) {
  constexpr const char* where = "training_loss_flow";
  require(pred.dims() == eps.dims(), where,
          "shape mismatch " + to_string(pred.dims()) + " vs " + to_string(eps.dims()));
  require(pred.rank() >= 2, where, "expected (..., N, C)");
  const Index n = token_axis_extent(pred), c = pred.dims().back();
  require(static_cast<Index>(t.size()) == n, where, "need one t per token");
  if (pred.size() == 0) return 0.0;
  std::vector<double> w(static_cast<std::size_t>(n), 1.0);
  if (mode == LossWeightMode::Literal) {
    for (Index i = 0; i < n; ++i) {
      const ScheduleValues s = schedule_eval(t[i]);
      w[i] = s.weight * s.dlambda;
    }
  }
  double total = 0.0;
  const Index outer = static_cast<Index>(pred.size()) / (n * c);
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < c; ++j) {
        const Index k = (o * n + i) * c + j;
        const double r = double(pred[k]) - double(eps[k]);
        total += w[i] * r * r;
      }
  return total / double(pred.size());
}

}  // namespace mi2v
