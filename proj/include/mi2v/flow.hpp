#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mi2v/attention.hpp"
#include "mi2v/denoiser.hpp"
#include "mi2v/tensor.hpp"

namespace mi2v {

// ---------------------------------------------------------------------------
// Rectified-flow schedule: a(t) = 1 - t, b(t) = t.

struct FlowCoefficients {
  double a = 0.0;
  double b = 0.0;
};

struct ScheduleValues {
  double a = 0.0;
  double b = 0.0;
  double lambda = 0.0;   // log(a^2 / b^2)
  double dlambda = 0.0;  // 2 (a'/a - b'/b)
  double weight = 0.0;   // -1/2 * dlambda * b^2
};

// Defined on [0, 1].
FlowCoefficients flow_coefficients(double t);
// The log-SNR family is singular at the endpoints; t must lie in (0, 1).
ScheduleValues schedule_eval(double t);

// z_i = (1 - t_i) x0_i + t_i eps_i for every token i. Tokens are the
// second-to-last axis. t = 0 returns x0 and t = 1 returns eps bit-exactly.
Tensor noise_forward(const Tensor& x0, const Tensor& eps, std::span<const float> t);

// ---------------------------------------------------------------------------
// Video -> latent shape contract.
//
// The first extent is the frame width, as in "1280x720". Latent extents are
// ceil(W/32) x ceil(H/32) x (1 + (T-1)/8), and tokens are ordered frame-major,
// then row-major, so latent frame 0 is the first ceil(W/32)*ceil(H/32) tokens.
struct LatentSpec {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::int64_t frames = 1;

  static constexpr std::int64_t kSpatialFactor = 32;
  static constexpr std::int64_t kTemporalFactor = 8;
  static constexpr std::int64_t kChannels = 128;

  void validate() const;
  std::int64_t latent_width() const;
  std::int64_t latent_height() const;
  std::int64_t latent_frames() const;
  std::int64_t frame_tokens() const { return latent_width() * latent_height(); }

  // Grid coordinate of every token in the documented order.
  std::vector<Position3> positions() const;

  // "WxHxT".
  static LatentSpec parse(const std::string& text);
  std::string to_string() const;
};

std::int64_t token_count(const LatentSpec& spec);

// Frame-0 tokens get t = 0, the rest t_global.
std::vector<float> token_timesteps(const LatentSpec& spec, float t_global);

// ---------------------------------------------------------------------------
// Sampling

enum class PredictionMode { Velocity, Noise };

std::string to_string(PredictionMode mode);
PredictionMode parse_prediction_mode(const std::string& name);

struct SamplerConfig {
  int steps = 2;
  PredictionMode mode = PredictionMode::Velocity;

  // steps + 1 knots, t_k = 1 - k / steps.
  std::vector<double> grid() const;
};

// Noise-mode conversion clamps t to at most 1 - this before dividing by (1 - t).
inline constexpr double kNoiseModeMaxT = 1.0 - 1e-3;

// Maps (z, per-token t, motion) to a (N, C) prediction.
using I2VModel = std::function<Tensor(const Tensor& z, std::span<const float> t, float motion)>;

// The initial state is random_normal(Rng(seed), {N, C}) with frame-0 rows
// then replaced by the reference latent. Reference rows are never updated, so
// they come back bit-equal to `reference_latent`.
Tensor euler_sample_i2v(const I2VModel& model, const LatentSpec& spec, const SamplerConfig& sampler,
                        const Tensor& reference_latent, float motion, std::uint64_t seed);

// Wraps a denoiser as an I2V model for `spec` (adds positions, batch axis).
I2VModel make_denoiser_model(const DenoiserWeights& weights, const DenoiserConfig& config,
                             const LatentSpec& spec);

enum class LossWeightMode {
  Unit,
  // w(t) * lambda'(t) taken literally; negative on all of (0, 1).
  Literal,
};

std::string to_string(LossWeightMode mode);

// mean over elements of weight(t_token) * (pred - eps)^2
double training_loss_flow(const Tensor& pred, const Tensor& eps, std::span<const float> t,
                          LossWeightMode mode = LossWeightMode::Unit);

}  // namespace mi2v
