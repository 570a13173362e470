#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mi2v/attention.hpp"
#include "mi2v/tensor.hpp"

namespace mi2v {

enum class RopePlacement { None, SoftmaxOnly, AllLayers };

std::string to_string(RopePlacement p);
RopePlacement parse_rope_placement(const std::string& name);

struct DenoiserConfig {
  std::int64_t layers = 16;
  std::int64_t hidden = 1152;
  std::int64_t heads = 16;
  std::int64_t ffn_mult = 4;
  // Zero-based indices of softmax-attention blocks; every other block is linear.
  std::vector<std::int64_t> softmax_layers{7, 15};
  std::int64_t latent_channels = 128;
  std::int64_t cond_dim = 1152;
  // Width of the sinusoidal timestep / motion features fed to the condition MLP.
  std::int64_t freq_dim = 256;
  bool qk_norm = true;
  RopePlacement rope = RopePlacement::SoftmaxOnly;
  double rope_base = 10000.0;
  ExecStrategy strategy;

  void validate() const;
  std::int64_t head_dim() const { return hidden / heads; }
  AttentionKind layer_kind(std::int64_t layer) const;
  bool layer_uses_rope(std::int64_t layer) const;

  // Estimated full-size configuration; the hidden width is a guess.
  static DenoiserConfig full_scale();
  // L=2, C=8, h=2, softmax at {1}; small enough for straight-line oracles.
  static DenoiserConfig micro();
  // Runs a 2,760-token forward in well under a second.
  static DenoiserConfig desk();
};

struct DenoiserBlock {
  AttentionParams attn;
  Tensor ffn_w1, ffn_b1;  // (C, fC), (fC)
  Tensor ffn_w2, ffn_b2;  // (fC, C), (C)
  // Per-token modulation: (D, 6C), (6C). Output chunks in order:
  // shift_attn, scale_attn, gate_attn, shift_ffn, scale_ffn, gate_ffn.
  Tensor mod_w, mod_b;
};

struct DenoiserWeights {
  Tensor in_w, in_b;  // (128, C), (C)
  // Condition MLP: (F, D), (D), (D, D), (D). Empty when there are no blocks.
  Tensor cond_w1, cond_b1, cond_w2, cond_b2;
  std::vector<DenoiserBlock> blocks;
  Tensor final_gain;    // (C)
  Tensor out_w, out_b;  // (C, 128), (128)

  // Stable names used by the tensor container, in a fixed order.
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  std::vector<std::pair<std::string, Tensor*>> named_mut();
  std::uint64_t checksum() const;
};

struct ConditioningInputs {
  std::vector<float> token_timesteps;  // one t in [0, 1] per token
  float motion_score = 0.0f;
  std::vector<Position3> positions;    // one per token; may be empty without rope
};

// Deterministic init: every matrix is N(0, 1) / sqrt(fan_in), biases zero,
// gains one. The output projection and both modulation gate chunks start at
// zero, so a fresh model predicts exactly zero.
DenoiserWeights init_weights(const DenoiserConfig& config, std::uint64_t seed);

// Sinusoid ladder: for k < width/2, f_k = 10000^(-k / (width/2)); the result is
// [cos(v f_0) .. cos(v f_{w/2-1}), sin(v f_0) .. sin(v f_{w/2-1})].
Tensor sinusoidal_embedding(double value, std::int64_t width);

// Timesteps are scaled by 1000 and motion scores by 100 before the ladder.
inline constexpr double kTimestepScale = 1000.0;
inline constexpr double kMotionScale = 100.0;

// Per-token (N, F) sum of the timestep and motion sinusoids.
Tensor condition_features(const ConditioningInputs& cond, const DenoiserConfig& config);

// Per-token (N, D) conditioning vectors: the features above through
// Linear -> SiLU -> Linear.
Tensor condition_embed(const ConditioningInputs& cond, const DenoiserConfig& config,
                       const DenoiserWeights& weights);

// (B, N, 128) -> (B, N, 128) velocity prediction.
Tensor denoiser_forward(const Tensor& latent_tokens, const ConditioningInputs& cond,
                        const DenoiserWeights& weights, const DenoiserConfig& config);

std::int64_t parameter_count(const DenoiserConfig& config);

// Pointwise helpers shared with the oracle tests.
float gelu(float x);
float silu(float x);

}  // namespace mi2v
