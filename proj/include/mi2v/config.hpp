#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mi2v/attention.hpp"
#include "mi2v/denoiser.hpp"
#include "mi2v/flow.hpp"
#include "mi2v/toy_distill.hpp"

namespace mi2v {

struct GenerateSettings {
  SamplerConfig sampler;
  float motion = 1.0f;
  std::uint64_t seed = 0;
  LatentSpec spec{1280, 720, 17};
};

struct BenchSettings {
  std::vector<AttentionKind> kinds{AttentionKind::Linear, AttentionKind::Softmax};
  std::vector<ExecStrategy> strategies{ExecStrategy::baseline(), ExecStrategy::all()};
  std::vector<std::int64_t> lengths{256, 512, 1024, 2048};
  int reps = 5;
  BenchShape shape;
  std::uint64_t seed = 0;
};

// Whole-run configuration. Every section is optional in the JSON document and
// falls back to the defaults above; unknown keys anywhere are an error.
//
// {
//   "denoiser":    {"preset", "layers", "hidden", "heads", "ffn_mult", "softmax_layers",
//                   "latent_channels", "cond_dim", "freq_dim", "qk_norm", "rope", "rope_base",
//                   "strategy", "weights_seed"},
//   "sampler":     {"steps", "mode", "motion", "seed", "spec"},
//   "bench":       {"kinds", "strategies", "lengths", "reps", "batch", "heads", "head_dim", "seed"},
//   "distill_toy": {"iterations", "hidden", "batch", "lr", "fd_step", "w_reg", "w_adv", "w_dm",
//                   "teacher_steps", "pretrain_iterations", "dataset_size", "eval_samples",
//                   "projections", "eval_every", "t_min", "t_max", "taps", "disc_hidden",
//                   "switches": {"reg", "adv", "dm"}, "seeds": {"data", "teacher", "train", "eval"}}
// }
struct RunConfig {
  // Presets "micro", "desk" (default) and "full" seed the denoiser section.
  DenoiserConfig denoiser = DenoiserConfig::desk();
  std::uint64_t weights_seed = 0;
  GenerateSettings sampler;
  BenchSettings bench;
  toy::ToyDistillConfig distill_toy;

  static RunConfig parse(const std::string& json_text);
  static RunConfig load(const std::string& path);
  std::string to_json() const;
};

DenoiserConfig denoiser_preset(const std::string& name);

}  // namespace mi2v
