#include "mi2v/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mi2v/error.hpp"
#include "mi2v/ops.hpp"

namespace mi2v {

using Index = std::int64_t;

std::string to_string(RopePlacement p) {
  switch (p) {
    case RopePlacement::None: return "none";
    case RopePlacement::SoftmaxOnly: return "softmax-only";
    case RopePlacement::AllLayers: return "all-layers";
  }
  return "?";
}

RopePlacement parse_rope_placement(const std::string& name) {
  if (name == "none") return RopePlacement::None;
  if (name == "softmax-only") return RopePlacement::SoftmaxOnly;
  if (name == "all-layers") return RopePlacement::AllLayers;
  fail("DenoiserConfig", "unknown rope placement '" + name + "'");
}

// ===========================================================================
// Config
// ===========================================================================

void DenoiserConfig::validate() const {
  constexpr const char* where = "DenoiserConfig";
  require(layers >= 0, where, "layers must be non-negative");
  require(hidden > 0 && heads > 0 && hidden % heads == 0, where,
          "hidden " + std::to_string(hidden) + " not divisible by heads " + std::to_string(heads));
  require(ffn_mult >= 1, where, "ffn_mult must be at least 1");
  require(latent_channels > 0, where, "latent_channels must be positive");
  require(cond_dim > 0, where, "cond_dim must be positive");
  require(freq_dim >= 2 && freq_dim % 2 == 0, where, "freq_dim must be even and at least 2");
  for (auto i : softmax_layers)
    require(i >= 0 && i < layers, where, "softmax layer index " + std::to_string(i) + " outside [0, L)");
  if (rope != RopePlacement::None) {
    const auto r = RopeConfig::split_for(head_dim(), rope_base);
    require(head_dim() >= 2 && head_dim() % 2 == 0, where, "rope needs an even head_dim");
    require(r.t_dim % 2 == 0, where, "rope split produced an odd block");
  }
}

AttentionKind DenoiserConfig::layer_kind(std::int64_t layer) const {
  return std::find(softmax_layers.begin(), softmax_layers.end(), layer) != softmax_layers.end()
             ? AttentionKind::Softmax
             : AttentionKind::Linear;
}

bool DenoiserConfig::layer_uses_rope(std::int64_t layer) const {
  switch (rope) {
    case RopePlacement::None: return false;
    case RopePlacement::SoftmaxOnly: return layer_kind(layer) == AttentionKind::Softmax;
    case RopePlacement::AllLayers: return true;
  }
  return false;
}

DenoiserConfig DenoiserConfig::full_scale() { return DenoiserConfig{}; }

DenoiserConfig DenoiserConfig::micro() {
  DenoiserConfig c;
  c.layers = 2;
  c.hidden = 8;
  c.heads = 2;
  c.ffn_mult = 4;
  c.softmax_layers = {1};
  c.cond_dim = 8;
  c.freq_dim = 8;
  c.qk_norm = false;
  return c;
}

DenoiserConfig DenoiserConfig::desk() {
  DenoiserConfig c;
  c.layers = 16;
  c.hidden = 32;
  c.heads = 2;
  c.ffn_mult = 4;
  c.softmax_layers = {7, 15};
  c.cond_dim = 32;
  c.freq_dim = 32;
  return c;
}

// ===========================================================================
// Weights
// ===========================================================================

std::vector<std::pair<std::string, const Tensor*>> DenoiserWeights::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<DenoiserWeights*>(this)->named_mut()) out.emplace_back(name, t);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> DenoiserWeights::named_mut() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("input.weight", &in_w);
  out.emplace_back("input.bias", &in_b);
  if (!blocks.empty()) {
    out.emplace_back("cond.fc1.weight", &cond_w1);
    out.emplace_back("cond.fc1.bias", &cond_b1);
    out.emplace_back("cond.fc2.weight", &cond_w2);
    out.emplace_back("cond.fc2.bias", &cond_b2);
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    auto& b = blocks[i];
    out.emplace_back(p + "attn.q", &b.attn.w_q);
    out.emplace_back(p + "attn.k", &b.attn.w_k);
    out.emplace_back(p + "attn.v", &b.attn.w_v);
    out.emplace_back(p + "attn.o", &b.attn.w_o);
    if (b.attn.qk_norm) {
      out.emplace_back(p + "attn.q_gain", &b.attn.q_gain);
      out.emplace_back(p + "attn.k_gain", &b.attn.k_gain);
    }
    out.emplace_back(p + "ffn.fc1.weight", &b.ffn_w1);
    out.emplace_back(p + "ffn.fc1.bias", &b.ffn_b1);
    out.emplace_back(p + "ffn.fc2.weight", &b.ffn_w2);
    out.emplace_back(p + "ffn.fc2.bias", &b.ffn_b2);
    out.emplace_back(p + "mod.weight", &b.mod_w);
    out.emplace_back(p + "mod.bias", &b.mod_b);
  }
  out.emplace_back("final.gain", &final_gain);
  out.emplace_back("output.weight", &out_w);
  out.emplace_back("output.bias", &out_b);
  return out;
}

std::uint64_t DenoiserWeights::checksum() const {
  // FNV-1a over names and raw payload bytes.
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, t] : named()) {
    mix(name.data(), name.size());
    mix(t->data(), t->size() * sizeof(float));
  }
  return h;
}

namespace {

Tensor scaled_normal(Rng& rng, Index rows, Index cols) {
  Tensor t = random_normal(rng, {rows, cols});
  const float scale = 1.0f / std::sqrt(static_cast<float>(rows));
  for (auto& v : t.values()) v *= scale;
  return t;
}

}  // namespace

DenoiserWeights init_weights(const DenoiserConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const Index c = config.hidden, d = config.cond_dim, f = config.freq_dim;
  const Index lc = config.latent_channels, fc = config.ffn_mult * c;
  DenoiserWeights w;
  w.in_w = scaled_normal(rng, lc, c);
  w.in_b = Tensor::zeros({c});
  if (config.layers > 0) {
    w.cond_w1 = scaled_normal(rng, f, d);
    w.cond_b1 = Tensor::zeros({d});
    w.cond_w2 = scaled_normal(rng, d, d);
    w.cond_b2 = Tensor::zeros({d});
  }
  for (Index l = 0; l < config.layers; ++l) {
    DenoiserBlock b;
    b.attn.heads = config.heads;
    b.attn.w_q = scaled_normal(rng, c, c);
    b.attn.w_k = scaled_normal(rng, c, c);
    b.attn.w_v = scaled_normal(rng, c, c);
    b.attn.w_o = scaled_normal(rng, c, c);
    b.attn.qk_norm = config.qk_norm;
    b.attn.q_gain = Tensor::filled({c}, 1.0f);
    b.attn.k_gain = Tensor::filled({c}, 1.0f);
    if (config.layer_uses_rope(l)) b.attn.rope = RopeConfig::split_for(config.head_dim(), config.rope_base);
    b.ffn_w1 = scaled_normal(rng, c, fc);
    b.ffn_b1 = Tensor::zeros({fc});
    b.ffn_w2 = scaled_normal(rng, fc, c);
    b.ffn_b2 = Tensor::zeros({c});
    b.mod_w = scaled_normal(rng, d, 6 * c);
    b.mod_b = Tensor::zeros({6 * c});
    for (Index r = 0; r < d; ++r) {
      std::fill_n(b.mod_w.data() + r * 6 * c + 2 * c, c, 0.0f);
      std::fill_n(b.mod_w.data() + r * 6 * c + 5 * c, c, 0.0f);
    }
    w.blocks.push_back(std::move(b));
  }
  w.final_gain = Tensor::filled({c}, 1.0f);
  w.out_w = Tensor::zeros({c, lc});
  w.out_b = Tensor::zeros({lc});
  return w;
}

std::int64_t parameter_count(const DenoiserConfig& config) {
  config.validate();
  const Index c = config.hidden, d = config.cond_dim, f = config.freq_dim;
  const Index lc = config.latent_channels, fc = config.ffn_mult * c;
  const Index input = lc * c + c;
  const Index cond = config.layers > 0 ? f * d + d + d * d + d : 0;
  const Index attn = 4 * c * c + (config.qk_norm ? 2 * c : 0);
  const Index ffn = c * fc + fc + fc * c + c;
  const Index mod = d * 6 * c + 6 * c;
  const Index output = c + c * lc + lc;
  return input + cond + config.layers * (attn + ffn + mod) + output;
}

// ===========================================================================
// Conditioning
// ===========================================================================

float gelu(float x) {
  return static_cast<float>(0.5 * double(x) * (1.0 + std::erf(double(x) / std::sqrt(2.0))));
}

float silu(float x) { return static_cast<float>(double(x) / (1.0 + std::exp(-double(x)))); }

Tensor sinusoidal_embedding(double value, std::int64_t width) {
  require(width >= 2 && width % 2 == 0, "sinusoidal_embedding", "width must be even");
  const Index half = width / 2;
  Tensor out({width});
  for (Index k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * double(k) / double(half));
    out[k] = static_cast<float>(std::cos(value * freq));
    out[half + k] = static_cast<float>(std::sin(value * freq));
  }
  return out;
}

Tensor condition_features(const ConditioningInputs& cond, const DenoiserConfig& config) {
  constexpr const char* where = "condition_embed";
  require(std::isfinite(cond.motion_score), where, "motion score must be finite");
  const Index n = static_cast<Index>(cond.token_timesteps.size());
  const Index f = config.freq_dim;
  const Tensor motion = sinusoidal_embedding(kMotionScale * cond.motion_score, f);
  Tensor out({n, f});
  // Tokens share a handful of distinct timesteps; cache the last one.
  float last_t = NAN;
  Tensor t_emb;
  for (Index i = 0; i < n; ++i) {
    const float t = cond.token_timesteps[i];
    require(t >= 0.0f && t <= 1.0f, where, "timestep " + std::to_string(t) + " outside [0, 1]");
    if (!(t == last_t)) {
      t_emb = sinusoidal_embedding(kTimestepScale * t, f);
      last_t = t;
    }
    for (Index j = 0; j < f; ++j) out[i * f + j] = t_emb[j] + motion[j];
  }
  return out;
}

namespace {

// y = x W + b on a (rows, in) matrix.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Index rows = static_cast<Index>(x.size()) / w.dim(0);
  Tensor y = batched_contract(x.reshaped({1, rows, w.dim(0)}), w.reshaped({1, w.dim(0), w.dim(1)}),
                              ContractPattern::BatchedNN);
  const Index cols = w.dim(1);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) y[r * cols + c] += b[c];
  return y;
}

}  // namespace

Tensor condition_embed(const ConditioningInputs& cond, const DenoiserConfig& config,
                       const DenoiserWeights& weights) {
  require(!weights.cond_w1.empty(), "condition_embed", "model has no condition MLP");
  Tensor h = affine(condition_features(cond, config), weights.cond_w1, weights.cond_b1);
  for (auto& v : h.values()) v = silu(v);
  Tensor out = affine(h, weights.cond_w2, weights.cond_b2);
  return out.reshaped({static_cast<Index>(cond.token_timesteps.size()), config.cond_dim});
}

// ===========================================================================
// Forward
// ===========================================================================

namespace {

// x <- norm(x) * (1 + scale) + shift, modulation row per token.
Tensor modulate(const Tensor& h, const Tensor& mod, Index chunk_shift, Index chunk_scale, Index c) {
  const Index b = h.dim(0), n = h.dim(1);
  const Tensor ones = Tensor::filled({c}, 1.0f);
  Tensor out = rms_normalize(h, ones);
  for (Index bi = 0; bi < b; ++bi)
    for (Index i = 0; i < n; ++i) {
      const float* m = mod.data() + i * 6 * c;
      float* o = out.data() + (bi * n + i) * c;
      for (Index j = 0; j < c; ++j)
        o[j] = o[j] * (1.0f + m[chunk_scale * c + j]) + m[chunk_shift * c + j];
    }
  return out;
}

void gated_residual(Tensor& h, const Tensor& update, const Tensor& mod, Index chunk_gate, Index c) {
  const Index b = h.dim(0), n = h.dim(1);
  for (Index bi = 0; bi < b; ++bi)
    for (Index i = 0; i < n; ++i) {
      const float* g = mod.data() + i * 6 * c + chunk_gate * c;
      float* o = h.data() + (bi * n + i) * c;
      const float* u = update.data() + (bi * n + i) * c;
      for (Index j = 0; j < c; ++j) o[j] += g[j] * u[j];
    }
}

}  // namespace

Tensor denoiser_forward(const Tensor& latent_tokens, const ConditioningInputs& cond,
                        const DenoiserWeights& weights, const DenoiserConfig& config) {
  constexpr const char* where = "denoiser_forward";
  config.validate();
  require(latent_tokens.rank() == 3 && latent_tokens.dim(2) == config.latent_channels, where,
          "expected (B, N, " + std::to_string(config.latent_channels) + "), got " +
              to_string(latent_tokens.dims()));
  require(static_cast<Index>(weights.blocks.size()) == config.layers, where,
          "weights have " + std::to_string(weights.blocks.size()) + " blocks, config wants " +
              std::to_string(config.layers));
  const Index b = latent_tokens.dim(0), n = latent_tokens.dim(1), c = config.hidden;
  require(static_cast<Index>(cond.token_timesteps.size()) == n, where,
          "need one timestep per token (" + std::to_string(n) + ")");
  require(latent_tokens.all_finite(), where, "non-finite input");

  Tensor h = affine(latent_tokens, weights.in_w, weights.in_b).reshaped({b, n, c});
  if (config.layers > 0) {
    Tensor cvec = condition_embed(cond, config, weights);
    for (auto& v : cvec.values()) v = silu(v);

    for (Index l = 0; l < config.layers; ++l) {
      const DenoiserBlock& blk = weights.blocks[l];
      const Tensor mod = affine(cvec, blk.mod_w, blk.mod_b);

      const bool rope = config.layer_uses_rope(l);
      AttentionParams rope_params;
      const AttentionParams* attn = &blk.attn;
      if (rope != blk.attn.rope.has_value()) {
        rope_params = blk.attn;
        if (rope) rope_params.rope = RopeConfig::split_for(config.head_dim(), config.rope_base);
        else rope_params.rope.reset();
        attn = &rope_params;
      }
      if (rope) {
        require(static_cast<Index>(cond.positions.size()) == n, where, "rope needs token positions");
      }
      const std::span<const Position3> pos =
          rope ? std::span<const Position3>(cond.positions) : std::span<const Position3>{};

      const Tensor hm = modulate(h, mod, 0, 1, c);
      const Tensor a = config.layer_kind(l) == AttentionKind::Softmax
                           ? softmax_attention(hm, *attn, config.strategy, pos)
                           : linear_attention_streaming(hm, *attn, config.strategy, pos);
      gated_residual(h, a, mod, 2, c);

      const Tensor hf = modulate(h, mod, 3, 4, c);
      Tensor f1 = affine(hf, blk.ffn_w1, blk.ffn_b1);
      for (auto& v : f1.values()) v = gelu(v);
      const Tensor f2 = affine(f1, blk.ffn_w2, blk.ffn_b2);
      gated_residual(h, f2, mod, 5, c);
    }
  }
  const Tensor hn = rms_normalize(h, weights.final_gain);
  Tensor out = affine(hn, weights.out_w, weights.out_b).reshaped({b, n, config.latent_channels});
  check_finite(out, where);
  return out;
}

}  // namespace mi2v
