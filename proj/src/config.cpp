#include "mi2v/config.hpp"

#include <cmath>
#include <set>

#include "json.hpp"
#include "mi2v/error.hpp"
#include "mi2v/io.hpp"

namespace mi2v {

using nlohmann::json;

namespace {

constexpr const char* kWhere = "RunConfig";

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  require(j.is_object(), kWhere, "section '" + section + "' must be an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    require(keys.count(k) == 1, kWhere, "unknown key '" + k + "' in " + (section.empty() ? "top level" : "'" + section + "'"));
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(kWhere, "bad value for '" + section + "." + key + "': " + e.what());
  }
}

void read_denoiser(const json& j, RunConfig& rc) {
  const std::string s = "denoiser";
  reject_unknown(j, s,
                 {"preset", "layers", "hidden", "heads", "ffn_mult", "softmax_layers", "latent_channels", "cond_dim",
                  "freq_dim", "qk_norm", "rope", "rope_base", "strategy", "weights_seed"});
  std::string preset;
  read(j, "preset", preset, s);
  if (!preset.empty()) rc.denoiser = denoiser_preset(preset);
  auto& d = rc.denoiser;
  read(j, "layers", d.layers, s);
  read(j, "hidden", d.hidden, s);
  read(j, "heads", d.heads, s);
  read(j, "ffn_mult", d.ffn_mult, s);
  read(j, "softmax_layers", d.softmax_layers, s);
  read(j, "latent_channels", d.latent_channels, s);
  read(j, "cond_dim", d.cond_dim, s);
  read(j, "freq_dim", d.freq_dim, s);
  read(j, "qk_norm", d.qk_norm, s);
  read(j, "rope_base", d.rope_base, s);
  read(j, "weights_seed", rc.weights_seed, s);
  std::string name;
  read(j, "rope", name, s);
  if (!name.empty()) d.rope = parse_rope_placement(name);
  name.clear();
  read(j, "strategy", name, s);
  if (!name.empty()) d.strategy = ExecStrategy::parse(name);
  require(d.latent_channels == LatentSpec::kChannels, kWhere, "latent_channels must be 128");
  d.validate();
}

void read_sampler(const json& j, RunConfig& rc) {
  const std::string s = "sampler";
  reject_unknown(j, s, {"steps", "mode", "motion", "seed", "spec"});
  auto& g = rc.sampler;
  read(j, "steps", g.sampler.steps, s);
  read(j, "motion", g.motion, s);
  read(j, "seed", g.seed, s);
  std::string text;
  read(j, "mode", text, s);
  if (!text.empty()) g.sampler.mode = parse_prediction_mode(text);
  text.clear();
  read(j, "spec", text, s);
  if (!text.empty()) g.spec = LatentSpec::parse(text);
  require(g.sampler.steps >= 1, kWhere, "sampler.steps must be at least 1");
  require(std::isfinite(g.motion), kWhere, "sampler.motion must be finite");
}

void read_bench(const json& j, RunConfig& rc) {
  const std::string s = "bench";
  reject_unknown(j, s, {"kinds", "strategies", "lengths", "reps", "batch", "heads", "head_dim", "seed"});
  auto& b = rc.bench;
  std::vector<std::string> names;
  read(j, "kinds", names, s);
  if (j.contains("kinds")) {
    b.kinds.clear();
    for (const auto& n : names) b.kinds.push_back(parse_attention_kind(n));
  }
  names.clear();
  read(j, "strategies", names, s);
  if (j.contains("strategies")) {
    b.strategies.clear();
    for (const auto& n : names) b.strategies.push_back(ExecStrategy::parse(n));
  }
  read(j, "lengths", b.lengths, s);
  read(j, "reps", b.reps, s);
  read(j, "batch", b.shape.batch, s);
  read(j, "heads", b.shape.heads, s);
  read(j, "head_dim", b.shape.head_dim, s);
  read(j, "seed", b.seed, s);
  require(!b.kinds.empty() && !b.strategies.empty() && !b.lengths.empty(), kWhere, "bench lists must be non-empty");
  require(b.reps >= 3, kWhere, "bench.reps must be at least 3");
}

void read_toy(const json& j, RunConfig& rc) {
  const std::string s = "distill_toy";
  reject_unknown(j, s,
                 {"iterations", "hidden", "batch", "lr", "fd_step", "w_reg", "w_adv", "w_dm", "teacher_steps",
                  "pretrain_iterations", "dataset_size", "eval_samples", "projections", "eval_every", "t_min", "t_max",
                  "taps", "disc_hidden", "switches", "seeds"});
  auto& t = rc.distill_toy;
  read(j, "iterations", t.iterations, s);
  read(j, "hidden", t.hidden, s);
  read(j, "batch", t.batch, s);
  read(j, "lr", t.lr, s);
  read(j, "fd_step", t.fd_step, s);
  read(j, "w_reg", t.w_reg, s);
  read(j, "w_adv", t.w_adv, s);
  read(j, "w_dm", t.w_dm, s);
  read(j, "teacher_steps", t.teacher_steps, s);
  read(j, "pretrain_iterations", t.pretrain_iterations, s);
  read(j, "dataset_size", t.dataset_size, s);
  read(j, "eval_samples", t.eval_samples, s);
  read(j, "projections", t.projections, s);
  read(j, "eval_every", t.eval_every, s);
  read(j, "t_min", t.t_min, s);
  read(j, "t_max", t.t_max, s);
  read(j, "taps", t.taps, s);
  read(j, "disc_hidden", t.disc_hidden, s);
  if (j.contains("switches")) {
    const auto& sw = j.at("switches");
    reject_unknown(sw, "distill_toy.switches", {"reg", "adv", "dm"});
    read(sw, "reg", t.switches.reg, "distill_toy.switches");
    read(sw, "adv", t.switches.adv, "distill_toy.switches");
    read(sw, "dm", t.switches.dm, "distill_toy.switches");
  }
  if (j.contains("seeds")) {
    const auto& sd = j.at("seeds");
    reject_unknown(sd, "distill_toy.seeds", {"data", "teacher", "train", "eval"});
    read(sd, "data", t.seeds.data, "distill_toy.seeds");
    read(sd, "teacher", t.seeds.teacher, "distill_toy.seeds");
    read(sd, "train", t.seeds.train, "distill_toy.seeds");
    read(sd, "eval", t.seeds.eval, "distill_toy.seeds");
  }
  t.validate();
}

}  // namespace

DenoiserConfig denoiser_preset(const std::string& name) {
  if (name == "micro") return DenoiserConfig::micro();
  if (name == "desk") return DenoiserConfig::desk();
  if (name == "full") return DenoiserConfig::full_scale();
  fail(kWhere, "unknown denoiser preset '" + name + "' (micro, desk, full)");
}

RunConfig RunConfig::parse(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(kWhere, std::string("invalid JSON: ") + e.what());
  }
  reject_unknown(j, "", {"denoiser", "sampler", "bench", "distill_toy"});
  RunConfig rc;
  if (j.contains("denoiser")) read_denoiser(j.at("denoiser"), rc);
  if (j.contains("sampler")) read_sampler(j.at("sampler"), rc);
  if (j.contains("bench")) read_bench(j.at("bench"), rc);
  if (j.contains("distill_toy")) read_toy(j.at("distill_toy"), rc);
  return rc;
}

RunConfig RunConfig::load(const std::string& path) {
  const auto bytes = read_file(path);
  return parse(std::string(bytes.begin(), bytes.end()));
}

std::string RunConfig::to_json() const {
  nlohmann::ordered_json j;
  const auto& d = denoiser;
  j["denoiser"] = {{"layers", d.layers},       {"hidden", d.hidden},
                   {"heads", d.heads},         {"ffn_mult", d.ffn_mult},
                   {"softmax_layers", d.softmax_layers},
                   {"latent_channels", d.latent_channels},
                   {"cond_dim", d.cond_dim},   {"freq_dim", d.freq_dim},
                   {"qk_norm", d.qk_norm},     {"rope", to_string(d.rope)},
                   {"rope_base", d.rope_base}, {"strategy", d.strategy.name()},
                   {"weights_seed", weights_seed}};
  j["sampler"] = {{"steps", sampler.sampler.steps},
                  {"mode", to_string(sampler.sampler.mode)},
                  {"motion", sampler.motion},
                  {"seed", sampler.seed},
                  {"spec", sampler.spec.to_string()}};
  std::vector<std::string> kinds, strategies;
  for (auto k : bench.kinds) kinds.push_back(to_string(k));
  for (const auto& s : bench.strategies) strategies.push_back(s.name());
  j["bench"] = {{"kinds", kinds},          {"strategies", strategies},   {"lengths", bench.lengths},
                {"reps", bench.reps},      {"batch", bench.shape.batch}, {"heads", bench.shape.heads},
                {"head_dim", bench.shape.head_dim}, {"seed", bench.seed}};
  const auto& t = distill_toy;
  j["distill_toy"] = {{"iterations", t.iterations},
                      {"hidden", t.hidden},
                      {"batch", t.batch},
                      {"lr", t.lr},
                      {"fd_step", t.fd_step},
                      {"w_reg", t.w_reg},
                      {"w_adv", t.w_adv},
                      {"w_dm", t.w_dm},
                      {"teacher_steps", t.teacher_steps},
                      {"pretrain_iterations", t.pretrain_iterations},
                      {"dataset_size", t.dataset_size},
                      {"eval_samples", t.eval_samples},
                      {"projections", t.projections},
                      {"eval_every", t.eval_every},
                      {"t_min", t.t_min},
                      {"t_max", t.t_max},
                      {"taps", t.taps},
                      {"disc_hidden", t.disc_hidden},
                      {"switches", {{"reg", t.switches.reg}, {"adv", t.switches.adv}, {"dm", t.switches.dm}}},
                      {"seeds",
                       {{"data", t.seeds.data}, {"teacher", t.seeds.teacher}, {"train", t.seeds.train},
                        {"eval", t.seeds.eval}}}};
  return j.dump(2);
}

}  // namespace mi2v
