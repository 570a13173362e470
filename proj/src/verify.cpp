#include "mi2v/verify.hpp"

#include <cmath>
#include <functional>
#include <sstream>
#include <utility>

#include "json.hpp"
#include "mi2v/attention.hpp"
#include "mi2v/denoiser.hpp"
#include "mi2v/distill.hpp"
#include "mi2v/error.hpp"
#include "mi2v/flow.hpp"
#include "mi2v/io.hpp"
#include "mi2v/ops.hpp"
#include "mi2v/rng.hpp"
#include "mi2v/toy_distill.hpp"

namespace mi2v {

namespace {

using Outcome = std::pair<bool, std::string>;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

Outcome within(double value, double limit, const std::string& what) {
  return {value <= limit, what + " " + fmt(value) + " (limit " + fmt(limit) + ")"};
}

// d/dx of a scalar function of a float vector by central differences, using
// the spacing realized in float.
std::vector<double> numeric_grad(const std::function<double(const Tensor&)>& f, Tensor x, float step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = x[i];
    x[i] = orig + step;
    const float up = x[i];
    const double hi = f(x);
    x[i] = orig - step;
    const float down = x[i];
    const double lo = f(x);
    x[i] = orig;
    g[i] = (hi - lo) / (double(up) - double(down));
  }
  return g;
}

double grad_gap(const Tensor& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    diff = std::max(diff, std::fabs(double(analytic[i]) - numeric[i]));
    scale = std::max(scale, std::fabs(numeric[i]));
  }
  return scale == 0.0 ? diff : diff / scale;
}

// ---------------------------------------------------------------------------

Outcome contract_matches_naive() {
  Rng rng(11);
  const Tensor a = random_normal(rng, {2, 5, 7}), b = random_normal(rng, {2, 7, 3});
  const Tensor y = batched_contract(a, b, ContractPattern::BatchedNN);
  bool exact = true;
  for (int bi = 0; bi < 2; ++bi)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 3; ++j) {
        float acc = 0.0f;
        for (int k = 0; k < 7; ++k) acc += a[(bi * 5 + i) * 7 + k] * b[(bi * 7 + k) * 3 + j];
        exact = exact && acc == y[(bi * 5 + i) * 3 + j];
      }
  return {exact, exact ? "bit-equal to naive loops" : "differs from naive loops"};
}

Outcome softmax_rows_normalized() {
  Rng rng(12);
  Tensor x = random_normal(rng, {6, 9});
  for (auto& v : x.values()) v *= 20.0f;
  const Tensor p = softmax_rows(x);
  double worst = 0.0;
  for (int r = 0; r < 6; ++r) {
    double s = 0.0;
    for (int c = 0; c < 9; ++c) s += p[r * 9 + c];
    worst = std::max(worst, std::fabs(s - 1.0));
  }
  return within(worst, 1e-6, "max |row sum - 1|");
}

Outcome rms_closed_form() {
  const Tensor y = rms_normalize(Tensor::from({2}, {3.0f, 4.0f}), Tensor::filled({2}, 1.0f), 0.0f);
  const double r = std::sqrt(12.5);
  return within(std::max(std::fabs(y[0] - 3.0 / r), std::fabs(y[1] - 4.0 / r)), 1e-6, "max error");
}

Outcome layout_round_trip() {
  Rng rng(13);
  const Tensor x = random_normal(rng, {2, 5, 6});
  const Tensor back = layout_convert(layout_convert(x, Layout::ChannelsFirst4D), Layout::RowMajor);
  return {back.bit_equal(x), "RowMajor -> ChannelsFirst4D -> RowMajor"};
}

Outcome rng_reference() {
  Rng r(0);
  const auto w = r.next_u64();
  return {w == 0xE220A8397B1DCDAFull, "first word of seed 0"};
}

Outcome dual_form() {
  return within(dual_form_max_error(100), 1e-4, "max relative error over 100 cases");
}

Outcome strategy_neutrality() {
  Rng rng(14);
  AttentionParams p = AttentionParams::random(rng, 32, 4, true);
  p.rope = RopeConfig::split_for(8);
  std::vector<Position3> pos;
  for (int i = 0; i < 150; ++i) pos.push_back({i / 50, (i / 10) % 5, i % 10});
  const Tensor x = random_normal(rng, {1, 150, 32});
  const Tensor soft = softmax_attention(x, p, ExecStrategy::baseline(), pos);
  const Tensor lin = linear_attention_streaming(x, p, ExecStrategy::baseline(), pos);
  double worst = 0.0;
  for (const auto& s : ExecStrategy::combinations()) {
    worst = std::max(worst, relative_error(softmax_attention(x, p, s, pos), soft));
    worst = std::max(worst, relative_error(linear_attention_streaming(x, p, s, pos), lin));
  }
  return within(worst, 1e-5, "max deviation from baseline");
}

Outcome rope_norm() {
  Rng rng(15);
  const Tensor q = random_normal(rng, {1, 7, 12});
  std::vector<Position3> pos;
  for (int i = 0; i < 7; ++i) pos.push_back({i, 2 * i, 3 - i});
  const Tensor r = apply_rope3d(q, pos, RopeConfig::split_for(12));
  double worst = 0.0;
  for (int s = 0; s < 7; ++s) {
    double a = 0.0, b = 0.0;
    for (int c = 0; c < 12; ++c) {
      a += double(q[s * 12 + c]) * q[s * 12 + c];
      b += double(r[s * 12 + c]) * r[s * 12 + c];
    }
    worst = std::max(worst, std::fabs(std::sqrt(a) - std::sqrt(b)) / std::sqrt(a));
  }
  return within(worst, 1e-6, "max relative norm change");
}

ConditioningInputs micro_cond(std::int64_t n) {
  ConditioningInputs c;
  c.token_timesteps.assign(static_cast<std::size_t>(n), 0.5f);
  c.motion_score = 2.0f;
  for (std::int64_t i = 0; i < n; ++i) c.positions.push_back({0, std::int32_t(i / 3), std::int32_t(i % 3)});
  return c;
}

Outcome zero_init() {
  const auto cfg = DenoiserConfig::micro();
  const auto w = init_weights(cfg, 1);
  Rng rng(16);
  const Tensor y = denoiser_forward(random_normal(rng, {1, 6, 128}), micro_cond(6), w, cfg);
  bool zero = true;
  for (float v : y.values()) zero = zero && v == 0.0f;
  return {zero, zero ? "fresh model outputs exactly zero" : "nonzero output from a fresh model"};
}

Outcome denoiser_determinism() {
  const auto cfg = DenoiserConfig::micro();
  auto w = init_weights(cfg, 2);
  Rng rng(17);
  for (auto& v : w.out_w.values()) v = static_cast<float>(rng.normal());
  const Tensor x = random_normal(rng, {1, 6, 128});
  const bool same = denoiser_forward(x, micro_cond(6), w, cfg).bit_equal(denoiser_forward(x, micro_cond(6), w, cfg));
  return {same && init_weights(cfg, 5).checksum() == init_weights(cfg, 5).checksum(), "repeat forward and init"};
}

Outcome parameter_count_micro() {
  DenoiserConfig cfg = DenoiserConfig::micro();
  cfg.layers = 1;
  cfg.softmax_layers = {0};
  std::int64_t stored = 0;
  for (const auto& [name, t] : init_weights(cfg, 0).named()) stored += static_cast<std::int64_t>(t->size());
  const auto count = parameter_count(cfg);
  return {count == 3576 && stored == 3576, "count " + std::to_string(count) + ", stored " + std::to_string(stored)};
}

Outcome layer_schedule() {
  const auto cfg = DenoiserConfig::full_scale();
  std::string pattern;
  for (std::int64_t l = 0; l < cfg.layers; ++l) pattern += cfg.layer_kind(l) == AttentionKind::Softmax ? 'S' : 'L';
  return {pattern == "LLLLLLLSLLLLLLLS", pattern};
}

Outcome schedule_identities() {
  const auto s = schedule_eval(0.5);
  const double err = std::max({std::fabs(s.a - 0.5), std::fabs(s.b - 0.5), std::fabs(s.lambda),
                               std::fabs(s.dlambda + 8.0), std::fabs(s.weight - 1.0)});
  return within(err, 1e-9, "max deviation at t=0.5");
}

Outcome noise_endpoints() {
  Rng rng(18);
  const Tensor x0 = random_normal(rng, {3, 4, 5}), eps = random_normal(rng, {3, 4, 5});
  const bool ok = noise_forward(x0, eps, std::vector<float>(4, 0.0f)).bit_equal(x0) &&
                  noise_forward(x0, eps, std::vector<float>(4, 1.0f)).bit_equal(eps);
  return {ok, "t=0 -> x0 and t=1 -> eps bit-exact"};
}

Outcome shape_contract() {
  const auto s = LatentSpec::parse("1280x720x17");
  const bool ok = token_count(s) == 2760 && s.latent_width() == 40 && s.latent_height() == 23 && s.latent_frames() == 3;
  return {ok, "grid " + std::to_string(s.latent_width()) + "x" + std::to_string(s.latent_height()) + "x" +
                  std::to_string(s.latent_frames()) + ", " + std::to_string(token_count(s)) + " tokens"};
}

Outcome timestep_prefix() {
  const auto t = token_timesteps(LatentSpec::parse("1280x720x17"), 0.7f);
  bool ok = t.size() == 2760;
  for (std::size_t i = 0; ok && i < t.size(); ++i) ok = t[i] == (i < 920 ? 0.0f : 0.7f);
  return {ok, "920 reference tokens at t=0"};
}

Outcome first_frame() {
  const LatentSpec spec{96, 64, 9};
  auto cfg = DenoiserConfig::micro();
  auto w = init_weights(cfg, 3);
  Rng rng(19);
  for (auto& v : w.out_w.values()) v = static_cast<float>(0.2 * rng.normal());
  const Tensor ref = random_normal(rng, {spec.frame_tokens(), 128});
  const auto model = make_denoiser_model(w, cfg, spec);
  for (int steps : {1, 2, 20, 30}) {
    const Tensor out = euler_sample_i2v(model, spec, {steps}, ref, 3.0f, 7);
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (out[i] != ref[i]) return {false, "reference token changed with steps=" + std::to_string(steps)};
  }
  return {true, "bit-equal for steps 1, 2, 20, 30"};
}

Outcome one_step_linear() {
  const LatentSpec spec{64, 64, 9};
  Rng data(20);
  const Tensor x0 = random_normal(data, {8, 8});
  Tensor ref({4, 8});
  std::copy_n(x0.data(), 32, ref.data());
  Rng noise(21);
  Tensor eps = random_normal(noise, {8, 8});
  std::copy_n(ref.data(), 32, eps.data());
  const I2VModel field = [&](const Tensor&, std::span<const float>, float) {
    Tensor v(eps.dims());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = eps[i] - x0[i];
    return v;
  };
  const Tensor out = euler_sample_i2v(field, spec, {1}, ref, 0.0f, 21);
  double worst = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) worst = std::max(worst, std::fabs(double(out[i]) - x0[i]));
  return within(worst, 1e-5, "max |x - x0|");
}

Outcome loss_gradients() {
  Rng rng(22);
  const Tensor target = random_normal(rng, {16}), x = random_normal(rng, {16}), g = random_normal(rng, {16});
  const double reg = grad_gap(loss_regression(x, target).grad,
                              numeric_grad([&](const Tensor& p) { return loss_regression(p, target).value; }, x, 1e-3f));
  const double fake = grad_gap(loss_fake_score(x, target).grad,
                               numeric_grad([&](const Tensor& p) { return loss_fake_score(p, target).value; }, x, 1e-3f));
  const double dmd = grad_gap(dmd_surrogate(g, x).grad,
                              numeric_grad([&](const Tensor& p) { return dmd_surrogate(g, p).value; }, x, 1e-3f));
  const double worst = std::max({reg, fake, dmd});
  return {worst <= 1e-4, "regression " + fmt(reg) + ", fake-score " + fmt(fake) + ", dmd " + fmt(dmd)};
}

Outcome hinge_identities() {
  Rng rng(23);
  bool ok = loss_adv_discriminator(Tensor::filled({4, 2}, 1.0f), Tensor::filled({4, 2}, -1.0f)).value == 0.0 &&
            loss_adv_discriminator(Tensor::zeros({1, 1}), Tensor::zeros({1, 1})).value == 2.0;
  for (int i = 0; ok && i < 100; ++i) {
    Tensor r = random_normal(rng, {3, 2}), f = random_normal(rng, {3, 2});
    ok = loss_adv_discriminator(r, f).value >= 0.0;
  }
  return {ok, "zero at margin, nonnegative over 100 draws"};
}

Outcome dmd_zero() {
  Rng rng(24);
  const Tensor s = random_normal(rng, {16});
  const Tensor g = dmd_gradient_field(s, s);
  bool zero = true;
  for (float v : g.values()) zero = zero && v == 0.0f;
  return {zero, "s_real == s_fake gives an exactly zero field"};
}

Outcome teacher_frozen() {
  toy::ToyDistillConfig cfg;
  cfg.iterations = 2;
  cfg.pretrain_iterations = 200;
  cfg.eval_samples = 128;
  cfg.eval_every = 0;
  const auto r = toy::toy_distill_run(cfg);
  return {r.teacher_checksum_before == r.teacher_checksum_after, "teacher checksum stable over a short run"};
}

Outcome container_round_trip() {
  Rng rng(25);
  std::vector<NamedTensor> entries{{"a", random_normal(rng, {3, 4})}, {"b", random_normal(rng, {2, 1, 5})},
                                   {"empty", Tensor::zeros({0, 3})}};
  const auto back = decode_container(encode_container(entries));
  bool ok = back.size() == entries.size();
  for (std::size_t i = 0; ok && i < back.size(); ++i)
    ok = back[i].first == entries[i].first && back[i].second.bit_equal(entries[i].second);
  return {ok, "three entries round-trip bit-exactly"};
}

Outcome container_bytes() {
  const auto bytes = encode_container({{"x", Tensor::from({2, 2}, {0.0f, 1.0f, 2.0f, 3.0f})}});
  const std::vector<std::uint8_t> tail{0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3F,
                                       0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x40, 0x40};
  const bool ok = bytes.size() >= 16 && std::equal(tail.begin(), tail.end(), bytes.end() - 16) &&
                  std::equal(bytes.begin(), bytes.begin() + 4, "MI2V");
  return {ok, "payload bytes of [0, 1, 2, 3]"};
}

Outcome pgm_header() {
  const auto spec = LatentSpec::parse("1280x720x17");
  const auto pgm = emit_pgm_preview(Tensor::filled({920, 128}, 0.5f), spec);
  const std::string header = "P5\n40 23\n255\n";
  bool ok = pgm.size() == header.size() + 920 && std::equal(header.begin(), header.end(), pgm.begin());
  for (std::size_t i = header.size(); ok && i < pgm.size(); ++i) ok = pgm[i] == 128;
  return {ok, "P5 40x23, constant frame mid-gray"};
}

}  // namespace

double dual_form_max_error(int cases, unsigned long long seed) {
  Rng pick(seed ^ 0xD0A1F0ull);
  double worst = 0.0;
  for (int i = 0; i < cases; ++i) {
    const std::int64_t s = 1 + static_cast<std::int64_t>(pick.below(512));
    const std::int64_t h = pick.below(2) ? 4 : 1;
    const std::int64_t d = pick.below(2) ? 32 : 8;
    Rng rng(seed * 1000003ull + static_cast<unsigned long long>(i));
    const AttentionParams p = AttentionParams::random(rng, h * d, h);
    const Tensor x = random_normal(rng, {1, s, h * d});
    worst = std::max(worst, relative_error(linear_attention_streaming(x, p), linear_attention_reference(x, p)));
  }
  return worst;
}

bool VerifyReport::all_passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return !checks.empty();
}

std::string VerifyReport::to_json() const {
  nlohmann::ordered_json j;
  j["passed"] = all_passed();
  std::size_t failed = 0;
  for (const auto& c : checks) failed += c.passed ? 0 : 1;
  j["total"] = checks.size();
  j["failed"] = failed;
  auto& arr = j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : checks) arr.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return j.dump(2);
}

VerifyReport run_verify_suite() {
  const std::vector<std::pair<const char*, Outcome (*)()>> suite{
      {"tensor.contract_matches_naive", contract_matches_naive},
      {"tensor.softmax_rows_normalized", softmax_rows_normalized},
      {"tensor.rms_closed_form", rms_closed_form},
      {"tensor.layout_round_trip", layout_round_trip},
      {"tensor.rng_reference_word", rng_reference},
      {kDualFormCheck, dual_form},
      {"attention.strategy_neutrality", strategy_neutrality},
      {"attention.rope_norm_preservation", rope_norm},
      {"denoiser.zero_init_output", zero_init},
      {"denoiser.determinism", denoiser_determinism},
      {"denoiser.parameter_count_micro", parameter_count_micro},
      {"denoiser.layer_schedule", layer_schedule},
      {"flow.schedule_identities", schedule_identities},
      {"flow.noise_endpoints", noise_endpoints},
      {"flow.shape_contract", shape_contract},
      {"flow.reference_timesteps", timestep_prefix},
      {"flow.first_frame_preservation", first_frame},
      {"flow.one_step_linear_field", one_step_linear},
      {"distill.loss_gradients", loss_gradients},
      {"distill.hinge_identities", hinge_identities},
      {"distill.dmd_zero_field", dmd_zero},
      {"distill.teacher_frozen", teacher_frozen},
      {"io.container_round_trip", container_round_trip},
      {"io.container_byte_layout", container_bytes},
      {"io.pgm_header", pgm_header},
  };
  VerifyReport report;
  for (const auto& [name, fn] : suite) {
    CheckResult r{name, false, ""};
    try {
      auto [ok, detail] = fn();
      r.passed = ok;
      r.detail = std::move(detail);
    } catch (const std::exception& e) {
      r.detail = std::string("threw: ") + e.what();
    }
    report.checks.push_back(std::move(r));
  }
  return report;
}

}  // namespace mi2v
