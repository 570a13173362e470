#include "mi2v/toy_distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <numbers>
#include <thread>

#include "json.hpp"
#include "mi2v/distill.hpp"
#include "mi2v/error.hpp"
#include "mi2v/tensor.hpp"

namespace mi2v::toy {

namespace {

constexpr int kIn = 3;
constexpr int kOut = 2;

struct MlpOffsets {
  std::size_t w1, b1, w2, b2, w3, b3;
  explicit MlpOffsets(int h)
      : w1(0), b1(kIn * h), w2(b1 + h), b2(w2 + std::size_t(h) * h), w3(b2 + h), b3(w3 + std::size_t(h) * kOut) {}
};

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* b = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

Tensor as_tensor(std::span<const double> v, Dims dims) {
  Tensor t(std::move(dims));
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<float>(v[i]);
  return t;
}

std::vector<double> normals(Rng& rng, std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) v = rng.normal();
  return out;
}

}  // namespace

// ===========================================================================
// Networks
// ===========================================================================

Mlp Mlp::init(int hidden, Rng& rng) {
  require(hidden >= 1 && hidden <= 64, "Mlp", "hidden width must be in [1, 64]");
  Mlp m;
  m.hidden = hidden;
  m.params.assign(param_count(hidden), 0.0);
  const MlpOffsets o(hidden);
  auto fill = [&](std::size_t at, std::size_t count, double fan_in) {
    for (std::size_t i = 0; i < count; ++i) m.params[at + i] = rng.normal() / std::sqrt(fan_in);
  };
  fill(o.w1, std::size_t(kIn) * hidden, kIn);
  fill(o.w2, std::size_t(hidden) * hidden, hidden);
  fill(o.w3, std::size_t(hidden) * kOut, hidden);
  return m;
}

void Mlp::forward(const double* p, double x, double y, double t, double out[2], double* h1, double* h2) const {
  const int h = hidden;
  const MlpOffsets o(h);
  double a1[64], a2[64];
  double* u1 = h1 ? h1 : a1;
  double* u2 = h2 ? h2 : a2;
  const double in[kIn] = {x, y, t};
  for (int j = 0; j < h; ++j) {
    double acc = p[o.b1 + j];
    for (int i = 0; i < kIn; ++i) acc += in[i] * p[o.w1 + i * h + j];
    u1[j] = std::tanh(acc);
  }
  for (int j = 0; j < h; ++j) {
    double acc = p[o.b2 + j];
    for (int i = 0; i < h; ++i) acc += u1[i] * p[o.w2 + i * h + j];
    u2[j] = std::tanh(acc);
  }
  for (int j = 0; j < kOut; ++j) {
    double acc = p[o.b3 + j];
    for (int i = 0; i < h; ++i) acc += u2[i] * p[o.w3 + i * kOut + j];
    out[j] = acc;
  }
}

std::vector<double> Mlp::velocity(const double* p, std::span<const double> pts, std::span<const double> t) const {
  require(pts.size() == 2 * t.size(), "Mlp::velocity", "need one t per point");
  std::vector<double> v(pts.size());
  for (std::size_t i = 0; i < t.size(); ++i) forward(p, pts[2 * i], pts[2 * i + 1], t[i], &v[2 * i]);
  return v;
}

std::uint64_t Mlp::checksum() const { return fnv1a(params.data(), params.size() * sizeof(double)); }

Head Head::init(int width, int hidden, Rng& rng) {
  Head hd;
  hd.width = width;
  hd.hidden = hidden;
  hd.params.assign(param_count(width, hidden), 0.0);
  for (int i = 0; i < width * hidden; ++i) hd.params[i] = rng.normal() / std::sqrt(double(width));
  for (int i = 0; i < hidden; ++i) hd.params[width * hidden + hidden + i] = rng.normal() / std::sqrt(double(hidden));
  return hd;
}

double Head::score(const double* p, const double* feature) const {
  const double* w1 = p;
  const double* b1 = p + width * hidden;
  const double* w2 = b1 + hidden;
  const double b2 = w2[hidden];
  double out = b2;
  for (int j = 0; j < hidden; ++j) {
    double acc = b1[j];
    for (int i = 0; i < width; ++i) acc += feature[i] * w1[i * hidden + j];
    out += (acc > 0.0 ? acc : 0.2 * acc) * w2[j];
  }
  return out;
}

// ===========================================================================
// Data, teacher, metric
// ===========================================================================

std::vector<double> mixture_dataset(int n, std::uint64_t seed) {
  require(n >= 1, "mixture_dataset", "need at least one point");
  Rng rng(seed);
  std::vector<double> pts(2 * static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto mode = rng.below(4);
    const double cx = (mode & 1) ? 1.5 : -1.5, cy = (mode & 2) ? 1.5 : -1.5;
    pts[2 * i] = cx + 0.25 * rng.normal();
    pts[2 * i + 1] = cy + 0.25 * rng.normal();
  }
  return pts;
}

Mlp pretrain_teacher(std::span<const double> data, const PretrainConfig& config) {
  constexpr const char* where = "pretrain_teacher";
  require(data.size() >= 2 && data.size() % 2 == 0, where, "data must be (n, 2)");
  Rng rng(config.seed);
  Mlp m = Mlp::init(config.hidden, rng);
  const int h = config.hidden;
  const MlpOffsets o(h);
  const std::size_t np = m.params.size(), n = data.size() / 2;
  std::vector<double> grad(np), mom(np, 0.0), var(np, 0.0);
  std::vector<double> h1(h), h2(h), d2(h), d1(h);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int it = 0; it < config.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int s = 0; s < config.batch; ++s) {
      const std::size_t k = rng.below(n);
      const double x0[2] = {data[2 * k], data[2 * k + 1]};
      const double e[2] = {rng.normal(), rng.normal()};
      const double t = rng.uniform();
      const double z[2] = {(1 - t) * x0[0] + t * e[0], (1 - t) * x0[1] + t * e[1]};
      double out[2];
      m.forward(m.params.data(), z[0], z[1], t, out, h1.data(), h2.data());
      const double scale = 2.0 / (config.batch * kOut);
      const double go[2] = {scale * (out[0] - (e[0] - x0[0])), scale * (out[1] - (e[1] - x0[1]))};
      for (int j = 0; j < kOut; ++j) {
        grad[o.b3 + j] += go[j];
        for (int i = 0; i < h; ++i) grad[o.w3 + i * kOut + j] += h2[i] * go[j];
      }
      for (int i = 0; i < h; ++i) {
        double acc = 0.0;
        for (int j = 0; j < kOut; ++j) acc += m.params[o.w3 + i * kOut + j] * go[j];
        d2[i] = acc * (1.0 - h2[i] * h2[i]);
      }
      for (int j = 0; j < h; ++j) {
        grad[o.b2 + j] += d2[j];
        for (int i = 0; i < h; ++i) grad[o.w2 + i * h + j] += h1[i] * d2[j];
      }
      for (int i = 0; i < h; ++i) {
        double acc = 0.0;
        for (int j = 0; j < h; ++j) acc += m.params[o.w2 + i * h + j] * d2[j];
        d1[i] = acc * (1.0 - h1[i] * h1[i]);
      }
      const double in[kIn] = {z[0], z[1], t};
      for (int j = 0; j < h; ++j) {
        grad[o.b1 + j] += d1[j];
        for (int i = 0; i < kIn; ++i) grad[o.w1 + i * h + j] += in[i] * d1[j];
      }
    }
    const double c1 = 1.0 - std::pow(b1, it + 1), c2 = 1.0 - std::pow(b2, it + 1);
    for (std::size_t i = 0; i < np; ++i) {
      mom[i] = b1 * mom[i] + (1 - b1) * grad[i];
      var[i] = b2 * var[i] + (1 - b2) * grad[i] * grad[i];
      m.params[i] -= config.lr * (mom[i] / c1) / (std::sqrt(var[i] / c2) + eps);
    }
  }
  for (double v : m.params) require(std::isfinite(v), where, "teacher diverged");
  return m;
}

std::vector<double> sample_multistep(const Mlp& model, std::span<const double> noise, int steps) {
  const std::size_t n = noise.size() / 2;
  const VelocityField field = [&](const Tensor& x, double t) {
    std::vector<double> pts(x.values().begin(), x.values().end());
    const std::vector<double> ts(n, t);
    const auto v = model.velocity(pts, ts);
    return as_tensor(v, x.dims());
  };
  const Tensor out = teacher_multistep(field, as_tensor(noise, {std::int64_t(n), 2}), 1.0, steps);
  return {out.values().begin(), out.values().end()};
}

double sliced_wasserstein(std::span<const double> a, std::span<const double> b, int projections,
                          std::uint64_t seed) {
  constexpr const char* where = "sliced_wasserstein";
  require(a.size() == b.size() && a.size() % 2 == 0 && !a.empty(), where, "need equally sized (n, 2) sets");
  require(projections >= 1, where, "need at least one projection");
  Rng rng(seed);
  const std::size_t n = a.size() / 2;
  std::vector<double> pa(n), pb(n);
  double total = 0.0;
  for (int k = 0; k < projections; ++k) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double ux = std::cos(angle), uy = std::sin(angle);
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] = a[2 * i] * ux + a[2 * i + 1] * uy;
      pb[i] = b[2 * i] * ux + b[2 * i + 1] * uy;
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) w += std::fabs(pa[i] - pb[i]);
    total += w / double(n);
  }
  return total / projections;
}

// ===========================================================================
// Finite differences
// ===========================================================================

int worker_threads() {
  if (const char* env = std::getenv("MI2V_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

std::vector<double> finite_difference_gradient(const std::function<double(const std::vector<double>&)>& f,
                                               const std::vector<double>& p, double step, int threads) {
  std::vector<double> g(p.size());
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(p.size())));
  auto probe = [&](std::size_t begin, std::size_t stride) {
    std::vector<double> q = p;
    for (std::size_t i = begin; i < p.size(); i += stride) {
      q[i] = p[i] + step;
      const double hi = f(q);
      q[i] = p[i] - step;
      const double lo = f(q);
      q[i] = p[i];
      g[i] = (hi - lo) / (2.0 * step);
    }
  };
  if (workers == 1) {
    probe(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(probe, std::size_t(w), std::size_t(workers));
    for (auto& t : pool) t.join();
  }
  return g;
}

// ===========================================================================
// Distillation run
// ===========================================================================

void ToyDistillConfig::validate() const {
  constexpr const char* where = "toy_distill";
  require(switches.any(), where, "no losses enabled");
  require(iterations >= 0, where, "iterations must be non-negative");
  require(hidden >= 1 && hidden <= 64, where, "hidden width must be in [1, 64]");
  require(Mlp::param_count(hidden) <= 256, where,
          "student has " + std::to_string(Mlp::param_count(hidden)) + " parameters; at most 256 allowed");
  require(batch >= 1 && eval_samples >= 1 && dataset_size >= 1, where, "sizes must be positive");
  require(lr > 0.0 && fd_step > 0.0, where, "lr and fd_step must be positive");
  require(teacher_steps >= 1, where, "teacher_steps must be at least 1");
  require(projections >= 1, where, "projections must be at least 1");
  require(t_min > 0.0 && t_min <= t_max && t_max < 1.0, where, "need 0 < t_min <= t_max < 1");
  require(!switches.adv || !taps.empty(), where, "adversarial loss needs at least one tap");
  for (int k : taps) require(k == 0 || k == 1, where, "taps must name hidden layer 0 or 1");
  require(disc_hidden >= 1, where, "disc_hidden must be positive");
}

namespace {

// Batch quantities held fixed while the student parameters are probed.
struct StudentBatch {
  std::vector<double> z;        // (B, 2) student input noise
  std::vector<double> target;   // (B, 2) teacher multi-step result from z
  std::vector<double> t;        // (B) noise level for adv / dm branches
  std::vector<double> eps;      // (B, 2) noise for x_t
  Tensor dm_field;              // (B, 2) DMD gradient field, held constant
};

std::vector<double> student_one_step(const Mlp& arch, const double* p, std::span<const double> z) {
  const std::vector<double> ones(z.size() / 2, 1.0);
  auto v = arch.velocity(p, z, ones);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = z[i] - v[i];
  return v;
}

std::vector<double> noised(std::span<const double> x0, std::span<const double> eps, std::span<const double> t) {
  std::vector<double> xt(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) xt[i] = (1.0 - t[i / 2]) * x0[i] + t[i / 2] * eps[i];
  return xt;
}

// Clean-sample prediction x_t - t v of a velocity model.
std::vector<double> predict_x0(const Mlp& m, const double* p, std::span<const double> xt, std::span<const double> t) {
  auto v = m.velocity(p, xt, t);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = xt[i] - t[i / 2] * v[i];
  return v;
}

// Teacher hidden activations at the requested taps, (B, taps, H).
std::vector<double> tap_features(const Mlp& teacher, std::span<const double> xt, std::span<const double> t,
                                 const std::vector<int>& taps) {
  const int h = teacher.hidden;
  const std::size_t n = t.size();
  std::vector<double> feats(n * taps.size() * h);
  std::vector<double> h1(h), h2(h);
  double out[2];
  for (std::size_t i = 0; i < n; ++i) {
    teacher.forward(teacher.params.data(), xt[2 * i], xt[2 * i + 1], t[i], out, h1.data(), h2.data());
    for (std::size_t k = 0; k < taps.size(); ++k)
      std::copy_n(taps[k] == 0 ? h1.data() : h2.data(), h, feats.data() + (i * taps.size() + k) * h);
  }
  return feats;
}

Tensor head_scores(const std::vector<Head>& heads, const double* p, std::span<const double> feats, std::size_t n) {
  const std::size_t k = heads.size();
  Tensor s({std::int64_t(n), std::int64_t(k)});
  for (std::size_t i = 0; i < n; ++i) {
    const double* hp = p;
    for (std::size_t j = 0; j < k; ++j) {
      s[i * k + j] = static_cast<float>(heads[j].score(hp, feats.data() + (i * k + j) * heads[j].width));
      hp += heads[j].params.size();
    }
  }
  return s;
}

void descend(std::vector<double>& p, const std::vector<double>& g, double lr, const char* what) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] -= lr * g[i];
    require(std::isfinite(p[i]), "toy_distill",
            std::string(what) + " parameter " + std::to_string(i) + " became non-finite (gradient " +
                std::to_string(g[i]) + ")");
  }
}

}  // namespace

ToyDistillReport toy_distill_run(const ToyDistillConfig& cfg) {
  cfg.validate();
  const int threads = worker_threads();
  const auto data = mixture_dataset(cfg.dataset_size, cfg.seeds.data);
  PretrainConfig pc;
  pc.hidden = cfg.hidden;
  pc.iterations = cfg.pretrain_iterations;
  pc.seed = cfg.seeds.teacher;
  const Mlp teacher = pretrain_teacher(data, pc);

  ToyDistillReport report;
  report.switches = cfg.switches;
  report.seeds = cfg.seeds;
  report.iterations = cfg.iterations;
  report.student_params = teacher.params.size();
  report.teacher_checksum_before = teacher.checksum();

  Mlp student = teacher;
  Mlp fake = teacher;
  Rng train(cfg.seeds.train);
  std::vector<Head> heads;
  std::vector<double> head_params;
  for (std::size_t k = 0; k < cfg.taps.size(); ++k) {
    heads.push_back(Head::init(cfg.hidden, cfg.disc_hidden, train));
    head_params.insert(head_params.end(), heads.back().params.begin(), heads.back().params.end());
  }

  // Evaluation sets: student noise and an independent reference drawn from the
  // teacher's multi-step sampler.
  Rng eval(cfg.seeds.eval);
  const auto eval_noise = normals(eval, 2 * std::size_t(cfg.eval_samples));
  const auto ref_noise = normals(eval, 2 * std::size_t(cfg.eval_samples));
  const auto reference = sample_multistep(teacher, ref_noise, cfg.teacher_steps);
  const std::uint64_t proj_seed = cfg.seeds.eval ^ 0x51u;
  auto distance = [&](const Mlp& m) {
    return sliced_wasserstein(student_one_step(m, m.params.data(), eval_noise), reference, cfg.projections,
                              proj_seed);
  };
  report.baseline_distance = distance(teacher);

  const std::size_t B = std::size_t(cfg.batch), N = data.size() / 2;
  for (int it = 0; it < cfg.iterations; ++it) {
    StudentBatch batch;
    batch.z = normals(train, 2 * B);
    batch.t.resize(B);
    for (auto& t : batch.t) t = train.uniform(cfg.t_min, cfg.t_max);
    batch.eps = normals(train, 2 * B);
    if (cfg.switches.reg) batch.target = sample_multistep(teacher, batch.z, cfg.teacher_steps);

    const auto x0_now = student_one_step(student, student.params.data(), batch.z);
    if (cfg.switches.dm) {
      const auto xt = noised(x0_now, batch.eps, batch.t);
      const std::vector<float> tf(batch.t.begin(), batch.t.end());
      const Dims d{std::int64_t(B), 2};
      const Tensor xt_t = as_tensor(xt, d);
      const Tensor s_real =
          score_from_prediction(as_tensor(predict_x0(teacher, teacher.params.data(), xt, batch.t), d), xt_t, tf);
      const Tensor s_fake =
          score_from_prediction(as_tensor(predict_x0(fake, fake.params.data(), xt, batch.t), d), xt_t, tf);
      batch.dm_field = dmd_gradient_field(s_real, s_fake);
    }

    const auto objective = [&](const std::vector<double>& p) {
      const auto x0 = student_one_step(student, p.data(), batch.z);
      const Dims d{std::int64_t(B), 2};
      double total = 0.0;
      if (cfg.switches.reg) total += cfg.w_reg * loss_regression(as_tensor(x0, d), as_tensor(batch.target, d)).value;
      if (cfg.switches.adv) {
        const auto xt = noised(x0, batch.eps, batch.t);
        const auto feats = tap_features(teacher, xt, batch.t, cfg.taps);
        total += cfg.w_adv * loss_adv_generator(head_scores(heads, head_params.data(), feats, B)).value;
      }
      if (cfg.switches.dm) total += cfg.w_dm * dmd_surrogate(batch.dm_field, as_tensor(x0, d)).value;
      return total;
    };
    const double loss_now = objective(student.params);
    require(std::isfinite(loss_now), "toy_distill", "non-finite student loss at iteration " + std::to_string(it));
    descend(student.params, finite_difference_gradient(objective, student.params, cfg.fd_step, threads), cfg.lr,
            "student");

    const auto x0_new = student_one_step(student, student.params.data(), batch.z);
    if (cfg.switches.adv) {
      std::vector<double> real(2 * B), t_d(B), e_r = normals(train, 2 * B), e_f = normals(train, 2 * B);
      for (std::size_t i = 0; i < B; ++i) {
        const std::size_t k = train.below(N);
        real[2 * i] = data[2 * k];
        real[2 * i + 1] = data[2 * k + 1];
        t_d[i] = train.uniform(cfg.t_min, cfg.t_max);
      }
      // Real and fake share the same noise level per sample.
      const auto f_real = tap_features(teacher, noised(real, e_r, t_d), t_d, cfg.taps);
      const auto f_fake = tap_features(teacher, noised(x0_new, e_f, t_d), t_d, cfg.taps);
      const auto disc = [&](const std::vector<double>& p) {
        return loss_adv_discriminator(head_scores(heads, p.data(), f_real, B), head_scores(heads, p.data(), f_fake, B))
            .value;
      };
      descend(head_params, finite_difference_gradient(disc, head_params, cfg.fd_step, threads), cfg.lr,
              "discriminator");
    }
    if (cfg.switches.dm) {
      std::vector<double> t_f(B);
      for (auto& t : t_f) t = train.uniform(cfg.t_min, cfg.t_max);
      const auto xt = noised(x0_new, normals(train, 2 * B), t_f);
      const Dims d{std::int64_t(B), 2};
      const Tensor target = as_tensor(x0_new, d);
      const auto fake_obj = [&](const std::vector<double>& p) {
        return loss_fake_score(as_tensor(predict_x0(fake, p.data(), xt, t_f), d), target).value;
      };
      descend(fake.params, finite_difference_gradient(fake_obj, fake.params, cfg.fd_step, threads), cfg.lr,
              "fake score");
    }

    TracePoint tp{it, loss_now, std::nullopt};
    if (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0) tp.distance = distance(student);
    report.trace.push_back(tp);
  }

  report.final_distance = distance(student);
  require(std::isfinite(report.final_distance), "toy_distill", "non-finite final distance");
  report.teacher_checksum_after = teacher.checksum();
  return report;
}

std::string ToyDistillReport::to_json() const {
  nlohmann::ordered_json j;
  j["baseline_distance"] = baseline_distance;
  j["final_distance"] = final_distance;
  j["ratio"] = baseline_distance > 0.0 ? final_distance / baseline_distance : 0.0;
  j["iterations"] = iterations;
  j["student_params"] = student_params;
  j["switches"] = {{"reg", switches.reg}, {"adv", switches.adv}, {"dm", switches.dm}};
  j["seeds"] = {{"data", seeds.data}, {"teacher", seeds.teacher}, {"train", seeds.train}, {"eval", seeds.eval}};
  j["teacher_checksum_before"] = teacher_checksum_before;
  j["teacher_checksum_after"] = teacher_checksum_after;
  auto& tr = j["trace"] = nlohmann::ordered_json::array();
  for (const auto& p : trace) {
    nlohmann::ordered_json e;
    e["iteration"] = p.iteration;
    e["student_loss"] = p.student_loss;
    if (p.distance) e["distance"] = *p.distance;
    tr.push_back(std::move(e));
  }
  return j.dump(2);
}

}  // namespace mi2v::toy
