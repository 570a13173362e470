#include "mi2v/distill.hpp"

#include <algorithm>

#include "mi2v/error.hpp"

namespace mi2v {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* where) {
  require(a.dims() == b.dims(), where, "shape mismatch " + to_string(a.dims()) + " vs " + to_string(b.dims()));
}

LossValue mean_squared(const Tensor& a, const Tensor& b, const char* where) {
  require_same(a, b, where);
  LossValue out{0.0, Tensor(a.dims())};
  if (a.size() == 0) return out;
  const double n = double(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = double(a[i]) - double(b[i]);
    out.value += r * r;
    out.grad[i] = static_cast<float>(2.0 * r / n);
  }
  out.value /= n;
  return out;
}

void require_scores(const Tensor& s, const char* where) {
  require(s.rank() == 2, where, "scores must be (samples, branches), got " + to_string(s.dims()));
  require(s.dim(1) >= 1, where, "no discriminator branches");
  require(s.dim(0) >= 1, where, "no samples");
}

}  // namespace

Tensor teacher_multistep(const VelocityField& teacher, const Tensor& x_t, double t_start, int steps,
                         std::int64_t frozen_rows) {
  constexpr const char* where = "teacher_multistep";
  require(steps >= 1, where, "steps must be at least 1");
  require(t_start > 0.0 && t_start <= 1.0, where, "t_start must lie in (0, 1]");
  require(frozen_rows >= 0 && (frozen_rows == 0 || (x_t.rank() >= 1 && frozen_rows <= x_t.dim(0))), where,
          "frozen rows exceed the state");
  const std::size_t keep = frozen_rows == 0 ? 0 : x_t.size() / x_t.dim(0) * frozen_rows;
  Tensor x = x_t;
  for (int k = 0; k < steps; ++k) {
    const double t = t_start * (1.0 - double(k) / steps);
    const double t_next = k + 1 == steps ? 0.0 : t_start * (1.0 - double(k + 1) / steps);
    const Tensor v = teacher(x, t);
    require_same(v, x, where);
    const float dt = static_cast<float>(t - t_next);
    for (std::size_t i = keep; i < x.size(); ++i) x[i] -= dt * v[i];
    require(x.all_finite(), where, "non-finite state at step " + std::to_string(k));
  }
  return x;
}

LossValue loss_regression(const Tensor& student_out, const Tensor& teacher_target) {
  return mean_squared(student_out, teacher_target, "loss_regression");
}

LossValue loss_adv_generator(const Tensor& d_scores) {
  constexpr const char* where = "loss_adv_generator";
  require_scores(d_scores, where);
  const double samples = double(d_scores.dim(0));
  double total = 0.0;
  for (float v : d_scores.values()) total += v;
  return {-total / samples, Tensor::filled(d_scores.dims(), static_cast<float>(-1.0 / samples))};
}

HingeLoss loss_adv_discriminator(const Tensor& real_scores, const Tensor& fake_scores) {
  constexpr const char* where = "loss_adv_discriminator";
  require_scores(real_scores, where);
  require_scores(fake_scores, where);
  require(real_scores.dim(1) == fake_scores.dim(1), where, "branch sets differ");
  HingeLoss out{0.0, Tensor(real_scores.dims()), Tensor(fake_scores.dims())};
  const double nr = double(real_scores.dim(0)), nf = double(fake_scores.dim(0));
  double real_sum = 0.0, fake_sum = 0.0;
  for (std::size_t i = 0; i < real_scores.size(); ++i) {
    const double m = 1.0 - double(real_scores[i]);
    if (m > 0.0) {
      real_sum += m;
      out.grad_real[i] = static_cast<float>(-1.0 / nr);
    }
  }
  for (std::size_t i = 0; i < fake_scores.size(); ++i) {
    const double m = 1.0 + double(fake_scores[i]);
    if (m > 0.0) {
      fake_sum += m;
      out.grad_fake[i] = static_cast<float>(1.0 / nf);
    }
  }
  out.value = real_sum / nr + fake_sum / nf;
  return out;
}

Tensor dmd_gradient_field(const Tensor& s_real, const Tensor& s_fake) {
  require_same(s_real, s_fake, "dmd_gradient_field");
  Tensor g(s_real.dims());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = s_fake[i] - s_real[i];
  return g;
}

LossValue dmd_surrogate(const Tensor& g, const Tensor& x0_hat) {
  require_same(g, x0_hat, "dmd_surrogate");
  LossValue out{0.0, Tensor(g.dims())};
  if (g.size() == 0) return out;
  const double n = double(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.value += double(g[i]) * double(x0_hat[i]);
    out.grad[i] = static_cast<float>(double(g[i]) / n);
  }
  out.value /= n;
  return out;
}

LossValue loss_fake_score(const Tensor& f_pred, const Tensor& x0_hat) {
  return mean_squared(f_pred, x0_hat, "loss_fake_score");
}

Tensor score_from_prediction(const Tensor& x0_pred, const Tensor& x_t, std::span<const float> t) {
  constexpr const char* where = "score_from_prediction";
  require_same(x0_pred, x_t, where);
  require(x_t.rank() >= 1 && static_cast<std::int64_t>(t.size()) == x_t.dim(0), where, "need one t per row");
  for (float ti : t) require(ti > 0.0f, where, "t must be positive");
  Tensor s(x_t.dims());
  const std::size_t row = t.empty() ? 0 : x_t.size() / t.size();
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = static_cast<float>((double(x0_pred[i]) - double(x_t[i])) / double(t[i / row]));
  return s;
}

}  // namespace mi2v
