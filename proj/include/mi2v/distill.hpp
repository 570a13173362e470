#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "mi2v/tensor.hpp"

namespace mi2v {

// A scalar loss together with its gradient with respect to the first argument.
struct LossValue {
  double value = 0.0;
  Tensor grad;
};

// Velocity field v(x, t) of a flow model.
using VelocityField = std::function<Tensor(const Tensor& x, double t)>;

// Euler integration of dx/dt = v from t_start down to 0 over `steps` equal
// steps. The first `frozen_rows` rows of x (rows = leading extent of a rank-2
// state) are carried through untouched, which is how the reference frame is
// held during I2V sampling.
Tensor teacher_multistep(const VelocityField& teacher, const Tensor& x_t, double t_start, int steps,
                         std::int64_t frozen_rows = 0);

// mean((student - target)^2); grad = 2 (student - target) / n.
LossValue loss_regression(const Tensor& student_out, const Tensor& teacher_target);

// Discriminator scores are (samples, branches).
// -mean_samples sum_branches D; grad = -1 / samples everywhere.
LossValue loss_adv_generator(const Tensor& d_scores);

struct HingeLoss {
  double value = 0.0;
  Tensor grad_real, grad_fake;
};

// mean_samples sum_branches relu(1 - real) + relu(1 + fake). Subgradient 0 at
// the kinks.
HingeLoss loss_adv_discriminator(const Tensor& real_scores, const Tensor& fake_scores);

// g = s_fake - s_real.
Tensor dmd_gradient_field(const Tensor& s_real, const Tensor& s_fake);

// mean(g * x0_hat) with g held constant; grad = g / n.
LossValue dmd_surrogate(const Tensor& g, const Tensor& x0_hat);

// mean((f_pred - x0_hat)^2); grad with respect to f_pred.
LossValue loss_fake_score(const Tensor& f_pred, const Tensor& x0_hat);

// Score direction from a clean-sample prediction: (x0_pred - x_t) / t, with
// one t per row (leading extent).
Tensor score_from_prediction(const Tensor& x0_pred, const Tensor& x_t, std::span<const float> t);

}  // namespace mi2v
