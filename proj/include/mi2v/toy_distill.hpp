#pragma once

// Desk-scale distillation experiment on 2-D point clouds.
//
// Teacher, student and fake-score model are the same small MLP family mapping
// (x, y, t) to a 2-D velocity. The teacher is pretrained by flow matching on a
// fixed Gaussian-mixture set and then frozen. The student starts as a copy of
// the teacher and learns to jump from noise to the teacher's multi-step result
// in one step.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mi2v/rng.hpp"

namespace mi2v::toy {

// (x, y, t) -> tanh(hidden) -> tanh(hidden) -> (vx, vy), double precision.
struct Mlp {
  int hidden = 12;
  // w1 (3 x H), b1 (H), w2 (H x H), b2 (H), w3 (H x 2), b3 (2)
  std::vector<double> params;

  static std::size_t param_count(int hidden) { return std::size_t(3 * hidden + hidden + hidden * hidden + hidden + 2 * hidden + 2); }
  static Mlp init(int hidden, Rng& rng);

  // Velocity for one point. `h1` / `h2` receive the post-tanh activations.
  void forward(const double* p, double x, double y, double t, double out[2], double* h1 = nullptr,
               double* h2 = nullptr) const;
  // Points are (n, 2) row-major; `t` has one entry per point.
  std::vector<double> velocity(const double* p, std::span<const double> pts, std::span<const double> t) const;
  std::vector<double> velocity(std::span<const double> pts, std::span<const double> t) const {
    return velocity(params.data(), pts, t);
  }
  std::uint64_t checksum() const;
};

// Scalar head on one tapped feature vector: width -> hidden (leaky relu) -> 1.
struct Head {
  int width = 12;
  int hidden = 8;
  std::vector<double> params;

  static std::size_t param_count(int width, int hidden) { return std::size_t(width * hidden + hidden + hidden + 1); }
  static Head init(int width, int hidden, Rng& rng);
  double score(const double* p, const double* feature) const;
};

// n points drawn from four isotropic Gaussians centred at (+-1.5, +-1.5).
std::vector<double> mixture_dataset(int n, std::uint64_t seed);

struct PretrainConfig {
  int hidden = 12;
  int iterations = 3000;
  int batch = 128;
  double lr = 5e-3;
  std::uint64_t seed = 2;
};

// Flow matching with Adam: target velocity eps - x0 at z = (1-t) x0 + t eps.
Mlp pretrain_teacher(std::span<const double> data, const PretrainConfig& config);

// Euler integration of the model from t = 1 to 0.
std::vector<double> sample_multistep(const Mlp& model, std::span<const double> noise, int steps);

// Average over `projections` seeded directions of the 1-D W1 distance between
// equally sized point sets.
double sliced_wasserstein(std::span<const double> a, std::span<const double> b, int projections,
                          std::uint64_t seed);

struct LossSwitches {
  bool reg = true;
  bool adv = true;
  bool dm = true;
  bool any() const { return reg || adv || dm; }
};

struct Seeds {
  std::uint64_t data = 1;
  std::uint64_t teacher = 2;
  std::uint64_t train = 3;
  std::uint64_t eval = 4;
};

struct ToyDistillConfig {
  int iterations = 400;
  int hidden = 12;
  int batch = 64;
  double lr = 1e-2;
  double fd_step = 1e-3;
  double w_reg = 1.0;
  double w_adv = 0.05;
  double w_dm = 0.25;
  int teacher_steps = 20;
  int pretrain_iterations = 3000;
  int dataset_size = 4096;
  int eval_samples = 1024;
  int projections = 64;
  // Distance is recorded in the trace every this many iterations (0: never).
  int eval_every = 50;
  double t_min = 0.02;
  double t_max = 0.98;
  // Teacher hidden layers feeding discriminator heads (0 or 1).
  std::vector<int> taps{0, 1};
  int disc_hidden = 8;
  LossSwitches switches;
  Seeds seeds;

  void validate() const;
};

struct TracePoint {
  int iteration = 0;
  double student_loss = 0.0;
  std::optional<double> distance;
};

struct ToyDistillReport {
  double baseline_distance = 0.0;
  double final_distance = 0.0;
  std::vector<TracePoint> trace;
  LossSwitches switches;
  Seeds seeds;
  int iterations = 0;
  std::size_t student_params = 0;
  std::uint64_t teacher_checksum_before = 0;
  std::uint64_t teacher_checksum_after = 0;

  std::string to_json() const;
};

ToyDistillReport toy_distill_run(const ToyDistillConfig& config);

// Worker count for finite-difference probes: MI2V_THREADS if set, else 1.
int worker_threads();

// Central differences of f at p, one slot per coordinate, computed over up to
// `threads` workers. The result does not depend on the worker count.
std::vector<double> finite_difference_gradient(const std::function<double(const std::vector<double>&)>& f,
                                               const std::vector<double>& p, double step, int threads);

}  // namespace mi2v::toy
