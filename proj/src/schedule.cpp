#include "multidiff/schedule.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace multidiff {

std::string to_string(const Shape3& shape) {
  return std::to_string(shape.channels) + "x" + std::to_string(shape.height) + "x" +
         std::to_string(shape.width);
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas, ReverseVariance variance)
    : betas_(std::move(betas)), variance_(variance) {
  if (betas_.empty()) throw ValidationError("noise schedule needs at least one step");
  alphas_.reserve(betas_.size());
  alpha_bars_.reserve(betas_.size() + 1);
  alpha_bars_.push_back(1.0);
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) throw ValidationError("beta outside (0, 1): " + std::to_string(b));
    alphas_.push_back(1.0 - b);
    alpha_bars_.push_back(alpha_bars_.back() * (1.0 - b));
  }
}

double NoiseSchedule::lambda(int t) const {
  check_timestep(t);
  if (t == 0) return std::numeric_limits<double>::infinity();
  const double ab = alpha_bar(t);
  return 0.5 * (std::log(ab) - std::log1p(-ab));
}

double NoiseSchedule::reverse_step_variance(int t, int s) const {
  const double alpha_eff = alpha_bar(t) / alpha_bar(s);
  const double beta_eff = 1.0 - alpha_eff;
  if (variance_ == ReverseVariance::beta) return beta_eff;
  return beta_eff * (1.0 - alpha_bar(s)) / (1.0 - alpha_bar(t));
}

void NoiseSchedule::check_timestep(int t) const {
  if (t < 0 || t > num_steps()) {
    throw ValidationError("timestep " + std::to_string(t) + " outside [0, " +
                          std::to_string(num_steps()) + "]");
  }
}

NoiseSchedule make_linear_schedule(int num_steps, double beta_min, double beta_max,
                                   ReverseVariance variance) {
  if (num_steps < 1) throw ValidationError("schedule length must be positive");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ValidationError("linear schedule requires 0 < beta_min <= beta_max < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(num_steps));
  for (int t = 0; t < num_steps; ++t) {
    const double frac = num_steps > 1 ? static_cast<double>(t) / (num_steps - 1) : 0.0;
    betas[static_cast<std::size_t>(t)] = beta_min + (beta_max - beta_min) * frac;
  }
  return NoiseSchedule(std::move(betas), variance);
}

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ValidationError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                          std::to_string(b) + ")");
  }
}

}  // namespace

void forward_diffuse(std::span<const float> x0, std::span<const float> eps, int t,
                     const NoiseSchedule& schedule, std::span<float> out) {
  require_same_size(x0.size(), eps.size(), "forward_diffuse");
  require_same_size(x0.size(), out.size(), "forward_diffuse");
  schedule.check_timestep(t);
  if (t == 0) {
    std::copy(x0.begin(), x0.end(), out.begin());
    return;
  }
  const double ab = schedule.alpha_bar(t);
  const auto signal = static_cast<float>(std::sqrt(ab));
  const auto noise = static_cast<float>(std::sqrt(1.0 - ab));
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = signal * x0[i] + noise * eps[i];
}

std::vector<float> forward_diffuse(std::span<const float> x0, std::span<const float> eps, int t,
                                   const NoiseSchedule& schedule) {
  std::vector<float> out(x0.size());
  forward_diffuse(x0, eps, t, schedule, out);
  return out;
}

void predict_x0_from_eps(std::span<const float> x_t, std::span<const float> eps_hat, int t,
                         const NoiseSchedule& schedule, std::span<float> out) {
  require_same_size(x_t.size(), eps_hat.size(), "predict_x0_from_eps");
  require_same_size(x_t.size(), out.size(), "predict_x0_from_eps");
  schedule.check_timestep(t);
  if (t == 0) throw ValidationError("predict_x0_from_eps: t = 0 is already clean");
  const double ab = schedule.alpha_bar(t);
  const double inv_signal = 1.0 / std::sqrt(ab);
  const double noise = std::sqrt(1.0 - ab);
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    out[i] = static_cast<float>((x_t[i] - noise * eps_hat[i]) * inv_signal);
  }
}

std::vector<float> predict_x0_from_eps(std::span<const float> x_t, std::span<const float> eps_hat,
                                       int t, const NoiseSchedule& schedule) {
  std::vector<float> out(x_t.size());
  predict_x0_from_eps(x_t, eps_hat, t, schedule, out);
  return out;
}

void posterior_step(std::span<const float> x_t, std::span<const float> eps_hat, int t, int t_prev,
                    std::span<const float> z, const NoiseSchedule& schedule, std::span<float> out) {
  require_same_size(x_t.size(), eps_hat.size(), "posterior_step");
  require_same_size(x_t.size(), out.size(), "posterior_step");
  schedule.check_timestep(t);
  schedule.check_timestep(t_prev);
  if (t == 0) throw ValidationError("posterior_step: t = 0 has no predecessor");
  if (t_prev >= t) throw ValidationError("posterior_step: t_prev must be below t");
  const bool stochastic = t_prev > 0;
  if (stochastic) require_same_size(x_t.size(), z.size(), "posterior_step");

  const double alpha_eff = schedule.alpha_bar(t) / schedule.alpha_bar(t_prev);
  const double beta_eff = 1.0 - alpha_eff;
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha_eff);
  const double eps_coef = beta_eff / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double sigma = stochastic ? std::sqrt(schedule.reverse_step_variance(t, t_prev)) : 0.0;
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    double v = inv_sqrt_alpha * (x_t[i] - eps_coef * eps_hat[i]);
    if (stochastic) v += sigma * z[i];
    out[i] = static_cast<float>(v);
  }
}

std::vector<float> posterior_step(std::span<const float> x_t, std::span<const float> eps_hat, int t,
                                  std::span<const float> z, const NoiseSchedule& schedule) {
  std::vector<float> out(x_t.size());
  posterior_step(x_t, eps_hat, t, t - 1, z, schedule, out);
  return out;
}

}  // namespace multidiff
