#pragma once

#include "multidiff/types.hpp"

#include <span>
#include <vector>

namespace multidiff {

enum class ReverseVariance {
  beta,            // sigma_t^2 = beta_t
  posterior_beta,  // sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t)
};

/// Discrete forward-process schedule. Index 0 of alpha_bars is clean data.
class NoiseSchedule {
 public:
  NoiseSchedule(std::vector<double> betas, ReverseVariance variance = ReverseVariance::beta);

  [[nodiscard]] int num_steps() const { return static_cast<int>(betas_.size()); }
  [[nodiscard]] const std::vector<double>& betas() const { return betas_; }
  [[nodiscard]] const std::vector<double>& alphas() const { return alphas_; }
  [[nodiscard]] const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  [[nodiscard]] ReverseVariance reverse_variance() const { return variance_; }

  /// beta_t / alpha_t for t in [1, T] (stored 0-based).
  [[nodiscard]] double beta(int t) const { return betas_[static_cast<std::size_t>(t - 1)]; }
  [[nodiscard]] double alpha(int t) const { return alphas_[static_cast<std::size_t>(t - 1)]; }
  [[nodiscard]] double alpha_bar(int t) const { return alpha_bars_[static_cast<std::size_t>(t)]; }

  /// Half log signal-to-noise ratio, lambda_t = 0.5 log(abar / (1 - abar)). +inf at t = 0.
  [[nodiscard]] double lambda(int t) const;

  /// Variance of the stochastic reverse step from t to s < t.
  [[nodiscard]] double reverse_step_variance(int t, int s) const;

  void check_timestep(int t) const;

 private:
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  ReverseVariance variance_;
};

NoiseSchedule make_linear_schedule(int num_steps, double beta_min = 1e-4, double beta_max = 0.02,
                                   ReverseVariance variance = ReverseVariance::beta);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. t = 0 copies x0.
void forward_diffuse(std::span<const float> x0, std::span<const float> eps, int t,
                     const NoiseSchedule& schedule, std::span<float> out);
std::vector<float> forward_diffuse(std::span<const float> x0, std::span<const float> eps, int t,
                                   const NoiseSchedule& schedule);

/// Inverts forward_diffuse given a noise estimate. Requires t >= 1.
void predict_x0_from_eps(std::span<const float> x_t, std::span<const float> eps_hat, int t,
                         const NoiseSchedule& schedule, std::span<float> out);
std::vector<float> predict_x0_from_eps(std::span<const float> x_t, std::span<const float> eps_hat,
                                       int t, const NoiseSchedule& schedule);

/// One ancestral reverse step from t to t_prev < t using the optimal-mean form with
/// the effective single-step alpha = abar_t / abar_{t_prev}. The noise draw z is ignored
/// when t_prev == 0.
void posterior_step(std::span<const float> x_t, std::span<const float> eps_hat, int t, int t_prev,
                    std::span<const float> z, const NoiseSchedule& schedule, std::span<float> out);

/// Single-step reverse update x_t -> x_{t-1}.
std::vector<float> posterior_step(std::span<const float> x_t, std::span<const float> eps_hat, int t,
                                  std::span<const float> z, const NoiseSchedule& schedule);

}  // namespace multidiff
