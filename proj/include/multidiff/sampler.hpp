#pragma once

#include "multidiff/backbone.hpp"
#include "multidiff/schedule.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace multidiff {

enum class Solver { ancestral, dpm_solver_pp_2m };

const char* to_string(Solver solver);
Solver parse_solver(const std::string& name);

/// Anything that predicts per-modality noise for a batch of chains sharing one
/// timestep per modality.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  [[nodiscard]] virtual int num_modalities() const = 0;
  [[nodiscard]] virtual int latent_size() const = 0;
  /// x[m] is (B x D); timesteps holds one value per modality.
  [[nodiscard]] virtual std::vector<Matrix> predict(std::span<const Matrix> x,
                                                    std::span<const int> timesteps) const = 0;
};

/// Adapts a Denoiser, evaluating large batches in chunks.
class ModelPredictor final : public NoisePredictor {
 public:
  explicit ModelPredictor(const Denoiser<float>& model, int chunk = 64) : model_(model), chunk_(chunk) {}
  [[nodiscard]] int num_modalities() const override { return model_.config().num_modalities; }
  [[nodiscard]] int latent_size() const override { return model_.config().latent_shape.size(); }
  [[nodiscard]] std::vector<Matrix> predict(std::span<const Matrix> x,
                                            std::span<const int> timesteps) const override;

 private:
  const Denoiser<float>& model_;
  int chunk_;
};

struct SamplingPlan {
  int num_samples = 1;
  // Conditioning set C: clean latents (num_samples x D) pinned at t = 0.
  std::map<int, Matrix> conditions;
  int num_steps = 50;
  Solver solver = Solver::dpm_solver_pp_2m;
  std::uint64_t seed = 0;
  // Optional partial traversal: a generated modality listed here starts from its
  // init latent diffused to (the grid point at or below) the given timestep.
  std::map<int, int> start_timesteps;
  std::map<int, Matrix> init_latents;
};

/// Uniformly spaced (rounded) strictly decreasing timesteps from T down to 0.
std::vector<int> timestep_subsequence(int num_timesteps, int num_steps);

/// Generation set G: every modality not in the conditioning set, ascending.
std::vector<int> generation_set(const SamplingPlan& plan, int num_modalities);

/// Second-order multistep DPM-Solver++ on data predictions in half-log-SNR time.
/// Keeps the previous x0 prediction; the first step and the final step to t = 0 are
/// first order.
class DpmSolverPP2M {
 public:
  explicit DpmSolverPP2M(const NoiseSchedule& schedule) : schedule_(schedule) {}

  Matrix step(const Matrix& x, const Matrix& eps_hat, int t_cur, int t_next);
  void reset() { prev_x0_.reset(); }

 private:
  const NoiseSchedule& schedule_;
  std::optional<Matrix> prev_x0_;
  double prev_lambda_ = 0.0;
};

/// Runs a plan with any conditioning set (including none). Returns all M modalities;
/// conditioning latents are returned unchanged.
std::vector<Matrix> run_sampler(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                                const SamplingPlan& plan);

/// Joint generation of every modality; the plan must have no conditions.
std::vector<Matrix> sample_joint(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                                 const SamplingPlan& plan);

/// Generates G given pinned clean latents for C (C non-empty, G non-empty).
std::vector<Matrix> sample_conditional(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                                       const SamplingPlan& plan);

struct LoopResult {
  std::vector<int> modalities;   // modality of each entry; entry 0 is the start latent
  std::vector<Matrix> latents;
};

/// Repeatedly conditions on the latest latent to generate the next modality in the cycle.
/// `base` supplies steps, solver, seed and sample count; its conditions are ignored.
LoopResult loop_translate(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                          const Matrix& start_latent, const std::vector<int>& modality_cycle,
                          int iterations, const SamplingPlan& base);

/// One value per hop: RMS distance between the hop's latent and the first latent of the
/// same modality in the loop (0 on a modality's first appearance).
std::vector<double> loop_drift(const LoopResult& loop);

}  // namespace multidiff
