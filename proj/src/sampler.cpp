#include "multidiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace multidiff {

const char* to_string(Solver solver) {
  return solver == Solver::ancestral ? "ancestral" : "dpmpp";
}

Solver parse_solver(const std::string& name) {
  if (name == "ancestral") return Solver::ancestral;
  if (name == "dpmpp" || name == "dpm_solver_pp_2m") return Solver::dpm_solver_pp_2m;
  throw ValidationError("unknown solver '" + name + "' (expected ancestral or dpmpp)");
}

std::vector<Matrix> ModelPredictor::predict(std::span<const Matrix> x, std::span<const int> timesteps) const {
  const int m_count = num_modalities();
  if (static_cast<int>(x.size()) != m_count || static_cast<int>(timesteps.size()) != m_count)
    throw ValidationError("predict: expected one input and timestep per modality");
  const Eigen::Index total = x.front().rows();
  std::vector<Matrix> out;
  for (int m = 0; m < m_count; ++m) out.emplace_back(total, x[static_cast<std::size_t>(m)].cols());
  for (Eigen::Index start = 0; start < total; start += chunk_) {
    const Eigen::Index n = std::min<Eigen::Index>(chunk_, total - start);
    std::vector<Matrix> part;
    for (const auto& xm : x) part.push_back(xm.middleRows(start, n));
    TimestepMatrix steps(n, m_count);
    for (int m = 0; m < m_count; ++m) steps.col(m).setConstant(timesteps[static_cast<std::size_t>(m)]);
    auto eps = model_.forward(part, steps);
    for (int m = 0; m < m_count; ++m)
      out[static_cast<std::size_t>(m)].middleRows(start, n) = eps[static_cast<std::size_t>(m)];
  }
  return out;
}

std::vector<int> timestep_subsequence(int num_timesteps, int num_steps) {
  if (num_timesteps < 1) throw ValidationError("timestep_subsequence: T must be positive");
  if (num_steps < 1 || num_steps > num_timesteps)
    throw ValidationError("timestep_subsequence: steps must be in [1, " + std::to_string(num_timesteps) + "]");
  std::vector<int> seq;
  seq.reserve(static_cast<std::size_t>(num_steps) + 1);
  for (int i = 0; i <= num_steps; ++i) {
    const double t = num_timesteps * (1.0 - static_cast<double>(i) / num_steps);
    seq.push_back(static_cast<int>(std::lround(t)));
  }
  // Rounding can only collide when steps approach T; spacing >= 1 keeps it strict.
  for (std::size_t i = 1; i < seq.size(); ++i)
    if (seq[i] >= seq[i - 1]) throw ValidationError("timestep_subsequence: not strictly decreasing");
  return seq;
}

std::vector<int> generation_set(const SamplingPlan& plan, int num_modalities) {
  std::vector<int> g;
  for (int m = 0; m < num_modalities; ++m)
    if (!plan.conditions.contains(m)) g.push_back(m);
  return g;
}

Matrix DpmSolverPP2M::step(const Matrix& x, const Matrix& eps_hat, int t_cur, int t_next) {
  if (t_next >= t_cur) throw ValidationError("dpm-solver++: timesteps must strictly decrease");
  if (t_cur < 1) throw ValidationError("dpm-solver++: cannot step from t = 0");
  const double ab_t = schedule_.alpha_bar(t_cur);
  const auto alpha_t = static_cast<float>(std::sqrt(ab_t));
  const auto sigma_t = static_cast<float>(std::sqrt(1.0 - ab_t));
  Matrix x0 = (x - sigma_t * eps_hat) / alpha_t;
  const double lambda_t = schedule_.lambda(t_cur);

  if (t_next == 0) {
    prev_x0_.reset();
    return x0;
  }
  const double ab_s = schedule_.alpha_bar(t_next);
  const double alpha_s = std::sqrt(ab_s);
  const double sigma_s = std::sqrt(1.0 - ab_s);
  const double h = schedule_.lambda(t_next) - lambda_t;

  Matrix d;
  if (prev_x0_) {
    const double r = (lambda_t - prev_lambda_) / h;
    const auto c = static_cast<float>(1.0 / (2.0 * r));
    d = (1.0f + c) * x0 - c * *prev_x0_;
  } else {
    d = x0;
  }
  Matrix next = static_cast<float>(sigma_s / sigma_t) * x - static_cast<float>(alpha_s * std::expm1(-h)) * d;
  prev_x0_ = std::move(x0);
  prev_lambda_ = lambda_t;
  return next;
}

namespace {

void validate_plan(const SamplingPlan& plan, int m_count, int latent_size, int num_timesteps) {
  if (plan.num_samples < 1) throw ValidationError("sampling plan: num_samples must be positive");
  for (const auto& [m, z] : plan.conditions) {
    if (m < 0 || m >= m_count) throw ValidationError("sampling plan: conditioning modality out of range");
    if (z.rows() != plan.num_samples || z.cols() != latent_size)
      throw ValidationError("sampling plan: conditioning latent for modality " + std::to_string(m) +
                            " has the wrong shape");
  }
  for (const auto& [m, s] : plan.start_timesteps) {
    if (m < 0 || m >= m_count || plan.conditions.contains(m))
      throw ValidationError("sampling plan: start timestep given for a non-generated modality");
    if (s < 1 || s > num_timesteps) throw ValidationError("sampling plan: start timestep out of range");
    auto it = plan.init_latents.find(m);
    if (it == plan.init_latents.end())
      throw ValidationError("sampling plan: partial traversal needs an init latent");
    if (it->second.rows() != plan.num_samples || it->second.cols() != latent_size)
      throw ValidationError("sampling plan: init latent has the wrong shape");
  }
}

}  // namespace

std::vector<Matrix> run_sampler(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                                const SamplingPlan& plan) {
  const int m_count = predictor.num_modalities();
  const int dim = predictor.latent_size();
  const int T = schedule.num_steps();
  validate_plan(plan, m_count, dim, T);
  const auto seq = timestep_subsequence(T, plan.num_steps);
  const auto gen = generation_set(plan, m_count);
  if (gen.empty()) throw ValidationError("nothing to generate: every modality is conditioned");

  Rng rng(plan.seed);
  std::vector<Matrix> x(static_cast<std::size_t>(m_count));
  std::vector<int> start(static_cast<std::size_t>(m_count), T);
  for (int m = 0; m < m_count; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    if (auto c = plan.conditions.find(m); c != plan.conditions.end()) {
      x[mi] = c->second;
      start[mi] = 0;
    } else {
      x[mi] = normal_matrix(plan.num_samples, dim, rng);
    }
  }
  for (const auto& [m, s] : plan.start_timesteps) {
    const auto mi = static_cast<std::size_t>(m);
    int snapped = 0;
    for (int t : seq)
      if (t <= s) {
        snapped = t;
        break;
      }
    start[mi] = snapped;
    const Matrix& init = plan.init_latents.at(m);
    Matrix noisy(init.rows(), init.cols());
    for (Eigen::Index b = 0; b < init.rows(); ++b) {
      const auto cols = static_cast<std::size_t>(init.cols());
      forward_diffuse(std::span<const float>(init.row(b).data(), cols),
                      std::span<const float>(x[mi].row(b).data(), cols), snapped, schedule,
                      std::span<float>(noisy.row(b).data(), cols));
    }
    x[mi] = std::move(noisy);
  }

  std::vector<DpmSolverPP2M> solvers(static_cast<std::size_t>(m_count), DpmSolverPP2M(schedule));
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    const int t = seq[i];
    const int s = seq[i + 1];
    std::vector<int> steps(static_cast<std::size_t>(m_count));
    std::vector<int> active;
    for (int m = 0; m < m_count; ++m) {
      const auto mi = static_cast<std::size_t>(m);
      if (start[mi] == 0) {
        steps[mi] = 0;
      } else if (t <= start[mi]) {
        steps[mi] = t;
        active.push_back(m);
      } else {
        steps[mi] = start[mi];
      }
    }
    if (active.empty()) continue;
    const auto eps = predictor.predict(x, steps);
    for (int m : active) {
      const auto mi = static_cast<std::size_t>(m);
      if (plan.solver == Solver::dpm_solver_pp_2m) {
        x[mi] = solvers[mi].step(x[mi], eps[mi], t, s);
        continue;
      }
      Matrix z;
      if (s > 0) z = normal_matrix(plan.num_samples, dim, rng);
      Matrix next(x[mi].rows(), x[mi].cols());
      for (Eigen::Index b = 0; b < next.rows(); ++b) {
        const auto cols = static_cast<std::size_t>(dim);
        posterior_step(std::span<const float>(x[mi].row(b).data(), cols),
                       std::span<const float>(eps[mi].row(b).data(), cols), t, s,
                       s > 0 ? std::span<const float>(z.row(b).data(), cols) : std::span<const float>(), schedule,
                       std::span<float>(next.row(b).data(), cols));
      }
      x[mi] = std::move(next);
    }
  }
  return x;
}

std::vector<Matrix> sample_joint(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                                 const SamplingPlan& plan) {
  if (!plan.conditions.empty()) throw ValidationError("sample_joint: plan must not condition on anything");
  return run_sampler(predictor, schedule, plan);
}

std::vector<Matrix> sample_conditional(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                                       const SamplingPlan& plan) {
  if (plan.conditions.empty()) throw ValidationError("sample_conditional: conditioning set is empty");
  return run_sampler(predictor, schedule, plan);
}

LoopResult loop_translate(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                          const Matrix& start_latent, const std::vector<int>& modality_cycle, int iterations,
                          const SamplingPlan& base) {
  const int m_count = predictor.num_modalities();
  if (modality_cycle.size() < 2) throw ValidationError("loop_translate: cycle needs at least two modalities");
  for (int m : modality_cycle)
    if (m < 0 || m >= m_count) throw ValidationError("loop_translate: invalid modality id " + std::to_string(m));
  if (iterations < 0) throw ValidationError("loop_translate: iterations must be non-negative");
  for (std::size_t i = 0; i < modality_cycle.size(); ++i)
    if (modality_cycle[i] == modality_cycle[(i + 1) % modality_cycle.size()])
      throw ValidationError("loop_translate: consecutive cycle entries must differ");

  LoopResult result;
  result.modalities.push_back(modality_cycle.front());
  result.latents.push_back(start_latent);
  for (int hop = 0; hop < iterations; ++hop) {
    const int from = modality_cycle[static_cast<std::size_t>(hop) % modality_cycle.size()];
    const int to = modality_cycle[static_cast<std::size_t>(hop + 1) % modality_cycle.size()];
    SamplingPlan plan;
    plan.num_samples = static_cast<int>(start_latent.rows());
    plan.num_steps = base.num_steps;
    plan.solver = base.solver;
    plan.seed = derive_seed(base.seed, static_cast<std::uint64_t>(hop));
    plan.conditions[from] = result.latents.back();
    auto out = sample_conditional(predictor, schedule, plan);
    result.modalities.push_back(to);
    result.latents.push_back(std::move(out[static_cast<std::size_t>(to)]));
  }
  return result;
}

std::vector<double> loop_drift(const LoopResult& loop) {
  std::vector<double> drift;
  std::map<int, const Matrix*> first;
  for (std::size_t i = 0; i < loop.latents.size(); ++i) {
    const Matrix& x = loop.latents[i];
    const auto [it, inserted] = first.emplace(loop.modalities[i], &x);
    if (i == 0) continue;
    const double sq = inserted ? 0.0 : (x - *it->second).cast<double>().squaredNorm();
    drift.push_back(std::sqrt(sq / static_cast<double>(x.size())));
  }
  return drift;
}

}  // namespace multidiff
