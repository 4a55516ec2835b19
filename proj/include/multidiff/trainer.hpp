#pragma once

#include "multidiff/backbone.hpp"
#include "multidiff/checkpoint.hpp"
#include "multidiff/schedule.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

namespace multidiff {

struct TrainConfig {
  int batch_size = 32;
  int total_steps = 2000;
  double base_lr = 1e-4;
  int warmup_steps = 100;
  double ema_decay = 0.9999;
  std::uint64_t seed = 0;
  double grad_clip_norm = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Reserved; only 1 is exercised.
  int grad_accumulation = 1;

  void validate() const;

  /// Batch 2048 for ~120k steps at lr 1e-4. Documented, never run here.
  static TrainConfig paper_scale();

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Model, EMA shadow, Adam moments, step counter and RNG stream of a training run.
struct TrainState {
  Denoiser<float> model;
  std::vector<float> ema;
  std::vector<float> adam_m;
  std::vector<float> adam_v;
  std::int64_t step = 0;
  Rng rng;
  // Extra tensors persisted alongside the model (for example codec weights).
  std::vector<NamedTensor> auxiliary;

  /// Fresh state: initialized parameters, EMA equal to the parameters, zero moments.
  static TrainState create(const ModelConfig& config, std::uint64_t seed);

  /// Copy of the model carrying the EMA weights.
  [[nodiscard]] Denoiser<float> ema_model() const;
};

/// Independent uniform draw from {0..T} for each of M modalities.
std::vector<int> sample_training_timesteps(int num_modalities, int num_timesteps, Rng& rng);

/// Per-step randomness: timesteps (B x M) and target noise per modality (B x D).
struct NoiseDraw {
  TimestepMatrix timesteps;
  std::vector<Matrix> noise;
};

NoiseDraw draw_training_noise(int batch, const ModelConfig& config, int num_timesteps, Rng& rng);

/// Mean squared noise-prediction error over all (sample, modality) pairs with t > 0,
/// normalized per element. Pairs with t = 0 contribute neither loss nor gradient.
template <typename T>
struct LossTerms {
  double loss = 0.0;
  std::int64_t counted_pairs = 0;
  std::vector<MatrixT<T>> grad_outputs;
};

template <typename T>
LossTerms<T> diffusion_loss(std::span<const MatrixT<T>> predictions, std::span<const MatrixT<T>> noise,
                            const TimestepMatrix& timesteps);

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  bool accepted = true;
};

/// One optimizer step on a batch (batch[m] is B x D clean latents of modality m).
/// A non-finite loss leaves the state untouched and returns accepted = false.
StepResult training_step(TrainState& state, std::span<const Matrix> batch, const TrainConfig& config,
                         const NoiseSchedule& schedule);
StepResult training_step(TrainState& state, std::span<const Matrix> batch, const TrainConfig& config,
                         const NoiseSchedule& schedule, const NoiseDraw& draw);

/// ema <- decay * ema + (1 - decay) * params.
void ema_update(std::span<const float> params, std::span<float> ema, double decay);

/// Decay used after `update` optimizer updates: min(decay, (1 + update) / (10 + update)), so
/// short runs do not keep a large share of the initial weights in the average.
double ema_decay_at_step(std::int64_t update, double decay);

/// Linear warmup to base_lr, then cosine decay to zero at total_steps.
double lr_at_step(std::int64_t step, const TrainConfig& config);

/// Clean latents for a set of scenes, one (num_scenes x D) matrix per modality.
struct LatentDataset {
  std::vector<Matrix> modalities;
  [[nodiscard]] int size() const {
    return modalities.empty() ? 0 : static_cast<int>(modalities.front().rows());
  }
};

/// Draws a uniformly random minibatch (with replacement) from the dataset.
std::vector<Matrix> sample_batch(const LatentDataset& data, int batch_size, Rng& rng);

/// Runs training until state.step reaches config.total_steps. Appends "step,loss,lr"
/// lines to `log` when given.
void train(TrainState& state, const LatentDataset& data, const TrainConfig& config,
           const NoiseSchedule& schedule, std::ostream* log = nullptr,
           const std::function<void(std::int64_t, const StepResult&)>& on_step = {});

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

/// Key/value form of a model config, as stored in checkpoint metadata.
std::map<std::string, std::string> model_config_to_meta(const ModelConfig& config);
ModelConfig model_config_from_meta(const std::map<std::string, std::string>& meta);

}  // namespace multidiff
