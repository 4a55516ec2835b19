#pragma once

#include "multidiff/backbone.hpp"
#include "multidiff/codec.hpp"
#include "multidiff/eval.hpp"
#include "multidiff/sampler.hpp"
#include "multidiff/schedule.hpp"
#include "multidiff/synthdata.hpp"
#include "multidiff/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace multidiff {

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct ScheduleSection {
  int num_timesteps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  ReverseVariance variance = ReverseVariance::beta;

  [[nodiscard]] NoiseSchedule build() const;
  friend bool operator==(const ScheduleSection&, const ScheduleSection&) = default;
};

struct CodecSection {
  CodecKind kind = CodecKind::identity_pixel;
  int ae_steps = 3000;
  int ae_batch_size = 64;
  double ae_lr = 2e-3;
  double ae_kl_weight = 1e-4;
  std::uint64_t ae_seed = 0;

  [[nodiscard]] AutoencoderTrainConfig autoencoder() const;
  friend bool operator==(const CodecSection&, const CodecSection&) = default;
};

struct DataSection {
  // Empty root: scenes are synthesized on the fly.
  std::string root;
  std::vector<std::string> modalities{kSynthModalities.begin(), kSynthModalities.end()};
  int image_size = 16;
  int channels = 3;
  int crop = 0;
  std::int64_t num_scenes = 4096;
  double split_fraction = 0.95;
  std::uint64_t master_seed = 0;
  int scene_size = 16;
  SceneParams scene;

  friend bool operator==(const DataSection&, const DataSection&) = default;
};

struct SampleSection {
  int num_samples = 16;
  int num_steps = 50;
  Solver solver = Solver::dpm_solver_pp_2m;
  std::uint64_t seed = 0;
  bool use_ema = true;

  friend bool operator==(const SampleSection&, const SampleSection&) = default;
};

struct EvalSection {
  ExtractorKind extractor = ExtractorKind::patch_stats;
  std::uint64_t projection_seed = 0;
  int projection_dim = 64;
  int k = 3;
  int num_samples = 512;

  [[nodiscard]] FeatureExtractor feature_extractor() const { return {extractor, projection_seed, projection_dim}; }
  friend bool operator==(const EvalSection&, const EvalSection&) = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  ScheduleSection schedule;
  CodecSection codec;
  DataSection data;
  SampleSection sample;
  EvalSection eval;

  [[nodiscard]] Shape3 image_shape() const { return {data.channels, data.image_size, data.image_size}; }
  [[nodiscard]] Shape3 codec_latent_shape() const;
  /// Index of a modality name in data.modalities; throws on unknown names.
  [[nodiscard]] int modality_index(const std::string& name) const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses `section.key = value` lines; `#` starts a comment. Every key has a default,
/// so empty input is valid. Errors carry the origin and line number.
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");
RunConfig parse_config(const std::filesystem::path& path);

/// Every key with its effective value; parsing it reproduces the config.
std::string effective_config(const RunConfig& config);

/// FNV-1a over the effective config text, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace multidiff
