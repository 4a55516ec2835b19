#pragma once

#include "multidiff/codec.hpp"
#include "multidiff/config.hpp"
#include "multidiff/eval.hpp"
#include "multidiff/sampler.hpp"
#include "multidiff/trainer.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace multidiff {

/// Overrides shared by the sampling commands; unset fields fall back to the config.
struct SampleOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<Solver> solver;
  std::optional<std::pair<int, int>> grid;  // rows, cols
};

/// "NxM" -> (N, M).
std::pair<int, int> parse_grid(const std::string& text);

/// Caps Eigen/OpenMP worker threads from MULTIDIFF_NUM_THREADS when set.
void apply_thread_limit();

/// Writes `<out>/config.txt` with the effective configuration.
void write_effective_config(const RunConfig& config, const std::filesystem::path& out_dir);

/// Writes `<out>/<modality>/<seed>.png` for every scene and `<out>/split.csv`.
void run_dataset_gen(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

/// Per-modality images of the training split: synthesized scenes, or the paired
/// directory at data.root (restricted to its split.csv train ids when present).
std::vector<Matrix> load_training_images(const RunConfig& config, std::ostream& log);

/// Trains the codec (if learned) and the denoiser; writes `<out>/model.ckpt` and
/// `<out>/train_log.csv`.
void run_train(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

/// Model weights and codec restored from a training checkpoint, checked against the config.
struct LoadedModel {
  Denoiser<float> model;
  Codec codec;
};

/// Raises ValidationError listing every tensor whose shape differs from the config's model.
LoadedModel load_model(const RunConfig& config, const std::filesystem::path& checkpoint);

/// Joint generation of all modalities; writes `<modality>_<seed>.png` (or numbered files)
/// and a manifest.
void run_sample(const RunConfig& config, const std::filesystem::path& checkpoint, const SampleOverrides& overrides,
                const std::filesystem::path& out_dir, std::ostream& log);

/// Conditional generation of `targets` given input images; an empty target list means
/// every modality that is not an input.
void run_translate(const RunConfig& config, const std::filesystem::path& checkpoint,
                   const std::map<std::string, std::filesystem::path>& inputs, std::vector<std::string> targets,
                   const SampleOverrides& overrides, const std::filesystem::path& out_dir, std::ostream& log);

/// Loops through `cycle` starting from an image of cycle[0]; writes one PNG per hop and
/// `drift.csv`.
void run_loop(const RunConfig& config, const std::filesystem::path& checkpoint, const std::filesystem::path& input,
              const std::vector<std::string>& cycle, int hops, const SampleOverrides& overrides,
              const std::filesystem::path& out_dir, std::ostream& log);

/// Metrics between two directories of PNGs; writes `report.csv` and `report.txt`.
MetricReport run_evaluate(const RunConfig& config, const std::filesystem::path& real_dir,
                          const std::filesystem::path& gen_dir, const std::filesystem::path& out_dir,
                          std::ostream& log);

}  // namespace multidiff
