#pragma once

#include "multidiff/image_io.hpp"
#include "multidiff/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace multidiff {

/// Synthetic modality names in canonical model order.
inline const std::array<std::string, 4> kSynthModalities = {"dem_hillshade", "optical", "radar_like",
                                                           "optical_hazy"};

struct SceneParams {
  double spectral_exponent = 2.2;  // power spectrum ~ 1 / f^exponent
  double relief = 0.35;            // vertical exaggeration relative to image size
  double light_azimuth_deg = 315.0;
  double light_altitude_deg = 45.0;
  double radar_base = 0.15;
  double radar_gain = 0.85;
  double radar_gamma = 0.5;
  double speckle_std = 0.25;
  double haze = 0.35;

  friend bool operator==(const SceneParams&, const SceneParams&) = default;
};

/// A procedurally generated terrain tile and its co-registered renderings.
struct Scene {
  std::uint64_t seed = 0;
  int size = 0;
  std::vector<double> heightfield;    // size x size, row-major, in [0, 1]
  std::map<std::string, Image> modalities;
};

/// Fractal heightfield by filtering white noise with a power-law spectrum, min-max normalized.
std::vector<double> synthesize_heightfield(std::uint64_t seed, int size, const SceneParams& params = {});

/// Renders all modalities from a heightfield. Speckle is drawn from the seed's own stream.
Scene render_scene(std::uint64_t seed, int size, std::vector<double> heightfield,
                   const SceneParams& params = {});

/// size must be a power of two >= 8.
Scene generate_scene(std::uint64_t seed, int size, const SceneParams& params = {});

/// Lambert hillshade of a heightfield under the configured light.
std::vector<double> hillshade(const std::vector<double>& heightfield, int size, const SceneParams& params);

struct DatasetSplit {
  std::vector<std::uint64_t> train_seeds;
  std::vector<std::uint64_t> test_seeds;
  double split_fraction = 0.95;
};

/// Seeds 0..num_scenes-1 shuffled by master_seed; the first round(fraction * n) train.
DatasetSplit make_dataset(std::int64_t num_scenes, double split_fraction, std::uint64_t master_seed);

/// Writes "scene_id,split" lines.
void write_split_manifest(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit read_split_manifest(const std::filesystem::path& path);

struct PairedDataset {
  std::vector<std::string> scene_ids;
  // modality name -> one image per scene id
  std::map<std::string, std::vector<Image>> images;
  int skipped_missing = 0;           // names absent from at least one modality
  std::vector<std::string> errors;   // undecodable files
};

/// Loads <root>/<modality>/<scene>.png for scenes present in every modality directory:
/// centred square crop of `crop` pixels (0 = largest square), area resize to `size`,
/// converted to `channels`.
PairedDataset load_paired_directory(const std::filesystem::path& root,
                                    const std::vector<std::string>& modality_subdirs, int size,
                                    int channels, int crop = 0);

}  // namespace multidiff
