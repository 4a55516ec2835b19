#include "multidiff/synthdata.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>

namespace multidiff {

namespace {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

struct Gradient {
  std::vector<double> dx, dy;
};

// Central differences (one-sided at the border) in units of height per pixel, scaled by relief.
Gradient gradient(const std::vector<double>& h, int n, double relief) {
  Gradient g{std::vector<double>(h.size()), std::vector<double>(h.size())};
  const double z = relief * n;
  auto at = [&](int y, int x) { return h[static_cast<std::size_t>(y * n + x)]; };
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const int x0 = std::max(0, x - 1), x1 = std::min(n - 1, x + 1);
      const int y0 = std::max(0, y - 1), y1 = std::min(n - 1, y + 1);
      const auto i = static_cast<std::size_t>(y * n + x);
      g.dx[i] = z * (at(y, x1) - at(y, x0)) / std::max(1, x1 - x0);
      g.dy[i] = z * (at(y1, x) - at(y0, x)) / std::max(1, y1 - y0);
    }
  return g;
}

std::array<double, 3> color_ramp(double h) {
  static constexpr std::array<std::array<double, 3>, 3> stops = {{
      {0.10, 0.30, 0.15},
      {0.55, 0.50, 0.30},
      {0.95, 0.95, 0.95},
  }};
  const double u = std::clamp(h, 0.0, 1.0) * 2.0;
  const int k = std::min(1, static_cast<int>(u));
  const double f = u - k;
  std::array<double, 3> c{};
  for (int i = 0; i < 3; ++i)
    c[static_cast<std::size_t>(i)] = (1.0 - f) * stops[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] +
                                     f * stops[static_cast<std::size_t>(k + 1)][static_cast<std::size_t>(i)];
  return c;
}

}  // namespace

std::vector<double> synthesize_heightfield(std::uint64_t seed, int size, const SceneParams& params) {
  if (size < 8 || !is_power_of_two(size))
    throw ValidationError("scene size must be a power of two >= 8, got " + std::to_string(size));
  const int n = size;
  const int nc = n / 2 + 1;
  std::unique_ptr<double, FftwFree> real(static_cast<double*>(fftw_malloc(sizeof(double) * n * n)));
  std::unique_ptr<fftw_complex, FftwFree> spec(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n * nc)));

  Rng rng(derive_seed(seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < n * n; ++i) real.get()[i] = normal(rng);

  fftw_plan fwd = fftw_plan_dft_r2c_2d(n, n, real.get(), spec.get(), FFTW_ESTIMATE);
  fftw_execute(fwd);
  fftw_destroy_plan(fwd);

  const double amplitude_exp = params.spectral_exponent / 2.0;
  for (int ky = 0; ky < n; ++ky) {
    const int fy = ky <= n / 2 ? ky : ky - n;
    for (int kx = 0; kx < nc; ++kx) {
      const double f = std::hypot(static_cast<double>(fy), static_cast<double>(kx));
      const double gain = f == 0.0 ? 0.0 : std::pow(f, -amplitude_exp);
      spec.get()[ky * nc + kx][0] *= gain;
      spec.get()[ky * nc + kx][1] *= gain;
    }
  }

  fftw_plan inv = fftw_plan_dft_c2r_2d(n, n, spec.get(), real.get(), FFTW_ESTIMATE);
  fftw_execute(inv);
  fftw_destroy_plan(inv);

  std::vector<double> h(real.get(), real.get() + n * n);
  const auto [lo, hi] = std::minmax_element(h.begin(), h.end());
  const double min = *lo;
  const double range = *hi - *lo;
  for (double& v : h) v = range > 0.0 ? (v - min) / range : 0.0;
  return h;
}

std::vector<double> hillshade(const std::vector<double>& heightfield, int size, const SceneParams& params) {
  const auto g = gradient(heightfield, size, params.relief);
  const double az = params.light_azimuth_deg * std::numbers::pi / 180.0;
  const double alt = params.light_altitude_deg * std::numbers::pi / 180.0;
  // x east, y south (image rows), z up; azimuth clockwise from north.
  const double lx = std::cos(alt) * std::sin(az);
  const double ly = -std::cos(alt) * std::cos(az);
  const double lz = std::sin(alt);
  std::vector<double> shade(heightfield.size());
  for (std::size_t i = 0; i < shade.size(); ++i) {
    const double nx = -g.dx[i], ny = -g.dy[i], nz = 1.0;
    const double norm = std::sqrt(nx * nx + ny * ny + nz * nz);
    shade[i] = std::max(0.0, (nx * lx + ny * ly + nz * lz) / norm);
  }
  return shade;
}

Scene render_scene(std::uint64_t seed, int size, std::vector<double> heightfield, const SceneParams& params) {
  if (static_cast<int>(heightfield.size()) != size * size)
    throw ValidationError("render_scene: heightfield does not match size");
  const int n = size;
  Scene scene;
  scene.seed = seed;
  scene.size = size;

  const auto shade = hillshade(heightfield, n, params);
  const auto g = gradient(heightfield, n, params.relief);

  Image dem(Shape3{1, n, n});
  Image optical(Shape3{3, n, n});
  Image radar(Shape3{1, n, n});
  Rng speckle_rng(derive_seed(seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const auto i = static_cast<std::size_t>(y * n + x);
      dem.at(0, y, x) = static_cast<float>(shade[i]);

      const auto rgb = color_ramp(heightfield[i]);
      const double light = 0.35 + 0.65 * shade[i];
      for (int c = 0; c < 3; ++c)
        optical.at(c, y, x) = static_cast<float>(std::clamp(rgb[static_cast<std::size_t>(c)] * light, 0.0, 1.0));

      const double slope = std::min(1.0, std::hypot(g.dx[i], g.dy[i]));
      const double backscatter = params.radar_base + params.radar_gain * std::pow(slope, params.radar_gamma);
      const double speckle = std::max(0.0, 1.0 + params.speckle_std * normal(speckle_rng));
      radar.at(0, y, x) = static_cast<float>(std::clamp(backscatter * speckle, 0.0, 1.0));
    }

  // Haze: blend toward white, then a 3x3 box blur with clamped borders.
  Image hazy(Shape3{3, n, n});
  const auto keep = static_cast<float>(1.0 - params.haze);
  const auto veil = static_cast<float>(params.haze);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        float acc = 0.0f;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            acc += optical.at(c, std::clamp(y + dy, 0, n - 1), std::clamp(x + dx, 0, n - 1));
        hazy.at(c, y, x) = keep * (acc / 9.0f) + veil;
      }

  scene.heightfield = std::move(heightfield);
  scene.modalities["dem_hillshade"] = std::move(dem);
  scene.modalities["optical"] = std::move(optical);
  scene.modalities["radar_like"] = std::move(radar);
  scene.modalities["optical_hazy"] = std::move(hazy);
  return scene;
}

Scene generate_scene(std::uint64_t seed, int size, const SceneParams& params) {
  return render_scene(seed, size, synthesize_heightfield(seed, size, params), params);
}

DatasetSplit make_dataset(std::int64_t num_scenes, double split_fraction, std::uint64_t master_seed) {
  if (num_scenes < 2) throw ValidationError("make_dataset: need at least two scenes");
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw ValidationError("make_dataset: split fraction must be in (0, 1)");
  const auto n_train = static_cast<std::int64_t>(std::llround(split_fraction * static_cast<double>(num_scenes)));
  if (n_train < 1 || n_train >= num_scenes)
    throw ValidationError("make_dataset: split leaves one side empty");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(num_scenes));
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;
  Rng rng(master_seed);
  std::shuffle(seeds.begin(), seeds.end(), rng);
  DatasetSplit split;
  split.split_fraction = split_fraction;
  split.train_seeds.assign(seeds.begin(), seeds.begin() + n_train);
  split.test_seeds.assign(seeds.begin() + n_train, seeds.end());
  return split;
}

void write_split_manifest(const DatasetSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write split manifest " + path.string());
  for (auto s : split.train_seeds) out << s << ",train\n";
  for (auto s : split.test_seeds) out << s << ",test\n";
}

DatasetSplit read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read split manifest " + path.string());
  DatasetSplit split;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ValidationError("split manifest line " + std::to_string(line_no) + ": expected scene_id,split");
    const auto id = std::stoull(line.substr(0, comma));
    const auto which = line.substr(comma + 1);
    if (which == "train") split.train_seeds.push_back(id);
    else if (which == "test") split.test_seeds.push_back(id);
    else throw ValidationError("split manifest line " + std::to_string(line_no) + ": unknown split " + which);
  }
  const auto total = split.train_seeds.size() + split.test_seeds.size();
  if (total > 0) split.split_fraction = static_cast<double>(split.train_seeds.size()) / static_cast<double>(total);
  return split;
}

PairedDataset load_paired_directory(const std::filesystem::path& root,
                                    const std::vector<std::string>& modality_subdirs, int size, int channels,
                                    int crop) {
  namespace fs = std::filesystem;
  if (modality_subdirs.empty()) throw ValidationError("load_paired_directory: no modalities given");
  std::vector<std::set<std::string>> present;
  std::set<std::string> all;
  for (const auto& sub : modality_subdirs) {
    const fs::path dir = root / sub;
    if (!fs::is_directory(dir)) throw ValidationError("missing modality directory " + dir.string());
    std::set<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
      names.insert(entry.path().stem().string());
    }
    all.insert(names.begin(), names.end());
    present.push_back(std::move(names));
  }

  PairedDataset out;
  for (const auto& sub : modality_subdirs) out.images[sub];
  for (const auto& name : all) {
    bool complete = true;
    for (const auto& names : present) complete &= names.contains(name);
    if (!complete) {
      ++out.skipped_missing;
      continue;
    }
    std::vector<Image> decoded;
    try {
      for (const auto& sub : modality_subdirs) {
        Image img = read_png(root / sub / (name + ".png"));
        img = center_crop(img, crop > 0 ? std::min({crop, img.shape.height, img.shape.width}) : 0);
        img = resize_area(img, size, size);
        decoded.push_back(to_channels(img, channels));
      }
    } catch (const ImageIoError& e) {
      out.errors.push_back(e.what());
      continue;
    }
    out.scene_ids.push_back(name);
    for (std::size_t i = 0; i < modality_subdirs.size(); ++i)
      out.images[modality_subdirs[i]].push_back(std::move(decoded[i]));
  }
  return out;
}

}  // namespace multidiff
