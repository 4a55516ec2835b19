#include "multidiff/commands.hpp"

#include "multidiff/image_io.hpp"
#include "multidiff/synthdata.hpp"

#include <Eigen/Core>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace multidiff {

namespace fs = std::filesystem;

namespace {

Matrix to_rows(const std::vector<Image>& images) {
  if (images.empty()) return {};
  const int d = images.front().shape.size();
  Matrix out(static_cast<Eigen::Index>(images.size()), d);
  for (std::size_t i = 0; i < images.size(); ++i)
    std::copy(images[i].data.begin(), images[i].data.end(), out.row(static_cast<Eigen::Index>(i)).data());
  return out;
}

Image row_image(const Matrix& rows, Eigen::Index r, const Shape3& shape) {
  Image img(shape);
  std::copy(rows.row(r).data(), rows.row(r).data() + shape.size(), img.data.begin());
  return img;
}

Image conform(const Image& raw, const RunConfig& config) {
  Image img = raw;
  if (img.shape.height != img.shape.width || config.data.crop > 0) {
    const int side = std::min(img.shape.height, img.shape.width);
    img = center_crop(img, config.data.crop > 0 ? std::min(config.data.crop, side) : 0);
  }
  if (img.shape.height != config.data.image_size)
    img = resize_area(img, config.data.image_size, config.data.image_size);
  return to_channels(img, config.data.channels);
}

Image synth_modality(const Scene& scene, const std::string& modality, const RunConfig& config) {
  return conform(scene.modalities.at(modality), config);
}

std::string shape_text(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

struct ResolvedSampling {
  std::uint64_t seed;
  int steps;
  Solver solver;
  int num_samples;
};

ResolvedSampling resolve(const RunConfig& config, const SampleOverrides& o, int default_samples) {
  ResolvedSampling r{o.seed.value_or(config.sample.seed), o.steps.value_or(config.sample.num_steps),
                     o.solver.value_or(config.sample.solver), default_samples};
  if (r.steps < 1 || r.steps > config.schedule.num_timesteps)
    throw ValidationError("--steps must be in [1, " + std::to_string(config.schedule.num_timesteps) + "]");
  if (o.grid) r.num_samples = o.grid->first * o.grid->second;
  return r;
}

// Writes each modality's decoded samples: one grid image, a single file, or numbered files.
std::vector<std::string> write_samples(const Matrix& images, const Shape3& shape, const std::string& modality,
                                       const ResolvedSampling& s, const SampleOverrides& o, const fs::path& out_dir) {
  std::vector<std::string> written;
  const std::string stem = modality + "_" + std::to_string(s.seed);
  if (o.grid) {
    std::vector<Image> cells;
    for (Eigen::Index r = 0; r < images.rows(); ++r) cells.push_back(row_image(images, r, shape));
    write_png(out_dir / (stem + ".png"), tile_grid(cells, o.grid->first, o.grid->second));
    written.push_back(stem + ".png");
  } else if (images.rows() == 1) {
    write_png(out_dir / (stem + ".png"), row_image(images, 0, shape));
    written.push_back(stem + ".png");
  } else {
    for (Eigen::Index r = 0; r < images.rows(); ++r) {
      const std::string name = stem + "_" + std::to_string(r) + ".png";
      write_png(out_dir / name, row_image(images, r, shape));
      written.push_back(name);
    }
  }
  return written;
}

void write_manifest(const fs::path& out_dir, const std::string& command, const RunConfig& config,
                    const ResolvedSampling& s, const fs::path& checkpoint,
                    const std::vector<std::pair<std::string, std::string>>& extra,
                    const std::vector<std::string>& outputs) {
  std::ofstream out(out_dir / "manifest.txt");
  if (!out) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  out << "command = " << command << '\n'
      << "config_hash = " << config_hash(config) << '\n'
      << "checkpoint = " << checkpoint.string() << '\n'
      << "seed = " << s.seed << '\n'
      << "solver = " << to_string(s.solver) << '\n'
      << "steps = " << s.steps << '\n'
      << "num_samples = " << s.num_samples << '\n';
  for (const auto& [k, v] : extra) out << k << " = " << v << '\n';
  for (const auto& name : outputs) out << "output = " << name << '\n';
}

Image read_input(const fs::path& path, const RunConfig& config) { return conform(read_png(path), config); }

std::vector<Image> read_png_dir(const fs::path& dir, const RunConfig& config) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Image> images;
  for (const auto& f : files) images.push_back(read_input(f, config));
  if (images.empty()) throw ValidationError("no PNG files in " + dir.string());
  return images;
}

}  // namespace

std::pair<int, int> parse_grid(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used_r = 0, used_c = 0;
    const int rows = std::stoi(text.substr(0, x), &used_r);
    const int cols = std::stoi(text.substr(x + 1), &used_c);
    if (used_r != x || used_c != text.size() - x - 1 || rows < 1 || cols < 1) throw std::invalid_argument(text);
    return {rows, cols};
  } catch (const std::logic_error&) {
    throw ValidationError("--grid expects NxM with positive N and M, got '" + text + "'");
  }
}

void apply_thread_limit() {
  const char* env = std::getenv("MULTIDIFF_NUM_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ValidationError("MULTIDIFF_NUM_THREADS must be a positive integer");
  Eigen::setNbThreads(static_cast<int>(n));
#ifdef _OPENMP
  omp_set_num_threads(static_cast<int>(n));
#endif
}

void write_effective_config(const RunConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "config.txt");
  if (!out) throw std::runtime_error("cannot write " + (out_dir / "config.txt").string());
  out << effective_config(config);
}

void run_dataset_gen(const RunConfig& config, const fs::path& out_dir, std::ostream& log) {
  if (!config.data.root.empty()) throw ValidationError("dataset-gen synthesizes scenes; unset data.root");
  write_effective_config(config, out_dir);
  for (const auto& m : config.data.modalities) fs::create_directories(out_dir / m);
  const auto split = make_dataset(config.data.num_scenes, config.data.split_fraction, config.data.master_seed);
  write_split_manifest(split, out_dir / "split.csv");
  for (std::int64_t seed = 0; seed < config.data.num_scenes; ++seed) {
    const Scene scene = generate_scene(static_cast<std::uint64_t>(seed), config.data.scene_size, config.data.scene);
    for (const auto& m : config.data.modalities)
      write_png(out_dir / m / (std::to_string(seed) + ".png"), synth_modality(scene, m, config));
  }
  log << "wrote " << config.data.num_scenes << " scenes (" << split.train_seeds.size() << " train, "
      << split.test_seeds.size() << " test) to " << out_dir.string() << '\n';
}

std::vector<Matrix> load_training_images(const RunConfig& config, std::ostream& log) {
  std::vector<std::vector<Image>> per_modality(config.data.modalities.size());
  if (config.data.root.empty()) {
    const auto split = make_dataset(config.data.num_scenes, config.data.split_fraction, config.data.master_seed);
    for (auto seed : split.train_seeds) {
      const Scene scene = generate_scene(seed, config.data.scene_size, config.data.scene);
      for (std::size_t m = 0; m < per_modality.size(); ++m)
        per_modality[m].push_back(synth_modality(scene, config.data.modalities[m], config));
    }
  } else {
    const fs::path root = config.data.root;
    auto paired = load_paired_directory(root, config.data.modalities, config.data.image_size, config.data.channels,
                                        config.data.crop);
    if (paired.skipped_missing > 0)
      log << "warning: skipped " << paired.skipped_missing << " scenes missing from some modality\n";
    for (const auto& e : paired.errors) log << "warning: " << e << '\n';
    std::set<std::string> keep;
    const bool has_split = fs::exists(root / "split.csv");
    if (has_split)
      for (auto id : read_split_manifest(root / "split.csv").train_seeds) keep.insert(std::to_string(id));
    for (std::size_t i = 0; i < paired.scene_ids.size(); ++i) {
      if (has_split && !keep.contains(paired.scene_ids[i])) continue;
      for (std::size_t m = 0; m < per_modality.size(); ++m)
        per_modality[m].push_back(std::move(paired.images[config.data.modalities[m]][i]));
    }
  }
  if (per_modality.front().empty()) throw ValidationError("no training scenes found");
  std::vector<Matrix> out;
  for (const auto& imgs : per_modality) out.push_back(to_rows(imgs));
  log << "loaded " << out.front().rows() << " training scenes\n";
  return out;
}

void run_train(const RunConfig& config, const fs::path& out_dir, std::ostream& log) {
  write_effective_config(config, out_dir);
  const auto images = load_training_images(config, log);

  Codec codec = Codec::identity(config.image_shape());
  if (config.codec.kind == CodecKind::tiny_autoencoder) {
    codec = Codec::tiny_autoencoder(config.image_shape(), config.codec.ae_seed);
    Eigen::Index total = 0;
    for (const auto& m : images) total += m.rows();
    Matrix pooled(total, config.image_shape().size());
    Eigen::Index at = 0;
    for (const auto& m : images) {
      pooled.middleRows(at, m.rows()) = m;
      at += m.rows();
    }
    const double mse = codec.train(pooled, config.codec.autoencoder(), &log);
    log << "autoencoder reconstruction mse " << mse << '\n';
  }

  LatentDataset data;
  for (const auto& m : images) data.modalities.push_back(codec.encode(m));

  TrainState state = TrainState::create(config.model, config.train.seed);
  state.auxiliary = codec.to_tensors();
  const NoiseSchedule schedule = config.schedule.build();
  std::ofstream train_log(out_dir / "train_log.csv");
  train_log << "step,loss,lr\n";
  train(state, data, config.train, schedule, &train_log, [&](std::int64_t step, const StepResult& r) {
    if (step % 100 == 0 || step == config.train.total_steps)
      log << "step " << step << " loss " << r.loss << " lr " << r.lr << '\n';
  });
  save_checkpoint(state, out_dir / "model.ckpt");
  log << "saved " << (out_dir / "model.ckpt").string() << '\n';
}

LoadedModel load_model(const RunConfig& config, const fs::path& checkpoint) {
  const CheckpointData raw = read_checkpoint_file(checkpoint);
  const Denoiser<float> expected(config.model);
  std::vector<std::string> problems;
  std::set<std::string> known;
  for (const auto& e : expected.parameters().entries()) {
    known.insert("params/" + e.name);
    const NamedTensor* t = raw.find("params/" + e.name);
    if (!t) problems.push_back(e.name + ": missing from checkpoint, config expects " + shape_text(e.shape));
    else if (t->shape != e.shape)
      problems.push_back(e.name + ": checkpoint " + shape_text(t->shape) + " vs config " + shape_text(e.shape));
  }
  for (const auto& t : raw.tensors)
    if (t.name.rfind("params/", 0) == 0 && !known.contains(t.name))
      problems.push_back(t.name.substr(7) + ": present in checkpoint, absent from config " + shape_text(t.shape));
  if (!problems.empty()) {
    std::string msg = "checkpoint " + checkpoint.string() + " is incompatible with the config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }

  TrainState state = load_checkpoint(checkpoint);
  ModelConfig stored = state.model.config();
  if (!(stored == config.model))
    throw ValidationError("checkpoint model settings differ from the config (check model.* and schedule.num_timesteps)");

  Codec codec = Codec::identity(config.image_shape());
  if (config.codec.kind == CodecKind::tiny_autoencoder) {
    codec = Codec::from_tensors(state.auxiliary);
    if (!(codec.spec().image_shape == config.image_shape()))
      throw ValidationError("checkpoint codec image shape " + to_string(codec.spec().image_shape) +
                            " differs from the config's " + to_string(config.image_shape()));
  }
  return {config.sample.use_ema ? state.ema_model() : std::move(state.model), std::move(codec)};
}

void run_sample(const RunConfig& config, const fs::path& checkpoint, const SampleOverrides& overrides,
                const fs::path& out_dir, std::ostream& log) {
  const auto s = resolve(config, overrides, config.sample.num_samples);
  const auto loaded = load_model(config, checkpoint);
  write_effective_config(config, out_dir);
  SamplingPlan plan;
  plan.num_samples = s.num_samples;
  plan.num_steps = s.steps;
  plan.solver = s.solver;
  plan.seed = s.seed;
  const ModelPredictor predictor(loaded.model);
  const auto latents = sample_joint(predictor, config.schedule.build(), plan);
  std::vector<std::string> outputs;
  for (std::size_t m = 0; m < latents.size(); ++m) {
    const auto written = write_samples(loaded.codec.decode(latents[m]), config.image_shape(),
                                       config.data.modalities[m], s, overrides, out_dir);
    outputs.insert(outputs.end(), written.begin(), written.end());
  }
  write_manifest(out_dir, "sample", config, s, checkpoint, {}, outputs);
  log << "wrote " << outputs.size() << " images to " << out_dir.string() << '\n';
}

void run_translate(const RunConfig& config, const fs::path& checkpoint,
                   const std::map<std::string, fs::path>& inputs, std::vector<std::string> targets,
                   const SampleOverrides& overrides, const fs::path& out_dir, std::ostream& log) {
  if (inputs.empty()) throw ValidationError("translate needs at least one input modality");
  std::set<int> input_ids;
  for (const auto& [name, _] : inputs) input_ids.insert(config.modality_index(name));
  if (targets.empty())
    for (const auto& m : config.data.modalities)
      if (!inputs.contains(m)) targets.push_back(m);
  if (targets.empty()) throw ValidationError("nothing to generate: inputs cover every modality");
  std::set<int> target_ids;
  for (const auto& t : targets) {
    const int id = config.modality_index(t);
    if (input_ids.contains(id)) throw ValidationError("modality '" + t + "' is both an input and a target");
    target_ids.insert(id);
  }

  const auto s = resolve(config, overrides, 1);
  const auto loaded = load_model(config, checkpoint);
  write_effective_config(config, out_dir);

  SamplingPlan plan;
  plan.num_samples = s.num_samples;
  plan.num_steps = s.steps;
  plan.solver = s.solver;
  plan.seed = s.seed;
  std::vector<std::pair<std::string, std::string>> extra;
  for (const auto& [name, path] : inputs) {
    const Matrix one = to_rows({read_input(path, config)});
    plan.conditions[config.modality_index(name)] = loaded.codec.encode(one).replicate(s.num_samples, 1);
    extra.emplace_back("input." + name, path.string());
  }
  const ModelPredictor predictor(loaded.model);
  const auto latents = sample_conditional(predictor, config.schedule.build(), plan);
  std::vector<std::string> outputs;
  for (int id : target_ids) {
    const auto written = write_samples(loaded.codec.decode(latents[static_cast<std::size_t>(id)]),
                                       config.image_shape(), config.data.modalities[static_cast<std::size_t>(id)],
                                       s, overrides, out_dir);
    outputs.insert(outputs.end(), written.begin(), written.end());
  }
  write_manifest(out_dir, "translate", config, s, checkpoint, extra, outputs);
  log << "wrote " << outputs.size() << " images to " << out_dir.string() << '\n';
}

void run_loop(const RunConfig& config, const fs::path& checkpoint, const fs::path& input,
              const std::vector<std::string>& cycle, int hops, const SampleOverrides& overrides,
              const fs::path& out_dir, std::ostream& log) {
  if (overrides.grid) throw ValidationError("loop writes one image per hop; --grid is not supported");
  std::vector<int> ids;
  for (const auto& name : cycle) ids.push_back(config.modality_index(name));
  const auto s = resolve(config, overrides, 1);
  const auto loaded = load_model(config, checkpoint);
  write_effective_config(config, out_dir);

  SamplingPlan base;
  base.num_steps = s.steps;
  base.solver = s.solver;
  base.seed = s.seed;
  const Matrix start = loaded.codec.encode(to_rows({read_input(input, config)}));
  const ModelPredictor predictor(loaded.model);
  const auto loop = loop_translate(predictor, config.schedule.build(), start, ids, hops, base);
  const auto drift = loop_drift(loop);

  std::vector<std::string> outputs;
  std::ofstream csv(out_dir / "drift.csv");
  csv << "hop,modality,drift\n";
  for (std::size_t k = 0; k < loop.latents.size(); ++k) {
    const auto& name = config.data.modalities[static_cast<std::size_t>(loop.modalities[k])];
    const std::string file = "hop" + std::to_string(k) + "_" + name + "_" + std::to_string(s.seed) + ".png";
    write_png(out_dir / file, row_image(loaded.codec.decode(loop.latents[k]), 0, config.image_shape()));
    outputs.push_back(file);
    if (k > 0) {
      csv << k << ',' << name << ',' << std::setprecision(8) << drift[k - 1] << '\n';
      log << "hop " << k << ' ' << name << " drift " << drift[k - 1] << '\n';
    }
  }
  write_manifest(out_dir, "loop", config, s, checkpoint, {{"hops", std::to_string(hops)}}, outputs);
}

MetricReport run_evaluate(const RunConfig& config, const fs::path& real_dir, const fs::path& gen_dir,
                          const fs::path& out_dir, std::ostream& log) {
  const auto extractor = config.eval.feature_extractor();
  const auto real = extract_features(read_png_dir(real_dir, config), extractor);
  const auto gen = extract_features(read_png_dir(gen_dir, config), extractor);
  const MetricReport report = evaluate(real, gen, config.eval.k);
  write_effective_config(config, out_dir);
  std::ofstream csv(out_dir / "report.csv");
  write_report_csv(report, csv);
  std::ofstream txt(out_dir / "report.txt");
  write_report_text(report, txt);
  write_report_csv(report, log);
  return report;
}

}  // namespace multidiff
