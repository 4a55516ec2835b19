#include "multidiff/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace multidiff {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("train config: " + msg); };
  if (batch_size < 1) fail("batch_size must be positive");
  if (total_steps < 1) fail("total_steps must be positive");
  if (warmup_steps < 0 || warmup_steps >= total_steps) fail("warmup_steps must be in [0, total_steps)");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) fail("ema_decay must be in (0, 1)");
  if (!(base_lr > 0.0)) fail("base_lr must be positive");
  if (!(grad_clip_norm > 0.0)) fail("grad_clip_norm must be positive");
  if (grad_accumulation != 1) fail("grad_accumulation other than 1 is not supported");
}

TrainConfig TrainConfig::paper_scale() {
  TrainConfig c;
  c.batch_size = 2048;
  c.total_steps = 120000;
  c.base_lr = 1e-4;
  c.warmup_steps = 5000;
  c.ema_decay = 0.9999;
  return c;
}

TrainState TrainState::create(const ModelConfig& config, std::uint64_t seed) {
  TrainState s{Denoiser<float>(config), {}, {}, {}, 0, Rng(derive_seed(seed, 1)), {}};
  s.model.initialize(derive_seed(seed, 0));
  const auto values = s.model.parameters().values();
  s.ema.assign(values.begin(), values.end());
  s.adam_m.assign(values.size(), 0.0f);
  s.adam_v.assign(values.size(), 0.0f);
  return s;
}

Denoiser<float> TrainState::ema_model() const {
  Denoiser<float> copy = model;
  auto values = copy.parameters().values();
  std::copy(ema.begin(), ema.end(), values.begin());
  return copy;
}

std::vector<int> sample_training_timesteps(int num_modalities, int num_timesteps, Rng& rng) {
  if (num_timesteps < 0) throw ValidationError("sample_training_timesteps: T must be non-negative");
  std::uniform_int_distribution<int> dist(0, num_timesteps);
  std::vector<int> out(static_cast<std::size_t>(num_modalities));
  for (auto& t : out) t = dist(rng);
  return out;
}

NoiseDraw draw_training_noise(int batch, const ModelConfig& config, int num_timesteps, Rng& rng) {
  NoiseDraw draw;
  draw.timesteps.resize(batch, config.num_modalities);
  for (int b = 0; b < batch; ++b) {
    auto row = sample_training_timesteps(config.num_modalities, num_timesteps, rng);
    for (int m = 0; m < config.num_modalities; ++m) draw.timesteps(b, m) = row[static_cast<std::size_t>(m)];
  }
  for (int m = 0; m < config.num_modalities; ++m)
    draw.noise.push_back(normal_matrix(batch, config.latent_shape.size(), rng));
  return draw;
}

template <typename T>
LossTerms<T> diffusion_loss(std::span<const MatrixT<T>> predictions, std::span<const MatrixT<T>> noise,
                            const TimestepMatrix& timesteps) {
  if (predictions.size() != noise.size() || static_cast<Eigen::Index>(predictions.size()) != timesteps.cols())
    throw ValidationError("diffusion_loss: modality count mismatch");
  LossTerms<T> out;
  std::int64_t elems_per = 0;
  for (std::size_t m = 0; m < predictions.size(); ++m) {
    if (predictions[m].rows() != noise[m].rows() || predictions[m].cols() != noise[m].cols() ||
        predictions[m].rows() != timesteps.rows())
      throw ValidationError("diffusion_loss: prediction and noise shapes differ");
    elems_per = predictions[m].cols();
    for (Eigen::Index b = 0; b < timesteps.rows(); ++b)
      if (timesteps(b, static_cast<Eigen::Index>(m)) > 0) ++out.counted_pairs;
  }
  const double denom = static_cast<double>(out.counted_pairs) * static_cast<double>(elems_per);
  double total = 0.0;
  for (std::size_t m = 0; m < predictions.size(); ++m) {
    MatrixT<T> grad = MatrixT<T>::Zero(predictions[m].rows(), predictions[m].cols());
    for (Eigen::Index b = 0; b < timesteps.rows(); ++b) {
      if (timesteps(b, static_cast<Eigen::Index>(m)) == 0) continue;
      auto diff = (predictions[m].row(b) - noise[m].row(b)).eval();
      total += static_cast<double>(diff.squaredNorm());
      grad.row(b) = diff * static_cast<T>(2.0 / denom);
    }
    out.grad_outputs.push_back(std::move(grad));
  }
  out.loss = out.counted_pairs > 0 ? total / denom : 0.0;
  return out;
}

template LossTerms<float> diffusion_loss(std::span<const MatrixT<float>>, std::span<const MatrixT<float>>,
                                         const TimestepMatrix&);
template LossTerms<double> diffusion_loss(std::span<const MatrixT<double>>, std::span<const MatrixT<double>>,
                                          const TimestepMatrix&);

double ema_decay_at_step(std::int64_t update, double decay) {
  return std::min(decay, static_cast<double>(1 + update) / static_cast<double>(10 + update));
}

void ema_update(std::span<const float> params, std::span<float> ema, double decay) {
  if (params.size() != ema.size()) throw ValidationError("ema_update: structure mismatch");
  const double keep = decay;
  const double take = 1.0 - decay;
  for (std::size_t i = 0; i < params.size(); ++i)
    ema[i] = static_cast<float>(keep * ema[i] + take * params[i]);
}

double lr_at_step(std::int64_t step, const TrainConfig& config) {
  if (step < 0 || step > config.total_steps)
    throw ValidationError("lr_at_step: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(config.total_steps) + "]");
  if (step < config.warmup_steps)
    return config.base_lr * static_cast<double>(step) / config.warmup_steps;
  const double span = config.total_steps - config.warmup_steps;
  const double progress = static_cast<double>(step - config.warmup_steps) / span;
  return config.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

StepResult training_step(TrainState& state, std::span<const Matrix> batch, const TrainConfig& config,
                         const NoiseSchedule& schedule) {
  const auto& mc = state.model.config();
  if (batch.empty()) throw ValidationError("training_step: empty batch");
  const Rng saved = state.rng;
  NoiseDraw draw = draw_training_noise(static_cast<int>(batch.front().rows()), mc, schedule.num_steps(),
                                       state.rng);
  StepResult r = training_step(state, batch, config, schedule, draw);
  if (!r.accepted) state.rng = saved;
  return r;
}

StepResult training_step(TrainState& state, std::span<const Matrix> batch, const TrainConfig& config,
                         const NoiseSchedule& schedule, const NoiseDraw& draw) {
  const auto& mc = state.model.config();
  if (static_cast<int>(batch.size()) != mc.num_modalities)
    throw ValidationError("training_step: expected one batch per modality");
  const Eigen::Index bsz = batch.front().rows();
  for (const auto& b : batch)
    if (b.rows() != bsz || b.cols() != mc.latent_shape.size())
      throw ValidationError("training_step: misaligned batch shapes");
  if (draw.timesteps.rows() != bsz || draw.timesteps.cols() != mc.num_modalities ||
      static_cast<int>(draw.noise.size()) != mc.num_modalities)
    throw ValidationError("training_step: noise draw does not match batch");

  std::vector<Matrix> noisy;
  for (int m = 0; m < mc.num_modalities; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    Matrix x(bsz, batch[mi].cols());
    for (Eigen::Index b = 0; b < bsz; ++b) {
      const auto cols = static_cast<std::size_t>(x.cols());
      forward_diffuse(std::span<const float>(batch[mi].row(b).data(), cols),
                      std::span<const float>(draw.noise[mi].row(b).data(), cols), draw.timesteps(b, m),
                      schedule, std::span<float>(x.row(b).data(), cols));
    }
    noisy.push_back(std::move(x));
  }

  const Rng saved_rng = state.rng;
  Rng dropout_rng(derive_seed(state.rng(), 7));
  ForwardCache<float> cache;
  auto preds = state.model.forward(noisy, draw.timesteps, &cache, &dropout_rng);
  auto terms = diffusion_loss<float>(preds, draw.noise, draw.timesteps);

  StepResult result;
  result.loss = terms.loss;
  if (!std::isfinite(terms.loss)) {
    state.rng = saved_rng;
    result.accepted = false;
    return result;
  }

  AlignedVector<float> grads(state.model.parameters().size(), 0.0f);
  state.model.backward(cache, terms.grad_outputs, grads);
  double sq = 0.0;
  for (float g : grads) sq += static_cast<double>(g) * g;
  result.grad_norm = std::sqrt(sq);
  if (!std::isfinite(result.grad_norm)) {
    state.rng = saved_rng;
    result.accepted = false;
    return result;
  }
  const double clip = result.grad_norm > config.grad_clip_norm ? config.grad_clip_norm / result.grad_norm : 1.0;

  const std::int64_t update = state.step + 1;
  result.lr = lr_at_step(std::min<std::int64_t>(update, config.total_steps), config);
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double correct1 = 1.0 - std::pow(b1, static_cast<double>(update));
  const double correct2 = 1.0 - std::pow(b2, static_cast<double>(update));
  auto params = state.model.parameters().values();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] * clip;
    const double m = b1 * state.adam_m[i] + (1.0 - b1) * g;
    const double v = b2 * state.adam_v[i] + (1.0 - b2) * g * g;
    state.adam_m[i] = static_cast<float>(m);
    state.adam_v[i] = static_cast<float>(v);
    params[i] -= static_cast<float>(result.lr * (m / correct1) / (std::sqrt(v / correct2) + config.adam_eps));
  }
  state.step = update;
  ema_update(params, state.ema, ema_decay_at_step(update, config.ema_decay));
  return result;
}

std::vector<Matrix> sample_batch(const LatentDataset& data, int batch_size, Rng& rng) {
  if (data.size() == 0) throw ValidationError("sample_batch: empty dataset");
  std::uniform_int_distribution<int> pick(0, data.size() - 1);
  std::vector<int> idx(static_cast<std::size_t>(batch_size));
  for (auto& i : idx) i = pick(rng);
  std::vector<Matrix> out;
  for (const auto& mod : data.modalities) {
    Matrix b(batch_size, mod.cols());
    for (int r = 0; r < batch_size; ++r) b.row(r) = mod.row(idx[static_cast<std::size_t>(r)]);
    out.push_back(std::move(b));
  }
  return out;
}

void train(TrainState& state, const LatentDataset& data, const TrainConfig& config,
           const NoiseSchedule& schedule, std::ostream* log,
           const std::function<void(std::int64_t, const StepResult&)>& on_step) {
  config.validate();
  if (static_cast<int>(data.modalities.size()) != state.model.config().num_modalities)
    throw ValidationError("train: dataset modality count does not match the model");
  while (state.step < config.total_steps) {
    auto batch = sample_batch(data, config.batch_size, state.rng);
    StepResult r = training_step(state, batch, config, schedule);
    if (log) {
      char line[96];
      std::snprintf(line, sizeof line, "%lld,%.6f,%.8g%s\n", static_cast<long long>(state.step), r.loss, r.lr,
                    r.accepted ? "" : ",rejected");
      *log << line;
      log->flush();
    }
    if (on_step) on_step(state.step, r);
    if (!r.accepted) throw std::runtime_error("training aborted: non-finite loss at step " +
                                              std::to_string(state.step + 1));
  }
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const std::string& require(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end())
    throw CheckpointError(CheckpointError::Kind::inconsistent, "checkpoint meta lacks " + key);
  return it->second;
}

}  // namespace

std::map<std::string, std::string> model_config_to_meta(const ModelConfig& c) {
  std::map<std::string, std::string> meta;
  meta["model.num_modalities"] = std::to_string(c.num_modalities);
  meta["model.latent_shape"] = to_string(c.latent_shape);
  meta["model.patch_size"] = std::to_string(c.patch_size);
  meta["model.embed_dim"] = std::to_string(c.embed_dim);
  meta["model.depth"] = std::to_string(c.depth);
  meta["model.num_heads"] = std::to_string(c.num_heads);
  meta["model.mlp_ratio"] = format_double(c.mlp_ratio);
  meta["model.dropout_rate"] = format_double(c.dropout_rate);
  std::string drops;
  for (std::size_t i = 0; i < c.modality_dropout.size(); ++i)
    drops += (i ? "," : "") + format_double(c.modality_dropout[i]);
  meta["model.modality_dropout"] = drops.empty() ? "-" : drops;
  meta["model.num_timesteps"] = std::to_string(c.num_timesteps);
  meta["model.long_skip"] = c.long_skip ? "1" : "0";
  return meta;
}

ModelConfig model_config_from_meta(const std::map<std::string, std::string>& meta) {
  ModelConfig c;
  try {
    c.num_modalities = std::stoi(require(meta, "model.num_modalities"));
    const auto& shape = require(meta, "model.latent_shape");
    if (std::sscanf(shape.c_str(), "%dx%dx%d", &c.latent_shape.channels, &c.latent_shape.height,
                    &c.latent_shape.width) != 3)
      throw CheckpointError(CheckpointError::Kind::inconsistent, "bad latent shape " + shape);
    c.patch_size = std::stoi(require(meta, "model.patch_size"));
    c.embed_dim = std::stoi(require(meta, "model.embed_dim"));
    c.depth = std::stoi(require(meta, "model.depth"));
    c.num_heads = std::stoi(require(meta, "model.num_heads"));
    c.mlp_ratio = std::stod(require(meta, "model.mlp_ratio"));
    c.dropout_rate = std::stod(require(meta, "model.dropout_rate"));
    const auto& drops = require(meta, "model.modality_dropout");
    if (drops != "-") {
      std::istringstream ds(drops);
      std::string tok;
      while (std::getline(ds, tok, ',')) c.modality_dropout.push_back(std::stod(tok));
    }
    c.num_timesteps = std::stoi(require(meta, "model.num_timesteps"));
    c.long_skip = require(meta, "model.long_skip") == "1";
  } catch (const std::logic_error& e) {
    throw CheckpointError(CheckpointError::Kind::inconsistent, std::string("bad model meta: ") + e.what());
  }
  return c;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  CheckpointData data;
  data.meta = model_config_to_meta(state.model.config());
  data.meta["kind"] = "train_state";
  data.meta["step"] = std::to_string(state.step);
  std::ostringstream rng_text;
  rng_text << state.rng;
  data.meta["rng"] = rng_text.str();

  const auto& params = state.model.parameters();
  auto add_group = [&](const std::string& prefix, std::span<const float> flat) {
    for (const auto& e : params.entries()) {
      data.tensors.push_back({prefix + e.name, e.shape,
                              std::vector<float>(flat.begin() + static_cast<std::ptrdiff_t>(e.offset),
                                                 flat.begin() + static_cast<std::ptrdiff_t>(e.offset + e.size))});
    }
  };
  add_group("params/", params.values());
  add_group("ema/", state.ema);
  add_group("adam_m/", state.adam_m);
  add_group("adam_v/", state.adam_v);
  for (const auto& t : state.auxiliary) data.tensors.push_back(t);
  write_checkpoint_file(data, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  using Kind = CheckpointError::Kind;
  CheckpointData data = read_checkpoint_file(path);
  if (require(data.meta, "kind") != "train_state")
    throw CheckpointError(Kind::inconsistent, "checkpoint does not hold a training state");
  ModelConfig config = model_config_from_meta(data.meta);
  try {
    config.validate();
  } catch (const ValidationError& e) {
    throw CheckpointError(Kind::inconsistent, e.what());
  }
  TrainState state{Denoiser<float>(config), {}, {}, {}, 0, Rng(), {}};
  try {
    state.step = std::stoll(require(data.meta, "step"));
  } catch (const std::logic_error&) {
    throw CheckpointError(Kind::inconsistent, "bad step value");
  }
  std::istringstream rng_text(require(data.meta, "rng"));
  rng_text >> state.rng;
  if (!rng_text) throw CheckpointError(Kind::inconsistent, "bad rng state");

  auto& params = state.model.parameters();
  state.ema.assign(params.size(), 0.0f);
  state.adam_m.assign(params.size(), 0.0f);
  state.adam_v.assign(params.size(), 0.0f);
  auto fill_group = [&](const std::string& prefix, std::span<float> flat) {
    for (const auto& e : params.entries()) {
      const NamedTensor* t = data.find(prefix + e.name);
      if (!t) throw CheckpointError(Kind::inconsistent, "checkpoint lacks tensor " + prefix + e.name);
      if (t->shape != e.shape)
        throw CheckpointError(Kind::inconsistent, "tensor " + prefix + e.name + " has the wrong shape");
      std::copy(t->data.begin(), t->data.end(), flat.begin() + static_cast<std::ptrdiff_t>(e.offset));
    }
  };
  fill_group("params/", params.values());
  fill_group("ema/", state.ema);
  fill_group("adam_m/", state.adam_m);
  fill_group("adam_v/", state.adam_v);
  for (auto& t : data.tensors) {
    const bool known = t.name.rfind("params/", 0) == 0 || t.name.rfind("ema/", 0) == 0 ||
                       t.name.rfind("adam_m/", 0) == 0 || t.name.rfind("adam_v/", 0) == 0;
    if (!known) state.auxiliary.push_back(std::move(t));
  }
  return state;
}

}  // namespace multidiff
