#include "multidiff/trainer.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <sstream>

using namespace multidiff;

namespace {

TrainConfig quick_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.total_steps = 1000;
  c.warmup_steps = 0;
  c.base_lr = 1e-2;
  c.ema_decay = 0.9;
  return c;
}

std::vector<Matrix> random_batch(const ModelConfig& c, int batch, Rng& rng) {
  std::vector<Matrix> out;
  for (int m = 0; m < c.num_modalities; ++m) out.push_back(normal_matrix(batch, c.latent_shape.size(), rng));
  return out;
}

}  // namespace

TEST_CASE("training timesteps") {
  Rng rng(1);
  SUBCASE("T = 0 gives only zeros") { CHECK(sample_training_timesteps(4, 0, rng) == std::vector<int>{0, 0, 0, 0}); }
  SUBCASE("independent uniform coordinates") {
    const int n = 100000;
    double s0 = 0, s1 = 0, s00 = 0, s11 = 0, s01 = 0;
    for (int i = 0; i < n; ++i) {
      const auto t = sample_training_timesteps(2, 1000, rng);
      s0 += t[0], s1 += t[1], s00 += double(t[0]) * t[0], s11 += double(t[1]) * t[1], s01 += double(t[0]) * t[1];
    }
    const double m0 = s0 / n, m1 = s1 / n;
    CHECK(m0 == doctest::Approx(500).epsilon(0.01));
    CHECK(m1 == doctest::Approx(500).epsilon(0.01));
    const double cov = s01 / n - m0 * m1;
    const double r = cov / std::sqrt((s00 / n - m0 * m0) * (s11 / n - m1 * m1));
    CHECK(std::abs(r) < 0.02);
  }
  SUBCASE("every value equally likely") {
    const int n = 100000;
    std::array<int, 6> counts{};
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_training_timesteps(1, 5, rng)[0])];
    double chi2 = 0;
    for (int c : counts) {
      CHECK(c / double(n) == doctest::Approx(1.0 / 6).epsilon(0.02));
      chi2 += (c - n / 6.0) * (c - n / 6.0) / (n / 6.0);
    }
    CHECK(chi2 < 20.5);  // df = 5, p = 0.001
  }
}

TEST_CASE("zero-output model has unit initial loss") {
  ModelConfig c = ModelConfig::tiny();
  TrainState state = TrainState::create(c, 0);
  Rng rng(2);
  const auto batch = random_batch(c, 512, rng);
  const auto r = training_step(state, batch, quick_config(), make_linear_schedule(c.num_timesteps));
  CHECK(r.accepted);
  CHECK(r.loss == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("repeated steps on one batch overfit it") {
  // The d = 8 tiny model is too narrow to memorise 128 noise values in 50 steps; d = 16 is not.
  ModelConfig c = ModelConfig::tiny();
  c.embed_dim = 16;
  Rng rng(4);
  const auto batch = random_batch(c, 4, rng);
  const auto schedule = make_linear_schedule(c.num_timesteps);
  NoiseDraw draw = draw_training_noise(4, c, c.num_timesteps, rng);
  for (int t : {5, 25, 50}) {
    TrainState state = TrainState::create(c, 3);
    draw.timesteps.setConstant(t);
    const double first = training_step(state, batch, quick_config(), schedule, draw).loss;
    double last = first;
    for (int i = 1; i < 50; ++i) last = training_step(state, batch, quick_config(), schedule, draw).loss;
    CHECK(last < 0.1 * first);
  }
}

TEST_CASE("pairs drawn at t = 0 are excluded") {
  ModelConfig c = ModelConfig::tiny();
  SUBCASE("all pairs at zero give no loss and no update") {
    TrainState state = TrainState::create(c, 5);
    Rng rng(6);
    const auto batch = random_batch(c, 4, rng);
    NoiseDraw draw = draw_training_noise(4, c, c.num_timesteps, rng);
    draw.timesteps.setZero();
    const std::vector<float> before(state.model.parameters().values().begin(), state.model.parameters().values().end());
    const auto r = training_step(state, batch, quick_config(), make_linear_schedule(c.num_timesteps), draw);
    CHECK(r.loss == 0.0);
    CHECK(r.grad_norm == 0.0);
    const auto after = state.model.parameters().values();
    CHECK(std::equal(after.begin(), after.end(), before.begin()));
  }
  SUBCASE("a modality at zero gets exactly zero head gradient") {
    Denoiser<float> model(c);
    model.initialize(7);
    Rng rng(8);
    for (auto& v : model.parameters().values()) v = static_cast<float>(std::normal_distribution<double>(0, 0.2)(rng));
    const auto x = random_batch(c, 3, rng);
    const auto eps = random_batch(c, 3, rng);
    TimestepMatrix t(3, 2);
    t << 10, 0, 20, 0, 30, 0;
    ForwardCache<float> cache;
    const auto pred = model.forward(x, t, &cache);
    const auto terms = diffusion_loss<float>(pred, eps, t);
    CHECK(terms.counted_pairs == 3);
    std::vector<float> grads(model.parameters().size(), 0.0f);
    model.backward(cache, terms.grad_outputs, grads);
    bool head1_zero = true, head0_nonzero = false;
    for (const auto& e : model.parameters().entries()) {
      for (std::size_t i = e.offset; i < e.offset + e.size; ++i) {
        if (e.name.rfind("heads.1.", 0) == 0 && grads[i] != 0.0f) head1_zero = false;
        if (e.name.rfind("heads.0.", 0) == 0 && grads[i] != 0.0f) head0_nonzero = true;
      }
    }
    CHECK(head1_zero);
    CHECK(head0_nonzero);
  }
}

TEST_CASE("non-finite loss leaves the state unchanged") {
  ModelConfig c = ModelConfig::tiny();
  TrainState state = TrainState::create(c, 9);
  Rng rng(10);
  auto batch = random_batch(c, 2, rng);
  batch[0](0, 0) = std::numeric_limits<float>::quiet_NaN();
  const std::vector<float> before(state.model.parameters().values().begin(), state.model.parameters().values().end());
  std::ostringstream rng_before;
  rng_before << state.rng;
  const auto r = training_step(state, batch, quick_config(), make_linear_schedule(c.num_timesteps));
  CHECK_FALSE(r.accepted);
  CHECK(state.step == 0);
  const auto after = state.model.parameters().values();
  CHECK(std::equal(after.begin(), after.end(), before.begin()));
  std::ostringstream rng_after;
  rng_after << state.rng;
  CHECK(rng_after.str() == rng_before.str());
}

TEST_CASE("misaligned batches are rejected") {
  ModelConfig c = ModelConfig::tiny();
  TrainState state = TrainState::create(c, 0);
  Rng rng(1);
  auto batch = random_batch(c, 3, rng);
  batch[1] = normal_matrix(2, 16, rng);
  CHECK_THROWS_AS(training_step(state, batch, quick_config(), make_linear_schedule(50)), ValidationError);
  batch.pop_back();
  CHECK_THROWS_AS(training_step(state, batch, quick_config(), make_linear_schedule(50)), ValidationError);
}

TEST_CASE("ema update") {
  std::vector<float> params(5, 1.0f), ema(5, 0.0f);
  ema_update(params, ema, 0.9999);
  for (float v : ema) CHECK(v == doctest::Approx(1e-4).epsilon(1e-5));
  ema_update(params, ema, 1.0);
  for (float v : ema) CHECK(v == doctest::Approx(1e-4).epsilon(1e-5));
  ema_update(params, ema, 0.0);
  CHECK(ema == params);

  std::vector<float> e(1, 0.0f);
  const std::vector<float> p(1, 2.0f);
  for (int k = 1; k <= 20; ++k) {
    ema_update(p, e, 0.8);
    CHECK(e[0] == doctest::Approx(2.0 * (1.0 - std::pow(0.8, k))).epsilon(1e-5));
  }
  std::vector<float> wrong(4);
  CHECK_THROWS_AS(ema_update(params, wrong, 0.5), ValidationError);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.total_steps = 1000;
  c.warmup_steps = 100;
  c.base_lr = 1e-4;
  CHECK(lr_at_step(0, c) == 0.0);
  CHECK(lr_at_step(50, c) == doctest::Approx(5e-5));
  CHECK(lr_at_step(100, c) == doctest::Approx(1e-4));
  CHECK(lr_at_step(550, c) == doctest::Approx(5e-5));
  CHECK(std::abs(lr_at_step(1000, c)) < 1e-20);
  CHECK_THROWS_AS(lr_at_step(-1, c), ValidationError);
  CHECK_THROWS_AS(lr_at_step(1001, c), ValidationError);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK_NOTHROW(TrainConfig::paper_scale().validate());
  c.warmup_steps = c.total_steps;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.ema_decay = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.grad_accumulation = 2;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("seeded training is reproducible") {
  ModelConfig c = ModelConfig::tiny();
  Rng rng(12);
  LatentDataset data{random_batch(c, 16, rng)};
  TrainConfig cfg = quick_config();
  cfg.total_steps = 20;
  auto run = [&] {
    TrainState state = TrainState::create(c, 42);
    std::ostringstream log;
    train(state, data, cfg, make_linear_schedule(c.num_timesteps), &log);
    return std::make_pair(log.str(), std::vector<float>(state.ema));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(std::count(a.first.begin(), a.first.end(), '\n') == 20);
}

TEST_CASE("ema decay warms up") {
  CHECK(ema_decay_at_step(1, 0.9999) == doctest::Approx(2.0 / 11.0));
  CHECK(ema_decay_at_step(90, 0.9999) == doctest::Approx(91.0 / 100.0));
  CHECK(ema_decay_at_step(1000000, 0.999) == 0.999);
  // Share of the initial weights left after n updates stays small even for short runs.
  double initial_share = 1.0;
  for (std::int64_t n = 1; n <= 1200; ++n) initial_share *= ema_decay_at_step(n, 0.999);
  CHECK(initial_share < 1e-3);
}

TEST_CASE("ema model carries the shadow weights") {
  TrainState state = TrainState::create(ModelConfig::tiny(), 1);
  std::fill(state.ema.begin(), state.ema.end(), 0.5f);
  const auto m = state.ema_model();
  for (float v : m.parameters().values()) CHECK(v == 0.5f);
}
