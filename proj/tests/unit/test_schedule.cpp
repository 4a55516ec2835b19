#include "multidiff/schedule.hpp"
#include "support/gaussian_oracle.hpp"

#include <doctest.h>

#include <cmath>

using namespace multidiff;

namespace {

// Reference products computed by hand from the betas.
double product_oracle(const std::vector<double>& betas, int t) {
  double p = 1.0;
  for (int s = 0; s < t; ++s) p *= 1.0 - betas[static_cast<std::size_t>(s)];
  return p;
}

const std::vector<double> kBetas4 = {0.1, 0.2, 0.3, 0.4};

}  // namespace

TEST_CASE("linear schedule endpoints") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  CHECK(s.betas().front() == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(s.betas().back() == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(s.alpha_bars().size() == 1001);
  CHECK(s.alpha_bar(0) == 1.0);
}

TEST_CASE("single step schedule") {
  const auto s = make_linear_schedule(1, 0.5, 0.5);
  REQUIRE(s.alpha_bars().size() == 2);
  CHECK(s.alpha_bars()[0] == 1.0);
  CHECK(s.alpha_bars()[1] == doctest::Approx(0.5));
}

TEST_CASE("four step schedule matches the explicit product") {
  const auto s = make_linear_schedule(4, 0.1, 0.4);
  for (int i = 0; i < 4; ++i) CHECK(s.betas()[static_cast<std::size_t>(i)] == doctest::Approx(kBetas4[static_cast<std::size_t>(i)]));
  CHECK(s.alpha_bar(4) == doctest::Approx(0.9 * 0.8 * 0.7 * 0.6).epsilon(1e-12));
  for (int t = 0; t <= 4; ++t) CHECK(s.alpha_bar(t) == doctest::Approx(product_oracle(kBetas4, t)).epsilon(1e-12));
}

TEST_CASE("schedule invariants") {
  const auto s = make_linear_schedule(1000);
  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(std::abs(s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)) <= 1e-15);
    if (t > 1) CHECK(s.beta(t) >= s.beta(t - 1));
    if (t < 1000) CHECK(s.lambda(t) > s.lambda(t + 1));
  }
  CHECK(std::isinf(s.lambda(0)));
}

TEST_CASE("schedule rejects bad arguments") {
  CHECK_THROWS_AS(make_linear_schedule(0), ValidationError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), ValidationError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.1, 1.0), ValidationError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.2, 0.1), ValidationError);
}

TEST_CASE("forward diffusion closed form") {
  const auto s4 = make_linear_schedule(4, 0.1, 0.4);
  const std::vector<float> x0 = {1, 1, 1, 1}, zero(4, 0.0f);

  SUBCASE("t = 0 returns x0") {
    const std::vector<float> eps = {0.3f, -1.0f, 2.0f, 0.1f};
    CHECK(forward_diffuse(x0, eps, 0, s4) == x0);
  }
  SUBCASE("all-ones at t = 2 with zero noise") {
    const auto out = forward_diffuse(x0, zero, 2, s4);
    for (float v : out) CHECK(v == doctest::Approx(std::sqrt(product_oracle(kBetas4, 2))).epsilon(1e-6));
  }
  SUBCASE("fully corrupted limit") {
    const auto s = make_linear_schedule(1000);
    const std::vector<float> eps = {0.5f, -0.25f, 1.5f, -2.0f};
    const auto out = forward_diffuse(x0, eps, 1000, s);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(eps[i]).epsilon(0.01));
  }
  SUBCASE("shape mismatch") {
    const std::vector<float> eps(3, 0.0f);
    CHECK_THROWS_AS(forward_diffuse(x0, eps, 1, s4), ValidationError);
  }
  SUBCASE("timestep out of range") { CHECK_THROWS_AS(forward_diffuse(x0, zero, 5, s4), ValidationError); }
}

TEST_CASE("forward diffusion preserves unit variance") {
  const auto s = make_linear_schedule(1000);
  Rng rng(7);
  const int n = 10000;
  std::vector<float> x0(n), eps(n);
  fill_normal(std::span<float>(x0), rng);
  fill_normal(std::span<float>(eps), rng);
  for (int t : {1, 100, 500, 1000}) {
    const auto xt = forward_diffuse(x0, eps, t, s);
    const Matrix m = Eigen::Map<const Matrix>(xt.data(), 1, n);
    CHECK(testing::moments(m).variance == doctest::Approx(1.0).epsilon(0.05));
  }
}

TEST_CASE("x0 prediction") {
  const auto s4 = make_linear_schedule(4, 0.1, 0.4);
  SUBCASE("inverts forward diffusion") {
    const auto s = make_linear_schedule(1000);
    Rng rng(3);
    std::vector<float> x0(64), eps(64);
    fill_normal(std::span<float>(x0), rng);
    fill_normal(std::span<float>(eps), rng);
    for (int t = 1; t <= 1000; t += 37) {
      const auto back = predict_x0_from_eps(forward_diffuse(x0, eps, t, s), eps, t, s);
      double err = 0, norm = 0;
      for (std::size_t i = 0; i < x0.size(); ++i) {
        err += (back[i] - x0[i]) * (back[i] - x0[i]);
        norm += x0[i] * x0[i];
      }
      // float32 division by sqrt(abar) amplifies round-off as abar shrinks
      CHECK(std::sqrt(err / norm) < 1e-5 / std::sqrt(s.alpha_bar(t)));
    }
  }
  SUBCASE("zero noise estimate") {
    const std::vector<float> xt = {0.4f, -1.2f}, zero(2, 0.0f);
    const auto out = predict_x0_from_eps(xt, zero, 3, s4);
    for (std::size_t i = 0; i < 2; ++i)
      CHECK(out[i] == doctest::Approx(xt[i] / std::sqrt(product_oracle(kBetas4, 3))).epsilon(1e-6));
  }
  SUBCASE("hand-evaluated scalar") {
    const std::vector<float> xt = {0.9f}, eh = {-0.35f};
    const double ab = 0.9 * 0.8;
    const double expected = (0.9 - std::sqrt(1 - ab) * -0.35) / std::sqrt(ab);
    CHECK(predict_x0_from_eps(xt, eh, 2, s4)[0] == doctest::Approx(expected).epsilon(1e-6));
  }
  SUBCASE("t = 0 rejected") {
    const std::vector<float> v = {1.0f};
    CHECK_THROWS_AS(predict_x0_from_eps(v, v, 0, s4), ValidationError);
  }
}

TEST_CASE("posterior step") {
  const auto s4 = make_linear_schedule(4, 0.1, 0.4);
  SUBCASE("one-step chain inverts exactly") {
    const auto s1 = make_linear_schedule(1, 0.3, 0.3);
    const std::vector<float> x0 = {0.25f, -0.8f, 1.1f}, eps = {1.0f, 0.5f, -0.3f}, z = {9.0f, 9.0f, 9.0f};
    const auto xt = forward_diffuse(x0, eps, 1, s1);
    const auto back = posterior_step(xt, eps, 1, z, s1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(back[i] == doctest::Approx(x0[i]).epsilon(1e-6));
  }
  SUBCASE("linearity at zero") {
    const std::vector<float> zero(5, 0.0f);
    for (float v : posterior_step(zero, zero, 3, zero, s4)) CHECK(v == 0.0f);
  }
  SUBCASE("hand-evaluated scalar at t = 2") {
    const std::vector<float> xt = {0.7f}, eh = {0.3f}, z = {0.0f};
    const double alpha = 0.8, beta = 0.2, ab = 0.9 * 0.8;
    const double expected = (0.7 - beta / std::sqrt(1 - ab) * 0.3) / std::sqrt(alpha);
    CHECK(posterior_step(xt, eh, 2, z, s4)[0] == doctest::Approx(expected).epsilon(1e-6));
  }
  SUBCASE("noise scale is sqrt(beta)") {
    const std::vector<float> zero = {0.0f}, z = {1.0f};
    CHECK(posterior_step(zero, zero, 3, z, s4)[0] == doctest::Approx(std::sqrt(0.3)).epsilon(1e-6));
  }
  SUBCASE("posterior variance switch") {
    const auto sp = make_linear_schedule(4, 0.1, 0.4, ReverseVariance::posterior_beta);
    const std::vector<float> zero = {0.0f}, z = {1.0f};
    const double tilde = 0.3 * (1 - 0.9 * 0.8) / (1 - 0.9 * 0.8 * 0.7);
    CHECK(posterior_step(zero, zero, 3, z, sp)[0] == doctest::Approx(std::sqrt(tilde)).epsilon(1e-6));
  }
  SUBCASE("t = 0 rejected") {
    const std::vector<float> v = {1.0f};
    CHECK_THROWS_AS(posterior_step(v, v, 0, v, s4), ValidationError);
  }
}

TEST_CASE("ancestral chain with the analytic predictor recovers the data Gaussian") {
  const auto s = make_linear_schedule(1000);
  const double mu0 = 0.5, sigma0 = 0.8;
  testing::GaussianOracle oracle(s, {mu0}, {sigma0}, 1);
  Rng rng(11);
  const int chains = 10000;
  Matrix x = normal_matrix(chains, 1, rng);
  for (int t = 1000; t >= 1; --t) {
    const std::vector<int> ts = {t};
    const Matrix eps = oracle.predict(std::span<const Matrix>(&x, 1), ts)[0];
    const Matrix z = normal_matrix(chains, 1, rng);
    Matrix next(chains, 1);
    for (int i = 0; i < chains; ++i)
      next(i, 0) = posterior_step(std::span<const float>(&x(i, 0), 1), std::span<const float>(&eps(i, 0), 1), t,
                                  std::span<const float>(&z(i, 0), 1), s)[0];
    x = next;
  }
  const auto m = testing::moments(x);
  CHECK(m.mean == doctest::Approx(mu0).epsilon(0.05));
  CHECK(m.variance == doctest::Approx(sigma0 * sigma0).epsilon(0.05));
}
