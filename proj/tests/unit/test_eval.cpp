#include "multidiff/eval.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numeric>
#include <sstream>

using namespace multidiff;

namespace {

FeatureSet gaussian_set(int n, const std::vector<double>& mean, const std::vector<double>& stddev, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureSet f;
  f.features.resize(n, static_cast<Eigen::Index>(mean.size()));
  for (int i = 0; i < n; ++i)
    for (std::size_t j = 0; j < mean.size(); ++j)
      f.features(i, static_cast<Eigen::Index>(j)) = mean[j] + stddev[j] * normal(rng);
  return f;
}

// Frechet distance from the sample moments, using eig(S1 S2) for the trace term.
double frechet_oracle(const MatrixT<double>& a, const MatrixT<double>& b) {
  auto moments = [](const MatrixT<double>& x) {
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd c = x.rowwise() - mu;
    return std::pair<Eigen::RowVectorXd, Eigen::MatrixXd>{mu, c.transpose() * c / double(x.rows() - 1)};
  };
  const auto [m1, s1] = moments(a);
  const auto [m2, s2] = moments(b);
  const Eigen::VectorXcd eig = Eigen::EigenSolver<Eigen::MatrixXd>(s1 * s2).eigenvalues();
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < eig.size(); ++i) tr_sqrt += std::sqrt(std::max(0.0, eig[i].real()));
  return (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
}

FeatureSet wrap(MatrixT<double> m) {
  FeatureSet f;
  f.features = std::move(m);
  return f;
}

}  // namespace

TEST_CASE("feature extractors") {
  Rng rng(1);
  const Matrix images = (normal_matrix(10, 256, rng).array() * 0.2f + 0.5f).matrix();
  const Shape3 gray{1, 16, 16};

  const FeatureSet flat = extract_features(images, gray, {ExtractorKind::flatten_pixels});
  CHECK(flat.dim() == 256);
  CHECK(flat.features(3, 17) == doctest::Approx(images(3, 17)));
  CHECK(flat.extractor_id == "flatten_pixels");

  const FeatureSet stats = extract_features(images, gray, {ExtractorKind::patch_stats});
  CHECK(stats.dim() == 32);
  double mean = 0.0, var = 0.0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) mean += images(0, y * 16 + x);
  mean /= 16.0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) var += std::pow(images(0, y * 16 + x) - mean, 2);
  var /= 16.0;
  CHECK(stats.features(0, 0) == doctest::Approx(mean).epsilon(1e-6));
  CHECK(stats.features(0, 16) == doctest::Approx(var).epsilon(1e-5));
  CHECK(extract_features(Matrix::Zero(2, 3 * 16 * 16), Shape3{3, 16, 16}, {}).dim() == 96);
  CHECK_THROWS_AS(extract_features(Matrix::Zero(2, 36), Shape3{1, 6, 6}, {}), ValidationError);
  CHECK_THROWS_AS(extract_features(Matrix::Zero(2, 10), gray, {}), ValidationError);

  const FeatureExtractor proj{ExtractorKind::random_projection, 7, 12};
  const FeatureSet p1 = extract_features(images, gray, proj);
  const FeatureSet p2 = extract_features(images, gray, proj);
  CHECK(p1.dim() == 12);
  CHECK(p1.features == p2.features);
  CHECK(p1.extractor_id == "random_projection(seed=7,dim=12)");
  CHECK_FALSE(extract_features(images, gray, {ExtractorKind::random_projection, 8, 12}).features == p1.features);

  // Features are per-row, so permuting inputs permutes outputs.
  Matrix permuted(images.rows(), images.cols());
  for (Eigen::Index i = 0; i < images.rows(); ++i) permuted.row(i) = images.row(images.rows() - 1 - i);
  const FeatureSet pp = extract_features(permuted, gray, proj);
  for (Eigen::Index i = 0; i < images.rows(); ++i) CHECK(pp.features.row(i) == p1.features.row(images.rows() - 1 - i));

  CHECK(parse_extractor_kind("patch_stats") == ExtractorKind::patch_stats);
  CHECK_THROWS_AS(parse_extractor_kind("inception"), ValidationError);
}

TEST_CASE("FID closed forms") {
  const FeatureSet a = gaussian_set(500, {0, 1, 2}, {1, 2, 0.5}, 3);
  CHECK(fid(a, a) < 1e-6);

  const FeatureSet x = gaussian_set(100000, {0}, {1}, 4);
  const FeatureSet y = gaussian_set(100000, {1}, {1}, 5);
  CHECK(fid(x, y) == doctest::Approx(1.0).epsilon(0.05));

  // Diagonal covariances: |mu1 - mu2|^2 + sum (s1 - s2)^2.
  const FeatureSet d1 = gaussian_set(100000, {0, 0, 0}, {1, 2, 3}, 6);
  const FeatureSet d2 = gaussian_set(100000, {1, -1, 0.5}, {2, 2, 1}, 7);
  const double expected = 1 + 1 + 0.25 + 1 + 0 + 4;
  CHECK(fid(d1, d2) == doctest::Approx(expected).epsilon(0.05));

  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    MatrixT<double> m1 = normal_matrix(60, 5, rng).cast<double>();
    MatrixT<double> m2 = normal_matrix(80, 5, rng).cast<double>();
    m1.col(1) += 0.7 * m1.col(0);
    m2.col(2) *= 3.0;
    m2.col(4).array() += 1.5;
    const double got = fid(wrap(m1), wrap(m2));
    CHECK(got == doctest::Approx(frechet_oracle(m1, m2)).epsilon(1e-8));
    CHECK(got == doctest::Approx(fid(wrap(m2), wrap(m1))).epsilon(1e-9));
    CHECK(got >= 0.0);
  }
}

TEST_CASE("FID grows with added noise") {
  const FeatureSet real = gaussian_set(2000, std::vector<double>(8, 0.0), std::vector<double>(8, 1.0), 9);
  Rng rng(10);
  double previous = 0.0;
  for (double sigma : {0.1, 0.5, 1.5}) {
    FeatureSet noisy = real;
    noisy.features += sigma * normal_matrix(real.size(), real.dim(), rng).cast<double>();
    const double value = fid(real, noisy);
    CHECK(value > previous);
    previous = value;
  }
}

TEST_CASE("FID input validation") {
  const FeatureSet a = gaussian_set(10, {0, 0}, {1, 1}, 1);
  const FeatureSet b = gaussian_set(10, {0, 0, 0}, {1, 1, 1}, 2);
  CHECK_THROWS_AS(fid(a, b), ValidationError);
  CHECK_THROWS_AS(fid(a, gaussian_set(1, {0, 0}, {1, 1}, 3)), ValidationError);
}

TEST_CASE("k-NN precision and recall") {
  const FeatureSet real = gaussian_set(300, {0, 0, 0, 0}, {1, 1, 1, 1}, 11);
  const PrecisionRecall same = knn_precision_recall(real, real);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f_score == 1.0);

  FeatureSet far = real;
  far.features.array() += 1e6;
  const PrecisionRecall apart = knn_precision_recall(real, far);
  CHECK(apart.precision == 0.0);
  CHECK(apart.recall == 0.0);
  CHECK(apart.f_score == 0.0);

  // Real data covers two clusters; the generator only one of them.
  FeatureSet two = gaussian_set(2000, {0, 0}, {1, 1}, 12);
  two.features.bottomRows(1000).array() += 50.0;
  const FeatureSet one = gaussian_set(1000, {0, 0}, {1, 1}, 13);
  const PrecisionRecall partial = knn_precision_recall(two, one);
  CHECK(partial.precision == doctest::Approx(1.0).epsilon(0.1));
  CHECK(partial.recall == doctest::Approx(0.5).epsilon(0.1));

  for (std::uint64_t s = 0; s < 5; ++s) {
    const FeatureSet r = gaussian_set(200, {0, 0, 0}, {1, 1, 1}, 100 + s);
    const FeatureSet g = gaussian_set(150, {0.5, 0, 0}, {1.5, 1, 0.5}, 200 + s);
    const PrecisionRecall fwd = knn_precision_recall(r, g, 5);
    const PrecisionRecall rev = knn_precision_recall(g, r, 5);
    CHECK(fwd.precision == rev.recall);
    CHECK(fwd.recall == rev.precision);
  }

  CHECK_THROWS_AS(knn_precision_recall(real, real, 0), ValidationError);
  CHECK_THROWS_AS(knn_precision_recall(real, gaussian_set(3, {0, 0, 0, 0}, {1, 1, 1, 1}, 1), 3), ValidationError);
  CHECK_THROWS_AS(knn_precision_recall(real, gaussian_set(30, {0}, {1}, 1)), ValidationError);
}

TEST_CASE("f score") {
  CHECK(f_score(0.0, 0.0) == 0.0);
  CHECK(f_score(1.0, 0.5) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("report writers") {
  const FeatureSet a = gaussian_set(20, {0, 0}, {1, 1}, 1);
  const FeatureSet b = gaussian_set(25, {1, 0}, {1, 1}, 2);
  FeatureSet ta = a, tb = b;
  ta.extractor_id = tb.extractor_id = "random_projection(seed=1,dim=2)";
  const MetricReport r = evaluate(ta, tb, 3);
  CHECK(r.n_real == 20);
  CHECK(r.n_gen == 25);
  CHECK(r.fid == doctest::Approx(fid(a, b)));
  std::ostringstream csv, text;
  write_report_csv(r, csv);
  write_report_text(r, text);
  const std::string c = csv.str();
  CHECK(c.rfind("fid,precision,recall,f_score,k,extractor_id,n_real,n_gen\n", 0) == 0);
  CHECK(c.find("\"random_projection(seed=1,dim=2)\",20,25") != std::string::npos);
  CHECK(text.str().find("k = 3") != std::string::npos);
}
