#include "multidiff/eval.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace multidiff {

const char* to_string(ExtractorKind kind) {
  switch (kind) {
    case ExtractorKind::flatten_pixels: return "flatten_pixels";
    case ExtractorKind::patch_stats: return "patch_stats";
    case ExtractorKind::random_projection: return "random_projection";
  }
  return "?";
}

ExtractorKind parse_extractor_kind(const std::string& name) {
  for (auto k : {ExtractorKind::flatten_pixels, ExtractorKind::patch_stats, ExtractorKind::random_projection})
    if (name == to_string(k)) return k;
  throw ValidationError("unknown feature extractor: " + name);
}

std::string FeatureExtractor::id() const {
  if (kind != ExtractorKind::random_projection) return to_string(kind);
  return "random_projection(seed=" + std::to_string(seed) + ",dim=" + std::to_string(dim) + ")";
}

namespace {

constexpr int kBlock = 4;

MatrixT<double> patch_stats(const Matrix& images, const Shape3& s) {
  if (s.height % kBlock != 0 || s.width % kBlock != 0)
    throw ValidationError("patch_stats: image sides must be multiples of 4, got " + to_string(s));
  const int by = s.height / kBlock, bx = s.width / kBlock;
  const int blocks = s.channels * by * bx;
  MatrixT<double> out(images.rows(), 2 * blocks);
  for (Eigen::Index n = 0; n < images.rows(); ++n) {
    const float* img = images.row(n).data();
    int b = 0;
    for (int c = 0; c < s.channels; ++c)
      for (int gy = 0; gy < by; ++gy)
        for (int gx = 0; gx < bx; ++gx, ++b) {
          double sum = 0.0, sq = 0.0;
          for (int y = 0; y < kBlock; ++y)
            for (int x = 0; x < kBlock; ++x) {
              const double v = img[(c * s.height + gy * kBlock + y) * s.width + gx * kBlock + x];
              sum += v;
              sq += v * v;
            }
          const double mean = sum / (kBlock * kBlock);
          out(n, b) = mean;
          out(n, blocks + b) = std::max(0.0, sq / (kBlock * kBlock) - mean * mean);
        }
  }
  return out;
}

double squared_distance(const double* a, const double* b, Eigen::Index dim) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

// Squared distance from each point to its k-th nearest neighbour in the same set (self excluded).
std::vector<double> kth_radius(const MatrixT<double>& x, int k) {
  const Eigen::Index n = x.rows();
  std::vector<double> radius(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(n - 1));
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) d.push_back(squared_distance(x.row(i).data(), x.row(j).data(), x.cols()));
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    radius[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(k - 1)];
  }
  return radius;
}

// Fraction of query points inside at least one reference ball.
double coverage(const MatrixT<double>& reference, const std::vector<double>& radius,
                const MatrixT<double>& query) {
  std::int64_t inside = 0;
#pragma omp parallel for schedule(static) reduction(+ : inside)
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    for (Eigen::Index r = 0; r < reference.rows(); ++r) {
      if (squared_distance(reference.row(r).data(), query.row(q).data(), query.cols()) <=
          radius[static_cast<std::size_t>(r)]) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(query.rows());
}

void check_pair(const FeatureSet& a, const FeatureSet& b) {
  if (a.dim() != b.dim())
    throw ValidationError("feature dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                          std::to_string(b.dim()));
  if (!a.features.allFinite() || !b.features.allFinite()) throw ValidationError("non-finite features");
}

}  // namespace

FeatureSet extract_features(const Matrix& images, const Shape3& shape, const FeatureExtractor& extractor) {
  if (images.rows() == 0) throw ValidationError("extract_features: no images");
  if (images.cols() != shape.size())
    throw ValidationError("extract_features: rows do not match shape " + to_string(shape));
  FeatureSet out;
  out.extractor_id = extractor.id();
  switch (extractor.kind) {
    case ExtractorKind::flatten_pixels:
      out.features = images.cast<double>();
      break;
    case ExtractorKind::patch_stats:
      out.features = patch_stats(images, shape);
      break;
    case ExtractorKind::random_projection: {
      if (extractor.dim < 1) throw ValidationError("random_projection: dim must be positive");
      Rng rng(extractor.seed);
      std::normal_distribution<double> normal(0.0, 1.0);
      MatrixT<double> proj(images.cols(), extractor.dim);
      const double scale = 1.0 / std::sqrt(static_cast<double>(images.cols()));
      for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = normal(rng) * scale;
      out.features = images.cast<double>() * proj;
      break;
    }
  }
  return out;
}

FeatureSet extract_features(const std::vector<Image>& images, const FeatureExtractor& extractor) {
  if (images.empty()) throw ValidationError("extract_features: no images");
  const Shape3 shape = images.front().shape;
  Matrix rows(static_cast<Eigen::Index>(images.size()), shape.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i].shape == shape)) throw ValidationError("extract_features: images differ in shape");
    std::copy(images[i].data.begin(), images[i].data.end(), rows.row(static_cast<Eigen::Index>(i)).data());
  }
  return extract_features(rows, shape, extractor);
}

double fid(const FeatureSet& real, const FeatureSet& gen) {
  check_pair(real, gen);
  if (real.size() < 2 || gen.size() < 2) throw ValidationError("fid needs at least two samples per set");
  auto moments = [](const MatrixT<double>& x, VectorT<double>& mu, MatrixT<double>& cov) {
    mu = x.colwise().mean().transpose();
    const MatrixT<double> centred = x.rowwise() - mu.transpose();
    cov = (centred.transpose() * centred) / static_cast<double>(x.rows() - 1);
  };
  VectorT<double> mu_r, mu_g;
  MatrixT<double> cov_r, cov_g;
  moments(real.features, mu_r, cov_r);
  moments(gen.features, mu_g, cov_g);

  auto clamped = [](VectorT<double> ev) {
    const double cut = 1e-8 * std::max(0.0, ev.maxCoeff());
    for (auto& v : ev) v = v < cut ? 0.0 : v;
    return ev;
  };
  // Tr((S_r S_g)^1/2) = Tr((S_r^1/2 S_g S_r^1/2)^1/2), the inner product being symmetric PSD.
  Eigen::SelfAdjointEigenSolver<MatrixT<double>> er(cov_r);
  const MatrixT<double> sqrt_r =
      er.eigenvectors() * clamped(er.eigenvalues()).cwiseSqrt().asDiagonal() * er.eigenvectors().transpose();
  MatrixT<double> inner = sqrt_r * cov_g * sqrt_r;
  inner = 0.5 * (inner + inner.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<MatrixT<double>> ei(inner, Eigen::EigenvaluesOnly);
  const double tr_sqrt = clamped(ei.eigenvalues()).cwiseSqrt().sum();

  const double value = (mu_r - mu_g).squaredNorm() + cov_r.trace() + cov_g.trace() - 2.0 * tr_sqrt;
  if (!std::isfinite(value)) throw std::runtime_error("fid: non-finite result");
  return std::max(0.0, value);
}

double f_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

PrecisionRecall knn_precision_recall(const FeatureSet& real, const FeatureSet& gen, int k) {
  check_pair(real, gen);
  if (k < 1 || k >= std::min(real.size(), gen.size()))
    throw ValidationError("k must be in [1, min set size), got " + std::to_string(k));
  const auto r_real = kth_radius(real.features, k);
  const auto r_gen = kth_radius(gen.features, k);
  PrecisionRecall pr;
  pr.precision = coverage(real.features, r_real, gen.features);
  pr.recall = coverage(gen.features, r_gen, real.features);
  pr.f_score = f_score(pr.precision, pr.recall);
  return pr;
}

MetricReport evaluate(const FeatureSet& real, const FeatureSet& gen, int k) {
  MetricReport report;
  report.fid = fid(real, gen);
  const auto pr = knn_precision_recall(real, gen, k);
  report.precision = pr.precision;
  report.recall = pr.recall;
  report.f_score = pr.f_score;
  report.k = k;
  report.extractor_id = real.extractor_id;
  report.n_real = real.size();
  report.n_gen = gen.size();
  return report;
}

void write_report_csv(const MetricReport& r, std::ostream& out) {
  out << "fid,precision,recall,f_score,k,extractor_id,n_real,n_gen\n";
  std::ostringstream line;
  line << std::setprecision(10) << r.fid << ',' << r.precision << ',' << r.recall << ',' << r.f_score << ','
       << r.k << ",\"" << r.extractor_id << "\"," << r.n_real << ',' << r.n_gen << '\n';
  out << line.str();
}

void write_report_text(const MetricReport& r, std::ostream& out) {
  std::ostringstream s;
  s << std::setprecision(10);
  s << "fid = " << r.fid << '\n'
    << "precision = " << r.precision << '\n'
    << "recall = " << r.recall << '\n'
    << "f_score = " << r.f_score << '\n'
    << "k = " << r.k << '\n'
    << "extractor_id = " << r.extractor_id << '\n'
    << "n_real = " << r.n_real << '\n'
    << "n_gen = " << r.n_gen << '\n';
  out << s.str();
}

}  // namespace multidiff
