#pragma once

#include "multidiff/image_io.hpp"
#include "multidiff/types.hpp"

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace multidiff {

struct FeatureSet {
  MatrixT<double> features;  // (n_samples, feat_dim)
  std::string extractor_id;

  [[nodiscard]] int size() const { return static_cast<int>(features.rows()); }
  [[nodiscard]] int dim() const { return static_cast<int>(features.cols()); }
};

enum class ExtractorKind { flatten_pixels, patch_stats, random_projection };

struct FeatureExtractor {
  ExtractorKind kind = ExtractorKind::patch_stats;
  std::uint64_t seed = 0;  // random_projection only
  int dim = 64;            // random_projection only

  [[nodiscard]] std::string id() const;
};

const char* to_string(ExtractorKind kind);
ExtractorKind parse_extractor_kind(const std::string& name);

/// images: one flattened (C, H, W) image per row. patch_stats needs H and W divisible by 4.
FeatureSet extract_features(const Matrix& images, const Shape3& shape, const FeatureExtractor& extractor);
FeatureSet extract_features(const std::vector<Image>& images, const FeatureExtractor& extractor);

/// Frechet distance between Gaussians fitted to the two feature sets.
double fid(const FeatureSet& real, const FeatureSet& gen);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
};

double f_score(double precision, double recall);

/// k-NN manifold precision/recall with exact brute-force neighbours.
PrecisionRecall knn_precision_recall(const FeatureSet& real, const FeatureSet& gen, int k = 3);

struct MetricReport {
  double fid = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  int k = 3;
  std::string extractor_id;
  int n_real = 0;
  int n_gen = 0;
};

MetricReport evaluate(const FeatureSet& real, const FeatureSet& gen, int k = 3);

/// Header line plus one value line.
void write_report_csv(const MetricReport& report, std::ostream& out);
/// One "key = value" line per field.
void write_report_text(const MetricReport& report, std::ostream& out);

}  // namespace multidiff
