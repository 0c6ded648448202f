#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "cajnet/error.hpp"
#include "cajnet/matrix.hpp"

namespace cajnet {

/// Feature matrix of one domain plus optional class labels.
class DomainDataset {
 public:
  DomainDataset(Matrix features, std::optional<Labels> labels, std::size_t num_classes)
      : features_(std::move(features)), labels_(std::move(labels)), num_classes_(num_classes) {
    if (features_.rows() < 1 || features_.cols() < 1) throw data_error("dataset needs at least one row and column");
    if (num_classes_ < 1) throw usage_error("dataset needs at least one class");
    if (labels_) {
      if (labels_->size() != features_.rows()) {
        throw shape_error("dataset has " + std::to_string(features_.rows()) + " rows but " +
                          std::to_string(labels_->size()) + " labels");
      }
      for (std::size_t i = 0; i < labels_->size(); ++i) {
        const int y = (*labels_)[i];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes_) {
          throw data_error("label " + std::to_string(y) + " at row " + std::to_string(i) + " outside [0, " +
                           std::to_string(num_classes_) + ")");
        }
      }
    }
  }

  const Matrix& features() const noexcept { return features_; }
  const std::optional<Labels>& labels() const noexcept { return labels_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t size() const noexcept { return features_.rows(); }
  std::size_t dim() const noexcept { return features_.cols(); }
  bool labeled() const noexcept { return labels_.has_value(); }

  const Labels& require_labels() const {
    if (!labels_) throw data_error("dataset is unlabeled");
    return *labels_;
  }

  DomainDataset without_labels() const { return {features_, std::nullopt, num_classes_}; }

 private:
  Matrix features_;
  std::optional<Labels> labels_;
  std::size_t num_classes_;
};

/// Layer widths of the three encoder blocks.
struct EncoderWidths {
  std::size_t block1 = 512;
  std::size_t block2 = 128;
  std::size_t block3 = 64;

  friend bool operator==(const EncoderWidths&, const EncoderWidths&) = default;
};

struct PipelineConfig {
  std::size_t k = 3;       // neighbour count when K is not tuned
  bool tune_k = true;      // select K by minimising the top-K loss over [1, k_max]
  std::size_t k_max = 10;
  std::size_t epochs = 1000;
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  double tau = 0.31;  // adaptation factor on the reversed adversarial gradient
  double eta = 0.1;
  double lambda = 10.0;
  double rho = 10.0;
  std::size_t alignment_rounds = 10;
  std::size_t laplacian_neighbors = 10;
  std::optional<double> kernel_bandwidth;  // empty: median heuristic
  std::optional<double> mu;                // empty: estimated every round
  std::uint64_t seed = 0;
  bool normalize_features = false;
  bool standardize_alignment = true;  // z-score the joint features fed to alignment, source statistics

  EncoderWidths widths;
  double dropout = 0.5;

  bool use_adversarial = true;
  bool use_topk = true;
  bool use_alignment = true;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw usage_error(std::string(name) + " must be positive");
    };
    positive(learning_rate, "learning_rate");
    positive(eta, "eta");
    positive(lambda, "lambda");
    positive(rho, "rho");
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw usage_error("tau must be non-negative");
    if (use_adversarial && tau == 0.0) throw usage_error("tau must be positive while the adversarial loss is enabled");
    if (k < 1) throw usage_error("k must be at least 1");
    if (k_max < 1) throw usage_error("k_max must be at least 1");
    if (batch_size < 1) throw usage_error("batch_size must be at least 1");
    if (alignment_rounds < 1) throw usage_error("alignment_rounds must be at least 1");
    if (laplacian_neighbors < 1) throw usage_error("laplacian_neighbors must be at least 1");
    if (kernel_bandwidth) positive(*kernel_bandwidth, "kernel_bandwidth");
    if (mu && !(*mu >= 0.0 && *mu <= 1.0)) throw usage_error("mu must lie in [0, 1]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw usage_error("dropout must lie in [0, 1)");
    if (widths.block1 < 1 || widths.block2 < 1 || widths.block3 < 1) throw usage_error("encoder widths must be positive");
  }
};

/// Per-column affine map fitted on one domain (z-scoring).
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  static FeatureScaler fit(const Matrix& x) {
    FeatureScaler s;
    s.mean = column_means(x);
    s.scale.assign(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t k = 0; k < x.cols(); ++k) {
        const double d = x(i, k) - s.mean[k];
        s.scale[k] += d * d;
      }
    for (double& v : s.scale) {
      v = std::sqrt(v / static_cast<double>(x.rows()));
      if (v < 1e-12) v = 1.0;  // constant column: centre only
    }
    return s;
  }

  Matrix apply(const Matrix& x) const {
    if (x.cols() != mean.size()) throw shape_error("scaler fitted on " + std::to_string(mean.size()) + " columns");
    Matrix out = x;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t k = 0; k < out.cols(); ++k) out(i, k) = (out(i, k) - mean[k]) / scale[k];
    return out;
  }
};

}  // namespace cajnet
