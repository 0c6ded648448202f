#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cajnet/domain_data.hpp"
#include "cajnet/error.hpp"
#include "cajnet/matrix.hpp"

namespace cajnet {

/// N x C block: entry (j, c) is the distance of sample j to the source mean of class c.
struct ConditionalFeatures {
  Matrix values;

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t num_classes() const noexcept { return values.cols(); }
};

/// Marginal (N x d) and conditional (N x C) blocks of one domain.
class JointFeatures {
 public:
  JointFeatures(Matrix marginal, ConditionalFeatures conditional)
      : marginal_(std::move(marginal)), conditional_(std::move(conditional)) {
    if (marginal_.rows() != conditional_.rows()) {
      throw shape_error("joint features: marginal block has " + std::to_string(marginal_.rows()) +
                        " rows, conditional block " + std::to_string(conditional_.rows()));
    }
  }

  const Matrix& marginal() const noexcept { return marginal_; }
  const ConditionalFeatures& conditional() const noexcept { return conditional_; }
  std::size_t rows() const noexcept { return marginal_.rows(); }

  /// [marginal | conditional], the joint representation as one matrix.
  Matrix concatenated() const { return hconcat(marginal_, conditional_.values); }

  JointFeatures select(std::span<const std::size_t> idx) const {
    return {select_rows(marginal_, idx), ConditionalFeatures{select_rows(conditional_.values, idx)}};
  }

 private:
  Matrix marginal_;
  ConditionalFeatures conditional_;
};

inline JointFeatures build_joint_features(Matrix marginal, ConditionalFeatures conditional) {
  return {std::move(marginal), std::move(conditional)};
}

/// Distances from every query row to every class mean of the labelled source.
inline ConditionalFeatures conditional_features(const Matrix& query, const DomainDataset& source) {
  if (query.cols() != source.dim()) {
    throw shape_error("conditional_features: query has " + std::to_string(query.cols()) +
                      " columns, source has " + std::to_string(source.dim()));
  }
  const Matrix means = class_means(source.features(), source.require_labels(), source.num_classes());
  Matrix out(query.rows(), means.rows());
  for (std::size_t j = 0; j < query.rows(); ++j)
    for (std::size_t c = 0; c < means.rows(); ++c) out(j, c) = l2_distance(query.row(j), means.row(c));
  return {std::move(out)};
}

/// || mean_row(xs) - mean_row(xt) ||_2
inline double marginal_discrepancy(const Matrix& xs, const Matrix& xt) {
  if (xs.cols() != xt.cols()) {
    throw shape_error("discrepancy: column mismatch " + shape_string(xs) + " vs " + shape_string(xt));
  }
  if (xs.rows() == 0 || xt.rows() == 0) throw data_error("discrepancy: empty domain");
  return l2_distance(column_means(xs), column_means(xt));
}

inline double conditional_discrepancy(const ConditionalFeatures& cs, const ConditionalFeatures& ct) {
  if (cs.num_classes() != ct.num_classes()) {
    throw shape_error("conditional discrepancy: " + std::to_string(cs.num_classes()) + " vs " +
                      std::to_string(ct.num_classes()) + " classes");
  }
  return marginal_discrepancy(cs.values, ct.values);
}

struct JointDiscrepancy {
  double marginal = 0.0;
  double conditional = 0.0;
  double total = 0.0;  // marginal + conditional
};

inline JointDiscrepancy joint_discrepancy(const JointFeatures& source, const JointFeatures& target) {
  JointDiscrepancy d;
  d.marginal = marginal_discrepancy(source.marginal(), target.marginal());
  d.conditional = conditional_discrepancy(source.conditional(), target.conditional());
  d.total = d.marginal + d.conditional;
  return d;
}

enum class DistanceTerm { marginal, conditional, joint };

/// How the summed-distance ratio is reported.
///
/// `printed` is the ratio itself: the share of sample j's summed distance mass
/// that falls on source class c. It grows as class c gets farther away.
/// `complementary` maps it to (1 - p) / (C - 1), which grows as class c gets
/// closer and still sums to one over the classes.
enum class ProbabilityReading { printed, complementary };

/// Per-target-sample probability that hypothesised class c is correct.
///
/// Entry j is sum over class-c source samples of the distance term between
/// source sample i and target sample j, divided by the same sum over all
/// source samples. When every term for j is zero the mass is spread uniformly,
/// 1/N_S per source sample.
inline std::vector<double> correct_prediction_probability(const DomainDataset& source, const Matrix& target_features,
                                                          const ConditionalFeatures& target_conditional, int c,
                                                          DistanceTerm mode,
                                                          ProbabilityReading reading = ProbabilityReading::printed) {
  const Labels& ys = source.require_labels();
  const std::size_t C = source.num_classes();
  if (c < 0 || static_cast<std::size_t>(c) >= C) throw data_error("class " + std::to_string(c) + " out of range");
  if (target_features.rows() != target_conditional.rows()) {
    throw shape_error("target marginal and conditional blocks differ in row count");
  }
  const Labels::size_type class_count =
      static_cast<Labels::size_type>(std::count(ys.begin(), ys.end(), c));
  if (class_count == 0) throw data_error("class " + std::to_string(c) + " has no source samples");

  Matrix dm, dc;
  if (mode != DistanceTerm::conditional) dm = pairwise_l2(source.features(), target_features);
  if (mode != DistanceTerm::marginal) {
    const ConditionalFeatures source_conditional = conditional_features(source.features(), source);
    dc = pairwise_l2(source_conditional.values, target_conditional.values);
  }

  const std::size_t ns = source.size();
  std::vector<double> out(target_features.rows());
  for (std::size_t j = 0; j < out.size(); ++j) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ns; ++i) {
      double term = 0.0;
      if (mode != DistanceTerm::conditional) term += dm(i, j);
      if (mode != DistanceTerm::marginal) term += dc(i, j);
      den += term;
      if (ys[i] == c) num += term;
    }
    double p = den > 0.0 ? num / den : static_cast<double>(class_count) / static_cast<double>(ns);
    if (reading == ProbabilityReading::complementary) p = C > 1 ? (1.0 - p) / static_cast<double>(C - 1) : 1.0;
    out[j] = p;
  }
  return out;
}

}  // namespace cajnet
