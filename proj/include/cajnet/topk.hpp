#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cajnet/discrepancy.hpp"
#include "cajnet/error.hpp"
#include "cajnet/matrix.hpp"

namespace cajnet {

/// Row-stochastic within-domain matrix with a zero diagonal.
struct AffinityMatrix {
  Matrix values;

  std::size_t size() const noexcept { return values.rows(); }
};

/// N x K neighbour indices; row j never contains j.
class KLabelMatrix {
 public:
  KLabelMatrix(std::size_t rows, std::size_t k, std::vector<std::size_t> indices)
      : rows_(rows), k_(k), indices_(std::move(indices)) {
    if (k_ < 1) throw usage_error("K must be at least 1");
    if (indices_.size() != rows_ * k_) throw shape_error("K-label storage does not match N x K");
    for (std::size_t j = 0; j < rows_; ++j)
      for (std::size_t idx : row(j))
        if (idx >= rows_ || idx == j) throw data_error("invalid neighbour index in row " + std::to_string(j));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t k() const noexcept { return k_; }
  std::span<const std::size_t> row(std::size_t j) const { return {indices_.data() + j * k_, k_}; }

 private:
  std::size_t rows_;
  std::size_t k_;
  std::vector<std::size_t> indices_;
};

/// Which end of each affinity row supplies the neighbours.
///
/// The affinity grows with distance, so `nearest` takes the smallest entries.
/// `largest_affinity` sorts each row in descending order of affinity and keeps
/// the first K, which selects the farthest samples; it exists for ablation.
enum class NeighborOrder { nearest, largest_affinity };

/// Summed marginal + conditional distance between every pair of samples.
inline Matrix combined_distances(const Matrix& marginal, const ConditionalFeatures& conditional) {
  if (marginal.rows() != conditional.rows()) {
    throw shape_error("affinity: marginal block has " + std::to_string(marginal.rows()) +
                      " rows, conditional block " + std::to_string(conditional.rows()));
  }
  Matrix d = pairwise_l2(marginal, marginal);
  const Matrix dc = pairwise_l2(conditional.values, conditional.values);
  for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] += dc.data()[i];
  return d;
}

inline AffinityMatrix affinity_matrix(const Matrix& marginal, const ConditionalFeatures& conditional) {
  if (marginal.rows() < 2) throw data_error("affinity matrix needs at least 2 samples");
  Matrix p = combined_distances(marginal, conditional);
  const std::size_t n = p.rows();
  for (std::size_t j = 0; j < n; ++j) {
    p(j, j) = 0.0;
    double total = 0.0;
    for (std::size_t m = 0; m < n; ++m) total += p(j, m);
    for (std::size_t m = 0; m < n; ++m) {
      if (m == j) continue;
      // All other samples coincide with j: spread the mass evenly.
      p(j, m) = total > 0.0 ? p(j, m) / total : 1.0 / static_cast<double>(n - 1);
    }
  }
  return {std::move(p)};
}

namespace detail {

/// Every row's other indices sorted by the requested order, ties by index.
inline std::vector<std::vector<std::size_t>> ranked_neighbors(const AffinityMatrix& a, NeighborOrder order) {
  const std::size_t n = a.size();
  std::vector<std::vector<std::size_t>> ranked(n);
  for (std::size_t j = 0; j < n; ++j) {
    auto& r = ranked[j];
    r.reserve(n - 1);
    for (std::size_t m = 0; m < n; ++m)
      if (m != j) r.push_back(m);
    const auto row = a.values.row(j);
    std::stable_sort(r.begin(), r.end(), [&](std::size_t x, std::size_t y) {
      return order == NeighborOrder::nearest ? row[x] < row[y] : row[x] > row[y];
    });
  }
  return ranked;
}

inline KLabelMatrix take_prefix(const std::vector<std::vector<std::size_t>>& ranked, std::size_t k) {
  std::vector<std::size_t> idx;
  idx.reserve(ranked.size() * k);
  for (const auto& r : ranked) idx.insert(idx.end(), r.begin(), r.begin() + static_cast<std::ptrdiff_t>(k));
  return {ranked.size(), k, std::move(idx)};
}

}  // namespace detail

inline KLabelMatrix topk_labels(const AffinityMatrix& a, std::size_t k, NeighborOrder order = NeighborOrder::nearest) {
  if (k < 1 || k + 1 > a.size()) {
    throw usage_error("K=" + std::to_string(k) + " outside [1, " + std::to_string(a.size() - 1) + "]");
  }
  return detail::take_prefix(detail::ranked_neighbors(a, order), k);
}

/// Most frequent prediction among each sample's neighbours; ties keep the sample's own prediction.
inline Labels majority_relabel(const Labels& y_pred, const KLabelMatrix& klabels) {
  if (y_pred.size() != klabels.rows()) {
    throw shape_error("majority_relabel: " + std::to_string(y_pred.size()) + " predictions for " +
                      std::to_string(klabels.rows()) + " K-label rows");
  }
  Labels out(y_pred.size());
  std::vector<std::pair<int, std::size_t>> votes;
  for (std::size_t j = 0; j < y_pred.size(); ++j) {
    votes.clear();
    for (std::size_t idx : klabels.row(j)) {
      const int y = y_pred[idx];
      auto it = std::find_if(votes.begin(), votes.end(), [y](const auto& v) { return v.first == y; });
      if (it == votes.end()) votes.emplace_back(y, 1);
      else ++it->second;
    }
    std::size_t best = 0, winners = 0;
    int winner = y_pred[j];
    for (const auto& [label, count] : votes) {
      if (count > best) {
        best = count;
        winners = 1;
        winner = label;
      } else if (count == best) {
        ++winners;
      }
    }
    out[j] = winners == 1 ? winner : y_pred[j];
  }
  return out;
}

/// Fraction of samples whose prediction differs from their neighbourhood majority.
inline double topk_loss(const Labels& y_pred, const KLabelMatrix& klabels) {
  const Labels voted = majority_relabel(y_pred, klabels);
  std::size_t disagree = 0;
  for (std::size_t j = 0; j < y_pred.size(); ++j) disagree += voted[j] != y_pred[j] ? 1 : 0;
  return static_cast<double>(disagree) / static_cast<double>(y_pred.size());
}

struct KTuning {
  std::size_t best_k = 1;
  std::vector<double> losses;  // losses[k - 1]
};

/// argmin over k in [1, k_max] of the top-K loss; ties go to the smaller k.
inline KTuning tune_k(const Matrix& marginal, const ConditionalFeatures& conditional, const Labels& y_pred,
                      std::size_t k_max, NeighborOrder order = NeighborOrder::nearest) {
  const AffinityMatrix a = affinity_matrix(marginal, conditional);
  if (k_max < 1 || k_max + 1 > a.size()) {
    throw usage_error("k_max=" + std::to_string(k_max) + " outside [1, " + std::to_string(a.size() - 1) + "]");
  }
  const auto ranked = detail::ranked_neighbors(a, order);
  KTuning result;
  double best = 2.0;
  for (std::size_t k = 1; k <= k_max; ++k) {
    const double loss = topk_loss(y_pred, detail::take_prefix(ranked, k));
    result.losses.push_back(loss);
    if (loss < best) {
      best = loss;
      result.best_k = k;
    }
  }
  return result;
}

}  // namespace cajnet
