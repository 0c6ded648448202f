#pragma once

// Dynamic distribution alignment: a kernel classifier over source and target
// samples with squared loss on source rows, an RKHS-norm penalty (eta), a
// dynamic MMD term (lambda) mixing marginal and class-conditional
// discrepancies through mu, and a graph Laplacian smoothness term (rho).
// Coefficients have the closed form
//
//   A = ((E + lambda M + rho L) K + eta I)^-1 E Y
//
// with E the diagonal source indicator and Y one-hot source labels (target
// rows zero). Target pseudo-labels are refreshed from argmax(K A) each round.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cajnet/domain_data.hpp"
#include "cajnet/error.hpp"
#include "cajnet/matrix.hpp"

namespace cajnet {

/// Median of all pairwise distances between distinct rows. Falls back to 1
/// when every row coincides.
inline double median_pairwise_distance(const Matrix& x) {
  const Matrix d = pairwise_l2(x, x);
  std::vector<double> v;
  v.reserve(x.rows() * (x.rows() - 1) / 2);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = i + 1; j < x.rows(); ++j) v.push_back(d(i, j));
  if (v.empty()) return 1.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double med = *mid;
  if (v.size() % 2 == 0) med = 0.5 * (med + *std::max_element(v.begin(), mid));
  return med > 0.0 ? med : 1.0;
}

/// exp(-||a_i - b_j||^2 / (2 b^2))
inline Matrix rbf_kernel(const Matrix& a, const Matrix& b, double bandwidth) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw usage_error("kernel bandwidth must be positive");
  Matrix k = pairwise_sq_l2(a, b);
  const double denom = 2.0 * bandwidth * bandwidth;
  for (double& v : k.data()) v = std::exp(-v / denom);
  return k;
}

struct KernelMatrix {
  Matrix values;
  double bandwidth = 1.0;
};

/// Gram matrix of `x`; an empty bandwidth selects the median heuristic.
inline KernelMatrix rbf_kernel_matrix(const Matrix& x, std::optional<double> bandwidth = std::nullopt) {
  if (x.rows() < 2) throw data_error("kernel matrix needs at least 2 samples");
  if (bandwidth && !(*bandwidth > 0.0)) throw usage_error("kernel bandwidth must be positive");
  const double b = bandwidth ? *bandwidth : median_pairwise_distance(x);
  return {rbf_kernel(x, x, b), b};
}

struct MmdMatrix {
  Matrix values;
  double mu = 0.0;
};

/// (1 - mu) M_0 + mu * sum_c M_c over samples ordered [source; target].
///
/// M_0 = e e^T with e = 1/N_S on source rows and -1/N_T on target rows.
/// M_c is built the same way from the class-c source samples and the target
/// samples pseudo-labelled c; classes absent from either side are skipped.
inline MmdMatrix mmd_matrix(std::size_t n_source, std::size_t n_target, const Labels& source_labels,
                            const Labels& target_pseudo, std::size_t num_classes, double mu) {
  if (source_labels.size() != n_source || target_pseudo.size() != n_target) {
    throw shape_error("mmd_matrix: label counts do not match domain sizes");
  }
  if (n_source == 0 || n_target == 0) throw data_error("mmd_matrix: empty domain");
  if (!(mu >= 0.0 && mu <= 1.0)) throw usage_error("mmd_matrix: mu must lie in [0, 1]");
  for (const Labels* ys : {&source_labels, &target_pseudo})
    for (int y : *ys)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw data_error("mmd_matrix: label out of range");

  const std::size_t n = n_source + n_target;
  Matrix m(n, n);
  auto add_outer = [&](const std::vector<double>& e, double weight) {
    for (std::size_t i = 0; i < n; ++i) {
      if (e[i] == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) m(i, j) += weight * (e[i] * e[j]);
    }
  };

  std::vector<double> e(n);
  for (std::size_t i = 0; i < n_source; ++i) e[i] = 1.0 / static_cast<double>(n_source);
  for (std::size_t j = 0; j < n_target; ++j) e[n_source + j] = -1.0 / static_cast<double>(n_target);
  if (mu < 1.0) add_outer(e, 1.0 - mu);

  if (mu > 0.0) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      const int label = static_cast<int>(c);
      const auto ns = static_cast<double>(std::count(source_labels.begin(), source_labels.end(), label));
      const auto nt = static_cast<double>(std::count(target_pseudo.begin(), target_pseudo.end(), label));
      if (ns == 0.0 || nt == 0.0) continue;
      std::fill(e.begin(), e.end(), 0.0);
      for (std::size_t i = 0; i < n_source; ++i)
        if (source_labels[i] == label) e[i] = 1.0 / ns;
      for (std::size_t j = 0; j < n_target; ++j)
        if (target_pseudo[j] == label) e[n_source + j] = -1.0 / nt;
      add_outer(e, mu);
    }
  }
  return {std::move(m), mu};
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  const double nu = l2_norm(u), nv = l2_norm(v);
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot(u, v) / (nu * nv);
}

/// L = D - W over the symmetrised p-nearest-neighbour cosine graph.
///
/// Each sample links to its p most cosine-similar other samples (ties to the
/// lower index) with weight max(0, cosine); W keeps the larger of the two
/// directed weights.
inline Matrix graph_laplacian(const Matrix& x, std::size_t p_neighbors) {
  const std::size_t n = x.rows();
  if (p_neighbors < 1 || p_neighbors >= n) {
    throw usage_error("laplacian: neighbour count " + std::to_string(p_neighbors) + " outside [1, " +
                      std::to_string(n) + ")");
  }
  Matrix sim(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) sim(i, j) = sim(j, i) = cosine_similarity(x.row(i), x.row(j));

  Matrix w(n, n);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    const auto row = sim.row(i);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(p_neighbors), order.end(),
                      [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    for (std::size_t r = 0; r < p_neighbors; ++r) {
      const std::size_t j = order[r];
      const double wij = std::max(0.0, row[j]);
      w(i, j) = std::max(w(i, j), wij);
      w(j, i) = std::max(w(j, i), wij);
    }
  }
  Matrix lap(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double degree = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      degree += w(i, j);
      lap(i, j) = -w(i, j);
    }
    lap(i, i) = degree - w(i, i);
  }
  return lap;
}

/// A-distance proxy 2 (1 - 2 err), clamped at 0, of a ridge least-squares
/// linear separator trained on the even-indexed rows of each side and scored
/// on the odd-indexed rows. Returns nullopt when either side has fewer than
/// two rows.
inline std::optional<double> proxy_a_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() < 2 || b.rows() < 2) return std::nullopt;
  const std::size_t d = a.cols();
  // Normal equations over [x, 1] with a small ridge.
  Matrix gram(d + 1, d + 1), rhs(d + 1, 1);
  auto accumulate = [&](std::span<const double> x, double t) {
    for (std::size_t r = 0; r <= d; ++r) {
      const double xr = r < d ? x[r] : 1.0;
      rhs(r, 0) += xr * t;
      for (std::size_t c = 0; c <= d; ++c) gram(r, c) += xr * (c < d ? x[c] : 1.0);
    }
  };
  for (std::size_t i = 0; i < a.rows(); i += 2) accumulate(a.row(i), -1.0);
  for (std::size_t i = 0; i < b.rows(); i += 2) accumulate(b.row(i), 1.0);
  for (std::size_t r = 0; r <= d; ++r) gram(r, r) += 1e-3;
  const Matrix w = solve_linear(gram, rhs);
  auto score = [&](std::span<const double> x) {
    double s = w(d, 0);
    for (std::size_t k = 0; k < d; ++k) s += w(k, 0) * x[k];
    return s;
  };
  std::size_t wrong = 0, total = 0;
  for (std::size_t i = 1; i < a.rows(); i += 2, ++total) wrong += score(a.row(i)) > 0.0 ? 1 : 0;
  for (std::size_t i = 1; i < b.rows(); i += 2, ++total) wrong += score(b.row(i)) <= 0.0 ? 1 : 0;
  const double err = static_cast<double>(wrong) / static_cast<double>(total);
  return std::max(0.0, 2.0 * (1.0 - 2.0 * err));
}

struct MuEstimate {
  double mu = 0.0;
  double global_distance = 0.0;      // A-distance proxy between whole domains
  double mean_class_distance = 0.0;  // mean over classes scored on both sides
  std::size_t classes_used = 0;
  std::string warning;
};

/// mu = 1 - d_global / (d_global + mean_c d_c), clamped to [0, 1]; 0.5 when
/// both distances vanish. Degenerate pseudo-labels (one class, or no class
/// with two samples on each side) give mu = 0 and a warning.
inline MuEstimate estimate_mu(const Matrix& source_features, const Matrix& target_features,
                              const Labels& source_labels, const Labels& target_pseudo, std::size_t num_classes) {
  if (source_features.rows() == 0 || target_features.rows() == 0) throw data_error("estimate_mu: empty domain");
  if (source_labels.size() != source_features.rows() || target_pseudo.size() != target_features.rows()) {
    throw shape_error("estimate_mu: label counts do not match domain sizes");
  }
  MuEstimate est;
  est.global_distance = proxy_a_distance(source_features, target_features).value_or(0.0);

  for (const Labels* ys : {&source_labels, &target_pseudo})
    for (int y : *ys)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw data_error("estimate_mu: label out of range");
  std::vector<std::size_t> present(num_classes, 0);
  for (int y : target_pseudo) ++present[static_cast<std::size_t>(y)];
  if (num_classes > 1 && std::count_if(present.begin(), present.end(), [](std::size_t c) { return c > 0; }) <= 1) {
    est.warning = "target pseudo-labels cover a single class; mu set to 0";
    return est;
  }

  double sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> si, ti;
    for (std::size_t i = 0; i < source_labels.size(); ++i)
      if (source_labels[i] == static_cast<int>(c)) si.push_back(i);
    for (std::size_t j = 0; j < target_pseudo.size(); ++j)
      if (target_pseudo[j] == static_cast<int>(c)) ti.push_back(j);
    const auto dc = proxy_a_distance(select_rows(source_features, si), select_rows(target_features, ti));
    if (!dc) continue;
    sum += *dc;
    ++est.classes_used;
  }
  if (est.classes_used == 0) {
    est.warning = "no class has two samples in both domains; mu set to 0";
    return est;
  }
  est.mean_class_distance = sum / static_cast<double>(est.classes_used);
  const double denom = est.global_distance + est.mean_class_distance;
  est.mu = denom > 1e-12 ? std::clamp(1.0 - est.global_distance / denom, 0.0, 1.0) : 0.5;
  return est;
}

struct AlignmentOptions {
  double eta = 0.1;
  double lambda = 10.0;
  double rho = 10.0;
  std::size_t rounds = 10;
  std::size_t laplacian_neighbors = 10;
  std::optional<double> bandwidth;  // empty: median heuristic
  std::optional<double> mu;         // empty: estimated every round

  static AlignmentOptions from(const PipelineConfig& cfg) {
    return {cfg.eta, cfg.lambda, cfg.rho, cfg.alignment_rounds, cfg.laplacian_neighbors, cfg.kernel_bandwidth, cfg.mu};
  }
};

/// Kernel classifier over the stored training samples.
struct AlignmentModel {
  Matrix coefficients;  // (N_S + N_T) x C
  double bandwidth = 1.0;
  Matrix samples;       // [source; target] rows the kernel is evaluated against

  Matrix scores(const Matrix& x) const { return matmul(rbf_kernel(x, samples, bandwidth), coefficients); }
};

struct AlignmentRound {
  double mu = 0.0;
  std::string mu_warning;
  std::size_t labels_changed = 0;  // target labels that differ from the previous round
};

struct AlignmentResult {
  Labels labels;  // refined target labels
  AlignmentModel model;
  std::vector<AlignmentRound> rounds;
};

/// Hook applied to the refreshed target labels between rounds.
using LabelRefiner = std::function<Labels(const Labels&)>;

inline Labels argmax_scores(const Matrix& scores, std::size_t offset, std::size_t count) {
  Labels out(count);
  for (std::size_t j = 0; j < count; ++j) {
    const auto r = scores.row(offset + j);
    out[j] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

inline AlignmentResult align(const DomainDataset& source, const Matrix& target_features, Labels target_pseudo,
                             const AlignmentOptions& opt, const LabelRefiner& refine = {}) {
  const Labels& ys = source.require_labels();
  const std::size_t C = source.num_classes();
  const std::size_t ns = source.size(), nt = target_features.rows();
  if (target_features.cols() != source.dim()) throw shape_error("align: feature width mismatch between domains");
  if (target_pseudo.size() != nt) throw shape_error("align: pseudo-label count does not match target rows");
  for (int y : target_pseudo)
    if (y < 0 || static_cast<std::size_t>(y) >= C) throw data_error("align: pseudo-label out of range");
  if (!(opt.eta > 0.0) || opt.lambda < 0.0 || opt.rho < 0.0) {
    throw usage_error("align: eta must be positive, lambda and rho non-negative");
  }
  if (opt.rounds < 1) throw usage_error("align: need at least one round");
  if (opt.mu && !(*opt.mu >= 0.0 && *opt.mu <= 1.0)) throw usage_error("align: mu must lie in [0, 1]");

  const std::size_t n = ns + nt;
  Matrix x = vconcat(source.features(), target_features);
  const KernelMatrix kernel = rbf_kernel_matrix(x, opt.bandwidth);
  const Eigen::MatrixXd K = kernel.values.eigen();
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  if (opt.rho > 0.0) lap = graph_laplacian(x, std::min(opt.laplacian_neighbors, n - 1)).eigen();

  Matrix ey(n, C);  // E Y
  for (std::size_t i = 0; i < ns; ++i) ey(i, static_cast<std::size_t>(ys[i])) = 1.0;

  AlignmentResult result;
  Matrix coefficients;
  for (std::size_t r = 0; r < opt.rounds; ++r) {
    AlignmentRound info;
    if (opt.mu) {
      info.mu = *opt.mu;
    } else {
      const MuEstimate est = estimate_mu(source.features(), target_features, ys, target_pseudo, C);
      info.mu = est.mu;
      info.mu_warning = est.warning;
    }

    Eigen::MatrixXd reg = opt.rho * lap;
    if (opt.lambda > 0.0) reg += opt.lambda * mmd_matrix(ns, nt, ys, target_pseudo, C, info.mu).values.eigen();
    for (std::size_t i = 0; i < ns; ++i) reg(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += 1.0;
    Eigen::MatrixXd system = reg * K;
    system.diagonal().array() += opt.eta;

    coefficients = solve_linear(Matrix::from_eigen(system), ey);
    const Matrix scores = Matrix::from_eigen(K * coefficients.eigen());
    Labels next = argmax_scores(scores, ns, nt);
    if (refine) next = refine(next);
    for (std::size_t j = 0; j < nt; ++j) info.labels_changed += next[j] != target_pseudo[j] ? 1 : 0;
    target_pseudo = std::move(next);
    result.rounds.push_back(std::move(info));
  }
  result.labels = std::move(target_pseudo);
  result.model = {std::move(coefficients), kernel.bandwidth, std::move(x)};
  return result;
}

}  // namespace cajnet
