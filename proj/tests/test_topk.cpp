#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "cajnet/topk.hpp"
#include "test_support.hpp"

using namespace cajnet;
using cajnet::testing::random_labels;
using cajnet::testing::random_matrix;

namespace {

ConditionalFeatures zero_conditional(std::size_t n) { return {Matrix(n, 1)}; }

double dist(const Matrix& m, std::size_t a, std::size_t b) {
  double s = 0;
  for (std::size_t k = 0; k < m.cols(); ++k) s += (m(a, k) - m(b, k)) * (m(a, k) - m(b, k));
  return std::sqrt(s);
}

Matrix affinity_oracle(const Matrix& x, const Matrix& c) {
  const std::size_t n = x.rows();
  Matrix p(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double total = 0;
    for (std::size_t m = 0; m < n; ++m)
      if (m != j) total += dist(x, j, m) + dist(c, j, m);
    for (std::size_t m = 0; m < n; ++m)
      if (m != j) p(j, m) = (dist(x, j, m) + dist(c, j, m)) / total;
  }
  return p;
}

std::vector<std::vector<std::size_t>> neighbours_oracle(const Matrix& x, const Matrix& c, std::size_t k) {
  const Matrix a = affinity_oracle(x, c);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t j = 0; j < x.rows(); ++j) {
    std::vector<std::pair<double, std::size_t>> v;
    for (std::size_t m = 0; m < x.rows(); ++m)
      if (m != j) v.emplace_back(a(j, m), m);
    std::sort(v.begin(), v.end());
    std::vector<std::size_t> row;
    for (std::size_t r = 0; r < k; ++r) row.push_back(v[r].second);
    out.push_back(row);
  }
  return out;
}

KLabelMatrix from_rows(const std::vector<std::vector<std::size_t>>& rows) {
  std::vector<std::size_t> idx;
  for (const auto& r : rows) idx.insert(idx.end(), r.begin(), r.end());
  return {rows.size(), rows.front().size(), idx};
}

KLabelMatrix five_sample_klabels() {
  // 1-indexed rows {2,3,4},{1,3,4},{1,2,4},{1,2,3},{1,2,3}
  return from_rows({{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}, {0, 1, 2}});
}

// Two clusters of 10 points in the plane, the first around the origin and the second around (20, 0).
Matrix two_clusters(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix x(20, 2);
  for (std::size_t i = 0; i < 20; ++i) {
    x(i, 0) = n(rng) + (i < 10 ? 0.0 : 20.0);
    x(i, 1) = n(rng);
  }
  return x;
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no cajnet::Error thrown";
  return ErrorKind::io;
}

}  // namespace

TEST(Affinity, TwoSamples) {
  const auto a = affinity_matrix(Matrix{{0, 0}, {1, 1}}, zero_conditional(2));
  EXPECT_EQ(a.values, (Matrix{{0, 1}, {1, 0}}));
}

TEST(Affinity, CollinearMiddleRow) {
  const auto a = affinity_matrix(Matrix{{0}, {1}, {2}}, zero_conditional(3));
  EXPECT_EQ(a.values(1, 0), 0.5);
  EXPECT_EQ(a.values(1, 1), 0.0);
  EXPECT_EQ(a.values(1, 2), 0.5);
}

TEST(Affinity, MatchesOracle) {
  std::mt19937_64 rng(31);
  const Matrix x = random_matrix(8, 4, rng), c = random_matrix(8, 3, rng, 0, 2);
  const auto a = affinity_matrix(x, {c});
  const Matrix o = affinity_oracle(x, c);
  for (std::size_t i = 0; i < o.size(); ++i) EXPECT_NEAR(a.values.data()[i], o.data()[i], 1e-12);
}

TEST(Affinity, InvariantsOnRandomInstances) {
  std::mt19937_64 rng(32);
  std::uniform_int_distribution<std::size_t> n_dist(2, 30), d_dist(1, 10), c_dist(1, 4);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = n_dist(rng);
    const auto a = affinity_matrix(random_matrix(n, d_dist(rng), rng), {random_matrix(n, c_dist(rng), rng, 0, 3)});
    for (std::size_t j = 0; j < n; ++j) {
      EXPECT_EQ(a.values(j, j), 0.0);
      double s = 0;
      for (double v : a.values.row(j)) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Affinity, CoincidentSamplesSpreadUniformly) {
  const auto a = affinity_matrix(Matrix{{1, 1}, {1, 1}, {1, 1}}, zero_conditional(3));
  EXPECT_EQ(a.values(0, 1), 0.5);
  EXPECT_EQ(a.values(2, 0), 0.5);
}

TEST(Affinity, Errors) {
  EXPECT_EQ(kind_of([] { affinity_matrix(Matrix{{0}}, zero_conditional(1)); }), ErrorKind::data);
  EXPECT_EQ(kind_of([] { affinity_matrix(Matrix{{0}, {1}}, zero_conditional(3)); }), ErrorKind::shape);
}

TEST(TopKLabels, NearestOnALine) {
  const auto kl = topk_labels(affinity_matrix(Matrix{{0}, {1}, {10}}, zero_conditional(3)), 1);
  EXPECT_EQ(kl.row(0)[0], 1u);
  EXPECT_EQ(kl.row(1)[0], 0u);
  EXPECT_EQ(kl.row(2)[0], 1u);
}

TEST(TopKLabels, FullNeighbourhoodIsPermutation) {
  std::mt19937_64 rng(33);
  const std::size_t n = 9;
  const auto kl = topk_labels(affinity_matrix(random_matrix(n, 3, rng), zero_conditional(n)), n - 1);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<std::size_t> r(kl.row(j).begin(), kl.row(j).end());
    r.push_back(j);
    std::sort(r.begin(), r.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(r[i], i);
  }
}

TEST(TopKLabels, ClusteredNeighboursStayInCluster) {
  std::mt19937_64 rng(34);
  const Matrix x = two_clusters(rng);
  const auto kl = topk_labels(affinity_matrix(x, zero_conditional(20)), 3);
  const auto oracle = neighbours_oracle(x, Matrix(20, 1), 3);
  for (std::size_t j = 0; j < 20; ++j)
    for (std::size_t r = 0; r < 3; ++r) {
      EXPECT_EQ(kl.row(j)[r], oracle[j][r]);
      EXPECT_EQ(kl.row(j)[r] < 10, j < 10);
    }
}

TEST(TopKLabels, TiesGoToLowerIndex) {
  // Points 0 and 2 are equidistant from 1.
  const auto kl = topk_labels(affinity_matrix(Matrix{{-1}, {0}, {1}}, zero_conditional(3)), 1);
  EXPECT_EQ(kl.row(1)[0], 0u);
}

TEST(TopKLabels, ScaleInvariant) {
  std::mt19937_64 rng(35);
  const Matrix x = random_matrix(15, 4, rng), c = random_matrix(15, 2, rng, 0, 1);
  Matrix xs = x, cs = c;
  for (double& v : xs.data()) v *= 4.0;
  for (double& v : cs.data()) v *= 4.0;
  const auto a = topk_labels(affinity_matrix(x, {c}), 5);
  const auto b = topk_labels(affinity_matrix(xs, {cs}), 5);
  for (std::size_t j = 0; j < 15; ++j)
    for (std::size_t r = 0; r < 5; ++r) EXPECT_EQ(a.row(j)[r], b.row(j)[r]);
}

TEST(TopKLabels, LargestAffinityOrderPicksFarthest) {
  const auto kl =
      topk_labels(affinity_matrix(Matrix{{0}, {1}, {10}}, zero_conditional(3)), 1, NeighborOrder::largest_affinity);
  EXPECT_EQ(kl.row(0)[0], 2u);
  EXPECT_EQ(kl.row(1)[0], 2u);
  EXPECT_EQ(kl.row(2)[0], 0u);
}

TEST(TopKLabels, Errors) {
  const auto a = affinity_matrix(Matrix{{0}, {1}, {2}}, zero_conditional(3));
  EXPECT_EQ(kind_of([&] { topk_labels(a, 0); }), ErrorKind::usage);
  EXPECT_EQ(kind_of([&] { topk_labels(a, 3); }), ErrorKind::usage);
  EXPECT_EQ(kind_of([] { KLabelMatrix(2, 1, {0, 0}); }), ErrorKind::data);
  EXPECT_EQ(kind_of([] { KLabelMatrix(2, 1, {1, 2}); }), ErrorKind::data);
  EXPECT_EQ(kind_of([] { KLabelMatrix(2, 1, {1}); }), ErrorKind::shape);
}

TEST(MajorityRelabel, FiveSampleExample) {
  EXPECT_EQ(majority_relabel({0, 1, 0, 0, 1}, five_sample_klabels()), (Labels{0, 0, 0, 0, 0}));
}

TEST(MajorityRelabel, UnanimousUnchanged) {
  EXPECT_EQ(majority_relabel({2, 2, 2, 2, 2}, five_sample_klabels()), (Labels{2, 2, 2, 2, 2}));
}

TEST(MajorityRelabel, SingleNeighbourLookup) {
  std::mt19937_64 rng(36);
  const Matrix x = random_matrix(25, 3, rng);
  const Labels y = random_labels(25, 4, rng);
  const auto kl = topk_labels(affinity_matrix(x, zero_conditional(25)), 1);
  const Labels out = majority_relabel(y, kl);
  for (std::size_t j = 0; j < 25; ++j) EXPECT_EQ(out[j], y[kl.row(j)[0]]);
}

TEST(MajorityRelabel, TieKeepsOwnLabel) {
  // Sample 0 sees one vote each for 1 and 2.
  const auto kl = from_rows({{1, 2}, {0, 2}, {0, 1}});
  EXPECT_EQ(majority_relabel({0, 1, 2}, kl), (Labels{0, 1, 2}));
}

TEST(MajorityRelabel, ShapeMismatch) {
  EXPECT_EQ(kind_of([] { majority_relabel({0, 1}, five_sample_klabels()); }), ErrorKind::shape);
}

TEST(MajorityRelabel, OnePassReachesConsistency) {
  const KLabelMatrix kl = five_sample_klabels();
  const Labels once = majority_relabel({0, 1, 0, 0, 1}, kl);
  EXPECT_EQ(majority_relabel(once, kl), once);
  EXPECT_LE(topk_loss(once, kl), topk_loss({0, 1, 0, 0, 1}, kl));
}

TEST(TopKLoss, FiveSampleExampleIsExactlyPointFour) {
  EXPECT_EQ(topk_loss({0, 1, 0, 0, 1}, five_sample_klabels()), 0.4);
}

TEST(TopKLoss, UnanimousIsZero) { EXPECT_EQ(topk_loss({1, 1, 1, 1, 1}, five_sample_klabels()), 0.0); }

TEST(TopKLoss, MatchesIndicatorAverage) {
  std::mt19937_64 rng(37);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix x = random_matrix(20, 3, rng);
    const Labels y = random_labels(20, 3, rng);
    const auto kl = topk_labels(affinity_matrix(x, zero_conditional(20)), 4);
    double disagree = 0;
    for (std::size_t j = 0; j < 20; ++j) {
      std::map<int, int> votes;
      for (std::size_t i : kl.row(j)) ++votes[y[i]];
      int best = -1, winners = 0, winner = y[j];
      for (auto [label, count] : votes) {
        if (count > best) best = count, winners = 1, winner = label;
        else if (count == best) ++winners;
      }
      disagree += (winners == 1 ? winner : y[j]) != y[j];
    }
    EXPECT_EQ(topk_loss(y, kl), disagree / 20.0);
  }
}

TEST(TuneK, ConsistentPredictionsPickOne) {
  std::mt19937_64 rng(38);
  const Matrix x = two_clusters(rng);
  Labels y(20);
  for (std::size_t i = 0; i < 20; ++i) y[i] = i < 10 ? 0 : 1;
  const auto t = tune_k(x, zero_conditional(20), y, 9);
  EXPECT_EQ(t.best_k, 1u);
  for (double l : t.losses) EXPECT_EQ(l, 0.0);
}

TEST(TuneK, SmallKBeatsLargeKWithOneErrorPerCluster) {
  std::mt19937_64 rng(39);
  const Matrix x = two_clusters(rng);
  Labels y(20);
  for (std::size_t i = 0; i < 20; ++i) y[i] = i < 10 ? 0 : 1;
  y[3] = 1;
  y[14] = 0;
  const auto t = tune_k(x, zero_conditional(20), y, 19);
  ASSERT_EQ(t.losses.size(), 19u);
  EXPECT_LE(t.losses[2], t.losses[14]);
  EXPECT_GE(t.best_k, 1u);
  EXPECT_LE(t.best_k, 4u);
}

TEST(TuneK, CentralErrorPutsMinimiserInTwoToFour) {
  // The mislabelled point sits at each cluster centre, so it is the nearest
  // neighbour of several others and K=1 propagates its error.
  std::mt19937_64 rng(40);
  Matrix x = two_clusters(rng);
  x(0, 0) = 0.0, x(0, 1) = 0.0;
  x(10, 0) = 20.0, x(10, 1) = 0.0;
  Labels y(20);
  for (std::size_t i = 0; i < 20; ++i) y[i] = i < 10 ? 0 : 1;
  y[0] = 1;
  y[10] = 0;
  const auto t = tune_k(x, zero_conditional(20), y, 10);
  EXPECT_GE(t.best_k, 2u);
  EXPECT_LE(t.best_k, 4u);
}

TEST(TuneK, RangeChecked) {
  const Matrix x{{0}, {1}, {2}};
  EXPECT_EQ(kind_of([&] { tune_k(x, zero_conditional(3), {0, 0, 0}, 3); }), ErrorKind::usage);
  EXPECT_EQ(kind_of([&] { tune_k(x, zero_conditional(3), {0, 0, 0}, 0); }), ErrorKind::usage);
}
