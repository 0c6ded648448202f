#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "cajnet/alignment.hpp"
#include "cajnet/pipeline.hpp"
#include "cajnet/synthetic.hpp"
#include "test_support.hpp"

using namespace cajnet;
using cajnet::testing::covering_labels;
using cajnet::testing::random_matrix;

namespace {

// Isotropic Gaussian blobs around the given centres, `n` per centre.
DomainDataset blobs(const std::vector<std::vector<double>>& centres, std::size_t n, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, sd);
  const std::size_t d = centres.front().size();
  Matrix x(centres.size() * n, d);
  Labels y(x.rows());
  for (std::size_t c = 0; c < centres.size(); ++c)
    for (std::size_t i = 0; i < n; ++i) {
      y[c * n + i] = static_cast<int>(c);
      for (std::size_t k = 0; k < d; ++k) x(c * n + i, k) = centres[c][k] + g(rng);
    }
  return {x, y, centres.size()};
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

TEST(Kernel, DiagonalIsOne) {
  std::mt19937_64 rng(61);
  const KernelMatrix k = rbf_kernel_matrix(random_matrix(12, 4, rng));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(k.values(i, i), 1.0);
}

TEST(Kernel, ClosedFormOffDiagonal) {
  const double b = 1.7;
  const KernelMatrix k = rbf_kernel_matrix(Matrix{{0.0, 0.0}, {b, b}}, b);
  EXPECT_NEAR(k.values(0, 1), std::exp(-1.0), 1e-15);
  EXPECT_EQ(k.bandwidth, b);
}

TEST(Kernel, SymmetricPositiveSemidefinite) {
  std::mt19937_64 rng(62);
  for (int rep = 0; rep < 5; ++rep) {
    const KernelMatrix k = rbf_kernel_matrix(random_matrix(10, 3, rng));
    EXPECT_EQ(k.values, k.values.transpose());
    const Eigen::MatrixXd dense = k.values.eigen();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(Kernel, MedianHeuristic) {
  // Pairwise distances 1, 2, 3: median 2.
  const KernelMatrix k = rbf_kernel_matrix(Matrix{{0}, {1}, {3}});
  EXPECT_EQ(k.bandwidth, 2.0);
  EXPECT_EQ(median_pairwise_distance(Matrix{{0}, {1}, {3}, {6}}), 3.0);  // 1,2,3,3,5,6
  EXPECT_EQ(median_pairwise_distance(Matrix{{1}, {1}}), 1.0);
}

TEST(Kernel, Errors) {
  EXPECT_EQ(kind_of([] { rbf_kernel_matrix(Matrix{{0}, {1}}, 0.0); }), ErrorKind::usage);
  EXPECT_EQ(kind_of([] { rbf_kernel_matrix(Matrix{{0}, {1}}, -2.0); }), ErrorKind::usage);
  EXPECT_EQ(kind_of([] { rbf_kernel_matrix(Matrix{{0}}); }), ErrorKind::data);
}

TEST(Mmd, MuZeroIsMarginalOnly) {
  const MmdMatrix m = mmd_matrix(3, 2, {0, 1, 1}, {1, 0}, 2, 0.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      const double ei = i < 3 ? 1.0 / 3 : -0.5, ej = j < 3 ? 1.0 / 3 : -0.5;
      EXPECT_EQ(m.values(i, j), ei * ej);
    }
}

TEST(Mmd, SingleClassMuOneEqualsMarginal) {
  const MmdMatrix a = mmd_matrix(4, 3, Labels(4, 0), Labels(3, 0), 1, 1.0);
  const MmdMatrix b = mmd_matrix(4, 3, Labels(4, 0), Labels(3, 0), 1, 0.0);
  EXPECT_EQ(a.values, b.values);
}

TEST(Mmd, TwoClassHandAssembled) {
  // Source labels [0,0,1,1], target pseudo [0,1,1,1], mu = 0.25.
  const Labels ys{0, 0, 1, 1}, yt{0, 1, 1, 1};
  const double mu = 0.25;
  const MmdMatrix m = mmd_matrix(4, 4, ys, yt, 2, mu);
  Eigen::VectorXd e0(8), e1 = Eigen::VectorXd::Zero(8), e2 = Eigen::VectorXd::Zero(8);
  e0 << 0.25, 0.25, 0.25, 0.25, -0.25, -0.25, -0.25, -0.25;
  e1 << 0.5, 0.5, 0, 0, -1, 0, 0, 0;
  e2 << 0, 0, 0.5, 0.5, 0, -1.0 / 3, -1.0 / 3, -1.0 / 3;
  const Eigen::MatrixXd expected = (1 - mu) * e0 * e0.transpose() + mu * (e1 * e1.transpose() + e2 * e2.transpose());
  EXPECT_LT((m.values.eigen() - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(m.values.eigen().trace(), expected.trace(), 1e-15);
  EXPECT_NEAR(m.values.eigen().topLeftCorner(4, 4).sum(), expected.topLeftCorner(4, 4).sum(), 1e-15);
  EXPECT_NEAR(m.values.eigen().topRightCorner(4, 4).sum(), expected.topRightCorner(4, 4).sum(), 1e-15);
}

TEST(Mmd, EmptyPseudoClassSkipped) {
  // No target sample carries class 1: its term is left out.
  const MmdMatrix m = mmd_matrix(2, 2, {0, 1}, {0, 0}, 2, 1.0);
  EXPECT_EQ(m.values(1, 1), 0.0);
  EXPECT_EQ(m.values(0, 0), 1.0);
  EXPECT_EQ(m.values(0, 2), -0.5);
}

TEST(Mmd, SymmetricWithZeroTotal) {
  std::mt19937_64 rng(63);
  const Labels ys = covering_labels(9, 3, rng), yt = covering_labels(6, 3, rng);
  for (double mu : {0.0, 0.3, 1.0}) {
    const MmdMatrix m = mmd_matrix(9, 6, ys, yt, 3, mu);
    EXPECT_EQ(m.values, m.values.transpose());
    EXPECT_NEAR(m.values.eigen().sum(), 0.0, 1e-12);
  }
}

TEST(Mmd, Errors) {
  EXPECT_EQ(kind_of([] { mmd_matrix(2, 1, {0, 1}, {2}, 2, 0.5); }), ErrorKind::data);
  EXPECT_EQ(kind_of([] { mmd_matrix(2, 1, {0, 1}, {0}, 2, 1.5); }), ErrorKind::usage);
  EXPECT_EQ(kind_of([] { mmd_matrix(2, 2, {0, 1}, {0}, 2, 0.5); }), ErrorKind::shape);
}

TEST(Laplacian, ZeroRowSumsSymmetricPsd) {
  std::mt19937_64 rng(64);
  const Matrix x = random_matrix(20, 5, rng);
  const Matrix l = graph_laplacian(x, 4);
  EXPECT_EQ(l, l.transpose());
  for (std::size_t i = 0; i < 20; ++i) {
    double s = 0;
    for (double v : l.row(i)) s += v;
    EXPECT_NEAR(s, 0.0, 1e-12);
  }
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix v = random_matrix(20, 1, rng);
    EXPECT_GE((v.eigen().transpose() * l.eigen() * v.eigen())(0, 0), -1e-10);
  }
}

TEST(Laplacian, DisconnectedClustersAreBlockDiagonal) {
  // One cluster near +e1, one near +e2: cross-cluster cosines are far below within-cluster ones.
  std::mt19937_64 rng(65);
  const DomainDataset d = blobs({{10, 0, 0}, {0, 10, 0}}, 6, 0.5, rng);
  const Matrix l = graph_laplacian(d.features(), 2);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j)
      if ((i < 6) != (j < 6)) {
        EXPECT_EQ(l(i, j), 0.0);
      }
}

TEST(Laplacian, NeighbourCountChecked) {
  EXPECT_EQ(kind_of([] { graph_laplacian(Matrix{{1, 0}, {0, 1}}, 2); }), ErrorKind::usage);
  EXPECT_EQ(kind_of([] { graph_laplacian(Matrix{{1, 0}, {0, 1}}, 0); }), ErrorKind::usage);
}

TEST(EstimateMu, IdenticalDomainsReportInputs) {
  std::mt19937_64 rng(66);
  const DomainDataset d = blobs({{0, 0}, {6, 0}}, 40, 1.0, rng);
  const MuEstimate e = estimate_mu(d.features(), d.features(), d.require_labels(), d.require_labels(), 2);
  EXPECT_LT(e.global_distance, 0.5);
  EXPECT_LT(e.mean_class_distance, 0.5);
  EXPECT_EQ(e.classes_used, 2u);
  EXPECT_GE(e.mu, 0.0);
  EXPECT_LE(e.mu, 1.0);
  EXPECT_TRUE(e.warning.empty());
}

TEST(EstimateMu, FarSeparatedDomainsWeighBothTermsEqually) {
  // Translating the whole target far away makes every separator perfect:
  // global and per-class proxies both reach 2 and mu settles at 1/2.
  std::mt19937_64 rng(67);
  const DomainDataset s = blobs({{0, 0}, {6, 0}}, 40, 1.0, rng);
  const DomainDataset t = blobs({{100, 100}, {106, 100}}, 40, 1.0, rng);
  const MuEstimate e = estimate_mu(s.features(), t.features(), s.require_labels(), t.require_labels(), 2);
  EXPECT_NEAR(e.global_distance, 2.0, 1e-12);
  EXPECT_NEAR(e.mean_class_distance, 2.0, 1e-12);
  EXPECT_NEAR(e.mu, 0.5, 1e-12);
}

TEST(EstimateMu, ConditionalMismatchPushesMuUp) {
  // Same marginal, class labels swapped between domains: the class-wise
  // distances dominate and mu moves toward 1.
  std::mt19937_64 rng(68);
  const DomainDataset s = blobs({{0, 0}, {8, 0}}, 40, 1.0, rng);
  const DomainDataset t = blobs({{8, 0}, {0, 0}}, 40, 1.0, rng);
  const MuEstimate e = estimate_mu(s.features(), t.features(), s.require_labels(), t.require_labels(), 2);
  EXPECT_GT(e.mean_class_distance, e.global_distance);
  EXPECT_GT(e.mu, 0.8);
}

TEST(EstimateMu, SingleClassPseudoLabelsWarn) {
  std::mt19937_64 rng(69);
  const DomainDataset s = blobs({{0, 0}, {6, 0}}, 10, 1.0, rng);
  const MuEstimate e = estimate_mu(s.features(), s.features(), s.require_labels(), Labels(20, 1), 2);
  EXPECT_EQ(e.mu, 0.0);
  EXPECT_FALSE(e.warning.empty());
  EXPECT_EQ(kind_of([&] { estimate_mu(s.features(), s.features(), s.require_labels(), Labels(20, 2), 2); }),
            ErrorKind::data);
}

TEST(Align, FixedMuBypassesEstimation) {
  std::mt19937_64 rng(70);
  const DomainDataset s = blobs({{0, 0}, {6, 0}}, 10, 1.0, rng);
  AlignmentOptions opt;
  opt.mu = 0.7;
  opt.rounds = 3;
  const AlignmentResult r = align(s, s.features(), s.require_labels(), opt);
  ASSERT_EQ(r.rounds.size(), 3u);
  for (const auto& round : r.rounds) EXPECT_EQ(round.mu, 0.7);
}

TEST(Align, IdenticalDomainsKeepCorrectLabels) {
  const auto d = synth_shifted_domains({.seed = 0, .rotation_deg = 0.0, .shift_scale = 0.0});
  const AlignmentResult r = align(d.source, d.target.features(), d.target_truth, AlignmentOptions{});
  EXPECT_EQ(r.labels, d.source.require_labels());
  EXPECT_EQ(accuracy_of(r.labels, d.target_truth), 1.0);
  EXPECT_EQ(r.model.coefficients.rows(), 400u);
  EXPECT_EQ(r.model.coefficients.cols(), 4u);
  EXPECT_TRUE(r.model.coefficients.all_finite());
}

TEST(Align, WithoutMmdAndLaplacianIsKernelRidge) {
  std::mt19937_64 rng(71);
  const DomainDataset s = blobs({{0, 0, 0}, {3, 0, 0}, {0, 3, 0}}, 8, 1.0, rng);
  const Matrix xt = random_matrix(10, 3, rng, -1, 4);
  AlignmentOptions opt;
  opt.lambda = 0.0;
  opt.rho = 0.0;
  opt.rounds = 1;
  opt.bandwidth = 1.5;
  const AlignmentResult r = align(s, xt, Labels(10, 0), opt);

  // Independent ridge: (K_ss + eta I) a = Y over source rows only, predict K_ts a.
  const Eigen::MatrixXd kss = rbf_kernel(s.features(), s.features(), 1.5).eigen();
  const Eigen::MatrixXd kts = rbf_kernel(xt, s.features(), 1.5).eigen();
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(24, 3);
  for (std::size_t i = 0; i < 24; ++i) y(static_cast<Eigen::Index>(i), s.require_labels()[i]) = 1.0;
  const Eigen::MatrixXd a = (kss + 0.1 * Eigen::MatrixXd::Identity(24, 24)).ldlt().solve(y);
  const Eigen::MatrixXd expected = kts * a;
  const Matrix scores = r.model.scores(xt);
  EXPECT_LT((scores.eigen() - expected).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(r.model.coefficients.eigen().bottomRows(10).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(r.labels, argmax_rows(Matrix::from_eigen(expected)));
}

TEST(Align, LargerEtaShrinksCoefficients) {
  std::mt19937_64 rng(72);
  const DomainDataset s = blobs({{0, 0}, {4, 0}}, 10, 1.0, rng);
  const DomainDataset t = blobs({{1, 1}, {5, 1}}, 10, 1.0, rng);
  double previous = std::numeric_limits<double>::infinity();
  for (double eta : {0.1, 1.0, 10.0}) {
    AlignmentOptions opt;
    opt.eta = eta;
    opt.mu = 0.5;
    opt.rounds = 1;
    const double norm = align(s, t.features(), t.require_labels(), opt).model.coefficients.eigen().norm();
    EXPECT_LT(norm, previous) << "eta " << eta;
    previous = norm;
  }
}

TEST(Align, RefinerRunsBetweenRounds) {
  std::mt19937_64 rng(73);
  const DomainDataset s = blobs({{0, 0}, {6, 0}}, 10, 1.0, rng);
  int calls = 0;
  AlignmentOptions opt;
  opt.rounds = 4;
  const AlignmentResult r = align(s, s.features(), s.require_labels(), opt, [&](const Labels& y) {
    ++calls;
    return y;
  });
  EXPECT_EQ(calls, 4);
  EXPECT_EQ(r.rounds.size(), 4u);
}

TEST(Align, Deterministic) {
  std::mt19937_64 rng(74);
  const DomainDataset s = blobs({{0, 0}, {5, 0}}, 12, 1.0, rng);
  const DomainDataset t = blobs({{1, 2}, {6, 2}}, 9, 1.0, rng);
  const AlignmentResult a = align(s, t.features(), t.require_labels(), AlignmentOptions{});
  const AlignmentResult b = align(s, t.features(), t.require_labels(), AlignmentOptions{});
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.model.coefficients, b.model.coefficients);
}

TEST(Align, Errors) {
  std::mt19937_64 rng(75);
  const DomainDataset s = blobs({{0, 0}, {5, 0}}, 5, 1.0, rng);
  AlignmentOptions bad;
  bad.eta = 0.0;
  EXPECT_EQ(kind_of([&] { align(s, s.features(), s.require_labels(), bad); }), ErrorKind::usage);
  EXPECT_EQ(kind_of([&] { align(s, s.features(), Labels(10, 2), AlignmentOptions{}); }), ErrorKind::data);
  EXPECT_EQ(kind_of([&] { align(s, s.features(), Labels(3, 0), AlignmentOptions{}); }), ErrorKind::shape);
  EXPECT_EQ(kind_of([&] { align(s, Matrix(4, 3), Labels(4, 0), AlignmentOptions{}); }), ErrorKind::shape);
  EXPECT_EQ(kind_of([&] { align(s.without_labels(), s.features(), Labels(10, 0), AlignmentOptions{}); }),
            ErrorKind::data);
}

TEST(Align, ImprovesEncoderPseudoLabelsOnShiftedDomains) {
  PipelineConfig cfg;
  cfg.epochs = 200;
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto d = synth_shifted_domains({.seed = seed});
    cfg.seed = seed;
    const PreparedDomains pd = prepare_domains(d.source, d.target.features(), cfg);
    const EncoderStage enc = train_encoder_stage(pd, cfg);
    const FeatureScaler scaler = FeatureScaler::fit(pd.source_joint.concatenated());
    const DomainDataset src(scaler.apply(pd.source_joint.concatenated()), d.source.labels(), 4);
    const AlignmentResult r =
        align(src, scaler.apply(pd.target_joint.concatenated()), enc.target_predictions, AlignmentOptions::from(cfg));
    const double before = accuracy_of(enc.target_predictions, d.target_truth);
    const double after = accuracy_of(r.labels, d.target_truth);
    improved += after >= before ? 1 : 0;
  }
  EXPECT_GE(improved, 4);
}
