#pragma once

// Shared encoder with a class-label head and a domain-discriminator head.
//
//   marginal (d) -> [dense 512, ReLU, dropout] -> [dense 128, ...] -> [dense 64, ...]
//   hidden = [block-3 output | conditional features (C)]
//   class logits  = hidden * W_class  + b_class   (C outputs)
//   domain logit  = hidden * W_domain + b_domain  (1 output, sigmoid = P(target))
//
// Training is plain mini-batch SGD. The class head descends the source
// cross-entropy, the domain head descends the adversarial loss, and the
// encoder blocks descend the cross-entropy while ascending the adversarial
// loss scaled by tau (gradient reversal).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cajnet/discrepancy.hpp"
#include "cajnet/domain_data.hpp"
#include "cajnet/error.hpp"
#include "cajnet/matrix.hpp"

namespace cajnet {

inline constexpr double kLogitClamp = 30.0;

/// Weights and biases of the encoder and both heads.
///
/// Dense weights are stored (fan_in x fan_out) and biases as 1 x fan_out so
/// every tensor is an Eigen::MatrixXd.
struct EncoderParams {
  static constexpr std::size_t kTensorCount = 10;

  EncoderWidths widths;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;

  Eigen::MatrixXd w1, b1, w2, b2, w3, b3;
  Eigen::MatrixXd w_class, b_class;
  Eigen::MatrixXd w_domain, b_domain;

  std::size_t hidden_dim() const noexcept { return widths.block3 + num_classes; }

  /// All-zero parameters of the right shapes.
  static EncoderParams zeros(std::size_t input_dim, std::size_t num_classes, EncoderWidths widths = {}) {
    if (input_dim < 1 || num_classes < 1) throw usage_error("encoder needs positive input width and class count");
    EncoderParams p;
    p.widths = widths;
    p.input_dim = input_dim;
    p.num_classes = num_classes;
    const auto h = static_cast<Eigen::Index>(widths.block3 + num_classes);
    const auto C = static_cast<Eigen::Index>(num_classes);
    const auto n1 = static_cast<Eigen::Index>(widths.block1), n2 = static_cast<Eigen::Index>(widths.block2),
               n3 = static_cast<Eigen::Index>(widths.block3);
    p.w1 = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(input_dim), n1);
    p.b1 = Eigen::MatrixXd::Zero(1, n1);
    p.w2 = Eigen::MatrixXd::Zero(n1, n2);
    p.b2 = Eigen::MatrixXd::Zero(1, n2);
    p.w3 = Eigen::MatrixXd::Zero(n2, n3);
    p.b3 = Eigen::MatrixXd::Zero(1, n3);
    p.w_class = Eigen::MatrixXd::Zero(h, C);
    p.b_class = Eigen::MatrixXd::Zero(1, C);
    p.w_domain = Eigen::MatrixXd::Zero(h, 1);
    p.b_domain = Eigen::MatrixXd::Zero(1, 1);
    return p;
  }

  /// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static EncoderParams glorot(std::size_t input_dim, std::size_t num_classes, EncoderWidths widths,
                              std::uint64_t seed) {
    EncoderParams p = zeros(input_dim, num_classes, widths);
    std::mt19937_64 rng(seed);
    for (Eigen::MatrixXd* w : {&p.w1, &p.w2, &p.w3, &p.w_class, &p.w_domain}) {
      const double limit = std::sqrt(6.0 / static_cast<double>(w->rows() + w->cols()));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (Eigen::Index c = 0; c < w->cols(); ++c)
        for (Eigen::Index r = 0; r < w->rows(); ++r) (*w)(r, c) = u(rng);
    }
    return p;
  }

  std::array<Eigen::MatrixXd*, kTensorCount> tensors() {
    return {&w1, &b1, &w2, &b2, &w3, &b3, &w_class, &b_class, &w_domain, &b_domain};
  }
  std::array<const Eigen::MatrixXd*, kTensorCount> tensors() const {
    return {&w1, &b1, &w2, &b2, &w3, &b3, &w_class, &b_class, &w_domain, &b_domain};
  }
  static constexpr std::array<std::string_view, kTensorCount> tensor_names() {
    return {"w1", "b1", "w2", "b2", "w3", "b3", "w_class", "b_class", "w_domain", "b_domain"};
  }

  bool all_finite() const {
    for (const auto* t : tensors())
      if (!t->allFinite()) return false;
    return true;
  }

  friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
    if (a.widths != b.widths || a.input_dim != b.input_dim || a.num_classes != b.num_classes) return false;
    const auto ta = a.tensors();
    const auto tb = b.tensors();
    for (std::size_t i = 0; i < kTensorCount; ++i)
      if (*ta[i] != *tb[i]) return false;
    return true;
  }
};

enum class Mode { train, eval };

struct EpochRecord {
  std::size_t epoch = 0;
  double source_loss = 0.0;       // mean cross-entropy over the epoch's batches
  double adversarial_loss = 0.0;  // mean domain loss over the epoch's batches
  double source_accuracy = 0.0;   // full source set, eval mode, after the epoch
  double domain_accuracy = 0.0;   // discriminator accuracy on both full domains, eval mode
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  std::string to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,source_loss,adversarial_loss,source_accuracy,domain_accuracy\n";
    for (const auto& r : epochs) {
      out << r.epoch << ',' << r.source_loss << ',' << r.adversarial_loss << ',' << r.source_accuracy << ','
          << r.domain_accuracy << '\n';
    }
    return out.str();
  }
};

struct TrainState {
  EncoderParams params;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double dropout = 0.5;
  Mode mode = Mode::eval;
  std::mt19937_64 rng;
  TrainLog log;

  static TrainState create(std::size_t input_dim, std::size_t num_classes, EncoderWidths widths,
                           std::uint64_t seed, double dropout = 0.5) {
    TrainState s;
    s.params = EncoderParams::glorot(input_dim, num_classes, widths, seed);
    s.seed = seed;
    s.dropout = dropout;
    // Separate stream for batch order and dropout masks.
    s.rng.seed(seed ^ 0x9E3779B97F4A7C15ULL);
    return s;
  }
};

struct ForwardOutput {
  Matrix class_logits;  // B x C
  Matrix domain_logit;  // B x 1
  Matrix hidden;        // B x (block3 + C)
};

namespace detail {

inline Eigen::MatrixXd to_dense(const Matrix& m) { return m.eigen(); }

inline Matrix from_dense(const Eigen::MatrixXd& m) { return Matrix::from_eigen(m); }

/// Activations kept for backpropagation.
struct ForwardCache {
  Eigen::MatrixXd x;                 // marginal input
  Eigen::MatrixXd z1, z2, z3;        // pre-activations
  Eigen::MatrixXd a1, a2, a3;        // post ReLU and dropout
  Eigen::MatrixXd m1, m2, m3;        // dropout multipliers (0 or 1/keep); empty in eval
  Eigen::MatrixXd hidden;            // [a3 | conditional]
  Eigen::MatrixXd class_logits;
  Eigen::MatrixXd domain_logit;
};

inline void relu_dropout(const Eigen::MatrixXd& z, Eigen::MatrixXd& a, Eigen::MatrixXd& mask, double rate,
                         std::mt19937_64* rng) {
  a = z.cwiseMax(0.0);
  if (rng == nullptr || rate <= 0.0) {
    mask.resize(0, 0);
    return;
  }
  // Each 64-bit draw yields two keep/drop decisions: a unit is kept when its
  // 32-bit half falls below keep * 2^32.
  const double keep = 1.0 - rate;
  const auto threshold = static_cast<std::uint64_t>(std::llround(keep * 4294967296.0));
  const double scale = 1.0 / keep;
  mask.resize(z.rows(), z.cols());
  double* m = mask.data();
  const Eigen::Index n = mask.size();
  for (Eigen::Index i = 0; i < n; i += 2) {
    const std::uint64_t bits = (*rng)();
    m[i] = (bits & 0xFFFFFFFFULL) < threshold ? scale : 0.0;
    if (i + 1 < n) m[i + 1] = (bits >> 32) < threshold ? scale : 0.0;
  }
  a.array() *= mask.array();
}

inline void check_widths(const EncoderParams& p, Eigen::Index marginal_cols, Eigen::Index conditional_cols) {
  if (static_cast<std::size_t>(marginal_cols) != p.input_dim) {
    throw shape_error("encoder expects " + std::to_string(p.input_dim) + " marginal features, got " +
                      std::to_string(marginal_cols));
  }
  if (static_cast<std::size_t>(conditional_cols) != p.num_classes) {
    throw shape_error("encoder expects " + std::to_string(p.num_classes) + " conditional features, got " +
                      std::to_string(conditional_cols));
  }
}

/// rng == nullptr runs in eval mode (no dropout).
inline ForwardCache forward_dense(const EncoderParams& p, Eigen::MatrixXd x, const Eigen::MatrixXd& conditional,
                                  double dropout, std::mt19937_64* rng) {
  check_widths(p, x.cols(), conditional.cols());
  ForwardCache c;
  c.x = std::move(x);
  c.z1.noalias() = c.x * p.w1;
  c.z1.rowwise() += p.b1.row(0);
  relu_dropout(c.z1, c.a1, c.m1, dropout, rng);
  c.z2.noalias() = c.a1 * p.w2;
  c.z2.rowwise() += p.b2.row(0);
  relu_dropout(c.z2, c.a2, c.m2, dropout, rng);
  c.z3.noalias() = c.a2 * p.w3;
  c.z3.rowwise() += p.b3.row(0);
  relu_dropout(c.z3, c.a3, c.m3, dropout, rng);
  c.hidden.resize(c.a3.rows(), c.a3.cols() + conditional.cols());
  c.hidden << c.a3, conditional;
  c.class_logits.noalias() = c.hidden * p.w_class;
  c.class_logits.rowwise() += p.b_class.row(0);
  c.domain_logit.noalias() = c.hidden * p.w_domain;
  c.domain_logit.rowwise() += p.b_domain.row(0);
  return c;
}

/// Gradient of the three encoder blocks given d(loss)/d(hidden); head tensors untouched.
inline void backward_blocks(const EncoderParams& p, const ForwardCache& c, const Eigen::MatrixXd& d_hidden,
                            EncoderParams& grad) {
  const auto n3 = static_cast<Eigen::Index>(p.widths.block3);
  auto through = [](Eigen::MatrixXd da, const Eigen::MatrixXd& z, const Eigen::MatrixXd& mask) {
    if (mask.size() != 0) da.array() *= mask.array();
    da.array() *= (z.array() > 0.0).cast<double>();
    return da;
  };
  const Eigen::MatrixXd dz3 = through(d_hidden.leftCols(n3), c.z3, c.m3);
  grad.w3.noalias() += c.a2.transpose() * dz3;
  grad.b3 += dz3.colwise().sum();
  const Eigen::MatrixXd dz2 = through(dz3 * p.w3.transpose(), c.z2, c.m2);
  grad.w2.noalias() += c.a1.transpose() * dz2;
  grad.b2 += dz2.colwise().sum();
  const Eigen::MatrixXd dz1 = through(dz2 * p.w2.transpose(), c.z1, c.m1);
  grad.w1.noalias() += c.x.transpose() * dz1;
  grad.b1 += dz1.colwise().sum();
}

inline double clamp_logit(double z) { return std::clamp(z, -kLogitClamp, kLogitClamp); }

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// log(1 + e^z), stable for large |z|.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

/// Row-wise softmax.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) s += (p(i, k) = std::exp(logits(i, k) - m));
    p.row(i) /= s;
  }
  return p;
}

inline double cross_entropy_row(const double* z, std::size_t C, int y) {
  std::size_t arg = 0;
  for (std::size_t k = 1; k < C; ++k)
    if (z[k] > z[arg]) arg = k;
  double rest = 0.0;
  for (std::size_t k = 0; k < C; ++k)
    if (k != arg) rest += std::exp(z[k] - z[arg]);
  return z[arg] + std::log1p(rest) - z[static_cast<std::size_t>(y)];
}

inline void check_batch_labels(const Labels& y, std::size_t rows, std::size_t C) {
  if (y.size() != rows) throw shape_error("got " + std::to_string(y.size()) + " labels for " + std::to_string(rows) + " rows");
  for (int v : y)
    if (v < 0 || static_cast<std::size_t>(v) >= C) throw data_error("label " + std::to_string(v) + " out of range");
}

inline double source_loss_dense(const Eigen::MatrixXd& logits, const Labels& y) {
  check_batch_labels(y, static_cast<std::size_t>(logits.rows()), static_cast<std::size_t>(logits.cols()));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> z = logits;
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    total += cross_entropy_row(z.data() + i * z.cols(), static_cast<std::size_t>(z.cols()), y[static_cast<std::size_t>(i)]);
  return total / static_cast<double>(z.rows());
}

inline double adversarial_loss_dense(const Eigen::VectorXd& source_logits, const Eigen::VectorXd& target_logits) {
  if (source_logits.size() == 0 || target_logits.size() == 0) throw data_error("adversarial loss needs both domains");
  double s = 0.0, t = 0.0;
  // -log(1 - sigmoid(z)) = softplus(z);  -log(sigmoid(z)) = softplus(-z)
  for (double z : source_logits) s += softplus(clamp_logit(z));
  for (double z : target_logits) t += softplus(-clamp_logit(z));
  return s / static_cast<double>(source_logits.size()) + t / static_cast<double>(target_logits.size());
}

/// d(adversarial loss)/d(logit) for one domain's batch; zero where the clamp is active.
inline Eigen::MatrixXd adversarial_logit_grad(const Eigen::MatrixXd& logits, bool is_target) {
  Eigen::MatrixXd d(logits.rows(), 1);
  const double n = static_cast<double>(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double z = logits(i, 0);
    if (z <= -kLogitClamp || z >= kLogitClamp) {
      d(i, 0) = 0.0;
      continue;
    }
    d(i, 0) = (is_target ? sigmoid(z) - 1.0 : sigmoid(z)) / n;
  }
  return d;
}

}  // namespace detail

namespace detail {

inline ForwardOutput outputs(const ForwardCache& c) {
  if (!c.class_logits.allFinite() || !c.domain_logit.allFinite() || !c.hidden.allFinite()) {
    throw numerical_error("encoder produced non-finite activations");
  }
  return {from_dense(c.class_logits), from_dense(c.domain_logit), from_dense(c.hidden)};
}

}  // namespace detail

/// Runs the encoder and both heads. Dropout is applied only in train mode,
/// with masks drawn from the state's stream.
inline ForwardOutput forward(TrainState& state, const JointFeatures& batch) {
  std::mt19937_64* rng = state.mode == Mode::train ? &state.rng : nullptr;
  const auto c = detail::forward_dense(state.params, detail::to_dense(batch.marginal()),
                                       detail::to_dense(batch.conditional().values), state.dropout, rng);
  return detail::outputs(c);
}

/// Eval-mode forward pass without touching any state.
inline ForwardOutput forward_eval(const EncoderParams& params, const JointFeatures& batch) {
  const auto c = detail::forward_dense(params, detail::to_dense(batch.marginal()),
                                       detail::to_dense(batch.conditional().values), 0.0, nullptr);
  return detail::outputs(c);
}

/// Mean cross-entropy of softmax(logits) against labels.
inline double source_loss(const Matrix& class_logits, const Labels& y) {
  return detail::source_loss_dense(class_logits.eigen(), y);
}

/// -mean_S log(1 - D) - mean_T log(D), D = sigmoid(logit clamped to +-30).
inline double adversarial_loss(std::span<const double> source_logits, std::span<const double> target_logits) {
  const Eigen::VectorXd s = Eigen::Map<const Eigen::VectorXd>(source_logits.data(), static_cast<Eigen::Index>(source_logits.size()));
  const Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(target_logits.data(), static_cast<Eigen::Index>(target_logits.size()));
  return detail::adversarial_loss_dense(s, t);
}

struct LossGradients {
  double source_loss = 0.0;
  double adversarial_loss = 0.0;
  EncoderParams d_source;       // dL_S; domain-head tensors are zero
  EncoderParams d_adversarial;  // dL_A; class-head tensors are zero
};

/// Both losses and their gradients with respect to every parameter for one
/// source batch and one target batch. Pass an rng to apply dropout.
inline LossGradients loss_gradients(const EncoderParams& p, const JointFeatures& source, const Labels& labels,
                                    const JointFeatures& target, double dropout = 0.0,
                                    std::mt19937_64* rng = nullptr) {
  const auto cs = detail::forward_dense(p, detail::to_dense(source.marginal()),
                                        detail::to_dense(source.conditional().values), dropout, rng);
  const auto ct = detail::forward_dense(p, detail::to_dense(target.marginal()),
                                        detail::to_dense(target.conditional().values), dropout, rng);
  LossGradients g;
  g.d_source = EncoderParams::zeros(p.input_dim, p.num_classes, p.widths);
  g.d_adversarial = g.d_source;
  g.source_loss = detail::source_loss_dense(cs.class_logits, labels);
  g.adversarial_loss = detail::adversarial_loss_dense(cs.domain_logit.col(0), ct.domain_logit.col(0));

  // Cross-entropy: d/dlogits = (softmax - onehot) / B.
  Eigen::MatrixXd d_logits = detail::softmax_rows(cs.class_logits);
  for (std::size_t i = 0; i < labels.size(); ++i) d_logits(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
  d_logits /= static_cast<double>(labels.size());
  g.d_source.w_class.noalias() = cs.hidden.transpose() * d_logits;
  g.d_source.b_class = d_logits.colwise().sum();
  detail::backward_blocks(p, cs, d_logits * p.w_class.transpose(), g.d_source);

  const Eigen::MatrixXd dzs = detail::adversarial_logit_grad(cs.domain_logit, false);
  const Eigen::MatrixXd dzt = detail::adversarial_logit_grad(ct.domain_logit, true);
  g.d_adversarial.w_domain.noalias() = cs.hidden.transpose() * dzs + ct.hidden.transpose() * dzt;
  g.d_adversarial.b_domain(0, 0) = dzs.sum() + dzt.sum();
  detail::backward_blocks(p, cs, dzs * p.w_domain.transpose(), g.d_adversarial);
  detail::backward_blocks(p, ct, dzt * p.w_domain.transpose(), g.d_adversarial);
  return g;
}

/// One SGD step:
///   class head  -= lr * dL_S
///   domain head -= lr * dL_A
///   blocks      -= lr * (dL_S - tau * dL_A)
inline void apply_update(EncoderParams& p, const LossGradients& g, double lr, double tau) {
  p.w_class -= lr * g.d_source.w_class;
  p.b_class -= lr * g.d_source.b_class;
  p.w_domain -= lr * g.d_adversarial.w_domain;
  p.b_domain -= lr * g.d_adversarial.b_domain;
  p.w1 -= lr * (g.d_source.w1 - tau * g.d_adversarial.w1);
  p.b1 -= lr * (g.d_source.b1 - tau * g.d_adversarial.b1);
  p.w2 -= lr * (g.d_source.w2 - tau * g.d_adversarial.w2);
  p.b2 -= lr * (g.d_source.b2 - tau * g.d_adversarial.b2);
  p.w3 -= lr * (g.d_source.w3 - tau * g.d_adversarial.w3);
  p.b3 -= lr * (g.d_source.b3 - tau * g.d_adversarial.b3);
}

struct Prediction {
  Labels labels;
  Matrix probabilities;  // B x C softmax
};

inline Labels argmax_rows(const Matrix& scores) {
  Labels out(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto r = scores.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());  // first maximum wins
  }
  return out;
}

inline Prediction predict_params(const EncoderParams& params, const JointFeatures& joint) {
  const auto c = detail::forward_dense(params, detail::to_dense(joint.marginal()),
                                       detail::to_dense(joint.conditional().values), 0.0, nullptr);
  Prediction out;
  out.probabilities = detail::from_dense(detail::softmax_rows(c.class_logits));
  out.labels = argmax_rows(detail::from_dense(c.class_logits));
  return out;
}

inline Prediction predict(const TrainState& state, const JointFeatures& joint) {
  if (state.mode != Mode::eval) throw usage_error("predict requires eval mode");
  return predict_params(state.params, joint);
}

inline double accuracy_of(const Labels& pred, const Labels& truth) {
  if (pred.size() != truth.size() || pred.empty()) throw shape_error("accuracy: length mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

/// Fraction of samples the domain head assigns to the right domain (logit > 0 means target).
inline double domain_accuracy(const Matrix& source_logits, const Matrix& target_logits) {
  std::size_t hit = 0;
  for (double z : source_logits.data()) hit += z <= 0.0 ? 1 : 0;
  for (double z : target_logits.data()) hit += z > 0.0 ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(source_logits.rows() + target_logits.rows());
}

inline double domain_accuracy(const EncoderParams& params, const JointFeatures& source, const JointFeatures& target) {
  return domain_accuracy(forward_eval(params, source).domain_logit, forward_eval(params, target).domain_logit);
}

struct StepLosses {
  double source_loss = 0.0;
  double adversarial_loss = 0.0;
};

/// The same update as apply_update(p, loss_gradients(...), lr, tau), with the
/// encoder backpropagated once per domain: the block gradient is linear in
/// d(loss)/d(hidden), so the reversed adversarial signal is folded in first.
inline StepLosses sgd_step(EncoderParams& p, const JointFeatures& source, const Labels& labels,
                           const JointFeatures& target, double lr, double tau, double dropout,
                           std::mt19937_64* rng) {
  const auto cs = detail::forward_dense(p, detail::to_dense(source.marginal()),
                                        detail::to_dense(source.conditional().values), dropout, rng);
  const auto ct = detail::forward_dense(p, detail::to_dense(target.marginal()),
                                        detail::to_dense(target.conditional().values), dropout, rng);
  StepLosses losses{detail::source_loss_dense(cs.class_logits, labels),
                    detail::adversarial_loss_dense(cs.domain_logit.col(0), ct.domain_logit.col(0))};

  Eigen::MatrixXd d_logits = detail::softmax_rows(cs.class_logits);
  for (std::size_t i = 0; i < labels.size(); ++i) d_logits(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
  d_logits /= static_cast<double>(labels.size());
  const Eigen::MatrixXd dzs = detail::adversarial_logit_grad(cs.domain_logit, false);
  const Eigen::MatrixXd dzt = detail::adversarial_logit_grad(ct.domain_logit, true);

  const Eigen::MatrixXd g_w_class = cs.hidden.transpose() * d_logits;
  const Eigen::MatrixXd g_b_class = d_logits.colwise().sum();
  const Eigen::MatrixXd g_w_domain = cs.hidden.transpose() * dzs + ct.hidden.transpose() * dzt;
  const double g_b_domain = dzs.sum() + dzt.sum();

  EncoderParams blocks = EncoderParams::zeros(p.input_dim, p.num_classes, p.widths);
  detail::backward_blocks(p, cs, d_logits * p.w_class.transpose() - tau * (dzs * p.w_domain.transpose()), blocks);
  detail::backward_blocks(p, ct, -tau * (dzt * p.w_domain.transpose()), blocks);

  p.w_class -= lr * g_w_class;
  p.b_class -= lr * g_b_class;
  p.w_domain -= lr * g_w_domain;
  p.b_domain(0, 0) -= lr * g_b_domain;
  p.w1 -= lr * blocks.w1;
  p.b1 -= lr * blocks.b1;
  p.w2 -= lr * blocks.w2;
  p.b2 -= lr * blocks.b2;
  p.w3 -= lr * blocks.w3;
  p.b3 -= lr * blocks.b3;
  return losses;
}

struct TrainOptions {
  std::size_t epochs = 1000;
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  double tau = 0.31;
  bool log_metrics = true;  // evaluate accuracies after every epoch

  static TrainOptions from(const PipelineConfig& cfg) {
    return {cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.use_adversarial ? cfg.tau : 0.0, true};
  }
};

/// Mini-batch SGD for `opt.epochs` epochs.
///
/// Each epoch shuffles both domains; every step pairs a source batch with a
/// target batch of the same size, cycling through the target permutation when
/// the target is smaller. The last partial source batch is kept.
inline TrainState train(TrainState state, const JointFeatures& source, const Labels& labels,
                        const JointFeatures& target, const TrainOptions& opt) {
  if (labels.size() != source.rows()) throw shape_error("train: label count does not match source rows");
  if (opt.batch_size < 1) throw usage_error("train: batch size must be positive");
  detail::check_widths(state.params, static_cast<Eigen::Index>(source.marginal().cols()),
                       static_cast<Eigen::Index>(source.conditional().num_classes()));
  detail::check_widths(state.params, static_cast<Eigen::Index>(target.marginal().cols()),
                       static_cast<Eigen::Index>(target.conditional().num_classes()));
  detail::check_batch_labels(labels, source.rows(), state.params.num_classes);

  const std::size_t ns = source.rows(), nt = target.rows();
  std::vector<std::size_t> src_order(ns), tgt_order(nt);
  std::vector<std::size_t> sb, tb;
  Labels yb;
  for (std::size_t e = 0; e < opt.epochs; ++e) {
    state.mode = Mode::train;
    std::iota(src_order.begin(), src_order.end(), std::size_t{0});
    std::iota(tgt_order.begin(), tgt_order.end(), std::size_t{0});
    std::shuffle(src_order.begin(), src_order.end(), state.rng);
    std::shuffle(tgt_order.begin(), tgt_order.end(), state.rng);

    double ls_sum = 0.0, la_sum = 0.0;
    std::size_t steps = 0, t_cursor = 0;
    for (std::size_t start = 0; start < ns; start += opt.batch_size) {
      const std::size_t b = std::min(opt.batch_size, ns - start);
      sb.assign(src_order.begin() + static_cast<std::ptrdiff_t>(start),
                src_order.begin() + static_cast<std::ptrdiff_t>(start + b));
      tb.clear();
      for (std::size_t i = 0; i < b; ++i) tb.push_back(tgt_order[(t_cursor++) % nt]);
      yb.clear();
      for (std::size_t i : sb) yb.push_back(labels[i]);

      const StepLosses l = sgd_step(state.params, source.select(sb), yb, target.select(tb), opt.learning_rate,
                                    opt.tau, state.dropout, &state.rng);
      if (!std::isfinite(l.source_loss) || !std::isfinite(l.adversarial_loss)) {
        throw numerical_error("non-finite loss in epoch " + std::to_string(state.epoch));
      }
      ls_sum += l.source_loss;
      la_sum += l.adversarial_loss;
      ++steps;
    }
    state.mode = Mode::eval;
    if (!state.params.all_finite()) throw numerical_error("non-finite parameters after epoch " + std::to_string(state.epoch));

    EpochRecord rec;
    rec.epoch = state.epoch;
    rec.source_loss = ls_sum / static_cast<double>(steps);
    rec.adversarial_loss = la_sum / static_cast<double>(steps);
    if (opt.log_metrics) {
      try {
        const ForwardOutput fs = forward_eval(state.params, source);
        const ForwardOutput ft = forward_eval(state.params, target);
        rec.source_accuracy = accuracy_of(argmax_rows(fs.class_logits), labels);
        rec.domain_accuracy = domain_accuracy(fs.domain_logit, ft.domain_logit);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::numerical) throw;
        throw numerical_error(std::string(e.what()) + " after epoch " + std::to_string(state.epoch));
      }
    }
    state.log.epochs.push_back(rec);
    ++state.epoch;
  }
  state.mode = Mode::eval;
  return state;
}

}  // namespace cajnet
