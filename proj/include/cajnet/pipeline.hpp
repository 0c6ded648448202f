#pragma once

// End-to-end adaptation run:
//   1. conditional features of both domains against the source class means
//   2. joint features
//   3. encoder training (source cross-entropy + reversed adversarial loss)
//   4. target prediction
//   5. K selection by the top-K loss, then majority relabelling
//   6. alignment rounds, relabelling by majority between rounds
//   7. report
//
// Target ground truth, when present, is only ever read by evaluate().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cajnet/alignment.hpp"
#include "cajnet/discrepancy.hpp"
#include "cajnet/domain_data.hpp"
#include "cajnet/encoder.hpp"
#include "cajnet/error.hpp"
#include "cajnet/matrix.hpp"
#include "cajnet/topk.hpp"

namespace cajnet {

enum class Loss { adversarial, topk, alignment };

inline const char* to_string(Loss l) {
  switch (l) {
    case Loss::adversarial: return "adversarial";
    case Loss::topk: return "topk";
    case Loss::alignment: return "alignment";
  }
  return "?";
}

inline Loss parse_loss(const std::string& name) {
  if (name == "adversarial") return Loss::adversarial;
  if (name == "topk") return Loss::topk;
  if (name == "alignment") return Loss::alignment;
  throw usage_error("unknown loss '" + name + "' (expected adversarial, topk or alignment)");
}

/// Disabling adversarial sets tau to 0; topk skips K selection and every
/// relabelling; alignment skips the alignment rounds.
inline PipelineConfig ablate(PipelineConfig cfg, const std::set<Loss>& disable) {
  if (disable.contains(Loss::adversarial)) {
    cfg.use_adversarial = false;
    cfg.tau = 0.0;
  }
  if (disable.contains(Loss::topk)) cfg.use_topk = false;
  if (disable.contains(Loss::alignment)) cfg.use_alignment = false;
  return cfg;
}

/// Fraction of positions where the two label vectors agree.
inline double evaluate(const Labels& pred, const Labels& truth) {
  if (pred.size() != truth.size()) {
    throw shape_error("evaluate: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(truth.size()) +
                      " labels");
  }
  if (pred.empty()) throw data_error("evaluate: empty label vectors");
  return accuracy_of(pred, truth);
}

/// Inputs of one run after normalisation and feature construction.
struct PreparedDomains {
  DomainDataset source;
  Matrix target_features;
  JointFeatures source_joint;
  JointFeatures target_joint;
};

struct EncoderStage {
  TrainState state;
  Labels target_predictions;
  double source_accuracy = 0.0;
  JointDiscrepancy hidden_initial;  // encoder representation before training
  JointDiscrepancy hidden_final;    // and after
};

struct TopKStage {
  std::size_t k = 0;
  std::vector<double> losses;  // losses[k - 1] over the tuned range; empty when K was fixed
  double loss_before = 0.0;    // top-K loss of the encoder predictions at the chosen K
  double loss_after = 0.0;     // top-K loss after relabelling
  Labels labels;
};

struct StageAccuracy {
  std::optional<double> encoder;
  std::optional<double> topk;
  std::optional<double> final;
};

struct RunReport {
  PipelineConfig config;
  std::size_t source_samples = 0;
  std::size_t target_samples = 0;
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;

  double encoder_source_accuracy = 0.0;
  TrainLog training_log;

  JointDiscrepancy input_discrepancy;
  JointDiscrepancy hidden_initial_discrepancy;
  JointDiscrepancy hidden_final_discrepancy;

  std::optional<TopKStage> topk;
  std::vector<AlignmentRound> alignment_rounds;
  std::vector<double> topk_loss_per_round;  // L_K of the labels leaving each alignment round

  Labels encoder_predictions;
  Labels predictions;  // final target labels
  StageAccuracy target_accuracy;
  std::vector<std::string> warnings;
};

namespace detail {

template <typename F>
auto run_stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("stage ") + name + ": " + e.what());
  }
}

/// Joint discrepancy of the encoder representation: block-3 activations as the
/// marginal block, their distances to the source class means as the
/// conditional block.
inline JointDiscrepancy hidden_discrepancy(const EncoderParams& params, const PreparedDomains& d) {
  const std::size_t width = params.widths.block3;
  auto block3 = [&](const JointFeatures& j) {
    const Matrix h = forward_eval(params, j).hidden;
    Matrix out(h.rows(), width);
    for (std::size_t i = 0; i < h.rows(); ++i)
      std::copy_n(h.row(i).begin(), width, out.row(i).begin());
    return out;
  };
  const Matrix hs = block3(d.source_joint), ht = block3(d.target_joint);
  const DomainDataset hidden_source(hs, d.source.labels(), d.source.num_classes());
  return joint_discrepancy(JointFeatures(hs, conditional_features(hs, hidden_source)),
                           JointFeatures(ht, conditional_features(ht, hidden_source)));
}

}  // namespace detail

inline PreparedDomains prepare_domains(const DomainDataset& source, const Matrix& target_features,
                                       const PipelineConfig& cfg) {
  return detail::run_stage("features", [&] {
    if (!source.labeled()) throw data_error("source domain must be labelled");
    if (target_features.cols() != source.dim()) {
      throw shape_error("source has " + std::to_string(source.dim()) + " features, target " +
                        std::to_string(target_features.cols()));
    }
    Matrix xs = source.features(), xt = target_features;
    if (cfg.normalize_features) {
      const FeatureScaler scaler = FeatureScaler::fit(xs);
      xs = scaler.apply(xs);
      xt = scaler.apply(xt);
    }
    DomainDataset src(xs, source.labels(), source.num_classes());
    ConditionalFeatures cs = conditional_features(xs, src);
    ConditionalFeatures ct = conditional_features(xt, src);
    JointFeatures js = build_joint_features(xs, std::move(cs));
    JointFeatures jt = build_joint_features(xt, std::move(ct));
    return PreparedDomains{std::move(src), std::move(xt), std::move(js), std::move(jt)};
  });
}

inline EncoderStage train_encoder_stage(const PreparedDomains& d, const PipelineConfig& cfg) {
  return detail::run_stage("encoder", [&] {
    EncoderStage stage;
    stage.state = TrainState::create(d.source.dim(), d.source.num_classes(), cfg.widths, cfg.seed, cfg.dropout);
    stage.hidden_initial = detail::hidden_discrepancy(stage.state.params, d);
    stage.state = train(std::move(stage.state), d.source_joint, d.source.require_labels(), d.target_joint,
                        TrainOptions::from(cfg));
    stage.hidden_final = detail::hidden_discrepancy(stage.state.params, d);
    stage.source_accuracy = accuracy_of(predict(stage.state, d.source_joint).labels, d.source.require_labels());
    stage.target_predictions = predict(stage.state, d.target_joint).labels;
    return stage;
  });
}

/// Stages 5-7 on top of a trained encoder.
inline RunReport finish_run(const PreparedDomains& d, const EncoderStage& enc, const PipelineConfig& cfg,
                            const std::optional<Labels>& target_truth = std::nullopt) {
  RunReport rep;
  rep.config = cfg;
  rep.source_samples = d.source.size();
  rep.target_samples = d.target_features.rows();
  rep.feature_dim = d.source.dim();
  rep.num_classes = d.source.num_classes();
  rep.encoder_source_accuracy = enc.source_accuracy;
  rep.training_log = enc.state.log;
  rep.hidden_initial_discrepancy = enc.hidden_initial;
  rep.hidden_final_discrepancy = enc.hidden_final;
  rep.input_discrepancy = detail::run_stage("discrepancy", [&] { return joint_discrepancy(d.source_joint, d.target_joint); });
  rep.encoder_predictions = enc.target_predictions;

  Labels labels = enc.target_predictions;
  const std::size_t nt = d.target_features.rows();
  std::optional<KLabelMatrix> klabels;

  if (cfg.use_topk) {
    detail::run_stage("topk", [&] {
      if (nt < 2) throw data_error("top-K correction needs at least 2 target samples");
      TopKStage t;
      const AffinityMatrix a = affinity_matrix(d.target_joint.marginal(), d.target_joint.conditional());
      if (cfg.tune_k) {
        const KTuning tuning = tune_k(d.target_joint.marginal(), d.target_joint.conditional(), labels,
                                      std::min(cfg.k_max, nt - 1));
        t.k = tuning.best_k;
        t.losses = tuning.losses;
      } else {
        t.k = std::min(cfg.k, nt - 1);
      }
      klabels = topk_labels(a, t.k);
      t.loss_before = topk_loss(labels, *klabels);
      labels = majority_relabel(labels, *klabels);
      t.loss_after = topk_loss(labels, *klabels);
      t.labels = labels;
      rep.topk = std::move(t);
    });
  }

  if (cfg.use_alignment) {
    detail::run_stage("alignment", [&] {
      Matrix xs = d.source_joint.concatenated(), xt = d.target_joint.concatenated();
      if (cfg.standardize_alignment) {
        const FeatureScaler scaler = FeatureScaler::fit(xs);
        xs = scaler.apply(xs);
        xt = scaler.apply(xt);
      }
      const DomainDataset src(std::move(xs), d.source.labels(), d.source.num_classes());
      LabelRefiner refine;
      if (klabels) {
        refine = [&](const Labels& y) {
          Labels out = majority_relabel(y, *klabels);
          rep.topk_loss_per_round.push_back(topk_loss(out, *klabels));
          return out;
        };
      }
      AlignmentResult res = align(src, xt, labels, AlignmentOptions::from(cfg), refine);
      for (const auto& r : res.rounds)
        if (!r.mu_warning.empty()) rep.warnings.push_back("alignment: " + r.mu_warning);
      rep.alignment_rounds = std::move(res.rounds);
      labels = std::move(res.labels);
    });
  }

  rep.predictions = labels;
  for (const JointDiscrepancy* j : {&rep.input_discrepancy, &rep.hidden_initial_discrepancy, &rep.hidden_final_discrepancy}) {
    if (!std::isfinite(j->total)) throw numerical_error("stage report: non-finite discrepancy");
  }

  if (target_truth) {
    detail::run_stage("evaluation", [&] {
      rep.target_accuracy.encoder = evaluate(rep.encoder_predictions, *target_truth);
      if (rep.topk) rep.target_accuracy.topk = evaluate(rep.topk->labels, *target_truth);
      rep.target_accuracy.final = evaluate(rep.predictions, *target_truth);
    });
  }
  return rep;
}

/// Full run. Labels carried by `target` are treated as evaluation-only truth.
inline RunReport run_cajnet(const DomainDataset& source, const DomainDataset& target, const PipelineConfig& cfg) {
  detail::run_stage("config", [&] { cfg.validate(); });
  if (target.num_classes() != source.num_classes()) {
    throw usage_error("source and target disagree on the number of classes");
  }
  const PreparedDomains d = prepare_domains(source, target.features(), cfg);
  const EncoderStage enc = train_encoder_stage(d, cfg);
  return finish_run(d, enc, cfg, target.labels());
}

}  // namespace cajnet
