#pragma once

// RunReport serialisation: one JSON document plus CSV traces.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "cajnet/feature_io.hpp"
#include "cajnet/pipeline.hpp"

namespace cajnet {

using ordered_json = nlohmann::ordered_json;

inline ordered_json to_json(const JointDiscrepancy& d) {
  return {{"marginal", d.marginal}, {"conditional", d.conditional}, {"joint", d.total}};
}

inline ordered_json to_json(const PipelineConfig& c) {
  ordered_json j;
  j["k"] = c.tune_k ? ordered_json("auto") : ordered_json(c.k);
  j["k_max"] = c.k_max;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["tau"] = c.tau;
  j["eta"] = c.eta;
  j["lambda"] = c.lambda;
  j["rho"] = c.rho;
  j["alignment_rounds"] = c.alignment_rounds;
  j["laplacian_neighbors"] = c.laplacian_neighbors;
  j["kernel_bandwidth"] = c.kernel_bandwidth ? ordered_json(*c.kernel_bandwidth) : ordered_json("median");
  j["mu"] = c.mu ? ordered_json(*c.mu) : ordered_json("auto");
  j["seed"] = c.seed;
  j["normalize_features"] = c.normalize_features;
  j["standardize_alignment"] = c.standardize_alignment;
  j["widths"] = {c.widths.block1, c.widths.block2, c.widths.block3};
  j["dropout"] = c.dropout;
  j["losses"] = {{"adversarial", c.use_adversarial}, {"topk", c.use_topk}, {"alignment", c.use_alignment}};
  return j;
}

inline ordered_json to_json(const RunReport& r) {
  ordered_json j;
  j["config"] = to_json(r.config);
  j["data"] = {{"source_samples", r.source_samples},
               {"target_samples", r.target_samples},
               {"feature_dim", r.feature_dim},
               {"num_classes", r.num_classes}};

  ordered_json enc;
  enc["source_accuracy"] = r.encoder_source_accuracy;
  enc["epochs"] = r.training_log.epochs.size();
  if (!r.training_log.epochs.empty()) {
    const EpochRecord& last = r.training_log.epochs.back();
    enc["final_source_loss"] = last.source_loss;
    enc["final_adversarial_loss"] = last.adversarial_loss;
    enc["final_domain_accuracy"] = last.domain_accuracy;
  }
  j["encoder"] = enc;

  j["discrepancy"] = {{"input", to_json(r.input_discrepancy)},
                      {"hidden_initial", to_json(r.hidden_initial_discrepancy)},
                      {"hidden_final", to_json(r.hidden_final_discrepancy)}};

  if (r.topk) {
    j["topk"] = {{"k", r.topk->k},
                 {"tuned", !r.topk->losses.empty()},
                 {"loss_by_k", r.topk->losses},
                 {"loss_before", r.topk->loss_before},
                 {"loss_after", r.topk->loss_after}};
  } else {
    j["topk"] = nullptr;
  }

  ordered_json rounds = ordered_json::array();
  for (std::size_t i = 0; i < r.alignment_rounds.size(); ++i) {
    const AlignmentRound& a = r.alignment_rounds[i];
    ordered_json e = {{"round", i}, {"mu", a.mu}, {"labels_changed", a.labels_changed}};
    if (i < r.topk_loss_per_round.size()) e["topk_loss"] = r.topk_loss_per_round[i];
    if (!a.mu_warning.empty()) e["warning"] = a.mu_warning;
    rounds.push_back(std::move(e));
  }
  j["alignment"] = r.config.use_alignment ? ordered_json{{"rounds", rounds}} : ordered_json(nullptr);

  if (r.target_accuracy.final) {
    ordered_json acc;
    acc["encoder"] = *r.target_accuracy.encoder;
    if (r.target_accuracy.topk) acc["topk"] = *r.target_accuracy.topk;
    acc["final"] = *r.target_accuracy.final;
    j["target_accuracy"] = acc;
  }
  j["warnings"] = r.warnings;
  j["encoder_predictions"] = r.encoder_predictions;
  j["predictions"] = r.predictions;
  return j;
}

inline std::string report_json(const RunReport& r) { return to_json(r).dump(2) + "\n"; }

/// report.json, training_log.csv, alignment_log.csv and predictions.txt under `dir`.
inline void write_report(const RunReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());
  detail::write_all(dir / "report.json", report_json(r));
  detail::write_all(dir / "training_log.csv", r.training_log.to_csv());

  std::string align = "round,mu,labels_changed,topk_loss\n";
  for (std::size_t i = 0; i < r.alignment_rounds.size(); ++i) {
    const AlignmentRound& a = r.alignment_rounds[i];
    align += std::to_string(i) + ',' + ordered_json(a.mu).dump() + ',' + std::to_string(a.labels_changed) + ',';
    if (i < r.topk_loss_per_round.size()) align += ordered_json(r.topk_loss_per_round[i]).dump();
    align += '\n';
  }
  detail::write_all(dir / "alignment_log.csv", align);
  save_labels(r.predictions, dir / "predictions.txt");
}

}  // namespace cajnet
