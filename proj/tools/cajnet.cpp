// cajnet command-line tool: adapt, synth, discrepancy.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cajnet/cajnet.hpp"

namespace {

using namespace cajnet;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return kExitUsage;
    case ErrorKind::numerical: return kExitNumerical;
    default: return kExitData;
  }
}

std::string shortest(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return {buf.data(), res.ptr};
}

/// Number of classes implied by a label file: one more than its largest label.
Labels load_source_labels(const std::filesystem::path& path, std::size_t& num_classes) {
  const Labels y = load_labels(path, static_cast<std::size_t>(std::numeric_limits<int>::max()));
  num_classes = static_cast<std::size_t>(*std::max_element(y.begin(), y.end())) + 1;
  return y;
}

struct AdaptArgs {
  std::string source_features, source_labels, target_features, target_labels, out;
  std::string k = "auto";
  std::size_t epochs = 1000, batch = 32;
  double lr = 0.001, tau = 0.31, eta = 0.1, lambda = 10.0, rho = 10.0;
  std::string mu = "auto";
  std::uint64_t seed = 0;
  bool normalize = false;
  std::vector<std::string> disable;
};

double parse_real(const std::string& flag, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) throw usage_error(flag + ": not a number: " + text);
  return v;
}

int run_adapt(const AdaptArgs& a) {
  PipelineConfig cfg;
  if (a.k == "auto") {
    cfg.tune_k = true;
  } else {
    std::size_t k = 0;
    const auto [ptr, ec] = std::from_chars(a.k.data(), a.k.data() + a.k.size(), k);
    if (ec != std::errc{} || ptr != a.k.data() + a.k.size() || k < 1) {
      throw usage_error("--k expects a positive integer or 'auto', got " + a.k);
    }
    cfg.tune_k = false;
    cfg.k = k;
  }
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.learning_rate = a.lr;
  cfg.tau = a.tau;
  cfg.eta = a.eta;
  cfg.lambda = a.lambda;
  cfg.rho = a.rho;
  if (a.mu != "auto") cfg.mu = parse_real("--mu", a.mu);
  cfg.seed = a.seed;
  cfg.normalize_features = a.normalize;
  std::set<Loss> disabled;
  for (const auto& name : a.disable) disabled.insert(parse_loss(name));
  cfg = ablate(cfg, disabled);
  cfg.validate();

  std::size_t num_classes = 0;
  const Labels ys = load_source_labels(a.source_labels, num_classes);
  const DomainDataset source(load_feature_file(a.source_features), ys, num_classes);
  const Matrix xt = load_feature_file(a.target_features);
  std::optional<Labels> truth;
  if (!a.target_labels.empty()) truth = load_labels(a.target_labels, num_classes);
  const DomainDataset target(xt, truth, num_classes);

  const RunReport report = run_cajnet(source, target, cfg);
  write_report(report, a.out);

  std::cout << "source " << report.source_samples << " x " << report.feature_dim << ", target "
            << report.target_samples << ", classes " << report.num_classes << "\n";
  std::cout << "encoder source accuracy " << shortest(report.encoder_source_accuracy) << "\n";
  if (report.topk) std::cout << "K " << report.topk->k << "\n";
  if (report.target_accuracy.final) {
    std::cout << "target accuracy: encoder " << shortest(*report.target_accuracy.encoder);
    if (report.target_accuracy.topk) std::cout << ", top-K " << shortest(*report.target_accuracy.topk);
    std::cout << ", final " << shortest(*report.target_accuracy.final) << "\n";
  }
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote " << (std::filesystem::path(a.out) / "report.json").string() << "\n";
  return 0;
}

struct SynthArgs {
  SynthOptions opt;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  const SyntheticDomains d = synth_shifted_domains(a.opt);
  const std::filesystem::path dir(a.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());
  save_feature_file(d.source.features(), dir / "source_features.bin");
  save_labels(d.source.require_labels(), dir / "source_labels.txt");
  save_feature_file(d.target.features(), dir / "target_features.bin");
  save_labels(d.target_truth, dir / "target_labels.txt");
  std::cout << "wrote " << d.source.size() << " source and " << d.target.size() << " target samples to "
            << dir.string() << "\n";
  return 0;
}

struct DiscrepancyArgs {
  std::string source_features, target_features, source_labels;
};

int run_discrepancy(const DiscrepancyArgs& a) {
  std::size_t num_classes = 0;
  const Labels ys = load_source_labels(a.source_labels, num_classes);
  const DomainDataset source(load_feature_file(a.source_features), ys, num_classes);
  const Matrix xt = load_feature_file(a.target_features);
  if (xt.cols() != source.dim()) {
    throw shape_error("source has " + std::to_string(source.dim()) + " features, target " + std::to_string(xt.cols()));
  }
  const JointFeatures js(source.features(), conditional_features(source.features(), source));
  const JointFeatures jt(xt, conditional_features(xt, source));
  const JointDiscrepancy d = joint_discrepancy(js, jt);
  std::cout << "marginal " << shortest(d.marginal) << "\n";
  std::cout << "conditional " << shortest(d.conditional) << "\n";
  std::cout << "joint " << shortest(d.total) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CAJNet unsupervised domain adaptation over feature matrices"};
  app.require_subcommand(1);

  AdaptArgs adapt;
  auto* a = app.add_subcommand("adapt", "Run the full adaptation pipeline");
  a->add_option("--source-features", adapt.source_features, "Source feature file (.csv or binary)")->required();
  a->add_option("--source-labels", adapt.source_labels, "Source label file")->required();
  a->add_option("--target-features", adapt.target_features, "Target feature file")->required();
  a->add_option("--target-labels", adapt.target_labels, "Target labels, used only for evaluation");
  a->add_option("--out", adapt.out, "Output directory")->required();
  a->add_option("--k", adapt.k, "Neighbour count, or 'auto' to tune it by the top-K loss")->capture_default_str();
  a->add_option("--epochs", adapt.epochs)->capture_default_str();
  a->add_option("--batch", adapt.batch)->capture_default_str();
  a->add_option("--lr", adapt.lr)->capture_default_str();
  a->add_option("--tau", adapt.tau, "Adaptation factor on the reversed adversarial gradient")->capture_default_str();
  a->add_option("--eta", adapt.eta)->capture_default_str();
  a->add_option("--lambda", adapt.lambda)->capture_default_str();
  a->add_option("--rho", adapt.rho)->capture_default_str();
  a->add_option("--mu", adapt.mu, "'auto' or a fixed value in [0, 1]")->capture_default_str();
  a->add_option("--seed", adapt.seed)->capture_default_str();
  a->add_flag("--normalize", adapt.normalize, "z-score features with source statistics");
  a->add_option("--disable", adapt.disable, "Comma-separated subset of adversarial,topk,alignment")->delimiter(',');

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic shifted-domain pair");
  s->add_option("--classes", synth.opt.num_classes)->required();
  s->add_option("--dim", synth.opt.dim)->required();
  s->add_option("--per-class", synth.opt.per_class)->required();
  s->add_option("--rotation", synth.opt.rotation_deg, "Degrees")->required();
  s->add_option("--shift", synth.opt.shift_scale)->required();
  s->add_option("--seed", synth.opt.seed)->required();
  s->add_option("--out", synth.out)->required();

  DiscrepancyArgs disc;
  auto* d = app.add_subcommand("discrepancy", "Print marginal, conditional and joint discrepancy");
  d->add_option("--source-features", disc.source_features)->required();
  d->add_option("--target-features", disc.target_features)->required();
  d->add_option("--source-labels", disc.source_labels)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (a->parsed()) return run_adapt(adapt);
    if (s->parsed()) return run_synth(synth);
    return run_discrepancy(disc);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
