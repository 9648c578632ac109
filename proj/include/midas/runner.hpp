// SPDX-License-Identifier: Apache-2.0
//
// Experiment drivers behind the command-line subcommands. Every driver writes
// its artifacts under `ExperimentConfig::out_dir`.
#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "midas/config.hpp"
#include "midas/gradcheck.hpp"
#include "midas/metrics.hpp"
#include "midas/train.hpp"

namespace midas {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitIo = 2, kExitAcceptance = 3 };

inline std::uint64_t model_seed(std::uint64_t run_seed) { return run_seed ^ 0x9e3779b97f4a7c15ULL; }

inline FeatureDataset load_dataset(const ExperimentConfig& cfg) {
  FeatureDataset ds = cfg.data_source == "file" ? load_feature_file(cfg.data_path)
                                                : generate_synthetic(cfg.synthetic_spec());
  if (ds.num_modalities() != cfg.num_modalities()) {
    throw ConfigError("dataset has " + std::to_string(ds.num_modalities()) + " modalities, config describes " +
                      std::to_string(cfg.num_modalities()));
  }
  return ds;
}

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory: " + dir);
  return dir;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write " + p.string());
  return os;
}

inline void write_config_snapshot(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  auto os = open_out(dir / "config.ini");
  write_config(os, cfg);
}

/// Writes the dataset described by the config as a feature file.
inline std::filesystem::path run_synth_gen(const ExperimentConfig& cfg) {
  const auto dir = prepare_out_dir(cfg.out_dir);
  write_config_snapshot(cfg, dir);
  const auto path = dir / "features.midasfeat";
  save_feature_file(generate_synthetic(cfg.synthetic_spec()), path.string());
  return path;
}

struct TrainArtifacts {
  MultimodalModel model;
  std::vector<TraceRecord> trace;
  EvalReport report;
};

/// Trains, evaluates, and writes config.ini, model.ckpt, trace.csv and
/// report.csv.
inline TrainArtifacts run_train(const ExperimentConfig& cfg) {
  const auto dir = prepare_out_dir(cfg.out_dir);
  const FeatureDataset ds = load_dataset(cfg);
  MultimodalModel model(cfg.model_spec(ds), model_seed(cfg.train.seed));
  auto trace = train(cfg.train, model, ds);
  EvalReport report = evaluate(model, ds, cfg.eval_split, cfg.eval_seed);

  write_config_snapshot(cfg, dir);
  save_checkpoint(model, (dir / "model.ckpt").string());
  {
    auto os = open_out(dir / "trace.csv");
    write_trace_csv(os, trace, model.num_modalities());
  }
  {
    auto os = open_out(dir / "report.csv");
    write_report_csv(os, report);
  }
  return {std::move(model), std::move(trace), std::move(report)};
}

inline void check_compatible(const MultimodalModel& model, const FeatureDataset& ds) {
  auto shape = [](std::size_t C, std::vector<std::size_t> dims) {
    std::string s = "C=" + std::to_string(C) + " dims=[";
    for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
    return s + "]";
  };
  std::vector<std::size_t> md, dd;
  for (std::size_t m = 0; m < model.num_modalities(); ++m) md.push_back(model.input_dim(m));
  for (std::size_t m = 0; m < ds.num_modalities(); ++m) dd.push_back(ds.dim(m));
  if (md != dd || model.num_classes() != ds.num_classes) {
    throw DimensionError("checkpoint " + shape(model.num_classes(), md) + " does not match dataset " +
                         shape(ds.num_classes, dd));
  }
}

/// Per-item misaligned diagnostics of a frozen model.
inline void write_misaligned_csv(std::ostream& os, const MultimodalModel& model, const FeatureDataset& ds,
                                 const ExperimentConfig& cfg) {
  const std::size_t M = model.num_modalities();
  const MisalignedEvalSet set = make_misaligned_eval_set(ds, cfg.eval_split, M, cfg.eval_seed);
  const ModelOutputs out = forward_eval(model, ds, set.rows);
  os << "item,anchor";
  detail::numbered(os, "source_", M);
  detail::numbered(os, "label_", M);
  os << ",top2_first,top2_second,hit";
  detail::numbered(os, "uni_conf_", M);
  detail::numbered(os, "multi_conf_", M);
  os << '\n';
  if (set.plans.empty()) return;
  const Tensor fused = softmax(model.fuse_predict(build_misaligned_features(out.features, set.plans)));
  std::vector<Tensor> probs;
  for (const Tensor& z : out.uni_logits) probs.push_back(softmax(z));
  for (std::size_t k = 0; k < set.plans.size(); ++k) {
    const MisalignedPlan& p = set.plans[k];
    os << k << ',' << set.rows[p.anchor];
    for (std::size_t s : p.sources) os << ',' << set.rows[s];
    for (std::size_t y : p.labels) os << ',' << y + 1;
    const auto [f, s] = top2(fused.row(k));
    const auto d = p.distinct_labels();
    os << ',' << f + 1 << ',' << s + 1 << ',' << (d.size() == 2 && top2_hit(fused.row(k), d[0], d[1]) ? 1 : 0);
    std::vector<std::span<const double>> rows;
    for (std::size_t m = 0; m < M; ++m) rows.push_back(probs[m].row(p.sources[m]));
    detail::values(os, confidence_label(rows, p.labels).confidence);
    detail::values(os, normalized_multimodal_confidence(fused.row(k), p.labels));
    os << '\n';
  }
}

/// Evaluates a checkpoint on the configured dataset; writes report.csv and
/// misaligned.csv.
inline EvalReport run_diagnose(const ExperimentConfig& cfg, const std::string& checkpoint) {
  const auto dir = prepare_out_dir(cfg.out_dir);
  const FeatureDataset ds = load_dataset(cfg);
  const MultimodalModel model = load_checkpoint(checkpoint);
  check_compatible(model, ds);
  EvalReport report = evaluate(model, ds, cfg.eval_split, cfg.eval_seed);
  {
    auto os = open_out(dir / "report.csv");
    write_report_csv(os, report);
  }
  {
    auto os = open_out(dir / "misaligned.csv");
    write_misaligned_csv(os, model, ds, cfg);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Gradient check

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kQuadraticTolerance = 1e-8;
inline constexpr std::size_t kGradCheckMaxWidth = 16;

struct GradCheckReport {
  double quadratic = 0.0;
  double align = 0.0, uni = 0.0, mis = 0.0, total = 0.0;

  bool passed() const {
    return quadratic <= kQuadraticTolerance && align <= kGradCheckTolerance && uni <= kGradCheckTolerance &&
           mis <= kGradCheckTolerance && total <= kGradCheckTolerance;
  }
};

inline int exit_code(const GradCheckReport& r) { return r.passed() ? kExitOk : kExitAcceptance; }

/// 0.5 * Σ w_i^2 * (i + 1): gradient w_i * (i + 1).
inline double quadratic_self_test(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Tensor w(Shape{6});
  for (double& v : w.values()) v = u(rng);
  Tensor k(Shape{6});
  for (std::size_t i = 0; i < 6; ++i) k[i] = 0.5 * static_cast<double>(i + 1);
  LossBuilder fn = [k](Tape&, const std::vector<Var>& p) { return weighted_sum(mul(p[0], p[0]), k); };
  return grad_check(fn, {w}, 1e-5).max_rel_error;
}

/// Frozen inputs for checking one batch's loss terms.
struct GradCheckProblem {
  MultimodalModel model;
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
  MisalignedBatch misaligned;
};

/// A batch of `batch` training rows with misaligned constants frozen at the
/// model's current parameters. alpha is set above 1 on the last modality so
/// the weak-modality weight is exercised.
inline GradCheckProblem make_gradcheck_problem(const ModelSpec& spec, const FeatureDataset& ds, std::uint64_t seed,
                                               std::size_t batch, double eta) {
  GradCheckProblem prob{MultimodalModel(spec, model_seed(seed)), {}, {}, {}};
  auto rows = ds.indices(Split::Train);
  rows.resize(std::min(rows.size(), batch));
  for (std::size_t m = 0; m < spec.num_modalities(); ++m) prob.inputs.push_back(ds.gather(m, rows));
  prob.labels = ds.gather_labels(rows);

  std::mt19937_64 rng(seed);
  std::vector<MisalignedPlan> plans;
  for (int attempt = 0; attempt < 16 && plans.empty(); ++attempt)
    plans = pair_batch(std::span<const std::size_t>(prob.labels), spec.num_modalities(), rng);

  std::vector<double> alpha(spec.num_modalities(), 1.0);
  alpha.back() = 1.0 + 2.0 * eta;
  Tape tape;
  const auto bound = prob.model.bind(tape, false);
  const AlignedForward fw = forward_aligned(prob.model, bound, prob.inputs);
  std::vector<Tensor> feats, uni;
  for (const Var& f : fw.features) feats.push_back(f.value());
  for (const Var& z : fw.uni_logits) uni.push_back(z.value());
  prob.misaligned = label_misaligned(std::move(plans), feats, uni, alpha, true, prob.labels.size());
  return prob;
}

inline LossBuilder loss_builder(const GradCheckProblem& prob, Objective obj) {
  return [&prob, obj](Tape&, const std::vector<Var>& params) {
    const AlignedForward fw = forward_aligned(prob.model, params, prob.inputs);
    return assemble_loss(prob.model, params, fw, prob.labels, prob.misaligned, obj).total;
  };
}

inline GradCheckReport run_gradcheck(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
  const FeatureDataset ds = load_dataset(cfg);
  const ModelSpec spec = cfg.model_spec(ds);
  for (const EncoderSpec& e : spec.encoders) {
    for (std::size_t w : e.widths()) {
      if (w > kGradCheckMaxWidth) {
        throw ConfigError("grad-check needs every width <= " + std::to_string(kGradCheckMaxWidth) + " (found " +
                          std::to_string(w) + "); lower dim, hidden or feature_dim in the [modalityN] sections");
      }
    }
  }
  const GradCheckProblem prob = make_gradcheck_problem(spec, ds, cfg.train.seed, 8, cfg.train.eta);
  const std::vector<Tensor>& params = prob.model.parameters();
  const double lambda = cfg.train.lambda > 0.0 ? cfg.train.lambda : 1.0;

  GradCheckReport r;
  r.quadratic = quadratic_self_test(cfg.train.seed);
  r.align = grad_check(loss_builder(prob, {true, false, false, 0.0}), params).max_rel_error;
  r.uni = grad_check(loss_builder(prob, {false, true, false, 0.0}), params).max_rel_error;
  if (!prob.misaligned.empty()) {
    r.mis = grad_check(loss_builder(prob, {false, false, true, 1.0}), params).max_rel_error;
  }
  r.total = grad_check(loss_builder(prob, {true, true, true, lambda}), params).max_rel_error;

  auto line = [&log](const char* name, double err, double tol) {
    log << name << " max_rel_error=" << format_real(err) << (err <= tol ? " ok" : " FAIL") << '\n';
  };
  line("quadratic", r.quadratic, kQuadraticTolerance);
  line("loss_align", r.align, kGradCheckTolerance);
  line("loss_uni", r.uni, kGradCheckTolerance);
  line("loss_mis", r.mis, kGradCheckTolerance);
  line("loss_total", r.total, kGradCheckTolerance);
  return r;
}

}  // namespace midas
