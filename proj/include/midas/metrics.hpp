// SPDX-License-Identifier: Apache-2.0
//
// Evaluation and imbalance diagnostics: accuracy, macro F1, misaligned top-2
// accuracy, confidence traces and zero-substitution modality valuation.
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "midas/data.hpp"
#include "midas/midas.hpp"
#include "midas/train.hpp"

namespace midas {

/// Row argmax; ties resolve to the lowest class index.
inline std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    auto row = scores.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    out.push_back(best);
  }
  return out;
}

inline double top1_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("top1_accuracy: length mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Unweighted mean over classes of per-class F1 (0 when P + R = 0), in %.
inline double macro_f1(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                       std::size_t num_classes) {
  if (predictions.size() != labels.size()) throw DimensionError("macro_f1: length mismatch");
  if (num_classes == 0) throw ContractError("macro_f1: no classes");
  std::vector<double> tp(num_classes, 0.0), fp(num_classes, 0.0), fn(num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || predictions[i] >= num_classes) {
      throw ContractError("macro_f1: class index out of range");
    }
    if (predictions[i] == labels[i]) {
      tp[labels[i]] += 1.0;
    } else {
      fp[predictions[i]] += 1.0;
      fn[labels[i]] += 1.0;
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double p = tp[c] + fp[c] > 0.0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    const double r = tp[c] + fn[c] > 0.0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    total += p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return 100.0 * total / static_cast<double>(num_classes);
}

/// The two highest-probability classes; equal probabilities favour the lower
/// class index.
inline std::pair<std::size_t, std::size_t> top2(std::span<const double> probs) {
  if (probs.size() < 2) throw ContractError("top2 needs at least two classes");
  std::size_t first = 0, second = 1;
  if (probs[1] > probs[0]) std::swap(first, second);
  for (std::size_t c = 2; c < probs.size(); ++c) {
    if (probs[c] > probs[first]) {
      second = first;
      first = c;
    } else if (probs[c] > probs[second]) {
      second = c;
    }
  }
  return {first, second};
}

/// True iff {a, b} equals the model's top-2 class set.
inline bool top2_hit(std::span<const double> probs, std::size_t a, std::size_t b) {
  if (a == b) throw ContractError("misaligned item needs two distinct ground-truth labels");
  const auto [f, s] = top2(probs);
  return (f == a && s == b) || (f == b && s == a);
}

// ---------------------------------------------------------------------------
// Misaligned evaluation set

/// Misaligned items over a fixed evaluation split. Plans index into `rows`.
struct MisalignedEvalSet {
  std::vector<std::size_t> rows;  // dataset row of each batch position
  std::vector<MisalignedPlan> plans;
};

/// Pairs the whole split once with a fixed seed.
inline MisalignedEvalSet make_misaligned_eval_set(const FeatureDataset& ds, Split split, std::size_t num_modalities,
                                                  std::uint64_t seed) {
  MisalignedEvalSet set;
  set.rows = ds.indices(split);
  const auto labels = ds.gather_labels(set.rows);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x65766cu};
  std::mt19937_64 rng(seq);
  set.plans = pair_batch(std::span<const std::size_t>(labels), num_modalities, rng);
  return set;
}

struct ModelOutputs {
  std::vector<Tensor> features;  // [n x d_m]
  std::vector<Tensor> uni_logits;
  Tensor fused_logits;
};

inline ModelOutputs forward_eval(const MultimodalModel& model, const FeatureDataset& ds,
                                 std::span<const std::size_t> rows) {
  ModelOutputs out;
  for (std::size_t m = 0; m < model.num_modalities(); ++m) {
    out.features.push_back(model.encode(m, ds.gather(m, rows)));
    out.uni_logits.push_back(model.unimodal_predict(m, out.features.back()));
  }
  out.fused_logits = model.fuse_predict(out.features);
  return out;
}

/// Percentage of plans with exactly two distinct source labels whose label
/// pair equals the fused model's top-2 set. Plans with more than two distinct
/// labels (M > 2) are skipped; NaN when nothing qualifies.
inline double misaligned_top2_accuracy(const Tensor& fused_probs, const std::vector<MisalignedPlan>& plans) {
  std::size_t hits = 0, n = 0;
  for (std::size_t k = 0; k < plans.size(); ++k) {
    const auto d = plans[k].distinct_labels();
    if (d.size() != 2) continue;
    ++n;
    hits += top2_hit(fused_probs.row(k), d[0], d[1]);
  }
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

struct ConfidenceMeans {
  std::vector<double> uni;    // mean c~ per modality
  std::vector<double> multi;  // mean fused normalised confidence per modality
};

/// Confidence statistics of a frozen model on a misaligned set.
inline ConfidenceMeans confidence_trace(const ModelOutputs& out, const std::vector<MisalignedPlan>& plans,
                                        const Tensor& fused_probs) {
  const std::size_t M = out.features.size();
  std::vector<Tensor> probs;
  for (const Tensor& z : out.uni_logits) probs.push_back(softmax(z));
  std::vector<std::vector<double>> uni, multi;
  for (std::size_t k = 0; k < plans.size(); ++k) {
    std::vector<std::span<const double>> rows;
    for (std::size_t m = 0; m < M; ++m) rows.push_back(probs[m].row(plans[k].sources[m]));
    uni.push_back(confidence_label(rows, plans[k].labels).confidence);
    multi.push_back(normalized_multimodal_confidence(fused_probs.row(k), plans[k].labels));
  }
  return {column_means(uni, M), column_means(multi, M)};
}

/// Top-1 accuracy (%) per modality m when every other modality's features are
/// replaced by zeros before fusion.
inline std::vector<double> zero_substitution_valuation(const MultimodalModel& model, const ModelOutputs& out,
                                                       std::span<const std::size_t> labels) {
  std::vector<double> acc;
  for (std::size_t target = 0; target < model.num_modalities(); ++target) {
    std::vector<Tensor> feats;
    for (std::size_t m = 0; m < model.num_modalities(); ++m)
      feats.push_back(m == target ? out.features[m] : Tensor(out.features[m].shape()));
    acc.push_back(top1_accuracy(argmax_rows(model.fuse_predict(feats)), labels));
  }
  return acc;
}

struct EvalReport {
  double top1 = 0.0;
  double macro_f1 = 0.0;
  double misaligned_top2 = 0.0;
  std::vector<double> uni_conf;
  std::vector<double> multi_conf;
  std::vector<double> zero_sub;
};

/// Aligned and misaligned evaluation of `model` on one split.
inline EvalReport evaluate(const MultimodalModel& model, const FeatureDataset& ds, Split split,
                           std::uint64_t eval_seed) {
  const auto rows = ds.indices(split);
  if (rows.empty()) throw ContractError(std::string("evaluation split '") + to_string(split) + "' is empty");
  const auto labels = ds.gather_labels(rows);
  const ModelOutputs out = forward_eval(model, ds, rows);

  EvalReport rep;
  const auto pred = argmax_rows(out.fused_logits);
  rep.top1 = top1_accuracy(pred, labels);
  rep.macro_f1 = macro_f1(pred, labels, model.num_classes());
  rep.zero_sub = zero_substitution_valuation(model, out, labels);

  const MisalignedEvalSet mis = make_misaligned_eval_set(ds, split, model.num_modalities(), eval_seed);
  const std::size_t M = model.num_modalities();
  if (mis.plans.empty()) {
    rep.misaligned_top2 = std::numeric_limits<double>::quiet_NaN();
    rep.uni_conf = rep.multi_conf = std::vector<double>(M, std::numeric_limits<double>::quiet_NaN());
    return rep;
  }
  const Tensor fused = softmax(model.fuse_predict(build_misaligned_features(out.features, mis.plans)));
  rep.misaligned_top2 = misaligned_top2_accuracy(fused, mis.plans);
  const ConfidenceMeans cm = confidence_trace(out, mis.plans, fused);
  rep.uni_conf = cm.uni;
  rep.multi_conf = cm.multi;
  return rep;
}

// ---------------------------------------------------------------------------
// CSV output

/// Shortest round-trip decimal form; "nan" for NaN.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline void numbered(std::ostream& os, const char* prefix, std::size_t M) {
  for (std::size_t m = 1; m <= M; ++m) os << ',' << prefix << m;
}

inline void values(std::ostream& os, const std::vector<double>& v) {
  for (double x : v) os << ',' << format_real(x);
}

}  // namespace detail

inline void write_report_csv(std::ostream& os, const EvalReport& r) {
  const std::size_t M = r.zero_sub.size();
  os << "top1,macro_f1,misaligned_top2";
  detail::numbered(os, "uni_conf_", M);
  detail::numbered(os, "multi_conf_", M);
  detail::numbered(os, "zero_sub_", M);
  os << '\n' << format_real(r.top1) << ',' << format_real(r.macro_f1) << ',' << format_real(r.misaligned_top2);
  detail::values(os, r.uni_conf);
  detail::values(os, r.multi_conf);
  detail::values(os, r.zero_sub);
  os << '\n';
}

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace, std::size_t M) {
  os << "epoch,step";
  detail::numbered(os, "alpha_", M);
  detail::numbered(os, "uni_conf_", M);
  detail::numbered(os, "multi_conf_", M);
  os << ",loss_align,loss_uni,loss_mis,loss_total\n";
  for (const TraceRecord& t : trace) {
    os << t.epoch << ',' << t.step;
    detail::values(os, t.alpha);
    detail::values(os, t.uni_conf);
    detail::values(os, t.multi_conf);
    os << ',' << format_real(t.loss_align) << ',' << format_real(t.loss_uni) << ',' << format_real(t.loss_mis)
       << ',' << format_real(t.loss_total) << '\n';
  }
}

}  // namespace midas
