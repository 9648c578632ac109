// SPDX-License-Identifier: Apache-2.0
//
// Misaligned-sample augmentation for imbalanced multimodal training:
// cross-sample modality swapping, soft labels from unimodal confidence,
// weak-modality weighting and hard-sample weighting.
//
// Modality and class indices are 0-based throughout.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <vector>

#include "midas/autodiff.hpp"
#include "midas/model.hpp"

namespace midas {

/// Guards the confidence normalisations against a zero denominator.
inline constexpr double kConfidenceEps = 1e-12;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Plans

/// One misaligned sample: slot m takes modality m of batch row sources[m].
struct MisalignedPlan {
  std::size_t anchor = 0;
  std::vector<std::size_t> sources;  // per modality slot
  std::vector<std::size_t> labels;   // label of each slot's source

  std::size_t num_modalities() const { return sources.size(); }

  /// Slots whose source is not the anchor.
  std::vector<std::size_t> replaced() const {
    std::vector<std::size_t> r;
    for (std::size_t m = 0; m < sources.size(); ++m)
      if (sources[m] != anchor) r.push_back(m);
    return r;
  }

  std::vector<std::size_t> distinct_labels() const {
    std::set<std::size_t> s(labels.begin(), labels.end());
    return {s.begin(), s.end()};
  }

  friend bool operator==(const MisalignedPlan&, const MisalignedPlan&) = default;
};

/// Two-modality pairing against a fixed batch permutation `sigma`. Every
/// anchor i whose partner sigma[i] carries a different label yields the two
/// symmetric samples (x1_i, x2_sigma(i)) and (x1_sigma(i), x2_i); anchors
/// whose partner shares their label contribute nothing.
inline std::vector<MisalignedPlan> pair_with_permutation(std::span<const std::size_t> labels,
                                                         std::span<const std::size_t> sigma) {
  if (sigma.size() != labels.size()) throw DimensionError("permutation length differs from batch");
  std::vector<MisalignedPlan> plans;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t j = sigma[i];
    if (j >= labels.size()) throw DimensionError("permutation entry out of batch range");
    if (labels[i] == labels[j]) continue;
    plans.push_back({i, {i, j}, {labels[i], labels[j]}});
    plans.push_back({i, {j, i}, {labels[j], labels[i]}});
  }
  return plans;
}

/// Plans the misaligned samples for one mini-batch.
///
/// M = 2 draws one uniform permutation of the batch (see
/// pair_with_permutation). M > 2 draws, per anchor, M-1 distinct partners and
/// a uniform assignment of the M sources to the M slots, discarding the plan
/// when all assigned labels coincide. Batches smaller than 2 (or than M for
/// M > 2) yield no plans.
template <class Rng>
std::vector<MisalignedPlan> pair_batch(std::span<const std::size_t> labels, std::size_t num_modalities,
                                       Rng& rng) {
  if (num_modalities < 2) throw ContractError("pair_batch needs at least two modalities");
  const std::size_t b = labels.size();
  if (b < 2) return {};
  if (num_modalities == 2) {
    std::vector<std::size_t> sigma(b);
    std::iota(sigma.begin(), sigma.end(), std::size_t{0});
    std::shuffle(sigma.begin(), sigma.end(), rng);
    return pair_with_permutation(labels, sigma);
  }
  if (b < num_modalities) return {};
  std::vector<MisalignedPlan> plans;
  std::vector<std::size_t> others(b - 1);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0, o = 0; k < b; ++k)
      if (k != i) others[o++] = k;
    // partial Fisher-Yates: first M-1 entries become the partners
    for (std::size_t k = 0; k + 1 < num_modalities; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, others.size() - 1);
      std::swap(others[k], others[pick(rng)]);
    }
    std::vector<std::size_t> pool{i};
    pool.insert(pool.end(), others.begin(), others.begin() + static_cast<std::ptrdiff_t>(num_modalities - 1));
    std::shuffle(pool.begin(), pool.end(), rng);
    MisalignedPlan p{i, pool, {}};
    for (std::size_t s : pool) p.labels.push_back(labels[s]);
    if (p.distinct_labels().size() < 2) continue;
    plans.push_back(std::move(p));
  }
  return plans;
}

/// Assembles feature-level misaligned tuples: slot m of plan k holds row
/// sources[m] of features[m]. No encoder is re-run.
inline std::vector<Tensor> build_misaligned_features(const std::vector<Tensor>& features,
                                                     const std::vector<MisalignedPlan>& plans) {
  std::vector<Tensor> out;
  for (std::size_t m = 0; m < features.size(); ++m) {
    const Tensor& f = features[m];
    Tensor block(Shape{plans.size(), f.cols()});
    for (std::size_t k = 0; k < plans.size(); ++k) {
      const std::size_t src = plans[k].sources.at(m);
      if (src >= f.rows()) {
        throw DimensionError("plan source " + std::to_string(src) + " outside batch of " +
                             std::to_string(f.rows()));
      }
      auto from = f.row(src);
      std::copy(from.begin(), from.end(), block.row(k).begin());
    }
    out.push_back(std::move(block));
  }
  return out;
}

/// Differentiable variant over feature Vars.
inline std::vector<Var> build_misaligned_features(const std::vector<Var>& features,
                                                  const std::vector<MisalignedPlan>& plans) {
  std::vector<Var> out;
  for (std::size_t m = 0; m < features.size(); ++m) {
    std::vector<std::size_t> idx;
    idx.reserve(plans.size());
    for (const MisalignedPlan& p : plans) idx.push_back(p.sources.at(m));
    out.push_back(gather_rows(features[m], std::move(idx)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Confidence-based labels

struct ConfidenceLabel {
  std::vector<double> confidence;  // normalised c~ per modality slot
  std::vector<double> target;      // soft label over C classes
};

/// c~^m = q_m / Σ_l q_l where q_m is slot m's unimodal probability on its own
/// source label; the soft label is Σ_m c~^m onehot(label_m). A denominator
/// below kConfidenceEps falls back to equal shares.
inline ConfidenceLabel confidence_label(std::span<const double> source_confidence,
                                        std::span<const std::size_t> source_labels,
                                        std::size_t num_classes) {
  if (source_confidence.size() != source_labels.size()) {
    throw DimensionError("confidence_label: confidences and labels differ in length");
  }
  double denom = 0.0;
  for (double q : source_confidence) denom += q;
  const std::size_t M = source_confidence.size();
  ConfidenceLabel out{std::vector<double>(M), std::vector<double>(num_classes, 0.0)};
  for (std::size_t m = 0; m < M; ++m) {
    if (source_labels[m] >= num_classes) throw ContractError("confidence_label: label out of range");
    out.confidence[m] = denom < kConfidenceEps ? 1.0 / static_cast<double>(M) : source_confidence[m] / denom;
    out.target[source_labels[m]] += out.confidence[m];
  }
  return out;
}

/// Overload taking each slot's full unimodal probability row.
inline ConfidenceLabel confidence_label(const std::vector<std::span<const double>>& slot_probs,
                                        std::span<const std::size_t> source_labels) {
  if (slot_probs.empty()) throw DimensionError("confidence_label: no slots");
  std::vector<double> q;
  for (std::size_t m = 0; m < slot_probs.size(); ++m) {
    if (source_labels[m] >= slot_probs[m].size()) throw ContractError("confidence_label: label out of range");
    q.push_back(slot_probs[m][source_labels[m]]);
  }
  return confidence_label(q, source_labels, slot_probs.front().size());
}

/// Fused-model confidence per slot: p~[label_m] normalised over the distinct
/// source labels of the sample (equal shares below kConfidenceEps).
inline std::vector<double> normalized_multimodal_confidence(std::span<const double> fused_probs,
                                                            std::span<const std::size_t> source_labels) {
  std::set<std::size_t> distinct(source_labels.begin(), source_labels.end());
  double denom = 0.0;
  for (std::size_t y : distinct) {
    if (y >= fused_probs.size()) throw ContractError("normalized confidence: label out of range");
    denom += fused_probs[y];
  }
  std::vector<double> out;
  out.reserve(source_labels.size());
  for (std::size_t y : source_labels)
    out.push_back(denom < kConfidenceEps ? 1.0 / static_cast<double>(distinct.size()) : fused_probs[y] / denom);
  return out;
}

// ---------------------------------------------------------------------------
// Hard-sample weight

/// Mean cosine similarity, over the replaced slots, between the anchor's own
/// feature and the swapped-in feature. Degenerate (near-zero) features count
/// as similarity 0.
inline double hard_sample_weight(const std::vector<Tensor>& features, const MisalignedPlan& plan) {
  const auto replaced = plan.replaced();
  if (replaced.empty()) throw ContractError("hard_sample_weight: plan replaces no modality");
  double s = 0.0;
  for (std::size_t m : replaced) {
    const Tensor& f = features.at(m);
    if (plan.anchor >= f.rows() || plan.sources[m] >= f.rows()) {
      throw DimensionError("hard_sample_weight: plan index outside batch");
    }
    s += cosine_similarity(f.row(plan.anchor), f.row(plan.sources[m])).value;
  }
  return s / static_cast<double>(replaced.size());
}

// ---------------------------------------------------------------------------
// Weak-modality weighting

/// argmin_m of the batch-mean normalised confidence; ties go to the lowest
/// index. Returns nullopt for an empty batch.
inline std::optional<std::size_t> least_confident_modality(
    const std::vector<std::vector<double>>& confidences) {
  if (confidences.empty()) return std::nullopt;
  const std::size_t M = confidences.front().size();
  std::vector<double> mean(M, 0.0);
  for (const auto& c : confidences)
    for (std::size_t m = 0; m < M; ++m) mean[m] += c.at(m);
  std::size_t best = 0;
  for (std::size_t m = 1; m < M; ++m)
    if (mean[m] < mean[best]) best = m;
  return best;
}

inline int sign(double v) { return (v > 0.0) - (v < 0.0); }

struct AlphaUpdate {
  std::size_t modality = 0;
  int delta = 0;
};

/// Per-modality loss weights alpha_m = 1 + level_m * eta with integer
/// level_m >= 0, so the floor at 1 and repeated +eta steps are exact.
class AlphaState {
 public:
  AlphaState(std::size_t num_modalities, double eta) : levels_(num_modalities, 0), eta_(eta) {
    if (!(eta > 0.0)) throw ConfigError("alpha step size eta must be > 0");
  }

  double alpha(std::size_t m) const { return 1.0 + static_cast<double>(levels_.at(m)) * eta_; }

  std::vector<double> values() const {
    std::vector<double> a;
    for (std::size_t m = 0; m < levels_.size(); ++m) a.push_back(alpha(m));
    return a;
  }

  double eta() const { return eta_; }
  std::size_t step() const { return step_; }
  std::size_t num_modalities() const { return levels_.size(); }

  void reset() { std::fill(levels_.begin(), levels_.end(), 0); }

  /// One batch update. `unimodal` holds c~ per misaligned sample and
  /// `multimodal` the fused normalised confidence per slot of the same
  /// samples. The least confident modality moves by eta * sign(gap) with a
  /// floor of 1; every other modality resets to 1. Empty batches leave the
  /// state untouched.
  std::optional<AlphaUpdate> update(const std::vector<std::vector<double>>& unimodal,
                                    const std::vector<std::vector<double>>& multimodal) {
    if (unimodal.size() != multimodal.size()) throw DimensionError("alpha update: batch size mismatch");
    const auto target = least_confident_modality(unimodal);
    if (!target) return std::nullopt;
    const std::size_t mh = *target;
    double uni = 0.0, multi = 0.0;
    for (std::size_t i = 0; i < unimodal.size(); ++i) {
      uni += unimodal[i].at(mh);
      multi += multimodal[i].at(mh);
    }
    const double n = static_cast<double>(unimodal.size());
    const int delta = sign(uni / n - multi / n);
    const long long next = std::max<long long>(0, levels_[mh] + delta);
    std::fill(levels_.begin(), levels_.end(), 0);
    levels_[mh] = next;
    ++step_;
    return AlphaUpdate{mh, delta};
  }

 private:
  std::vector<long long> levels_;
  double eta_;
  std::size_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Losses (scalar reference forms)

/// Prefactor 1 + (s+1)/2, in [1, 2] for s in [-1, 1].
inline double hard_sample_prefactor(double s) { return 1.0 + (s + 1.0) / 2.0; }

/// Soft target Σ_m alpha_m c~^m onehot(label_m); not renormalised.
inline std::vector<double> weighted_target(std::span<const double> confidence,
                                           std::span<const std::size_t> source_labels,
                                           std::span<const double> alpha, std::size_t num_classes) {
  if (confidence.size() != source_labels.size() || alpha.size() != confidence.size()) {
    throw DimensionError("weighted_target: slot count mismatch");
  }
  std::vector<double> t(num_classes, 0.0);
  for (std::size_t m = 0; m < confidence.size(); ++m) {
    if (source_labels[m] >= num_classes) throw ContractError("weighted_target: label out of range");
    t[source_labels[m]] += alpha[m] * confidence[m];
  }
  return t;
}

/// Misaligned-sample loss for one fused logit row.
inline double loss_mis(std::span<const double> fused_logits, std::span<const double> confidence,
                       std::span<const std::size_t> source_labels, std::span<const double> alpha,
                       double hard_weight) {
  const auto t = weighted_target(confidence, source_labels, alpha, fused_logits.size());
  const Tensor logp = log_softmax(Tensor(Shape{1, fused_logits.size()},
                                         std::vector<double>(fused_logits.begin(), fused_logits.end())));
  double ce = 0.0;
  for (std::size_t c = 0; c < t.size(); ++c)
    if (t[c] != 0.0) ce -= t[c] * logp[c];
  return hard_sample_prefactor(hard_weight) * ce;
}

struct AlignedLoss {
  double align = 0.0;
  double uni = 0.0;
};

/// Hard-label cross-entropy of the fused logits and the sum over modalities
/// of the unimodal cross-entropies, for one sample.
inline AlignedLoss loss_align_uni(std::span<const double> fused_logits,
                                  const std::vector<std::span<const double>>& unimodal_logits,
                                  std::size_t label) {
  const std::size_t C = fused_logits.size();
  if (label >= C) throw ContractError("loss_align_uni: label out of range");
  auto nll = [label](std::span<const double> z) {
    const Tensor logp = log_softmax(Tensor(Shape{1, z.size()}, std::vector<double>(z.begin(), z.end())));
    return -logp[label];
  };
  AlignedLoss out;
  out.align = nll(fused_logits);
  for (const auto& z : unimodal_logits) {
    if (z.size() != C) throw DimensionError("loss_align_uni: unimodal logits width mismatch");
    out.uni += nll(z);
  }
  return out;
}

struct SampleLoss {
  double align = 0.0;
  double uni = 0.0;
  double mis = 0.0;  // mean over the anchor's misaligned samples, 0 if none
};

/// Batch mean of align + uni + lambda * mis.
inline double total_loss(std::span<const SampleLoss> batch, double lambda) {
  if (lambda < 0.0) throw ContractError("total_loss: lambda must be >= 0");
  if (batch.empty()) return 0.0;
  double s = 0.0;
  for (const SampleLoss& l : batch) s += l.align + l.uni + lambda * l.mis;
  return s / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Batch-level assembly on the tape

struct AlignedForward {
  std::vector<Var> features;     // [b x d_m] per modality
  Var fused_logits;              // [b x C]
  std::vector<Var> uni_logits;   // [b x C] per modality
};

inline AlignedForward forward_aligned(const MultimodalModel& model, const std::vector<Var>& bound,
                                      const std::vector<Tensor>& inputs) {
  if (inputs.size() != model.num_modalities()) {
    throw DimensionError("expected " + std::to_string(model.num_modalities()) + " input blocks, got " +
                         std::to_string(inputs.size()));
  }
  Tape& tape = bound.front().tape();
  AlignedForward fw;
  for (std::size_t m = 0; m < inputs.size(); ++m)
    fw.features.push_back(model.encode(bound, m, tape.constant(inputs[m])));
  fw.fused_logits = model.fuse_predict(bound, fw.features);
  for (std::size_t m = 0; m < inputs.size(); ++m)
    fw.uni_logits.push_back(model.unimodal_predict(bound, m, fw.features[m]));
  return fw;
}

/// Constants attached to the misaligned samples of one batch. Everything
/// here is computed from detached forward values.
struct MisalignedBatch {
  std::vector<MisalignedPlan> plans;
  std::vector<std::vector<double>> confidence;  // c~ per sample per slot
  std::vector<std::vector<double>> soft_label;  // unweighted y~ per sample
  std::vector<double> hard_weight;              // s~ per sample
  std::vector<double> alpha;                    // alpha in force for this batch
  std::vector<std::size_t> per_anchor;          // number of samples per anchor

  bool empty() const { return plans.empty(); }

  /// alpha-weighted targets as a [n x C] matrix.
  Tensor targets(std::size_t num_classes) const {
    Tensor t(Shape{plans.size(), num_classes});
    for (std::size_t k = 0; k < plans.size(); ++k) {
      const auto row = weighted_target(confidence[k], plans[k].labels, alpha, num_classes);
      std::copy(row.begin(), row.end(), t.row(k).begin());
    }
    return t;
  }

  /// Per-sample weight prefactor(s~) / |samples of its anchor|.
  std::vector<double> sample_weights() const {
    std::vector<double> w;
    for (std::size_t k = 0; k < plans.size(); ++k)
      w.push_back(hard_sample_prefactor(hard_weight[k]) /
                  static_cast<double>(per_anchor.at(plans[k].anchor)));
    return w;
  }
};

/// Labels and weights the planned samples from frozen batch values. With
/// `use_hard_weight` off every s~ is -1 (prefactor 1).
inline MisalignedBatch label_misaligned(std::vector<MisalignedPlan> plans,
                                        const std::vector<Tensor>& features,
                                        const std::vector<Tensor>& uni_logits,
                                        std::vector<double> alpha, bool use_hard_weight,
                                        std::size_t batch_size) {
  MisalignedBatch mb;
  mb.alpha = std::move(alpha);
  mb.per_anchor.assign(batch_size, 0);
  std::vector<Tensor> probs;
  for (const Tensor& z : uni_logits) probs.push_back(softmax(z));
  for (const MisalignedPlan& p : plans) {
    if (p.anchor >= batch_size) throw DimensionError("plan anchor outside batch");
    std::vector<std::span<const double>> rows;
    for (std::size_t m = 0; m < p.sources.size(); ++m) {
      if (p.sources[m] >= batch_size) throw DimensionError("plan source outside batch");
      rows.push_back(probs.at(m).row(p.sources[m]));
    }
    ConfidenceLabel cl = confidence_label(rows, p.labels);
    mb.confidence.push_back(std::move(cl.confidence));
    mb.soft_label.push_back(std::move(cl.target));
    mb.hard_weight.push_back(use_hard_weight ? hard_sample_weight(features, p) : -1.0);
    ++mb.per_anchor[p.anchor];
  }
  mb.plans = std::move(plans);
  return mb;
}

/// Which terms of the objective are active.
struct Objective {
  bool align = true;
  bool uni = true;
  bool mis = true;
  double lambda = 1.0;
};

struct LossGraph {
  Var total;
  Var align_rows;  // [b]
  Var uni_rows;    // [b], summed over modalities
  Var mis_rows;    // [n] raw soft cross-entropy per misaligned sample
  Var mis_logits;  // [n x C]
  double align = 0.0, uni = 0.0, mis = 0.0;  // batch means (mis per anchor)
  bool has_mis = false;
};

/// Builds (1/b) Σ_i [L_align + L_uni + lambda * L_mis] on the tape.
inline LossGraph assemble_loss(const MultimodalModel& model, const std::vector<Var>& bound,
                               const AlignedForward& fw, std::span<const std::size_t> labels,
                               const MisalignedBatch& mb, const Objective& obj) {
  const std::size_t b = labels.size();
  const std::size_t C = model.num_classes();
  const double inv_b = 1.0 / static_cast<double>(b);
  const Tensor hard = one_hot(labels, C);

  LossGraph g;
  std::vector<Var> terms;
  g.align_rows = cross_entropy_soft(fw.fused_logits, hard);
  if (obj.align) {
    terms.push_back(scale(sum(g.align_rows), inv_b));
    g.align = terms.back().value().item();
  }
  if (obj.uni) {
    Var u = cross_entropy_soft(fw.uni_logits.front(), hard);
    for (std::size_t m = 1; m < fw.uni_logits.size(); ++m) u = add(u, cross_entropy_soft(fw.uni_logits[m], hard));
    g.uni_rows = u;
    terms.push_back(scale(sum(u), inv_b));
    g.uni = terms.back().value().item();
  }
  if (obj.mis && !mb.empty()) {
    const auto assembled = build_misaligned_features(fw.features, mb.plans);
    g.mis_logits = model.fuse_predict(bound, assembled);
    g.mis_rows = cross_entropy_soft(g.mis_logits, mb.targets(C));
    Tensor w = Tensor::vector(mb.sample_weights());
    for (double& v : w.values()) v *= inv_b;
    Var mis = weighted_sum(g.mis_rows, w);
    g.mis = mis.value().item();
    g.has_mis = true;
    terms.push_back(scale(mis, obj.lambda));
  }
  if (terms.empty()) throw ContractError("objective has no active terms");
  g.total = terms.front();
  for (std::size_t k = 1; k < terms.size(); ++k) g.total = add(g.total, terms[k]);
  return g;
}

}  // namespace midas
