// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "midas/data.hpp"
#include "midas/midas.hpp"
#include "midas/optim.hpp"

namespace midas {

enum class Mode { Midas, Joint };

struct TrainConfig {
  Mode mode = Mode::Midas;
  std::size_t epochs = 40;
  std::size_t warmup_epochs = 4;
  std::size_t batch_size = 64;
  SgdOptions sgd{};
  double lambda = 1.0;
  double eta = 0.05;
  bool warmup = true;         // W
  bool weak_modality = true;  // WM
  bool hard_sample = true;    // HS
  bool alpha_reset_per_epoch = false;
  std::uint64_t seed = 0;

  /// max(1, round(0.1 * E)).
  static std::size_t default_warmup(std::size_t epochs) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(epochs))));
  }

  void validate() const {
    if (warmup_epochs > epochs) {
      throw ConfigError("warm-up epochs (" + std::to_string(warmup_epochs) + ") exceed total epochs (" +
                        std::to_string(epochs) + ")");
    }
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (!(eta > 0.0)) throw ConfigError("eta must be > 0");
    if (!(sgd.learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  }

  /// Warm-up length after the W toggle and mode are applied.
  std::size_t effective_warmup() const {
    return (mode == Mode::Joint || !warmup) ? 0 : warmup_epochs;
  }
};

/// One optimisation step. Columns not part of the active objective are NaN.
struct TraceRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based, global across epochs
  std::vector<double> alpha;
  std::vector<double> uni_conf;    // batch mean c~ per modality
  std::vector<double> multi_conf;  // batch mean fused normalised confidence per modality
  double loss_align = 0.0, loss_uni = 0.0, loss_mis = 0.0, loss_total = 0.0;
};

struct StepResult {
  LossGraph graph;
  MisalignedBatch misaligned;
  std::vector<Tensor> grads;
  std::vector<std::vector<double>> multi_conf;  // per misaligned sample per slot
  double total = 0.0;
};

/// Forward + backward for one batch under `obj`; plans may be empty.
inline StepResult compute_step(const MultimodalModel& model, const std::vector<Tensor>& inputs,
                               std::span<const std::size_t> labels, std::vector<MisalignedPlan> plans,
                               std::vector<double> alpha, bool hard_sample, const Objective& obj) {
  Tape tape;
  const auto bound = model.bind(tape, true);
  const AlignedForward fw = forward_aligned(model, bound, inputs);

  std::vector<Tensor> feats, uni;
  for (const Var& f : fw.features) feats.push_back(f.value());
  for (const Var& z : fw.uni_logits) uni.push_back(z.value());

  StepResult r;
  r.misaligned = label_misaligned(std::move(plans), feats, uni, std::move(alpha), hard_sample, labels.size());
  r.graph = assemble_loss(model, bound, fw, labels, r.misaligned, obj);
  tape.backward(r.graph.total);
  for (const Var& v : bound) r.grads.push_back(v.grad());
  if (r.graph.has_mis) {
    const Tensor p = softmax(r.graph.mis_logits.value());
    for (std::size_t k = 0; k < r.misaligned.plans.size(); ++k)
      r.multi_conf.push_back(normalized_multimodal_confidence(p.row(k), r.misaligned.plans[k].labels));
  }
  r.total = r.graph.total.value().item();
  // The Vars point into the local tape.
  r.graph.total = {};
  r.graph.align_rows = r.graph.uni_rows = r.graph.mis_rows = r.graph.mis_logits = {};
  return r;
}

inline std::vector<double> column_means(const std::vector<std::vector<double>>& rows, std::size_t width) {
  std::vector<double> mean(width, std::numeric_limits<double>::quiet_NaN());
  if (rows.empty()) return mean;
  std::fill(mean.begin(), mean.end(), 0.0);
  for (const auto& r : rows)
    for (std::size_t m = 0; m < width; ++m) mean[m] += r[m];
  for (double& v : mean) v /= static_cast<double>(rows.size());
  return mean;
}

/// Runs warm-up (unimodal objective over encoders and unimodal heads only)
/// followed by the main phase (aligned + unimodal + lambda * misaligned,
/// then the alpha update). Joint mode optimises the fused cross-entropy only.
inline std::vector<TraceRecord> train(const TrainConfig& cfg, MultimodalModel& model, const FeatureDataset& data) {
  cfg.validate();
  if (data.num_modalities() != model.num_modalities() || data.num_classes != model.num_classes()) {
    throw DimensionError("dataset (M=" + std::to_string(data.num_modalities()) + ", C=" +
                         std::to_string(data.num_classes) + ") does not match model (M=" +
                         std::to_string(model.num_modalities()) + ", C=" + std::to_string(model.num_classes()) + ")");
  }
  for (std::size_t m = 0; m < data.num_modalities(); ++m) {
    if (data.dim(m) != model.input_dim(m)) {
      throw DimensionError("modality " + std::to_string(m) + " has width " + std::to_string(data.dim(m)) +
                           ", model expects " + std::to_string(model.input_dim(m)));
    }
  }

  const std::size_t M = model.num_modalities();
  const std::size_t warm = cfg.effective_warmup();
  const bool joint = cfg.mode == Mode::Joint;
  const bool use_wm = !joint && cfg.weak_modality;
  const bool use_hs = !joint && cfg.hard_sample;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  Sgd opt(model.parameters(), cfg.sgd);
  AlphaState alpha(M, cfg.eta);
  std::seed_seq plan_seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x706cu};
  std::mt19937_64 plan_rng(plan_seq);
  const std::vector<std::size_t> warm_ids = model.warmup_params();

  std::vector<TraceRecord> trace;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool warming = epoch < warm;
    if (!warming && cfg.alpha_reset_per_epoch) alpha.reset();

    Objective obj;
    if (warming) {
      obj = {false, true, false, 0.0};
    } else if (joint) {
      obj = {true, false, false, 0.0};
    } else {
      obj = {true, true, cfg.lambda > 0.0, cfg.lambda};
    }

    for (const auto& batch : batch_iter(data, Split::Train, cfg.batch_size, cfg.seed, epoch)) {
      std::vector<Tensor> inputs;
      for (std::size_t m = 0; m < M; ++m) inputs.push_back(data.gather(m, batch));
      const auto labels = data.gather_labels(batch);

      std::vector<MisalignedPlan> plans;
      if (obj.mis) plans = pair_batch(std::span<const std::size_t>(labels), M, plan_rng);
      const std::vector<double> a = use_wm ? alpha.values() : std::vector<double>(M, 1.0);

      StepResult r = compute_step(model, inputs, labels, std::move(plans), a, use_hs, obj);
      if (warming) {
        opt.step(model.parameters(), r.grads, warm_ids);
      } else {
        opt.step(model.parameters(), r.grads);
      }

      TraceRecord rec;
      rec.epoch = epoch + 1;
      rec.step = ++step;
      rec.alpha = a;
      rec.uni_conf = column_means(r.misaligned.confidence, M);
      rec.multi_conf = column_means(r.multi_conf, M);
      rec.loss_align = obj.align ? r.graph.align : nan;
      rec.loss_uni = obj.uni ? r.graph.uni : nan;
      rec.loss_mis = obj.mis ? r.graph.mis : nan;
      rec.loss_total = r.total;
      trace.push_back(std::move(rec));

      if (use_wm && obj.mis) alpha.update(r.misaligned.confidence, r.multi_conf);
    }
  }
  return trace;
}

}  // namespace midas
