// SPDX-License-Identifier: Apache-2.0
//
// Multimodal classifier: one MLP encoder per modality, a linear fusion head
// over the concatenated features, and one linear head per modality. The
// encoders are shared by the fusion and unimodal pathways.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "midas/autodiff.hpp"
#include "midas/io.hpp"

namespace midas {

struct EncoderSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;  // hidden layer widths, ReLU after each
  std::size_t output_dim = 0;       // feature dimension d_m

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{input_dim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(output_dim);
    return w;
  }

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

struct ModelSpec {
  std::vector<EncoderSpec> encoders;
  std::size_t num_classes = 0;

  std::size_t num_modalities() const { return encoders.size(); }

  void validate() const {
    if (encoders.size() < 2) throw ContractError("model needs at least two modalities");
    if (num_classes < 2) throw ContractError("model needs at least two classes");
    for (const EncoderSpec& e : encoders)
      for (std::size_t w : e.widths())
        if (w < 1) throw ContractError("encoder widths must be >= 1");
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Parameter indices of one affine layer y = x W + b, W stored [in x out].
struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

class MultimodalModel {
 public:
  /// Weights and biases drawn uniformly from ±1/sqrt(fan_in).
  MultimodalModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    layout();
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < params_.size(); i += 2) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(params_[i].shape()[0]));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : params_[i].values()) v = u(rng);
      for (double& v : params_[i + 1].values()) v = u(rng);
    }
  }

  /// Adopts an existing parameter list (e.g. from a checkpoint).
  MultimodalModel(ModelSpec spec, std::vector<Tensor> params) : spec_(std::move(spec)) {
    spec_.validate();
    layout();
    if (params.size() != params_.size()) {
      throw DimensionError("model expects " + std::to_string(params_.size()) +
                           " parameter tensors, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].shape() != params_[i].shape()) {
        throw DimensionError("parameter " + std::to_string(i) + " has shape " +
                             shape_str(params[i].shape()) + ", expected " +
                             shape_str(params_[i].shape()));
      }
    }
    params_ = std::move(params);
  }

  const ModelSpec& spec() const { return spec_; }
  std::size_t num_modalities() const { return spec_.num_modalities(); }
  std::size_t num_classes() const { return spec_.num_classes; }
  std::size_t feature_dim(std::size_t m) const { return spec_.encoders.at(m).output_dim; }
  std::size_t input_dim(std::size_t m) const { return spec_.encoders.at(m).input_dim; }

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }

  const std::vector<std::size_t>& encoder_params() const { return encoder_ids_; }
  const std::vector<std::size_t>& fusion_params() const { return fusion_ids_; }
  const std::vector<std::size_t>& head_params() const { return head_ids_; }

  /// Encoders and unimodal heads; the fusion head is excluded.
  std::vector<std::size_t> warmup_params() const {
    std::vector<std::size_t> ids = encoder_ids_;
    ids.insert(ids.end(), head_ids_.begin(), head_ids_.end());
    return ids;
  }

  const Linear& fusion_layer() const { return fusion_; }
  const Linear& head_layer(std::size_t m) const { return heads_.at(m); }
  const std::vector<Linear>& encoder_layers(std::size_t m) const { return encoders_.at(m); }

  /// Registers every parameter as a leaf on `tape`, in registry order.
  std::vector<Var> bind(Tape& tape, bool requires_grad) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const Tensor& p : params_) vars.push_back(tape.leaf(p, requires_grad));
    return vars;
  }

  Var encode(const std::vector<Var>& bound, std::size_t m, const Var& x) const {
    check_modality(m);
    if (x.value().rank() != 2 || x.value().cols() != input_dim(m)) {
      throw DimensionError("modality " + std::to_string(m) + " expects input width " +
                           std::to_string(input_dim(m)) + ", got " + shape_str(x.shape()));
    }
    Var h = x;
    const auto& layers = encoders_[m];
    for (std::size_t l = 0; l < layers.size(); ++l) {
      h = apply(bound, layers[l], h);
      if (l + 1 < layers.size()) h = relu(h);
    }
    return h;
  }

  Var fuse_predict(const std::vector<Var>& bound, const std::vector<Var>& features) const {
    if (features.size() != num_modalities()) {
      throw DimensionError("fuse_predict expects " + std::to_string(num_modalities()) +
                           " feature blocks, got " + std::to_string(features.size()));
    }
    for (std::size_t m = 0; m < features.size(); ++m) check_feature(m, features[m]);
    return apply(bound, fusion_, concat_cols(features));
  }

  Var unimodal_predict(const std::vector<Var>& bound, std::size_t m, const Var& feature) const {
    check_modality(m);
    check_feature(m, feature);
    return apply(bound, heads_[m], feature);
  }

  // Gradient-free conveniences over plain tensors.

  Tensor encode(std::size_t m, const Tensor& x) const {
    Tape tape;
    auto b = bind(tape, false);
    return encode(b, m, tape.constant(x)).value();
  }

  Tensor fuse_predict(const std::vector<Tensor>& features) const {
    Tape tape;
    auto b = bind(tape, false);
    std::vector<Var> fv;
    for (const Tensor& f : features) fv.push_back(tape.constant(f));
    return fuse_predict(b, fv).value();
  }

  Tensor unimodal_predict(std::size_t m, const Tensor& feature) const {
    Tape tape;
    auto b = bind(tape, false);
    return unimodal_predict(b, m, tape.constant(feature)).value();
  }

 private:
  void layout() {
    params_.clear();
    encoders_.clear();
    heads_.clear();
    encoder_ids_.clear();
    fusion_ids_.clear();
    head_ids_.clear();
    auto add_linear = [this](std::size_t in, std::size_t out, std::vector<std::size_t>& group) {
      Linear l{params_.size(), params_.size() + 1};
      params_.emplace_back(Shape{in, out});
      params_.emplace_back(Shape{out});
      group.push_back(l.weight);
      group.push_back(l.bias);
      return l;
    };
    for (const EncoderSpec& e : spec_.encoders) {
      const auto w = e.widths();
      std::vector<Linear> layers;
      for (std::size_t l = 0; l + 1 < w.size(); ++l)
        layers.push_back(add_linear(w[l], w[l + 1], encoder_ids_));
      encoders_.push_back(std::move(layers));
    }
    std::size_t concat = 0;
    for (const EncoderSpec& e : spec_.encoders) concat += e.output_dim;
    fusion_ = add_linear(concat, spec_.num_classes, fusion_ids_);
    for (const EncoderSpec& e : spec_.encoders)
      heads_.push_back(add_linear(e.output_dim, spec_.num_classes, head_ids_));
  }

  static Var apply(const std::vector<Var>& bound, const Linear& l, const Var& x) {
    return add_bias(matmul(x, bound.at(l.weight)), bound.at(l.bias));
  }

  void check_modality(std::size_t m) const {
    if (m >= num_modalities()) {
      throw ContractError("modality index " + std::to_string(m) + " out of range [0, " +
                          std::to_string(num_modalities()) + ")");
    }
  }

  void check_feature(std::size_t m, const Var& f) const {
    if (f.value().rank() != 2 || f.value().cols() != feature_dim(m)) {
      throw DimensionError("modality " + std::to_string(m) + " feature must have width " +
                           std::to_string(feature_dim(m)) + ", got " + shape_str(f.shape()));
    }
  }

  ModelSpec spec_;
  std::vector<Tensor> params_;
  std::vector<std::vector<Linear>> encoders_;
  Linear fusion_;
  std::vector<Linear> heads_;
  std::vector<std::size_t> encoder_ids_, fusion_ids_, head_ids_;
};

// Checkpoint layout (all integers u32, reals f64, little-endian):
//   "MIDAS1" | M | C | per modality: input_dim, n_hidden, hidden..., output_dim
//   | u64 total parameter count | parameters in registry order

inline constexpr char kCheckpointMagic[] = "MIDAS1";

inline void save_checkpoint(const MultimodalModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 6);
  const ModelSpec& spec = model.spec();
  le::write<std::uint32_t>(os, static_cast<std::uint32_t>(spec.num_modalities()));
  le::write<std::uint32_t>(os, static_cast<std::uint32_t>(spec.num_classes));
  for (const EncoderSpec& e : spec.encoders) {
    le::write<std::uint32_t>(os, static_cast<std::uint32_t>(e.input_dim));
    le::write<std::uint32_t>(os, static_cast<std::uint32_t>(e.hidden.size()));
    for (std::size_t h : e.hidden) le::write<std::uint32_t>(os, static_cast<std::uint32_t>(h));
    le::write<std::uint32_t>(os, static_cast<std::uint32_t>(e.output_dim));
  }
  std::uint64_t count = 0;
  for (const Tensor& p : model.parameters()) count += p.size();
  le::write<std::uint64_t>(os, count);
  for (const Tensor& p : model.parameters())
    for (double v : p.values()) le::write<double>(os, v);
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

inline MultimodalModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[6] = {};
  is.read(magic, 6);
  if (is.gcount() != 6 || std::string(magic, 6) != kCheckpointMagic) {
    throw FormatError(FormatError::Kind::BadMagic, "not a MIDAS1 checkpoint: " + path);
  }
  ModelSpec spec;
  const auto M = le::read<std::uint32_t>(is, "modality count");
  spec.num_classes = le::read<std::uint32_t>(is, "class count");
  if (M < 2 || M > 64) throw FormatError(FormatError::Kind::BadValue, "implausible modality count");
  for (std::uint32_t m = 0; m < M; ++m) {
    EncoderSpec e;
    e.input_dim = le::read<std::uint32_t>(is, "input dim");
    const auto nh = le::read<std::uint32_t>(is, "hidden count");
    if (nh > 64) throw FormatError(FormatError::Kind::BadValue, "implausible encoder depth");
    for (std::uint32_t h = 0; h < nh; ++h) e.hidden.push_back(le::read<std::uint32_t>(is, "hidden width"));
    e.output_dim = le::read<std::uint32_t>(is, "output dim");
    spec.encoders.push_back(std::move(e));
  }
  // Build the layout to learn the expected parameter shapes.
  MultimodalModel model(spec, std::uint64_t{0});
  std::uint64_t expected = 0;
  for (const Tensor& p : model.parameters()) expected += p.size();
  const auto count = le::read<std::uint64_t>(is, "parameter count");
  if (count != expected) {
    throw FormatError(FormatError::Kind::DimMismatch,
                      "checkpoint holds " + std::to_string(count) + " parameters, header implies " +
                          std::to_string(expected));
  }
  for (Tensor& p : model.parameters())
    for (double& v : p.values()) v = le::read<double>(is, "parameters");
  return model;
}

}  // namespace midas
