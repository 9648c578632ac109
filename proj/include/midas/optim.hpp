// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "midas/tensor.hpp"

namespace midas {

struct SgdOptions {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// SGD with classical momentum and weight decay folded into the velocity:
///   v <- mu * v + (g + wd * w);  w <- w - lr * v
class Sgd {
 public:
  Sgd(const std::vector<Tensor>& params, SgdOptions opts) : opts_(opts) {
    velocity_.reserve(params.size());
    for (const Tensor& p : params) velocity_.emplace_back(p.shape());
  }

  const SgdOptions& options() const { return opts_; }
  void set_learning_rate(double lr) { opts_.learning_rate = lr; }
  const std::vector<Tensor>& velocity() const { return velocity_; }

  /// Updates every parameter.
  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
    check(params, grads);
    for (std::size_t i = 0; i < params.size(); ++i) update(i, params[i], grads[i]);
  }

  /// Updates only the parameters listed in `which`; others (and their
  /// velocities) are left untouched.
  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
            std::span<const std::size_t> which) {
    check(params, grads);
    for (std::size_t i : which) {
      if (i >= params.size()) throw ContractError("sgd: parameter index out of range");
      update(i, params[i], grads[i]);
    }
  }

 private:
  void check(const std::vector<Tensor>& params, const std::vector<Tensor>& grads) const {
    if (params.size() != velocity_.size()) {
      throw ContractError("sgd: optimizer registered " + std::to_string(velocity_.size()) +
                          " parameters, step given " + std::to_string(params.size()));
    }
    if (grads.size() != params.size()) {
      throw ContractError("sgd: missing gradient (" + std::to_string(grads.size()) + " for " +
                          std::to_string(params.size()) + " parameters)");
    }
  }

  void update(std::size_t i, Tensor& w, const Tensor& g) {
    if (g.shape() != w.shape() || g.size() != w.size()) {
      throw ContractError("sgd: gradient " + std::to_string(i) + " has shape " +
                          shape_str(g.shape()) + ", parameter has " + shape_str(w.shape()));
    }
    Tensor& v = velocity_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = opts_.momentum * v[k] + (g[k] + opts_.weight_decay * w[k]);
      w[k] -= opts_.learning_rate * v[k];
    }
  }

  SgdOptions opts_;
  std::vector<Tensor> velocity_;
};

}  // namespace midas
