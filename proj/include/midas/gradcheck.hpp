// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "midas/autodiff.hpp"

namespace midas {

/// Builds a scalar loss on `tape` from parameter leaves bound in order.
using LossBuilder = std::function<Var(Tape& tape, const std::vector<Var>& params)>;

class NondeterministicLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

namespace detail {

inline double eval_loss(const LossBuilder& fn, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p, false));
  return fn(tape, leaves).value().item();
}

}  // namespace detail

/// Autodiff gradients of `fn` at `params`.
inline std::vector<Tensor> gradients(const LossBuilder& fn, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p, true));
  Var loss = fn(tape, leaves);
  tape.backward(loss);
  std::vector<Tensor> out;
  for (const Var& v : leaves) out.push_back(v.grad());
  return out;
}

/// Compares autodiff gradients with central differences, coordinate by
/// coordinate. Returns max |fd - ad| / max(1e-8, |fd| + |ad|).
inline GradCheckResult grad_check(const LossBuilder& fn, std::vector<Tensor> params,
                                  double h = 1e-5) {
  if (!(h >= 1e-7 && h <= 1e-4)) throw ContractError("grad_check: step h outside [1e-7, 1e-4]");
  GradCheckResult res;
  if (params.empty()) return res;

  const double f0 = detail::eval_loss(fn, params);
  const double f0_again = detail::eval_loss(fn, params);
  if (f0 != f0_again) {
    throw NondeterministicLoss("grad_check: loss differs across repeated evaluations (" +
                               std::to_string(f0) + " vs " + std::to_string(f0_again) + ")");
  }

  const std::vector<Tensor> ad = gradients(fn, params);
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < params[p].size(); ++k) {
      const double w = params[p][k];
      params[p][k] = w + h;
      const double fp = detail::eval_loss(fn, params);
      params[p][k] = w - h;
      const double fm = detail::eval_loss(fn, params);
      params[p][k] = w;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = ad[p][k];
      const double rel = std::abs(fd - a) / std::max(1e-8, std::abs(fd) + std::abs(a));
      ++res.coordinates;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p;
        res.worst_index = k;
      }
    }
  }
  return res;
}

}  // namespace midas
