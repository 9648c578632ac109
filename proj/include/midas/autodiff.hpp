// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over midas::Tensor.
//
// A Tape owns every value produced during one forward pass. Var is a cheap
// handle (tape pointer + record index). Records are appended in execution
// order, so replaying them backwards visits each record after all of its
// consumers.
#pragma once

#include <cassert>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "midas/tensor.hpp"

namespace midas {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Propagates the gradient of a record's output into its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Record {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false) {
    Record r;
    r.op = "leaf";
    r.value = std::move(value);
    r.requires_grad = requires_grad;
    records_.push_back(std::move(r));
    return {this, records_.size() - 1};
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an operation record. The output requires a gradient iff any
  /// input does; otherwise the backward rule is dropped.
  Var record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
    Record r;
    r.op = std::move(op);
    r.value = std::move(value);
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw ContractError("operand from a different tape");
      r.inputs.push_back(v.id());
      r.requires_grad = r.requires_grad || records_[v.id()].requires_grad;
    }
    if (r.requires_grad) r.backward = std::move(backward);
    records_.push_back(std::move(r));
    return {this, records_.size() - 1};
  }

  const Record& at(std::size_t id) const { return records_[id]; }
  std::size_t size() const { return records_.size(); }

  const Tensor& value(std::size_t id) const { return records_[id].value; }
  const Tensor& grad(std::size_t id) const { return records_[id].grad; }
  bool requires_grad(std::size_t id) const { return records_[id].requires_grad; }

  /// Gradient buffer of `id`, allocated (zeroed) on first use.
  Tensor& grad_buffer(std::size_t id) {
    Record& r = records_[id];
    if (r.grad.shape() != r.value.shape() || r.grad.size() != r.value.size()) {
      r.grad = Tensor(r.value.shape());
    }
    return r.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every backward rule in reverse order.
  /// Leaves that the loss does not depend on receive all-zero gradients.
  void backward(const Var& loss) {
    if (&loss.tape() != this) throw ContractError("loss belongs to a different tape");
    const Tensor& lv = records_[loss.id()].value;
    if (lv.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " +
                          shape_str(lv.shape()));
    }
    for (Record& r : records_) {
      if (r.requires_grad) r.grad = Tensor(r.value.shape());
    }
    if (!records_[loss.id()].requires_grad) return;
    records_[loss.id()].grad.fill(1.0);
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Record& r = records_[id];
      if (r.backward) r.backward(*this, id);
    }
  }

 private:
  std::vector<Record> records_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }

namespace detail {

inline bool wants_grad(Tape& t, std::size_t id) { return t.requires_grad(id); }

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.shape()[1] != B.shape()[0]) {
    throw DimensionError("matmul shape mismatch: " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()));
  }
  const std::size_t r = A.shape()[0], k = A.shape()[1], c = B.shape()[1];
  Tensor out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.at(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) out.at(i, j) += aip * B.at(p, j);
    }
  }
  return a.tape().record("matmul", {a, b}, std::move(out), [r, k, c](Tape& t, std::size_t self) {
    const auto& rec = t.at(self);
    const std::size_t ia = rec.inputs[0], ib = rec.inputs[1];
    const Tensor& G = rec.grad;
    if (detail::wants_grad(t, ia)) {
      const Tensor& Bv = t.value(ib);
      Tensor& GA = t.grad_buffer(ia);
      // dA = dC . B^T
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += G.at(i, j) * Bv.at(p, j);
          GA.at(i, p) += s;
        }
    }
    if (detail::wants_grad(t, ib)) {
      const Tensor& Av = t.value(ia);
      Tensor& GB = t.grad_buffer(ib);
      // dB = A^T . dC
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = Av.at(i, p);
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < c; ++j) GB.at(p, j) += aip * G.at(i, j);
        }
    }
  });
}

/// x[r x c] + bias[c], broadcast over rows.
inline Var add_bias(const Var& x, const Var& bias) {
  const Tensor& X = x.value();
  const Tensor& b = bias.value();
  if (X.rank() != 2 || b.size() != X.cols()) {
    throw DimensionError("add_bias shape mismatch: " + shape_str(X.shape()) + " + " +
                         shape_str(b.shape()));
  }
  Tensor out = X;
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t j = 0; j < X.cols(); ++j) out.at(i, j) += b[j];
  return x.tape().record("add_bias", {x, bias}, std::move(out), [](Tape& t, std::size_t self) {
    const auto& rec = t.at(self);
    const Tensor& G = rec.grad;
    if (detail::wants_grad(t, rec.inputs[0])) {
      Tensor& GX = t.grad_buffer(rec.inputs[0]);
      for (std::size_t i = 0; i < G.size(); ++i) GX[i] += G[i];
    }
    if (detail::wants_grad(t, rec.inputs[1])) {
      Tensor& GB = t.grad_buffer(rec.inputs[1]);
      for (std::size_t i = 0; i < G.rows(); ++i)
        for (std::size_t j = 0; j < G.cols(); ++j) GB[j] += G.at(i, j);
    }
  });
}

inline Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return x.tape().record("relu", {x}, std::move(out), [](Tape& t, std::size_t self) {
    const auto& rec = t.at(self);
    const Tensor& X = t.value(rec.inputs[0]);
    const Tensor G = rec.grad;
    Tensor& GX = t.grad_buffer(rec.inputs[0]);
    for (std::size_t i = 0; i < G.size(); ++i)
      if (X[i] > 0.0) GX[i] += G[i];
  });
}

inline Var add(const Var& a, const Var& b) {
  if (a.value().shape() != b.value().shape()) {
    throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " + " +
                         shape_str(b.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record("add", {a, b}, std::move(out), [](Tape& t, std::size_t self) {
    const Tensor G = t.at(self).grad;
    for (std::size_t in : t.at(self).inputs) {
      if (!detail::wants_grad(t, in)) continue;
      Tensor& GI = t.grad_buffer(in);
      for (std::size_t i = 0; i < G.size(); ++i) GI[i] += G[i];
    }
  });
}

/// Elementwise product of two same-shape tensors.
inline Var mul(const Var& a, const Var& b) {
  if (a.value().shape() != b.value().shape()) {
    throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record("mul", {a, b}, std::move(out), [](Tape& t, std::size_t self) {
    const auto& rec = t.at(self);
    const Tensor G = rec.grad;
    const std::size_t ia = rec.inputs[0], ib = rec.inputs[1];
    const Tensor A = t.value(ia), B = t.value(ib);
    if (detail::wants_grad(t, ia)) {
      Tensor& GA = t.grad_buffer(ia);
      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i] * B[i];
    }
    if (detail::wants_grad(t, ib)) {
      Tensor& GB = t.grad_buffer(ib);
      for (std::size_t i = 0; i < G.size(); ++i) GB[i] += G[i] * A[i];
    }
  });
}

inline Var scale(const Var& x, double k) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= k;
  return x.tape().record("scale", {x}, std::move(out), [k](Tape& t, std::size_t self) {
    const auto& rec = t.at(self);
    const Tensor G = rec.grad;
    Tensor& GX = t.grad_buffer(rec.inputs[0]);
    for (std::size_t i = 0; i < G.size(); ++i) GX[i] += k * G[i];
  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape().record("sum", {x}, Tensor::scalar(s), [](Tape& t, std::size_t self) {
    const auto& rec = t.at(self);
    const double g = rec.grad[0];
    Tensor& GX = t.grad_buffer(rec.inputs[0]);
    for (double& v : GX.values()) v += g;
  });
}

/// Σ_i weights[i] * x[i], with constant weights.
inline Var weighted_sum(const Var& x, const Tensor& weights) {
  if (weights.size() != x.value().size()) {
    throw DimensionError("weighted_sum mismatch: " + shape_str(x.shape()) + " vs weights " +
                         shape_str(weights.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x.value()[i];
  return x.tape().record("weighted_sum", {x}, Tensor::scalar(s),
                         [weights](Tape& t, std::size_t self) {
                           const auto& rec = t.at(self);
                           const double g = rec.grad[0];
                           Tensor& GX = t.grad_buffer(rec.inputs[0]);
                           for (std::size_t i = 0; i < weights.size(); ++i) GX[i] += g * weights[i];
                         });
}

inline Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

/// Concatenates matrices with equal row counts along the column axis.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of zero blocks");
  const std::size_t rows = parts.front().value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != rows) {
      throw DimensionError("concat_cols row mismatch: " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    offsets.push_back(total);
    total += p.value().cols();
  }
  Tensor out(Shape{rows, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& P = parts[k].value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) out.at(i, offsets[k] + j) = P.at(i, j);
  }
  return parts.front().tape().record(
      "concat_cols", parts, std::move(out), [offsets](Tape& t, std::size_t self) {
        const auto& rec = t.at(self);
        const Tensor G = rec.grad;
        for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
          const std::size_t in = rec.inputs[k];
          if (!detail::wants_grad(t, in)) continue;
          Tensor& GI = t.grad_buffer(in);
          for (std::size_t i = 0; i < GI.rows(); ++i)
            for (std::size_t j = 0; j < GI.cols(); ++j) GI.at(i, j) += G.at(i, offsets[k] + j);
        }
      });
}

/// Selects rows of x by index; repeated indices accumulate in backward.
inline Var gather_rows(const Var& x, std::vector<std::size_t> index) {
  const Tensor& X = x.value();
  require_matrix(X, "gather_rows");
  Tensor out(Shape{index.size(), X.cols()});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= X.rows()) {
      throw DimensionError("gather_rows index " + std::to_string(index[i]) +
                           " out of range for " + shape_str(X.shape()));
    }
    for (std::size_t j = 0; j < X.cols(); ++j) out.at(i, j) = X.at(index[i], j);
  }
  return x.tape().record("gather_rows", {x}, std::move(out),
                         [index = std::move(index)](Tape& t, std::size_t self) {
                           const auto& rec = t.at(self);
                           const Tensor G = rec.grad;
                           Tensor& GX = t.grad_buffer(rec.inputs[0]);
                           for (std::size_t i = 0; i < index.size(); ++i)
                             for (std::size_t j = 0; j < G.cols(); ++j)
                               GX.at(index[i], j) += G.at(i, j);
                         });
}

/// Per-row soft-target cross-entropy −Σ_c target_c · log_softmax(logits)_c.
/// Targets are constants and need not sum to one.
inline Var cross_entropy_soft(const Var& logits, const Tensor& target) {
  const Tensor& Z = logits.value();
  require_matrix(Z, "cross_entropy_soft");
  if (target.shape() != Z.shape()) {
    throw DimensionError("cross_entropy_soft mismatch: logits " + shape_str(Z.shape()) +
                         " vs target " + shape_str(target.shape()));
  }
  const Tensor logp = log_softmax(Z);
  Tensor out(Shape{Z.rows()});
  for (std::size_t i = 0; i < Z.rows(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < Z.cols(); ++c) {
      if (target.at(i, c) != 0.0) s -= target.at(i, c) * logp.at(i, c);
    }
    out[i] = s;
  }
  return logits.tape().record(
      "cross_entropy_soft", {logits}, std::move(out), [target](Tape& t, std::size_t self) {
        const auto& rec = t.at(self);
        const Tensor G = rec.grad;
        const Tensor P = softmax(t.value(rec.inputs[0]));
        Tensor& GZ = t.grad_buffer(rec.inputs[0]);
        // d/dz_k = (Σ_c t_c) p_k − t_k
        for (std::size_t i = 0; i < P.rows(); ++i) {
          double mass = 0.0;
          for (std::size_t c = 0; c < P.cols(); ++c) mass += target.at(i, c);
          for (std::size_t c = 0; c < P.cols(); ++c)
            GZ.at(i, c) += G[i] * (mass * P.at(i, c) - target.at(i, c));
        }
      });
}

/// Scalar soft cross-entropy between probability vector p and target t.
inline double cross_entropy(std::span<const double> p, std::span<const double> t) {
  if (p.size() != t.size()) throw DimensionError("cross_entropy of unequal lengths");
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c)
    if (t[c] != 0.0) s -= t[c] * std::log(p[c]);
  return s;
}

}  // namespace midas
