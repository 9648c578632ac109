// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "midas/io.hpp"
#include "midas/tensor.hpp"

namespace midas {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

/// Per-sample multimodal feature vectors with integer labels in [0, C).
struct FeatureDataset {
  std::size_t num_classes = 0;
  std::vector<Tensor> modalities;  // one [N x d_m] block per modality
  std::vector<std::size_t> labels;
  std::vector<Split> splits;

  std::size_t size() const { return labels.size(); }
  std::size_t num_modalities() const { return modalities.size(); }
  std::size_t dim(std::size_t m) const { return modalities.at(m).cols(); }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) out.push_back(i);
    return out;
  }

  /// Rows `idx` of modality m as a [|idx| x d_m] matrix.
  Tensor gather(std::size_t m, std::span<const std::size_t> idx) const {
    const Tensor& src = modalities.at(m);
    Tensor out(Shape{idx.size(), src.cols()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto from = src.row(idx[i]);
      std::copy(from.begin(), from.end(), out.row(i).begin());
    }
    return out;
  }

  std::vector<std::size_t> gather_labels(std::span<const std::size_t> idx) const {
    std::vector<std::size_t> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(labels.at(i));
    return out;
  }

  friend bool operator==(const FeatureDataset&, const FeatureDataset&) = default;
};

struct ModalitySpec {
  std::size_t dim = 16;
  double separation = 3.0;  // norm of each class centre
  double noise = 0.5;       // per-coordinate Gaussian std

  double strength() const { return separation / noise; }
};

struct SyntheticSpec {
  std::size_t num_classes = 4;
  std::vector<ModalitySpec> modalities{ModalitySpec{}, ModalitySpec{}};
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw ContractError("synthetic data needs C >= 2");
    if (modalities.size() < 2) throw ContractError("synthetic data needs M >= 2");
    for (const ModalitySpec& m : modalities) {
      if (m.dim < 1) throw ContractError("modality dim must be >= 1");
      if (!(m.noise > 0.0)) throw ContractError("modality noise must be > 0");
      if (!(m.separation >= 0.0)) throw ContractError("modality separation must be >= 0");
    }
    if (n_train < num_classes) throw ContractError("train split smaller than class count");
  }
};

/// Class-conditional Gaussians: each (class, modality) gets a random unit
/// direction scaled by the modality's separation; samples add isotropic
/// noise. Labels cycle through the classes within each split, so every
/// class appears in train whenever n_train >= C.
inline FeatureDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t C = spec.num_classes, M = spec.modalities.size();
  std::vector<Tensor> centers;
  for (const ModalitySpec& ms : spec.modalities) {
    Tensor c(Shape{C, ms.dim});
    for (std::size_t k = 0; k < C; ++k) {
      double norm2 = 0.0;
      do {
        norm2 = 0.0;
        for (double& v : c.row(k)) {
          v = normal(rng);
          norm2 += v * v;
        }
      } while (norm2 < 1e-12);
      const double s = ms.separation / std::sqrt(norm2);
      for (double& v : c.row(k)) v *= s;
    }
    centers.push_back(std::move(c));
  }

  FeatureDataset ds;
  ds.num_classes = C;
  const std::size_t N = spec.n_train + spec.n_val + spec.n_test;
  for (const ModalitySpec& ms : spec.modalities) ds.modalities.emplace_back(Shape{N, ms.dim});
  ds.labels.reserve(N);
  ds.splits.reserve(N);

  const std::pair<Split, std::size_t> parts[] = {
      {Split::Train, spec.n_train}, {Split::Val, spec.n_val}, {Split::Test, spec.n_test}};
  std::size_t row = 0;
  for (const auto& [split, count] : parts) {
    for (std::size_t i = 0; i < count; ++i, ++row) {
      const std::size_t y = i % C;
      ds.labels.push_back(y);
      ds.splits.push_back(split);
      for (std::size_t m = 0; m < M; ++m) {
        auto out = ds.modalities[m].row(row);
        auto ctr = centers[m].row(y);
        for (std::size_t d = 0; d < out.size(); ++d)
          out[d] = ctr[d] + spec.modalities[m].noise * normal(rng);
      }
    }
  }
  return ds;
}

// Feature file: one text header line
//   MIDASFEAT 1 <M> <C> <d_1> ... <d_M> <N>\n
// followed by N records of
//   u32 label (1-based) | d_1 + ... + d_M f64 values | u8 split tag (0/1/2)
// all little-endian.

inline void save_feature_file(const FeatureDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open feature file for writing: " + path);
  os << "MIDASFEAT 1 " << ds.num_modalities() << ' ' << ds.num_classes;
  for (std::size_t m = 0; m < ds.num_modalities(); ++m) os << ' ' << ds.dim(m);
  os << ' ' << ds.size() << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    le::write<std::uint32_t>(os, static_cast<std::uint32_t>(ds.labels[i] + 1));
    for (const Tensor& block : ds.modalities)
      for (double v : block.row(i)) le::write<double>(os, v);
    le::write<std::uint8_t>(os, static_cast<std::uint8_t>(ds.splits[i]));
  }
  if (!os) throw IoError("failed writing feature file: " + path);
}

inline FeatureDataset load_feature_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open feature file: " + path);
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  hs >> magic >> version;
  if (magic != "MIDASFEAT") throw FormatError(FormatError::Kind::BadMagic, "not a MIDASFEAT file: " + path);
  if (version != 1) {
    throw FormatError(FormatError::Kind::BadValue, "unsupported MIDASFEAT version " + std::to_string(version));
  }
  std::vector<long long> nums;
  for (long long v; hs >> v;) nums.push_back(v);
  if (!hs.eof()) throw FormatError(FormatError::Kind::BadValue, "non-numeric field in header");
  if (nums.size() < 2) throw FormatError(FormatError::Kind::DimMismatch, "header missing M or C");
  const long long M = nums[0], C = nums[1];
  if (M < 2 || C < 2) throw FormatError(FormatError::Kind::BadValue, "header needs M >= 2 and C >= 2");
  if (nums.size() != static_cast<std::size_t>(M) + 3) {
    throw FormatError(FormatError::Kind::DimMismatch,
                      "header declares M=" + std::to_string(M) + " but lists " +
                          std::to_string(static_cast<long long>(nums.size()) - 3) + " dims");
  }
  const long long N = nums.back();
  if (N < 0) throw FormatError(FormatError::Kind::BadValue, "negative sample count");

  FeatureDataset ds;
  ds.num_classes = static_cast<std::size_t>(C);
  for (long long m = 0; m < M; ++m) {
    const long long d = nums[2 + m];
    if (d < 1) throw FormatError(FormatError::Kind::DimMismatch, "modality dim must be >= 1");
    ds.modalities.emplace_back(Shape{static_cast<std::size_t>(N), static_cast<std::size_t>(d)});
  }
  for (long long i = 0; i < N; ++i) {
    const auto label = le::read<std::uint32_t>(is, "label");
    if (label < 1 || label > static_cast<std::uint32_t>(C)) {
      throw FormatError(FormatError::Kind::BadValue, "label " + std::to_string(label) + " outside [1, C]");
    }
    ds.labels.push_back(label - 1);
    for (Tensor& block : ds.modalities)
      for (double& v : block.row(static_cast<std::size_t>(i))) v = le::read<double>(is, "modality block");
    const auto tag = le::read<std::uint8_t>(is, "split tag");
    if (tag > 2) throw FormatError(FormatError::Kind::BadValue, "split tag " + std::to_string(tag));
    ds.splits.push_back(static_cast<Split>(tag));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError(FormatError::Kind::DimMismatch, "payload longer than header declares");
  }
  return ds;
}

/// Shuffled mini-batches of `split` for one epoch; the order depends only on
/// (seed, epoch). The final short batch is kept.
inline std::vector<std::vector<std::size_t>> batch_iter(const FeatureDataset& ds, Split split,
                                                        std::size_t batch_size, std::uint64_t seed,
                                                        std::uint64_t epoch) {
  if (batch_size == 0) throw ContractError("batch size must be >= 1");
  std::vector<std::size_t> idx = ds.indices(split);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32),
                    0x6261u};
  std::mt19937_64 rng(seq);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace midas
