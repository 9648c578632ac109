// SPDX-License-Identifier: Apache-2.0
//
// Small fixtures shared by the unit suites.
#pragma once

#include <filesystem>
#include <string>

#include "midas/data.hpp"
#include "midas/model.hpp"

namespace test_support {

/// Fresh per-test directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("midas_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// C = 2, two 3-dim modalities, 16 train / 8 val / 8 test rows.
inline midas::FeatureDataset tiny_dataset(std::uint64_t seed) {
  midas::SyntheticSpec spec;
  spec.num_classes = 2;
  spec.modalities = {{3, 2.0, 0.5}, {3, 1.0, 1.0}};
  spec.n_train = 16;
  spec.n_val = 8;
  spec.n_test = 8;
  spec.seed = seed;
  return midas::generate_synthetic(spec);
}

inline midas::ModelSpec tiny_spec(const midas::FeatureDataset& ds) {
  midas::ModelSpec spec;
  spec.num_classes = ds.num_classes;
  for (std::size_t m = 0; m < ds.num_modalities(); ++m) spec.encoders.push_back({ds.dim(m), {4}, 3});
  return spec;
}

}  // namespace test_support
