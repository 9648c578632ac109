// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "midas/data.hpp"
#include "midas/model.hpp"
#include "midas/optim.hpp"
#include "test_support.hpp"

using namespace midas;

namespace {

SyntheticSpec small_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.num_classes = 3;
  s.modalities = {{4, 2.0, 0.5}, {2, 1.0, 1.0}};
  s.n_train = 30;
  s.n_val = 9;
  s.n_test = 6;
  s.seed = seed;
  return s;
}

// Nearest class-mean classifier fit on train, scored on `eval`.
double nearest_center_accuracy(const FeatureDataset& ds, std::size_t m, Split fit, Split eval) {
  const std::size_t C = ds.num_classes, d = ds.dim(m);
  std::vector<std::vector<double>> mu(C, std::vector<double>(d, 0.0));
  std::vector<double> n(C, 0.0);
  for (std::size_t i : ds.indices(fit)) {
    for (std::size_t k = 0; k < d; ++k) mu[ds.labels[i]][k] += ds.modalities[m].at(i, k);
    n[ds.labels[i]] += 1.0;
  }
  for (std::size_t c = 0; c < C; ++c)
    for (double& v : mu[c]) v /= n[c];
  std::size_t hits = 0;
  const auto rows = ds.indices(eval);
  for (std::size_t i : rows) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += std::pow(ds.modalities[m].at(i, k) - mu[c][k], 2);
      if (s < best_d) best_d = s, best = c;
    }
    hits += best == ds.labels[i];
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(rows.size());
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Synthetic, Deterministic) {
  EXPECT_EQ(generate_synthetic(small_spec(4)), generate_synthetic(small_spec(4)));
  EXPECT_NE(generate_synthetic(small_spec(4)), generate_synthetic(small_spec(5)));
}

TEST(Synthetic, EqualSpecsGiveEqualBytes) {
  const auto dir = test_support::scratch_dir("synth_bytes");
  save_feature_file(generate_synthetic(small_spec(1)), (dir / "a").string());
  save_feature_file(generate_synthetic(small_spec(1)), (dir / "b").string());
  EXPECT_EQ(read_bytes((dir / "a").string()), read_bytes((dir / "b").string()));
}

TEST(Synthetic, ShapesSplitsAndClassCoverage) {
  const auto ds = generate_synthetic(small_spec(2));
  EXPECT_EQ(ds.size(), 45u);
  EXPECT_EQ(ds.dim(0), 4u);
  EXPECT_EQ(ds.dim(1), 2u);
  EXPECT_EQ(ds.indices(Split::Train).size(), 30u);
  EXPECT_EQ(ds.indices(Split::Val).size(), 9u);
  std::set<std::size_t> seen;
  for (std::size_t i : ds.indices(Split::Train)) seen.insert(ds.labels[i]);
  EXPECT_EQ(seen.size(), 3u);
}

TEST(Synthetic, SplitsAreDisjoint) {
  const auto ds = generate_synthetic(small_spec(3));
  std::set<std::size_t> all;
  std::size_t total = 0;
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const auto idx = ds.indices(s);
    total += idx.size();
    all.insert(idx.begin(), idx.end());
  }
  EXPECT_EQ(all.size(), total);
  EXPECT_EQ(total, ds.size());
}

TEST(Synthetic, ZeroNoiseLimitIsPerfectlySeparable) {
  SyntheticSpec s = small_spec(6);
  s.modalities[0].noise = 1e-9;
  const auto ds = generate_synthetic(s);
  EXPECT_EQ(nearest_center_accuracy(ds, 0, Split::Train, Split::Train), 100.0);
}

TEST(Synthetic, StrongModalityIsLinearlyLearnable) {
  SyntheticSpec s;
  s.num_classes = 4;
  s.modalities = {{16, 3.0, 0.5}, {16, 3.0, 0.5}};
  s.seed = 0;
  const auto ds = generate_synthetic(s);

  // softmax regression on modality 0, 5 epochs of minibatch SGD
  Tensor W(Shape{16, 4}), b(Shape{4});
  std::vector<Tensor> params{W, b};
  Sgd opt(params, {0.05, 0.9, 0.0});
  for (std::uint64_t epoch = 0; epoch < 5; ++epoch) {
    for (const auto& batch : batch_iter(ds, Split::Train, 64, 0, epoch)) {
      Tape tape;
      auto w = tape.leaf(params[0], true), bb = tape.leaf(params[1], true);
      auto x = tape.constant(ds.gather(0, batch));
      const auto y = ds.gather_labels(batch);
      tape.backward(mean(cross_entropy_soft(add_bias(matmul(x, w), bb), one_hot(y, 4))));
      opt.step(params, {w.grad(), bb.grad()});
    }
  }
  const auto val = ds.indices(Split::Val);
  Tape tape;
  const Tensor z = add_bias(matmul(tape.constant(ds.gather(0, val)), tape.constant(params[0])),
                            tape.constant(params[1]))
                       .value();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    auto row = z.row(i);
    hits += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == ds.labels[val[i]];
  }
  EXPECT_GE(100.0 * static_cast<double>(hits) / static_cast<double>(val.size()), 95.0);
}

TEST(Synthetic, MoreNoiseMeansLowerNearestCenterAccuracy) {
  std::vector<double> acc;
  for (double sigma : {0.5, 1.5, 4.0}) {
    SyntheticSpec s;
    s.num_classes = 4;
    s.modalities = {{16, 3.0, sigma}, {16, 3.0, 0.5}};
    s.n_val = 2000;
    s.seed = 1;
    acc.push_back(nearest_center_accuracy(generate_synthetic(s), 0, Split::Train, Split::Val));
  }
  EXPECT_GT(acc[0], acc[1]);
  EXPECT_GT(acc[1], acc[2]);
}

TEST(Synthetic, InvalidSpecRejected) {
  SyntheticSpec s = small_spec(0);
  s.num_classes = 1;
  EXPECT_THROW(generate_synthetic(s), ContractError);
  s = small_spec(0);
  s.modalities.pop_back();
  EXPECT_THROW(generate_synthetic(s), ContractError);
}

TEST(FeatureFile, RoundTrip) {
  const auto dir = test_support::scratch_dir("feat_rt");
  const auto ds = generate_synthetic(small_spec(7));
  const std::string path = (dir / "f.midasfeat").string();
  save_feature_file(ds, path);
  EXPECT_EQ(load_feature_file(path), ds);
  EXPECT_EQ(read_bytes(path).substr(0, 24), "MIDASFEAT 1 2 3 4 2 45\n\x01");
}

TEST(FeatureFile, CorruptedMagic) {
  const auto dir = test_support::scratch_dir("feat_magic");
  const std::string path = (dir / "f").string();
  save_feature_file(generate_synthetic(small_spec(7)), path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("MODAS", 5);
  }
  try {
    load_feature_file(path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::BadMagic);
  }
}

TEST(FeatureFile, MissingModalityBlockIsTruncation) {
  const auto dir = test_support::scratch_dir("feat_trunc");
  const std::string path = (dir / "f").string();
  {
    // header declares M = 2 but the record carries only modality 1
    std::ofstream os(path, std::ios::binary);
    os << "MIDASFEAT 1 2 2 3 2 1\n";
    le::write<std::uint32_t>(os, 1);
    for (int k = 0; k < 3; ++k) le::write<double>(os, 0.5);
    le::write<std::uint8_t>(os, 0);
  }
  try {
    load_feature_file(path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::Truncated);
  }
}

TEST(FeatureFile, BadValuesAndTrailingBytes) {
  const auto dir = test_support::scratch_dir("feat_bad");
  const std::string path = (dir / "f").string();
  auto write = [&](std::uint32_t label, std::uint8_t tag, bool extra) {
    std::ofstream os(path, std::ios::binary);
    os << "MIDASFEAT 1 2 2 1 1 1\n";
    le::write<std::uint32_t>(os, label);
    le::write<double>(os, 1.0);
    le::write<double>(os, 2.0);
    le::write<std::uint8_t>(os, tag);
    if (extra) os << 'x';
  };
  auto kind = [&] {
    try {
      load_feature_file(path);
    } catch (const FormatError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "expected FormatError";
    return FormatError::Kind::BadMagic;
  };
  write(0, 0, false);
  EXPECT_EQ(kind(), FormatError::Kind::BadValue);
  write(1, 3, false);
  EXPECT_EQ(kind(), FormatError::Kind::BadValue);
  write(1, 0, true);
  EXPECT_EQ(kind(), FormatError::Kind::DimMismatch);
  write(2, 1, false);
  const auto ds = load_feature_file(path);
  EXPECT_EQ(ds.labels[0], 1u);
  EXPECT_EQ(ds.splits[0], Split::Val);
}

TEST(FeatureFile, MissingFileIsIoError) {
  EXPECT_THROW(load_feature_file("/nonexistent/midas.feat"), IoError);
}

TEST(BatchIter, OneBatchWhenBatchCoversSplit) {
  const auto ds = generate_synthetic(small_spec(1));
  const auto batches = batch_iter(ds, Split::Train, 100, 0, 0);
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_EQ(batches[0].size(), 30u);
}

TEST(BatchIter, DeterministicPerSeedAndEpochAndKeepsShortBatch) {
  const auto ds = generate_synthetic(small_spec(1));
  EXPECT_EQ(batch_iter(ds, Split::Train, 8, 3, 2), batch_iter(ds, Split::Train, 8, 3, 2));
  EXPECT_NE(batch_iter(ds, Split::Train, 8, 3, 2), batch_iter(ds, Split::Train, 8, 3, 3));
  const auto b = batch_iter(ds, Split::Train, 8, 3, 2);
  ASSERT_EQ(b.size(), 4u);
  EXPECT_EQ(b.back().size(), 6u);
  std::set<std::size_t> seen;
  for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
  EXPECT_EQ(seen.size(), 30u);
}

TEST(BatchIter, EmptySplitGivesNoBatches) {
  SyntheticSpec s = small_spec(1);
  s.n_test = 0;
  EXPECT_TRUE(batch_iter(generate_synthetic(s), Split::Test, 8, 0, 0).empty());
}
