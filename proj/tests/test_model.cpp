// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "midas/metrics.hpp"
#include "midas/model.hpp"
#include "midas/train.hpp"
#include "test_support.hpp"

using namespace midas;

namespace {

ModelSpec small_spec() { return {{{5, {7}, 4}, {3, {6}, 2}}, 3}; }

Tensor random_input(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor t(Shape{r, c});
  for (double& v : t.values()) v = n(rng);
  return t;
}

// y = max(0, x W1 + b1) W2 + b2 by explicit loops.
Tensor reference_encoder(const Tensor& x, const Tensor& W1, const Tensor& b1, const Tensor& W2, const Tensor& b2) {
  const std::size_t n = x.rows(), in = W1.shape()[0], hid = W1.shape()[1], out = W2.shape()[1];
  Tensor y(Shape{n, out});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> h(hid);
    for (std::size_t j = 0; j < hid; ++j) {
      double s = b1[j];
      for (std::size_t k = 0; k < in; ++k) s += x.at(i, k) * W1.at(k, j);
      h[j] = s > 0.0 ? s : 0.0;
    }
    for (std::size_t j = 0; j < out; ++j) {
      double s = b2[j];
      for (std::size_t k = 0; k < hid; ++k) s += h[k] * W2.at(k, j);
      y.at(i, j) = s;
    }
  }
  return y;
}

}  // namespace

TEST(ModelSpec, RejectsDegenerateShapes) {
  EXPECT_THROW(MultimodalModel(ModelSpec{{{5, {}, 4}}, 3}, 0), ContractError);
  EXPECT_THROW(MultimodalModel(ModelSpec{{{5, {}, 4}, {3, {}, 2}}, 1}, 0), ContractError);
  EXPECT_THROW(MultimodalModel(ModelSpec{{{5, {0}, 4}, {3, {}, 2}}, 3}, 0), ContractError);
}

TEST(Model, RegistryPartitionsIntoEncodersFusionHeads) {
  const MultimodalModel model(small_spec(), 1);
  EXPECT_EQ(model.parameters().size(), 4u + 4u + 2u + 4u);
  std::vector<std::size_t> all = model.encoder_params();
  all.insert(all.end(), model.fusion_params().begin(), model.fusion_params().end());
  all.insert(all.end(), model.head_params().begin(), model.head_params().end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(model.parameters()[model.fusion_layer().weight].shape(), (Shape{6, 3}));
  const auto warm = model.warmup_params();
  for (std::size_t f : model.fusion_params()) EXPECT_EQ(std::count(warm.begin(), warm.end(), f), 0);
}

TEST(Model, InitialisationWithinFanInBound) {
  const MultimodalModel model(small_spec(), 4);
  for (std::size_t i = 0; i < model.parameters().size(); i += 2) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(model.parameters()[i].shape()[0]));
    for (double v : model.parameters()[i].values()) EXPECT_LE(std::abs(v), bound);
    for (double v : model.parameters()[i + 1].values()) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(Encode, ZeroWeightsGiveZeroFeature) {
  MultimodalModel model(small_spec(), 2);
  for (Tensor& p : model.parameters()) p.fill(0.0);
  const Tensor f = model.encode(0, random_input(4, 5, 1));
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, Deterministic) {
  const MultimodalModel model(small_spec(), 2);
  const Tensor x = random_input(4, 5, 1);
  EXPECT_EQ(model.encode(0, x), model.encode(0, x));
  EXPECT_EQ(MultimodalModel(small_spec(), 2).parameters(), model.parameters());
}

TEST(Encode, MatchesStraightLineReference) {
  const MultimodalModel model(small_spec(), 13);
  const Tensor x = random_input(6, 5, 2);
  const auto& L = model.encoder_layers(0);
  const auto& P = model.parameters();
  const Tensor ref = reference_encoder(x, P[L[0].weight], P[L[0].bias], P[L[1].weight], P[L[1].bias]);
  const Tensor got = model.encode(0, x);
  for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(got[k], ref[k], 1e-14);
}

TEST(Encode, BadInputsRejected) {
  const MultimodalModel model(small_spec(), 0);
  EXPECT_THROW(model.encode(2, random_input(2, 5, 0)), ContractError);
  EXPECT_THROW(model.encode(0, random_input(2, 4, 0)), DimensionError);
}

TEST(FusePredict, StructuralZeroIgnoresModality) {
  MultimodalModel model(small_spec(), 5);
  Tensor& W = model.parameters()[model.fusion_layer().weight];
  for (std::size_t r = 4; r < 6; ++r)
    for (std::size_t c = 0; c < 3; ++c) W.at(r, c) = 0.0;
  const Tensor f1 = random_input(3, 4, 1);
  EXPECT_EQ(model.fuse_predict({f1, random_input(3, 2, 2)}), model.fuse_predict({f1, random_input(3, 2, 3)}));
}

TEST(FusePredict, ZeroFeaturesGiveBias) {
  const MultimodalModel model(small_spec(), 5);
  const Tensor z = model.fuse_predict({Tensor(Shape{2, 4}), Tensor(Shape{2, 2})});
  const Tensor& b = model.parameters()[model.fusion_layer().bias];
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(z.at(r, c), b[c]);
}

TEST(FusePredict, BlockCountAndWidthChecked) {
  const MultimodalModel model(small_spec(), 5);
  EXPECT_THROW(model.fuse_predict({Tensor(Shape{2, 4})}), DimensionError);
  EXPECT_THROW(model.fuse_predict({Tensor(Shape{2, 4}), Tensor(Shape{2, 3})}), DimensionError);
}

TEST(UnimodalPredict, ZeroFeatureGivesBiasAndIdentityHead) {
  MultimodalModel model(ModelSpec{{{4, {}, 3}, {2, {}, 3}}, 3}, 6);
  const Tensor zero = model.unimodal_predict(1, Tensor(Shape{1, 3}));
  EXPECT_EQ(zero.row(0)[1], model.parameters()[model.head_layer(1).bias][1]);

  Tensor& W = model.parameters()[model.head_layer(0).weight];
  W.fill(0.0);
  for (std::size_t i = 0; i < 3; ++i) W.at(i, i) = 1.0;
  model.parameters()[model.head_layer(0).bias].fill(0.0);
  const Tensor f = random_input(4, 3, 9);
  EXPECT_EQ(model.unimodal_predict(0, f), f);
}

TEST(Model, ZeroSubstitutionForwardMatchesManualZeroing) {
  const MultimodalModel model(small_spec(), 8);
  const Tensor f1 = random_input(5, 4, 1), f2 = random_input(5, 2, 2);
  const Tensor manual = model.fuse_predict({f1, Tensor(Shape{5, 2})});
  ModelOutputs out{{f1, f2}, {}, {}};
  const std::vector<std::size_t> labels = argmax_rows(manual);
  EXPECT_EQ(zero_substitution_valuation(model, out, labels)[0], 100.0);
}

TEST(Model, SharedEncoderFeedsBothPathways) {
  const MultimodalModel model(small_spec(), 3);
  Tape tape;
  const auto bound = model.bind(tape, true);
  const AlignedForward fw = forward_aligned(model, bound, {random_input(4, 5, 1), random_input(4, 3, 2)});
  // unimodal head m consumes exactly the record the fusion concat consumes
  const auto& concat = tape.at(tape.at(tape.at(fw.fused_logits.id()).inputs[0]).inputs[0]);
  ASSERT_EQ(concat.op, "concat_cols");
  for (std::size_t m = 0; m < 2; ++m) {
    const auto& head_matmul = tape.at(tape.at(fw.uni_logits[m].id()).inputs[0]);
    EXPECT_EQ(head_matmul.inputs[0], fw.features[m].id());
    EXPECT_EQ(concat.inputs[m], fw.features[m].id());
  }
}

TEST(Model, WarmupOnlyStepLeavesFusionUntouched) {
  const auto ds = test_support::tiny_dataset(7);
  MultimodalModel model(test_support::tiny_spec(ds), 1);
  const Tensor fw = model.parameters()[model.fusion_layer().weight];
  const Tensor fb = model.parameters()[model.fusion_layer().bias];
  const auto enc_before = model.parameters()[model.encoder_layers(0)[0].weight];
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.warmup_epochs = 3;
  cfg.batch_size = 8;
  cfg.sgd.learning_rate = 0.05;
  train(cfg, model, ds);
  EXPECT_EQ(model.parameters()[model.fusion_layer().weight], fw);
  EXPECT_EQ(model.parameters()[model.fusion_layer().bias], fb);
  EXPECT_NE(model.parameters()[model.encoder_layers(0)[0].weight], enc_before);
}

TEST(Checkpoint, RoundTripAndBadMagic) {
  const auto dir = test_support::scratch_dir("ckpt");
  const MultimodalModel model(small_spec(), 17);
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(model, path);
  const MultimodalModel back = load_checkpoint(path);
  EXPECT_EQ(back.spec(), model.spec());
  EXPECT_EQ(back.parameters(), model.parameters());

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XIDAS1", 6);
  }
  try {
    load_checkpoint(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::BadMagic);
  }
}

TEST(Checkpoint, TruncatedPayload) {
  const auto dir = test_support::scratch_dir("ckpt_trunc");
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(MultimodalModel(small_spec(), 1), path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  try {
    load_checkpoint(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::Truncated);
  }
}
