#include "effcl/encoder.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace effcl;

namespace {

TokenBatch sample_batch() {
  return TokenBatch::from_sequences({{3, 4, 5, 6, 7, 8}, {9, 10, 11, 12}});
}

Encoder<double> tiny_encoder(std::uint64_t seed = 7, double std = 0.3) {
  Rng rng(seed);
  return Encoder<double>(tiny_encoder_config(), EncoderWeights<double>::initialized(tiny_encoder_config(), rng, std));
}

bool bit_identical(const HiddenStates<double>& a, const HiddenStates<double>& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.batch(); ++i)
    if (!(a.values[i].array() == b.values[i].array()).all()) return false;
  return true;
}

}  // namespace

TEST(EncoderConfig, Validation) {
  EncoderConfig c = tiny_encoder_config();
  EXPECT_NO_THROW(c.validate());
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_encoder_config();
  c.hook_layer_choices = {3};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Encoder, IdentityHookMatchesPlainForward) {
  const auto enc = tiny_encoder();
  const auto batch = sample_batch();
  const auto plain = enc.encode(batch);
  for (int layer : {1, 2}) {
    const auto [pooled, states] = enc.encode_with_hook(batch, layer, [](const auto& s) { return s; });
    EXPECT_TRUE(bit_identical(plain, states));
    EXPECT_TRUE((pooled.array() == mean_pool(plain).array()).all());
  }
}

TEST(Encoder, ZeroingHookChangesDownstreamStates) {
  const auto enc = tiny_encoder();
  const auto batch = sample_batch();
  const auto plain = mean_pool(enc.encode(batch));
  const auto [pooled, states] = enc.encode_with_hook(batch, 2, [](HiddenStates<double> s) {
    for (auto& v : s.values) v.setZero();
    return s;
  });
  EXPECT_GT((pooled - plain).norm(), 1e-3);
  EXPECT_DOUBLE_EQ(pooled.norm(), 0.0);
}

TEST(Encoder, ShapeChangingHookIsRejected) {
  const auto enc = tiny_encoder();
  EXPECT_THROW(enc.encode_with_hook(sample_batch(), 1,
                                    [](HiddenStates<double> s) {
                                      s.values[0].conservativeResize(s.values[0].rows(), 3);
                                      return s;
                                    }),
               PreconditionError);
}

TEST(Encoder, HookLayerMustBeAConfiguredChoice) {
  auto cfg = tiny_encoder_config();
  cfg.hook_layer_choices = {2};
  Rng rng(1);
  Encoder<double> enc(cfg, rng);
  EXPECT_THROW(enc.encode_with_hook(sample_batch(), 1, [](const auto& s) { return s; }), PreconditionError);
}

TEST(Encoder, ComposedHookEqualsSequentialApplication) {
  const auto enc = tiny_encoder();
  const auto batch = sample_batch();
  // g zeroes positions 1..2 of every sequence, f adds a fixed shift.
  Eigen::VectorXd shift = Eigen::VectorXd::LinSpaced(8, -1.0, 1.0);
  auto g = [](HiddenStates<double> s) {
    for (auto& v : s.values) v.middleRows(1, 2).setZero();
    return s;
  };
  auto f = [&](HiddenStates<double> s) {
    for (auto& v : s.values) v.rowwise() += shift.transpose();
    return s;
  };
  const auto composed = enc.encode_with_hook(batch, 1, [&](const auto& s) { return f(g(s)); }).second;

  // The same map expressed as keep/shift and routed through the training path.
  const auto trace = enc.forward(batch, 1, [&](const HiddenStates<double>& s) {
    FrozenHook<double> h = FrozenHook<double>::identity(s);
    for (std::size_t b = 0; b < s.batch(); ++b) {
      h.keep[b].segment(1, 2).setZero();
      h.shift[b].rowwise() += shift.transpose();
    }
    return h;
  });
  EXPECT_TRUE(bit_identical(composed, trace.final_states));
}

TEST(Encoder, PaddingTokensDoNotLeak) {
  const auto enc = tiny_encoder();
  auto a = TokenBatch::from_sequences({{3, 4, 5, 6, 7, 8}, {9, 10, 11}});
  auto b = a;
  b.ids(1, 3) = 15;
  b.ids(1, 5) = 13;
  const auto sa = enc.encode(a), sb = enc.encode(b);
  EXPECT_LT((mean_pool(sa) - mean_pool(sb)).cwiseAbs().maxCoeff(), 1e-14);

  std::vector<MaskedSequence> masked{{{3, 4, 5, 6, 7, 8}, {3, 4, 5, 6, 7, 8}, {1, 4}},
                                     {{9, 10, 11}, {9, 10, 11}, {0}}};
  EXPECT_NEAR(mlm_loss(enc.weights(), sa, masked).loss, mlm_loss(enc.weights(), sb, masked).loss, 1e-14);
}

TEST(Encoder, Deterministic) {
  const auto e1 = tiny_encoder(3), e2 = tiny_encoder(3);
  EXPECT_TRUE(bit_identical(e1.encode(sample_batch()), e2.encode(sample_batch())));
}

TEST(Encoder, RejectsOutOfVocabularyTokens) {
  const auto enc = tiny_encoder();
  EXPECT_THROW(enc.encode(TokenBatch::from_sequences({{3, 16}})), PreconditionError);
}

TEST(MeanPool, Examples) {
  HiddenStates<double> s;
  s.padding_mask = full_mask(1, 3);
  s.values.push_back(Eigen::MatrixXd::Constant(3, 2, 1.5));
  EXPECT_TRUE(mean_pool(s).isApprox(Eigen::MatrixXd::Constant(1, 2, 1.5)));

  s.padding_mask = full_mask(1, 2);
  s.values = {(Eigen::MatrixXd(2, 2) << 1, 0, 0, 1).finished()};
  EXPECT_TRUE(mean_pool(s).isApprox((Eigen::MatrixXd(1, 2) << 0.5, 0.5).finished()));

  s.padding_mask(0, 1) = false;
  s.values = {(Eigen::MatrixXd(2, 2) << 2, 2, 9, 9).finished()};
  EXPECT_TRUE(mean_pool(s).isApprox((Eigen::MatrixXd(1, 2) << 2, 2).finished()));

  s.padding_mask.setConstant(false);
  EXPECT_THROW(mean_pool(s), PreconditionError);
}

TEST(MlmLoss, UniformLogitsGiveLogVocab) {
  auto cfg = tiny_encoder_config();
  auto w = EncoderWeights<double>::zeros(cfg);  // zero head: every logit is 0
  Rng rng(1);
  auto states = random_states({4}, 4, 8, rng);
  std::vector<MaskedSequence> masked{{{2, 2, 5, 6}, {3, 4, 5, 6}, {0, 1}}};
  EXPECT_NEAR(mlm_loss(w, states, masked).loss, std::log(16.0), 1e-12);
}

TEST(MlmLoss, LargeMarginDrivesLossToZero) {
  auto cfg = tiny_encoder_config();
  auto w = EncoderWeights<double>::zeros(cfg);
  // Hidden vector e_0 and head row target = margin * e_0: the target logit leads
  // every other by the margin, so loss = log(1 + 15 e^{-m}).
  const double margin = 20.0;
  const TokenId target = 9;
  w.mlm_weight(target, 0) = margin;
  HiddenStates<double> s;
  s.padding_mask = full_mask(1, 2);
  s.values.push_back(Eigen::MatrixXd::Zero(2, 8));
  s.values[0](1, 0) = 1.0;
  std::vector<MaskedSequence> masked{{{3, kMaskId}, {3, target}, {1}}};
  const double loss = mlm_loss(w, s, masked).loss;
  EXPECT_LT(loss, 1e-6);
  EXPECT_NEAR(loss, std::log1p(15.0 * std::exp(-margin)), 1e-12);
}

TEST(MlmLoss, NoMaskedPositionsIsZero) {
  auto w = EncoderWeights<double>::zeros(tiny_encoder_config());
  Rng rng(1);
  auto states = random_states({3}, 3, 8, rng);
  std::vector<MaskedSequence> masked{{{3, 4, 5}, {3, 4, 5}, {}}};
  EXPECT_EQ(mlm_loss(w, states, masked).loss, 0.0);
}

TEST(EncoderGradient, PooledEmbeddingMatchesFiniteDifferences) {
  auto enc = tiny_encoder(11);
  const auto batch = sample_batch();
  Rng rng(5);
  Eigen::MatrixXd probe = Eigen::MatrixXd::Random(2, 8);
  // Scalar objective: <probe, pooled>.
  auto objective = [&] { return (mean_pool(enc.encode(batch)).array() * probe.array()).sum(); };

  auto grads = EncoderWeights<double>::zeros(enc.config());
  const auto trace = enc.forward(batch);
  enc.backward(trace, mean_pool_backward<double>(probe, batch.mask, 8), grads);

  // One input-embedding entry per real token id in the batch.
  double worst = 0;
  for (TokenId id : {3, 6, 9, 12}) {
    for (Eigen::Index c : {0, 5}) {
      const double numeric =
          oracle::central_difference(objective, enc.weights().token_embedding(id, c), 1e-5);
      worst = std::max(worst, oracle::relative_error(grads.token_embedding(id, c), numeric));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(EncoderGradient, MlmLossAllParametersMatchFiniteDifferences) {
  auto enc = tiny_encoder(13);
  const std::vector<MaskedSequence> masked{{{3, kMaskId, 5, 6, kMaskId, 8}, {3, 4, 5, 6, 7, 8}, {1, 4}},
                                           {{9, 10, kMaskId, 12}, {9, 10, 11, 12}, {2}}};
  const auto batch = TokenBatch::from_masked(masked);

  auto grads = EncoderWeights<double>::zeros(enc.config());
  const auto trace = enc.forward(batch);
  const auto result = mlm_loss(enc.weights(), trace.final_states, masked, &grads);
  enc.backward(trace, result.grad_final, grads);

  auto objective = [&] { return mlm_loss(enc.weights(), enc.encode(batch), masked).loss; };
  const auto stats = finite_difference_check(enc.weights(), grads, objective);
  EXPECT_LT(stats.max_relative_error, 1e-4) << stats.worst;
  EXPECT_GT(stats.checked, 1000u);
}

TEST(EncoderWeights, FloatCastKeepsShapes) {
  Rng rng(1);
  const auto w = EncoderWeights<double>::initialized(tiny_encoder_config(), rng);
  const auto f = w.cast<float>();
  Encoder<float> enc(tiny_encoder_config(), f);
  const auto states = enc.encode(sample_batch());
  EXPECT_TRUE(states.all_finite());
  EXPECT_EQ(states.dim(), 8);
}
