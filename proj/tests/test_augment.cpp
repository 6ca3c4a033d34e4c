#include "effcl/augment.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

using namespace effcl;

namespace {

bool identical(const HiddenStates<double>& a, const HiddenStates<double>& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.batch(); ++i)
    if (!(a.values[i].array() == b.values[i].array()).all()) return false;
  return true;
}

/// Rows (a,0), (-a,0), (0,b), (0,-b): mean 0 and C = diag(2a^2, 2b^2) / 3 = diag(2, 1).
HiddenStates<double> diagonal_covariance_states() {
  const double a = std::sqrt(3.0), b = std::sqrt(1.5);
  HiddenStates<double> s;
  s.padding_mask = full_mask(1, 4);
  s.values.push_back((Eigen::MatrixXd(4, 2) << a, 0, -a, 0, 0, b, 0, -b).finished());
  return s;
}

Eigen::MatrixXd covariance_oracle(const HiddenStates<double>& s) {
  std::vector<Eigen::VectorXd> rows;
  for (std::size_t b = 0; b < s.batch(); ++b)
    for (Eigen::Index t = 0; t < s.length(); ++t)
      if (s.padding_mask(static_cast<Eigen::Index>(b), t)) rows.push_back(s.values[b].row(t).transpose());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(s.dim());
  for (const auto& r : rows) mean += r;
  mean /= static_cast<double>(rows.size());
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(s.dim(), s.dim());
  for (const auto& r : rows) c += (r - mean) * (r - mean).transpose();
  return c / static_cast<double>(rows.size() - 1);
}

}  // namespace

TEST(SpanCutoff, ZeroRatioIsIdentity) {
  Rng rng(1), data(2);
  const auto s = random_states({10, 7}, 10, 4, data);
  EXPECT_TRUE(identical(span_cutoff(s, 0.0, rng), s));
}

TEST(SpanCutoff, TenPercentOfHundredZeroesTenContiguous) {
  Rng rng(3), data(4);
  const auto s = random_states({100}, 100, 4, data, 1.0);
  std::vector<CutoffSpan> spans;
  const auto out = span_cutoff(s, 0.1, rng, &spans);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0].length, 10);
  for (Eigen::Index t = 0; t < 100; ++t) {
    const bool inside = t >= spans[0].start && t < spans[0].start + 10;
    if (inside) {
      EXPECT_TRUE(out.values[0].row(t).isZero(0));
    } else {
      EXPECT_TRUE((out.values[0].row(t).array() == s.values[0].row(t).array()).all());
    }
  }
}

TEST(SpanCutoff, FloorToZeroIsIdentity) {
  Rng rng(5), data(6);
  const auto s = random_states({10}, 10, 4, data);
  EXPECT_TRUE(identical(span_cutoff(s, 0.01, rng), s));
}

TEST(SpanCutoff, RandomTrialsZeroExactlyOneRunInsideRealTokens) {
  Rng rng(7), data(8);
  std::uniform_int_distribution<Eigen::Index> len(2, 40);
  std::uniform_real_distribution<double> ratio(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index real = len(data);
    const double r = ratio(data);
    const auto s = random_states({real}, 40, 3, data, 2.0);
    const auto out = span_cutoff(s, r, rng);
    const auto expected = static_cast<Eigen::Index>(std::floor(r * static_cast<double>(real) + 1e-9));
    Eigen::Index zeroed = 0, first = -1, last = -1;
    for (Eigen::Index t = 0; t < 40; ++t) {
      if (out.values[0].row(t).isZero(0) && !s.values[0].row(t).isZero(0)) {
        ++zeroed;
        if (first < 0) first = t;
        last = t;
      }
    }
    ASSERT_EQ(zeroed, expected) << "trial " << trial;
    if (zeroed > 0) {
      EXPECT_EQ(last - first + 1, zeroed);
      EXPECT_LT(last, real);
    }
    EXPECT_LE(out.values[0].norm(), s.values[0].norm());
  }
}

TEST(SpanCutoff, RejectsRatioOutsideUnitInterval) {
  Rng rng(1), data(2);
  const auto s = random_states({5}, 5, 2, data);
  EXPECT_THROW(span_cutoff(s, 1.5, rng), PreconditionError);
  EXPECT_THROW(span_cutoff(s, -0.1, rng), PreconditionError);
}

TEST(Eigenbasis, IdenticalVectorsGiveZeroSpectrumAndZeroShift) {
  HiddenStates<double> s;
  s.padding_mask = full_mask(2, 3);
  s.values.assign(2, Eigen::MatrixXd::Constant(3, 4, 0.7));
  const auto basis = compute_eigenbasis(s);
  EXPECT_TRUE(basis.values.isZero(0));
  Rng rng(9);
  std::vector<JitterDraw<double>> draws;
  const auto out = pca_jitter(s, basis, 0.1, rng, &draws);
  for (const auto& d : draws) EXPECT_TRUE(d.delta.isZero(0));
  EXPECT_TRUE(identical(out, s));
}

TEST(Eigenbasis, DiagonalCovarianceGivesIdentityBasis) {
  const auto basis = compute_eigenbasis(diagonal_covariance_states());
  EXPECT_NEAR(basis.values(0), 2.0, 1e-12);
  EXPECT_NEAR(basis.values(1), 1.0, 1e-12);
  EXPECT_TRUE(basis.vectors.isApprox(Eigen::Matrix2d::Identity(), 1e-12));
  EXPECT_GT(basis.vectors(0, 0), 0);
  EXPECT_GT(basis.vectors(1, 1), 0);
}

TEST(Eigenbasis, RandomBatchReconstructsCovariance) {
  for (Eigen::Index d : {2, 8, 64}) {
    Rng data(static_cast<std::uint64_t>(d));
    const auto s = random_states({40, 33, 70}, 70, d, data, 0.5);
    const auto basis = compute_eigenbasis(s);
    const Eigen::MatrixXd c = covariance_oracle(s);
    const Eigen::MatrixXd p = basis.vectors;
    EXPECT_LT((p.transpose() * p - Eigen::MatrixXd::Identity(d, d)).norm(), 1e-8);
    EXPECT_LT((p * basis.values.asDiagonal() * p.transpose() - c).norm() / c.norm(), 1e-8);
    for (Eigen::Index i = 0; i + 1 < d; ++i) EXPECT_GE(basis.values(i), basis.values(i + 1));
    EXPECT_GE(basis.values.minCoeff(), 0.0);
    for (Eigen::Index i = 0; i < d; ++i) {
      Eigen::Index arg = 0;
      p.col(i).cwiseAbs().maxCoeff(&arg);
      EXPECT_GT(p(arg, i), 0.0);
    }
  }
}

TEST(Eigenbasis, PaddingIsIgnored) {
  Rng data(10);
  auto s = random_states({5, 3}, 6, 3, data);
  const auto before = compute_eigenbasis(s);
  s.values[1].bottomRows(3).setConstant(1e6);
  const auto after = compute_eigenbasis(s);
  EXPECT_TRUE(before.values.isApprox(after.values, 1e-12));
}

TEST(Eigenbasis, NeedsTwoRealTokens) {
  Rng data(11);
  const auto s = random_states({1}, 4, 3, data);
  EXPECT_THROW(compute_eigenbasis(s), PreconditionError);
}

TEST(PcaJitter, ZeroSigmaIsIdentity) {
  Rng rng(1), data(2);
  const auto s = random_states({6, 4}, 6, 3, data);
  EXPECT_TRUE(identical(pca_jitter(s, compute_eigenbasis(s), 0.0, rng), s));
}

TEST(PcaJitter, DiagonalBasisShiftsByTwoAlphaAlpha) {
  const auto s = diagonal_covariance_states();
  const auto basis = compute_eigenbasis(s);
  Rng rng(12);
  std::vector<JitterDraw<double>> draws;
  const auto out = pca_jitter(s, basis, 0.5, rng, &draws);
  ASSERT_EQ(draws.size(), 1u);
  const double alpha = draws[0].alpha;
  EXPECT_NE(alpha, 0.0);
  for (Eigen::Index t = 0; t < 4; ++t) {
    EXPECT_NEAR(out.values[0](t, 0) - s.values[0](t, 0), 2 * alpha, 1e-12);
    EXPECT_NEAR(out.values[0](t, 1) - s.values[0](t, 1), alpha, 1e-12);
  }
}

TEST(PcaJitter, AlphaIsNormalWithSigma) {
  Rng data(13);
  const auto s = random_states({5}, 5, 3, data);
  const auto basis = compute_eigenbasis(s);
  const double sigma = 0.1;
  const int n = 10000;
  Rng rng(14);
  std::vector<JitterDraw<double>> draws;
  double sum = 0, sq = 0;
  Eigen::VectorXd delta_sum = Eigen::VectorXd::Zero(3), delta_sq = Eigen::VectorXd::Zero(3);
  for (int i = 0; i < n; ++i) {
    pca_jitter(s, basis, sigma, rng, &draws);
    sum += draws[0].alpha;
    sq += draws[0].alpha * draws[0].alpha;
    delta_sum += draws[0].delta;
    delta_sq += draws[0].delta.cwiseAbs2();
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 3 * sigma / std::sqrt(n));
  EXPECT_NEAR(var, sigma * sigma, 0.05 * sigma * sigma);
  for (Eigen::Index c = 0; c < 3; ++c) {
    const double m = delta_sum(c) / n;
    const double sd = std::sqrt(delta_sq(c) / n - m * m);
    EXPECT_NEAR(m, 0.0, 3 * sd / std::sqrt(n));
  }
}

TEST(PcaJitter, PreservesPairwiseDifferencesAndPadding) {
  Rng data(15), rng(16);
  const auto s = random_states({7, 4}, 7, 5, data);
  const auto out = pca_jitter(s, compute_eigenbasis(s), 0.3, rng);
  for (std::size_t b = 0; b < 2; ++b) {
    const Eigen::Index real = s.real_length(b);
    for (Eigen::Index t = 0; t < real; ++t)
      for (Eigen::Index u = 0; u < real; ++u) {
        const Eigen::RowVectorXd before = s.values[b].row(t) - s.values[b].row(u);
        const Eigen::RowVectorXd after = out.values[b].row(t) - out.values[b].row(u);
        EXPECT_LT((before - after).cwiseAbs().maxCoeff(), 1e-14);
      }
    for (Eigen::Index t = real; t < 7; ++t)
      EXPECT_TRUE((out.values[b].row(t).array() == s.values[b].row(t).array()).all());
  }
}

TEST(PcaJitter, RejectsDimensionMismatch) {
  Rng data(17), rng(18);
  const auto s = random_states({4}, 4, 3, data);
  const auto other = random_states({4}, 4, 2, data);
  EXPECT_THROW(pca_jitter(s, compute_eigenbasis(other), 0.1, rng), PreconditionError);
}

TEST(HookLayer, UniformOverChoices) {
  EncoderConfig cfg;
  cfg.num_layers = 12;
  cfg.hook_layer_choices = {7, 9, 12};
  Rng rng(19);
  std::map<int, int> counts;
  const int n = 30000;
  for (int i = 0; i < n; ++i) ++counts[sample_hook_layer(cfg, rng)];
  ASSERT_EQ(counts.size(), 3u);
  for (int layer : {7, 9, 12}) EXPECT_NEAR(counts[layer] / static_cast<double>(n), 1.0 / 3.0, 0.02);
}

TEST(HookLayer, SingletonAndDeterminism) {
  EncoderConfig cfg;
  cfg.hook_layer_choices = {3};
  Rng rng(20);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_hook_layer(cfg, rng), 3);

  cfg.hook_layer_choices = {2, 3, 4};
  Rng a(21), b(21);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_hook_layer(cfg, a), sample_hook_layer(cfg, b));

  cfg.hook_layer_choices.clear();
  EXPECT_THROW(sample_hook_layer(cfg, rng), ConfigError);
}

TEST(Augment, MinimumLevelOnLongSequenceCutsFive) {
  Rng data(22), rng(23);
  const auto s = random_states({512}, 512, 4, data, 1.0);
  AugmentRecord<double> rec;
  augment(s, AugmentationLevel::curriculum(0.01), rng, &rec);
  ASSERT_EQ(rec.spans.size(), 1u);
  EXPECT_EQ(rec.spans[0].length, 5);
  EXPECT_DOUBLE_EQ(rec.level, 0.01);
}

TEST(Augment, OverrideZeroIsIdentity) {
  Rng data(24), rng(25);
  const auto s = random_states({9, 6}, 9, 4, data);
  EXPECT_TRUE(identical(augment(s, AugmentationLevel::override_level(0.0), rng), s));
}

TEST(Augment, LevelRanges) {
  EXPECT_THROW(AugmentationLevel::curriculum(0.0), PreconditionError);
  EXPECT_THROW(AugmentationLevel::curriculum(0.2), PreconditionError);
  EXPECT_NO_THROW(AugmentationLevel::override_level(0.5));
  EXPECT_THROW(AugmentationLevel::override_level(1.5), PreconditionError);
}

TEST(Augment, ShiftMatchesLoggedAlphaAndBasis) {
  Rng data(26), rng(27);
  const auto s = random_states({50, 40}, 50, 6, data, 0.5);
  AugmentRecord<double> rec;
  const auto out = augment(s, AugmentationLevel::curriculum(0.1), rng, &rec);
  ASSERT_EQ(rec.draws.size(), 2u);
  for (std::size_t b = 0; b < 2; ++b) {
    const Eigen::VectorXd delta = rec.basis.vectors * (rec.draws[b].alpha * rec.basis.values);
    EXPECT_LT((delta - rec.draws[b].delta).cwiseAbs().maxCoeff(), 1e-14);
    Eigen::Index changed = 0;
    Eigen::VectorXd shift_sum = Eigen::VectorXd::Zero(6);
    Eigen::Index outside = 0;
    const auto span = rec.spans[b];
    for (Eigen::Index t = 0; t < s.real_length(b); ++t) {
      if ((out.values[b].row(t).array() != s.values[b].row(t).array()).any()) ++changed;
      if (t < span.start || t >= span.start + span.length) {
        shift_sum += (out.values[b].row(t) - s.values[b].row(t)).transpose();
        ++outside;
      }
    }
    EXPECT_GE(changed, span.length);
    EXPECT_LT((shift_sum / static_cast<double>(outside) - delta).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Augment, FrozenHookReproducesTheDraw) {
  Rng data(28), rng(29);
  const auto s = random_states({20, 12}, 20, 4, data, 0.3);
  AugmentRecord<double> rec;
  const auto out = augment(s, AugmentationLevel::curriculum(0.1), rng, &rec);
  const auto replay = rec.frozen(s).apply(s);
  for (std::size_t b = 0; b < 2; ++b) EXPECT_LT((out.values[b] - replay.values[b]).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Augment, CutoffRunsBeforeJitter) {
  Rng data(30);
  const auto s = random_states({40, 30}, 40, 5, data, 0.5);
  const double level = 0.1;

  Rng a(31);
  const auto out = augment(s, AugmentationLevel::curriculum(level), a);

  Rng b(31);
  const auto cut = span_cutoff(s, level, b);
  const auto manual = pca_jitter(cut, compute_eigenbasis(cut), level, b);
  EXPECT_TRUE(identical(out, manual));

  Rng c(31);
  const auto jittered = pca_jitter(s, compute_eigenbasis(s), level, c);
  const auto swapped = span_cutoff(jittered, level, c);
  EXPECT_FALSE(identical(out, swapped));
}

TEST(Augment, HardnessGrowsWithLevel) {
  // Cosine similarity between pooled clean and pooled augmented states should
  // trend down as the level rises.
  std::vector<double> levels, sims;
  for (int i = 0; i < 100; ++i) {
    const double level = 0.01 + 0.09 * i / 99.0;
    Rng data(1000 + static_cast<std::uint64_t>(i)), rng(2000 + static_cast<std::uint64_t>(i));
    const auto s = random_states({64, 64, 64, 64}, 64, 8, data, 1.0);
    const auto out = augment(s, AugmentationLevel::curriculum(level), rng);
    const auto clean = mean_pool(s), aug = mean_pool(out);
    double sim = 0;
    for (Eigen::Index b = 0; b < 4; ++b) sim += cosine_sim(clean.row(b), aug.row(b)) / 4.0;
    levels.push_back(level);
    sims.push_back(sim);
  }
  const auto r = oracle::spearman_negative(levels, sims);
  EXPECT_LT(r.rho, 0.0);
  EXPECT_LT(r.p_value, 0.05) << "rho " << r.rho;
}
