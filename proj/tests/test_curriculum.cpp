#include "effcl/curriculum.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>

using namespace effcl;

namespace {

CurriculumPolicy policy(CurriculumMode mode) {
  CurriculumPolicy p;
  p.mode = mode;
  return p;
}

const std::vector<double> kTenLevels{0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10};

}  // namespace

TEST(Curriculum, ModeNames) {
  for (auto m : {CurriculumMode::Discrete, CurriculumMode::Continuous, CurriculumMode::NoCurr})
    EXPECT_EQ(parse_curriculum_mode(to_string(m)), m);
  EXPECT_EQ(to_string(CurriculumMode::NoCurr), "none");
  EXPECT_THROW(parse_curriculum_mode("linear"), ConfigError);
}

TEST(Curriculum, StageLevelsAreTheDecimalLiterals) {
  EXPECT_EQ(policy(CurriculumMode::Discrete).stage_levels(), kTenLevels);
}

TEST(Curriculum, DiscreteEndpoints) {
  Rng rng(1);
  const auto p = policy(CurriculumMode::Discrete);
  EXPECT_EQ(level_at(p, 0, 3000, rng), 0.01);
  EXPECT_EQ(level_at(p, 2999, 3000, rng), 0.10);
}

TEST(Curriculum, DiscreteStagesOverThreeThousandSteps) {
  Rng rng(2);
  const auto p = policy(CurriculumMode::Discrete);
  std::map<double, int> widths;
  double prev = 0;
  for (std::size_t s = 0; s < 3000; ++s) {
    const double level = level_at(p, s, 3000, rng);
    EXPECT_GE(level, prev);
    prev = level;
    ++widths[level];
  }
  ASSERT_EQ(widths.size(), 10u);
  std::size_t i = 0;
  for (const auto& [level, width] : widths) {
    EXPECT_EQ(level, kTenLevels[i++]);
    EXPECT_EQ(width, 300);
  }
}

TEST(Curriculum, DiscreteUnevenTotalStageWidthsDifferByAtMostOne) {
  Rng rng(3);
  const auto p = policy(CurriculumMode::Discrete);
  std::map<double, int> widths;
  for (std::size_t s = 0; s < 1237; ++s) ++widths[level_at(p, s, 1237, rng)];
  ASSERT_EQ(widths.size(), 10u);
  for (const auto& [level, width] : widths) {
    EXPECT_GE(width, 123);
    EXPECT_LE(width, 124);
  }
}

TEST(Curriculum, ContinuousFormula) {
  Rng rng(4);
  const auto p = policy(CurriculumMode::Continuous);
  EXPECT_EQ(level_at(p, 0, 3000, rng), 0.01);
  EXPECT_EQ(level_at(p, 2999, 3000, rng), 0.10);
  EXPECT_NEAR(level_at(p, 1500, 3000, rng), 0.01 + 0.09 * 1500.0 / 2999.0, 1e-15);
  EXPECT_NEAR(level_at(p, 1500, 3000, rng), 0.05502, 1e-5);
  double prev = -1;
  for (std::size_t s = 0; s < 3000; ++s) {
    const double level = level_at(p, s, 3000, rng);
    EXPECT_GT(level, prev);
    prev = level;
  }
}

TEST(Curriculum, NoCurrIsUniformOverTheTenLevels) {
  Rng rng(5);
  const auto p = policy(CurriculumMode::NoCurr);
  std::map<double, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[level_at(p, static_cast<std::size_t>(i), n, rng)];
  ASSERT_EQ(counts.size(), 10u);
  std::size_t i = 0;
  for (const auto& [level, count] : counts) {
    EXPECT_EQ(level, kTenLevels[i++]);
    EXPECT_NEAR(count / static_cast<double>(n), 0.1, 0.005);
  }
}

TEST(Curriculum, DeterministicModesIgnoreTheSeed) {
  for (auto m : {CurriculumMode::Discrete, CurriculumMode::Continuous}) {
    Rng a(6), b(7);
    for (std::size_t s = 0; s < 500; s += 7)
      EXPECT_EQ(level_at(policy(m), s, 500, a), level_at(policy(m), s, 500, b));
  }
}

TEST(Curriculum, AlwaysInsideRange) {
  Rng rng(8);
  for (auto m : {CurriculumMode::Discrete, CurriculumMode::Continuous, CurriculumMode::NoCurr})
    for (std::size_t total : {1u, 3u, 10u, 77u})
      for (std::size_t s = 0; s < total; ++s) {
        const double level = level_at(policy(m), s, total, rng);
        EXPECT_GE(level, 0.01);
        EXPECT_LE(level, 0.10);
      }
}

TEST(Curriculum, StepOutOfRange) {
  Rng rng(9);
  EXPECT_THROW(level_at(policy(CurriculumMode::Discrete), 10, 10, rng), PreconditionError);
}

TEST(Curriculum, PolicyValidation) {
  auto p = policy(CurriculumMode::Discrete);
  p.min_level = 0.2;
  EXPECT_THROW(p.validate(), ConfigError);
  p = policy(CurriculumMode::Discrete);
  p.num_stages = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}
