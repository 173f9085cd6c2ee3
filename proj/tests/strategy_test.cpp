#include <gtest/gtest.h>

#include <array>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

#include "dgmark/strategy.hpp"

namespace dgmark {
namespace {

PredictiveDistribution dist_of(std::vector<double> probs, Position pos = 0) {
  PredictiveDistribution d;
  d.position = pos;
  for (std::size_t v = 0; v < probs.size(); ++v) d.entries.push_back({static_cast<Token>(v), probs[v]});
  sort_entries(d.entries);
  return d;
}

Proposal one(const StrategySpec& spec, const PredictiveDistribution& d, std::uint64_t seed = 1) {
  RngStream rng(seed);
  const std::vector<PredictiveDistribution> ds = {d};
  return propose(spec, ds, rng).front();
}

TEST(StrategyTest, ConfidenceGreedy) {
  const auto p = one({StrategyKind::confidence, Selection::greedy}, dist_of({0.7, 0.2, 0.1}));
  EXPECT_EQ(0, p.candidate);
  EXPECT_DOUBLE_EQ(0.7, p.reward);
  EXPECT_DOUBLE_EQ(0.7, p.candidate_prob);
}

TEST(StrategyTest, Margin) {
  const auto p = one({StrategyKind::margin, Selection::greedy}, dist_of({0.7, 0.2, 0.1}));
  EXPECT_EQ(0, p.candidate);
  EXPECT_DOUBLE_EQ(0.7 - 0.2, p.reward);
}

TEST(StrategyTest, EntropyOfUniformFour) {
  const auto p = one({StrategyKind::entropy, Selection::greedy}, dist_of({0.25, 0.25, 0.25, 0.25}));
  EXPECT_NEAR(-1.3863, p.reward, 1e-4);
  EXPECT_NEAR(-std::log(4.0), p.reward, 1e-12);
}

TEST(StrategyTest, GreedyTiesGoToLowestTokenId) {
  PredictiveDistribution d;
  d.entries = {{3, 0.4}, {1, 0.4}, {2, 0.2}};  // unsorted ties on purpose
  const auto p = one({StrategyKind::confidence, Selection::greedy}, d);
  EXPECT_EQ(1, p.candidate);
}

TEST(StrategyTest, RandomRewardInUnitInterval) {
  RngStream rng(9);
  std::vector<PredictiveDistribution> ds;
  for (Position j = 0; j < 200; ++j) ds.push_back(dist_of({0.5, 0.5}, j));
  for (const auto& p : propose({StrategyKind::random, Selection::multinomial}, ds, rng)) {
    EXPECT_GE(p.reward, 0.0);
    EXPECT_LT(p.reward, 1.0);
  }
}

TEST(StrategyTest, CandidateProbIsReportedValueBitForBit) {
  const double weird = 0.1 + 0.2;  // not exactly 0.3
  const auto d = dist_of({weird, 1.0 - weird});
  for (auto kind : {StrategyKind::random, StrategyKind::confidence, StrategyKind::entropy}) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto p = one({kind, Selection::multinomial, 0.7}, d, seed);
      EXPECT_EQ(d.prob_of(p.candidate), p.candidate_prob);
    }
  }
}

TEST(StrategyTest, MultinomialDeterministicGivenSeed) {
  std::vector<PredictiveDistribution> ds;
  for (Position j = 0; j < 20; ++j) ds.push_back(dist_of({0.1, 0.2, 0.3, 0.4}, j));
  RngStream a(77), b(77);
  EXPECT_EQ(propose({StrategyKind::confidence, Selection::multinomial}, ds, a),
            propose({StrategyKind::confidence, Selection::multinomial}, ds, b));
}

TEST(StrategyTest, MultinomialFrequenciesPassChiSquare) {
  const std::array<double, 4> probs = {0.4, 0.3, 0.2, 0.1};
  const auto d = dist_of({probs.begin(), probs.end()});
  const std::vector<PredictiveDistribution> ds = {d};
  RngStream rng(2024);
  constexpr int kDraws = 100000;
  std::array<int, 4> counts{};
  for (int i = 0; i < kDraws; ++i) {
    counts[static_cast<std::size_t>(propose({StrategyKind::confidence, Selection::multinomial}, ds, rng)[0].candidate)]++;
  }
  double chi2 = 0.0;
  for (std::size_t v = 0; v < 4; ++v) {
    const double expected = probs[v] * kDraws;
    chi2 += (counts[v] - expected) * (counts[v] - expected) / expected;
  }
  const double critical = boost::math::quantile(boost::math::complement(boost::math::chi_squared(3.0), 0.001));
  EXPECT_LT(chi2, critical);
}

TEST(StrategyTest, TemperatureSharpens) {
  const auto d = dist_of({0.6, 0.4});
  const std::vector<PredictiveDistribution> ds = {d};
  RngStream rng(5);
  int top = 0;
  for (int i = 0; i < 20000; ++i) top += propose({StrategyKind::confidence, Selection::multinomial, 0.25}, ds, rng)[0].candidate == 0;
  // 0.6^4 / (0.6^4 + 0.4^4) = 0.835
  EXPECT_NEAR(0.835, top / 20000.0, 0.01);
}

TEST(StrategyTest, Validation) {
  RngStream rng(1);
  const std::vector<PredictiveDistribution> ds = {dist_of({0.5, 0.5})};
  EXPECT_THROW(propose({StrategyKind::margin, Selection::multinomial}, ds, rng), Error);
  EXPECT_THROW(propose({StrategyKind::confidence, Selection::greedy, 0.0}, ds, rng), Error);
  EXPECT_THROW(propose({StrategyKind::confidence, Selection::greedy}, {}, rng), Error);

  auto truncated = dist_of({0.5, 0.3});
  truncated.truncated = true;
  truncated.covered_mass = 0.8;
  const std::vector<PredictiveDistribution> tds = {truncated};
  try {
    propose({StrategyKind::entropy, Selection::greedy}, tds, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(ErrorKind::truncation, e.kind());
  }
  EXPECT_NO_THROW(propose({StrategyKind::confidence, Selection::greedy}, tds, rng));
}

}  // namespace
}  // namespace dgmark
