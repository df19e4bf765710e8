#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stiformer/metrics.h"

namespace stif {
namespace {

std::vector<double> uniform_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                   double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

TEST(PortfolioTest, FullSelectionIsCrossSectionalMean) {
  DailyScores d{0, {0.3, 0.1, 0.2}, {0.01, -0.02, 0.04}};
  EXPECT_NEAR(build_portfolio_return(d, 1.0), 0.01, 1e-15);
}

TEST(PortfolioTest, SingleTopNode) {
  DailyScores d{0, {1, 2, 3, 4, 5}, {0.1, 0.2, 0.3, 0.4, 0.5}};
  EXPECT_EQ(build_portfolio_return(d, 0.2), 0.5);
}

TEST(PortfolioTest, TiesGoToLowerIndex) {
  DailyScores d{0, {1, 1, 1, 1}, {0.1, 0.2, 0.3, 0.4}};
  EXPECT_EQ(build_portfolio_return(d, 0.25), 0.1);
}

TEST(PortfolioTest, MatchesSortOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    DailyScores d{0, uniform_vector(5, rng), uniform_vector(5, rng)};
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t i = 0; i < 5; ++i) pairs.emplace_back(d.scores[i], d.realized_returns[i]);
    std::sort(pairs.begin(), pairs.end(), [](auto a, auto b) { return a.first > b.first; });
    EXPECT_NEAR(build_portfolio_return(d, 0.4), (pairs[0].second + pairs[1].second) / 2, 1e-15);
  }
}

TEST(PortfolioTest, RejectsBadInput) {
  DailyScores d{0, {1, 2}, {0.1, 0.2}};
  EXPECT_THROW(build_portfolio_return(d, 0.0), ParameterError);
  EXPECT_THROW(build_portfolio_return(d, 1.5), ParameterError);
  EXPECT_THROW(build_portfolio_return(DailyScores{}, 0.5), ParameterError);
  EXPECT_THROW(build_portfolio_return(DailyScores{0, {1}, {1, 2}}, 0.5), ShapeError);
}

TEST(InformationCoefficientTest, PerfectAndInverse) {
  std::mt19937_64 rng(2);
  std::vector<DailyScores> same, flipped;
  for (std::size_t day = 0; day < 4; ++day) {
    const auto r = uniform_vector(10, rng);
    std::vector<double> neg(r);
    for (double& x : neg) x = -x;
    same.push_back({day, r, r});
    flipped.push_back({day, neg, r});
  }
  EXPECT_NEAR(information_coefficient(same), 1.0, 1e-12);
  EXPECT_NEAR(information_coefficient(flipped), -1.0, 1e-12);
}

TEST(InformationCoefficientTest, HandBuiltDays) {
  // Day 1: perfect correlation. Day 2: scores (1,2,3,4) vs returns (1,-1,-1,1),
  // whose centred cross product is -1.5+0.5-0.5+1.5 = 0.
  std::vector<DailyScores> days = {{0, {1, 2, 3}, {2, 4, 6}}, {1, {1, 2, 3, 4}, {1, -1, -1, 1}}};
  EXPECT_NEAR(information_coefficient(days), 0.5, 1e-12);
}

TEST(InformationCoefficientTest, SkipsDegenerateDays) {
  std::vector<DailyScores> days = {{0, {1, 2, 3}, {1, 2, 3}}, {1, {5, 5, 5}, {1, 2, 3}}};
  EXPECT_NEAR(information_coefficient(days), 1.0, 1e-12);
  EXPECT_THROW(information_coefficient({{0, {5, 5}, {1, 2}}}), NumericError);
  EXPECT_THROW(information_coefficient({}), ParameterError);
}

TEST(InformationCoefficientTest, InvariantUnderIncreasingAffineMap) {
  std::mt19937_64 rng(3);
  std::vector<DailyScores> days, mapped;
  for (std::size_t day = 0; day < 5; ++day) {
    auto s = uniform_vector(8, rng);
    auto r = uniform_vector(8, rng);
    days.push_back({day, s, r});
    for (double& x : s) x = 3.5 * x - 2.0;
    mapped.push_back({day, s, r});
  }
  EXPECT_NEAR(information_coefficient(days), information_coefficient(mapped), 1e-12);
}

TEST(AggregateMetricsTest, HandWalkedSeries) {
  const BacktestReport r = aggregate_metrics({0.1, -0.2, 0.05});
  EXPECT_NEAR(r.pnl, -0.05, 1e-12);
  EXPECT_NEAR(r.mdd, 0.2, 1e-12);
  EXPECT_NEAR(r.winr, 2.0 / 3.0, 1e-12);
  ASSERT_TRUE(r.pl_ratio.has_value());
  EXPECT_NEAR(*r.pl_ratio, 0.375, 1e-12);
  EXPECT_NEAR(r.ar, 240.0 / 3.0 * -0.05, 1e-12);
}

TEST(AggregateMetricsTest, ConstantReturnsLeaveRatiosUndefined) {
  const BacktestReport r = aggregate_metrics(std::vector<double>(240, 0.01));
  EXPECT_NEAR(r.pnl, 2.4, 1e-12);
  EXPECT_NEAR(r.ar, 2.4, 1e-12);
  EXPECT_NEAR(r.vol, 0.0, 1e-12);
  EXPECT_EQ(r.mdd, 0.0);
  EXPECT_EQ(r.winr, 1.0);
  EXPECT_FALSE(r.sharpe.has_value());
  EXPECT_FALSE(r.calmar.has_value());
  EXPECT_FALSE(r.pl_ratio.has_value());
  const std::string text = r.to_text();
  EXPECT_NE(text.find("SHARPE=n/a\n"), std::string::npos);
  EXPECT_NE(text.find("PL=n/a\n"), std::string::npos);
}

TEST(AggregateMetricsTest, SignFlipSymmetry) {
  std::mt19937_64 rng(4);
  const auto r = uniform_vector(30, rng, -0.02, 0.02);
  std::vector<double> neg(r);
  for (double& x : neg) x = -x;
  const BacktestReport a = aggregate_metrics(r), b = aggregate_metrics(neg);
  EXPECT_NEAR(a.vol, b.vol, 1e-15);
  EXPECT_NEAR(a.pnl, -b.pnl, 1e-15);
  EXPECT_NEAR(a.ar, -b.ar, 1e-15);
}

TEST(AggregateMetricsTest, InvariantsOnRandomSeries) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto returns = uniform_vector(2 + trial, rng, -0.03, 0.031);
    const BacktestReport r = aggregate_metrics(returns);
    EXPECT_NEAR(r.pnl, r.ar * static_cast<double>(returns.size()) / 240.0, 1e-12);
    EXPECT_NEAR(r.pnl, std::accumulate(returns.begin(), returns.end(), 0.0), 1e-9);
    EXPECT_GE(r.mdd, 0.0);
    EXPECT_GE(r.winr, 0.0);
    EXPECT_LE(r.winr, 1.0);
    if (r.pl_ratio) EXPECT_GT(*r.pl_ratio, 0.0);
  }
}

TEST(AggregateMetricsTest, DrawdownMatchesPairwiseOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto returns = uniform_vector(20, rng, -0.05, 0.05);
    std::vector<double> cum(returns.size());
    std::partial_sum(returns.begin(), returns.end(), cum.begin());
    double expected = 0.0;
    for (std::size_t k = 0; k < cum.size(); ++k)
      for (std::size_t j = 0; j <= k; ++j) expected = std::max(expected, cum[j] - cum[k]);
    EXPECT_NEAR(max_drawdown(returns), expected, 1e-15);
    // A rising tail after the series cannot deepen the drawdown.
    auto extended = returns;
    extended.insert(extended.end(), {0.01, 0.02, 0.03});
    EXPECT_NEAR(max_drawdown(extended), expected, 1e-15);
  }
}

TEST(AggregateMetricsTest, RejectsShortSeries) {
  EXPECT_THROW(aggregate_metrics({0.1}), ParameterError);
  EXPECT_THROW(aggregate_metrics({0.1, NAN}), NumericError);
}

TEST(BacktestTest, ReportKeysAndDailyCsv) {
  std::vector<DailyScores> days = {{3, {1, 2, 3}, {0.1, 0.2, 0.3}}, {4, {3, 2, 1}, {0.1, -0.2, 0.3}}};
  const BacktestReport r = backtest(days, 0.3);
  EXPECT_EQ(r.ic, information_coefficient(days));
  EXPECT_EQ(r.daily_returns, (std::vector<double>{0.3, 0.1}));
  std::vector<std::string> keys;
  const std::string text = r.to_text();
  for (std::size_t pos = 0; pos < text.size();) {
    const std::size_t eq = text.find('=', pos);
    keys.push_back(text.substr(pos, eq - pos));
    pos = text.find('\n', eq) + 1;
  }
  EXPECT_EQ(keys, report_keys());
  EXPECT_EQ(r.daily_csv({3, 4}), "day,return\n3,0.3\n4,0.1\n");
}

}  // namespace
}  // namespace stif
