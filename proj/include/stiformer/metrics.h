#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "stiformer/tensor.h"

namespace stif {

inline constexpr double kTradingDaysPerYear = 240.0;

struct DailyScores {
  std::size_t day_index = 0;
  std::vector<double> scores;
  std::vector<double> realized_returns;  // next-period simple returns

  void validate() const;
};

/// Metrics that are undefined for the given series (zero volatility, zero
/// drawdown, no losing days) are left empty rather than NaN.
struct BacktestReport {
  std::vector<double> daily_returns;
  double ic = 0.0;
  double pnl = 0.0;
  double ar = 0.0;
  double vol = 0.0;
  double mdd = 0.0;
  std::optional<double> sharpe;
  std::optional<double> calmar;
  double winr = 0.0;
  std::optional<double> pl_ratio;

  /// Flat "KEY=value" text; undefined values print as "n/a".
  std::string to_text() const;
  /// One "day,return" line per traded day with a header.
  std::string daily_csv(const std::vector<std::size_t>& day_indices) const;
};

/// Keys of the report text in emission order.
const std::vector<std::string>& report_keys();

/// Equal-weighted mean realized return of the ceil(top_frac * N) highest
/// scores; ties go to the lower node index.
double build_portfolio_return(const DailyScores& day, double top_frac);

/// Cross-sectional Pearson correlation; nullopt when either side is constant.
std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b);

/// Mean daily Pearson(scores, returns). Degenerate days are skipped; if all
/// are degenerate a NumericError is raised.
double information_coefficient(const std::vector<DailyScores>& days);

/// Largest fall of the cumulative-return curve from an earlier point.
double max_drawdown(const std::vector<double>& returns);

BacktestReport aggregate_metrics(const std::vector<double>& returns,
                                 double trading_days_per_year = kTradingDaysPerYear);

/// Portfolio returns per day, IC and the aggregate metrics.
BacktestReport backtest(const std::vector<DailyScores>& days, double top_frac);

}  // namespace stif
