#include "stiformer/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "stiformer/kv.h"

namespace stif {

void DailyScores::validate() const {
  if (scores.size() != realized_returns.size()) {
    throw ShapeError("day " + std::to_string(day_index) + ": " + std::to_string(scores.size()) +
                     " scores vs " + std::to_string(realized_returns.size()) + " returns");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]) || !std::isfinite(realized_returns[i])) {
      throw NumericError("day " + std::to_string(day_index) + ": non-finite value at node " +
                         std::to_string(i));
    }
  }
}

const std::vector<std::string>& report_keys() {
  static const std::vector<std::string> keys = {"IC",   "PNL",    "A_RET",  "A_VOL", "MAXD",
                                                "SHARPE", "CALMAR", "WINR", "PL"};
  return keys;
}

std::string BacktestReport::to_text() const {
  const auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : "n/a"; };
  std::ostringstream out;
  out << "IC=" << format_double(ic) << '\n'
      << "PNL=" << format_double(pnl) << '\n'
      << "A_RET=" << format_double(ar) << '\n'
      << "A_VOL=" << format_double(vol) << '\n'
      << "MAXD=" << format_double(mdd) << '\n'
      << "SHARPE=" << opt(sharpe) << '\n'
      << "CALMAR=" << opt(calmar) << '\n'
      << "WINR=" << format_double(winr) << '\n'
      << "PL=" << opt(pl_ratio) << '\n';
  return out.str();
}

std::string BacktestReport::daily_csv(const std::vector<std::size_t>& day_indices) const {
  if (day_indices.size() != daily_returns.size()) {
    throw ShapeError("daily_csv: day index count does not match return count");
  }
  std::ostringstream out;
  out << "day,return\n";
  for (std::size_t i = 0; i < daily_returns.size(); ++i) {
    out << day_indices[i] << ',' << format_double(daily_returns[i]) << '\n';
  }
  return out.str();
}

double build_portfolio_return(const DailyScores& day, double top_frac) {
  if (!(top_frac > 0.0 && top_frac <= 1.0)) throw ParameterError("top_frac must be in (0, 1]");
  day.validate();
  const std::size_t n = day.scores.size();
  if (n == 0) throw ParameterError("build_portfolio_return: no nodes");
  const auto k = std::min(n, static_cast<std::size_t>(std::ceil(top_frac * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return day.scores[a] > day.scores[b]; });
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) total += day.realized_returns[order[i]];
  return total / static_cast<double>(k);
}

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("pearson: length mismatch");
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return std::nullopt;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va <= 0.0 || vb <= 0.0) return std::nullopt;
  return cov / std::sqrt(va * vb);
}

double information_coefficient(const std::vector<DailyScores>& days) {
  if (days.empty()) throw ParameterError("information_coefficient: no days");
  double total = 0.0;
  std::size_t used = 0;
  for (const DailyScores& d : days) {
    d.validate();
    if (d.scores.size() < 2) throw ParameterError("information_coefficient: need at least 2 nodes");
    if (const auto c = pearson(d.scores, d.realized_returns)) {
      total += *c;
      ++used;
    }
  }
  if (used == 0) throw NumericError("information_coefficient: every day has zero variance");
  return total / static_cast<double>(used);
}

double max_drawdown(const std::vector<double>& returns) {
  double cum = 0.0;
  double peak = -INFINITY;
  double worst = 0.0;
  for (double r : returns) {
    cum += r;
    peak = std::max(peak, cum);
    worst = std::max(worst, peak - cum);
  }
  return worst;
}

BacktestReport aggregate_metrics(const std::vector<double>& returns, double trading_days_per_year) {
  if (returns.size() < 2) throw ParameterError("aggregate_metrics: need at least 2 days");
  if (!(trading_days_per_year > 0.0)) throw ParameterError("trading_days_per_year must be positive");
  for (double r : returns) {
    if (!std::isfinite(r)) throw NumericError("aggregate_metrics: non-finite daily return");
  }
  const double n = static_cast<double>(returns.size());
  BacktestReport rep;
  rep.daily_returns = returns;
  rep.pnl = std::accumulate(returns.begin(), returns.end(), 0.0);
  rep.ar = trading_days_per_year / n * rep.pnl;
  const double mu = rep.pnl / n;
  double var = 0.0;
  for (double r : returns) var += (r - mu) * (r - mu);
  // An exactly constant series has zero spread even if the mean rounds.
  const auto [lo, hi] = std::minmax_element(returns.begin(), returns.end());
  const double sigma = *lo == *hi ? 0.0 : std::sqrt(var / n);
  rep.vol = sigma * std::sqrt(trading_days_per_year);
  rep.mdd = max_drawdown(returns);
  if (sigma > 0.0) rep.sharpe = mu / sigma * std::sqrt(trading_days_per_year);
  if (rep.mdd > 0.0) rep.calmar = mu / rep.mdd;

  double win_sum = 0.0, lose_sum = 0.0;
  std::size_t wins = 0, losses = 0;
  for (double r : returns) {
    if (r > 0.0) {
      win_sum += r;
      ++wins;
    } else if (r < 0.0) {
      lose_sum += r;
      ++losses;
    }
  }
  rep.winr = static_cast<double>(wins) / n;
  if (wins > 0 && losses > 0) {
    rep.pl_ratio = (win_sum / static_cast<double>(wins)) / std::abs(lose_sum / static_cast<double>(losses));
  }
  return rep;
}

BacktestReport backtest(const std::vector<DailyScores>& days, double top_frac) {
  std::vector<double> returns;
  returns.reserve(days.size());
  for (const DailyScores& d : days) returns.push_back(build_portfolio_return(d, top_frac));
  BacktestReport rep = aggregate_metrics(returns);
  rep.ic = information_coefficient(days);
  return rep;
}

}  // namespace stif
