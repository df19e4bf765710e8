#include "stiformer/data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "stiformer/kv.h"
#include "stiformer/random.h"

namespace stif {

void PanelDataset::validate() const {
  if (features.size() != n_days() * n_nodes() * n_features()) {
    throw ShapeError("panel: feature array has " + std::to_string(features.size()) + " values, expected " +
                     std::to_string(n_days() * n_nodes() * n_features()));
  }
  if (targets.size() != n_days() * n_nodes()) throw ShapeError("panel: target array size mismatch");
  for (std::size_t d = 1; d < dates.size(); ++d) {
    if (!(dates[d - 1] < dates[d])) throw ParameterError("panel: dates not strictly increasing at " + dates[d]);
  }
  for (double v : features) {
    if (!std::isfinite(v)) throw NumericError("panel: non-finite feature value");
  }
  for (double v : targets) {
    if (!std::isfinite(v)) throw NumericError("panel: non-finite target value");
  }
}

// --- splits ----------------------------------------------------------------

SplitSpec SplitSpec::from_counts(std::size_t train, std::size_t val, std::size_t test) {
  return {static_cast<double>(train), static_cast<double>(val), static_cast<double>(test), true};
}

SplitSpec SplitSpec::from_fractions(double train, double val, double test) {
  return {train, val, test, false};
}

std::array<std::size_t, 3> SplitSpec::resolve(std::size_t n_days) const {
  if (!(train >= 0.0 && val >= 0.0 && test >= 0.0)) throw ParameterError("split: negative block size");
  if (counts) {
    const std::array<std::size_t, 3> out = {static_cast<std::size_t>(train), static_cast<std::size_t>(val),
                                            static_cast<std::size_t>(test)};
    if (out[0] + out[1] + out[2] != n_days) {
      throw ParameterError("split: block counts sum to " + std::to_string(out[0] + out[1] + out[2]) +
                           " but the panel has " + std::to_string(n_days) + " days");
    }
    return out;
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ParameterError("split: fractions must sum to 1");
  const auto n = static_cast<double>(n_days);
  const auto v = static_cast<std::size_t>(std::llround(val * n));
  const auto t = static_cast<std::size_t>(std::llround(test * n));
  if (v + t > n_days) throw ParameterError("split: val + test exceed the panel");
  return {n_days - v - t, v, t};
}

FeatureScaler fit_scaler(const PanelDataset& ds, std::size_t n_fit_days) {
  if (n_fit_days == 0 || n_fit_days > ds.n_days()) {
    throw ParameterError("fit_scaler: need 1.." + std::to_string(ds.n_days()) + " fit days");
  }
  const std::size_t F = ds.n_features();
  FeatureScaler s{std::vector<double>(F, 0.0), std::vector<double>(F, 0.0)};
  const double count = static_cast<double>(n_fit_days * ds.n_nodes());
  for (std::size_t d = 0; d < n_fit_days; ++d)
    for (std::size_t n = 0; n < ds.n_nodes(); ++n)
      for (std::size_t f = 0; f < F; ++f) s.mean[f] += ds.feature(d, n, f);
  for (double& m : s.mean) m /= count;
  for (std::size_t d = 0; d < n_fit_days; ++d)
    for (std::size_t n = 0; n < ds.n_nodes(); ++n)
      for (std::size_t f = 0; f < F; ++f) {
        const double x = ds.feature(d, n, f) - s.mean[f];
        s.stdev[f] += x * x;
      }
  for (double& v : s.stdev) {
    v = std::sqrt(v / count);
    if (!(v > 0.0)) v = 1.0;
  }
  return s;
}

PanelDataset apply_scaler(const PanelDataset& ds, const FeatureScaler& scaler) {
  if (scaler.mean.size() != ds.n_features()) throw ShapeError("apply_scaler: feature count mismatch");
  PanelDataset out = ds;
  const std::size_t F = ds.n_features();
  for (std::size_t i = 0; i < out.features.size(); ++i) {
    const std::size_t f = i % F;
    out.features[i] = (out.features[i] - scaler.mean[f]) / scaler.stdev[f];
  }
  return out;
}

WindowSample window_at(const PanelDataset& ds, std::size_t day, std::size_t lookback,
                       std::size_t horizon) {
  if (lookback == 0 || horizon == 0) throw ParameterError("window: lookback and horizon must be positive");
  if (day + 1 < lookback || day + horizon >= ds.n_days()) {
    throw ParameterError("window: day " + std::to_string(day) + " has no complete window");
  }
  const std::size_t N = ds.n_nodes(), F = ds.n_features();
  std::vector<double> x(N * lookback * F);
  std::vector<double> y(N * horizon);
  const std::size_t first = day + 1 - lookback;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t t = 0; t < lookback; ++t)
      for (std::size_t f = 0; f < F; ++f) x[(n * lookback + t) * F + f] = ds.feature(first + t, n, f);
    double cum = 0.0;
    for (std::size_t s = 0; s < horizon; ++s) {
      const double r = ds.target(day + 1 + s, n);
      cum = cum + r + cum * r;
      y[n * horizon + s] = cum;
    }
  }
  return {Tensor::from({N, lookback, F}, std::move(x)), Tensor::from({N, horizon}, std::move(y)), day};
}

DataSplits make_windows(const PanelDataset& ds, std::size_t lookback, std::size_t horizon,
                        const SplitSpec& split) {
  if (lookback == 0 || horizon == 0) throw ParameterError("make_windows: lookback and horizon must be positive");
  if (ds.n_days() < lookback + horizon) {
    throw ParameterError("make_windows: " + std::to_string(ds.n_days()) + " days cannot fit lookback " +
                         std::to_string(lookback) + " plus horizon " + std::to_string(horizon));
  }
  DataSplits out;
  out.block_days = split.resolve(ds.n_days());
  const std::size_t val_start = out.block_days[0];
  const std::size_t test_start = val_start + out.block_days[1];
  const auto block_of = [&](std::size_t day) { return day < val_start ? 0 : day < test_start ? 1 : 2; };
  for (std::size_t d = lookback - 1; d + horizon < ds.n_days(); ++d) {
    const int block = block_of(d + 1);
    if (block != block_of(d + horizon)) continue;  // targets straddle a boundary
    auto& dst = block == 0 ? out.train : block == 1 ? out.val : out.test;
    dst.push_back(window_at(ds, d, lookback, horizon));
  }
  return out;
}

DataSplits prepare_splits(const PanelDataset& ds, std::size_t lookback, std::size_t horizon,
                          const SplitSpec& split) {
  const auto blocks = split.resolve(ds.n_days());
  if (blocks[0] == 0) throw ParameterError("prepare_splits: empty training block");
  return make_windows(apply_scaler(ds, fit_scaler(ds, blocks[0])), lookback, horizon, split);
}

// --- CSV -------------------------------------------------------------------

namespace {

struct Row {
  std::vector<double> features;
  double target = 0.0;
};

double parse_cell(const std::string& cell, std::size_t line_no, const std::string& column) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size()) {
    throw ConfigError("line " + std::to_string(line_no) + ": column '" + column + "' is not a number: '" +
                      cell + "'");
  }
  if (!std::isfinite(v)) {
    throw ConfigError("line " + std::to_string(line_no) + ": column '" + column + "' is not finite");
  }
  return v;
}

}  // namespace

IngestResult ingest_csv_text(const std::string& text, const IngestOptions& options) {
  const std::vector<std::string> lines = split(text, '\n');
  if (lines.empty() || trim(lines[0]).empty()) throw ConfigError("csv: missing header");
  std::vector<std::string> header = split(trim(lines[0]), ',');
  for (auto& h : header) h = trim(h);
  if (header.size() < 4 || header[0] != "date" || header[1] != "node_id" || header.back() != "target") {
    throw ConfigError("csv: header must be date,node_id,<features...>,target");
  }
  const std::size_t F = header.size() - 3;

  std::map<std::string, std::map<std::string, Row>> by_node;  // node -> date -> row
  std::set<std::string> all_dates;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty()) continue;
    const std::size_t line_no = i + 1;
    std::vector<std::string> cells = split(line, ',');
    if (cells.size() != header.size()) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " columns, got " + std::to_string(cells.size()));
    }
    for (auto& c : cells) c = trim(c);
    if (cells[0].empty() || cells[1].empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": empty date or node_id");
    }
    Row row;
    for (std::size_t f = 0; f < F; ++f) row.features.push_back(parse_cell(cells[2 + f], line_no, header[2 + f]));
    row.target = parse_cell(cells.back(), line_no, "target");
    auto& slot = by_node[cells[1]];
    if (!slot.emplace(cells[0], std::move(row)).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate row for node '" + cells[1] +
                        "' on " + cells[0]);
    }
    all_dates.insert(cells[0]);
  }
  if (all_dates.empty()) throw ConfigError("csv: no data rows");

  IngestResult result;
  const std::vector<std::string> dates(all_dates.begin(), all_dates.end());
  std::vector<std::string> nodes;
  for (const auto& [node, rows] : by_node) {
    const double missing = 1.0 - static_cast<double>(rows.size()) / static_cast<double>(dates.size());
    if (missing > options.max_missing_fraction) {
      result.warnings.push_back("excluded node '" + node + "': missing " +
                                std::to_string(dates.size() - rows.size()) + " of " +
                                std::to_string(dates.size()) + " dates");
    } else {
      nodes.push_back(node);
    }
  }
  if (nodes.empty()) throw ParameterError("csv: every node exceeds the missing-data limit");

  // Forward-fill short gaps; a date any node cannot fill is dropped.
  std::vector<std::vector<const Row*>> grid(dates.size(), std::vector<const Row*>(nodes.size(), nullptr));
  std::vector<std::vector<bool>> filled(dates.size(), std::vector<bool>(nodes.size(), false));
  std::vector<bool> usable(dates.size(), true);
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const auto& rows = by_node[nodes[n]];
    const Row* last = nullptr;
    std::size_t last_day = 0;
    for (std::size_t d = 0; d < dates.size(); ++d) {
      const auto it = rows.find(dates[d]);
      if (it != rows.end()) {
        last = &it->second;
        last_day = d;
        grid[d][n] = last;
      } else if (last != nullptr && d - last_day <= options.max_fill_days) {
        grid[d][n] = last;
        filled[d][n] = true;
      } else {
        usable[d] = false;
      }
    }
  }
  PanelDataset& p = result.panel;
  p.node_ids = nodes;
  p.feature_names.assign(header.begin() + 2, header.end() - 1);
  std::size_t dropped = 0;
  for (std::size_t d = 0; d < dates.size(); ++d) {
    if (!usable[d]) {
      ++dropped;
      continue;
    }
    p.dates.push_back(dates[d]);
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      p.features.insert(p.features.end(), grid[d][n]->features.begin(), grid[d][n]->features.end());
      p.targets.push_back(filled[d][n] ? 0.0 : grid[d][n]->target);  // no trade on a filled day
    }
  }
  if (dropped > 0) {
    result.warnings.push_back("dropped " + std::to_string(dropped) + " dates with unfillable gaps");
  }
  if (p.dates.empty()) throw ParameterError("csv: no date is complete across the kept nodes");
  p.validate();
  return result;
}

IngestResult ingest_csv(const std::filesystem::path& path, const IngestOptions& options) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ingest_csv_text(buffer.str(), options);
}

std::string panel_to_csv(const PanelDataset& ds) {
  ds.validate();
  std::string out = "date,node_id";
  for (const auto& f : ds.feature_names) out += "," + f;
  out += ",target\n";
  for (std::size_t d = 0; d < ds.n_days(); ++d)
    for (std::size_t n = 0; n < ds.n_nodes(); ++n) {
      out += ds.dates[d] + "," + ds.node_ids[n];
      for (std::size_t f = 0; f < ds.n_features(); ++f) out += "," + format_double(ds.feature(d, n, f));
      out += "," + format_double(ds.target(d, n)) + "\n";
    }
  return out;
}

// --- synthetic market ------------------------------------------------------

void SynthConfig::validate() const {
  if (n_nodes == 0 || n_days == 0 || n_features == 0) throw ParameterError("synth: sizes must be positive");
  if (n_clusters == 0 || n_clusters > n_nodes) throw ParameterError("synth: need 1 <= n_clusters <= n_nodes");
  if (!(std::abs(factor_ar) < 1.0)) throw ParameterError("synth: factor_ar must be in (-1, 1)");
  if (!(factor_vol > 0.0)) throw ParameterError("synth: factor_vol must be positive");
  if (!(idio_vol >= 0.0 && proxy_noise >= 0.0)) throw ParameterError("synth: noise levels must be >= 0");
  if (!(loading_lo <= loading_hi)) throw ParameterError("synth: loading_lo > loading_hi");
  if (burn_in < 10) throw ParameterError("synth: burn_in must cover the 10-day rolling window");
}

std::string SynthConfig::to_text() const {
  std::string out;
  out += "n_nodes=" + std::to_string(n_nodes) + "\n";
  out += "n_days=" + std::to_string(n_days) + "\n";
  out += "n_features=" + std::to_string(n_features) + "\n";
  out += "n_clusters=" + std::to_string(n_clusters) + "\n";
  out += "seed=" + std::to_string(seed) + "\n";
  out += "factor_ar=" + format_double(factor_ar) + "\n";
  out += "factor_vol=" + format_double(factor_vol) + "\n";
  out += "idio_vol=" + format_double(idio_vol) + "\n";
  out += "proxy_noise=" + format_double(proxy_noise) + "\n";
  out += "loading_lo=" + format_double(loading_lo) + "\n";
  out += "loading_hi=" + format_double(loading_hi) + "\n";
  out += "burn_in=" + std::to_string(burn_in) + "\n";
  return out;
}

SynthConfig SynthConfig::from_text(const std::string& text) {
  SynthConfig c;
  for (const auto& [key, value] : parse_kv_lines(text)) {
    if (key == "n_nodes") c.n_nodes = parse_size(value, key);
    else if (key == "n_days") c.n_days = parse_size(value, key);
    else if (key == "n_features") c.n_features = parse_size(value, key);
    else if (key == "n_clusters") c.n_clusters = parse_size(value, key);
    else if (key == "seed") c.seed = parse_u64(value, key);
    else if (key == "factor_ar") c.factor_ar = parse_double(value, key);
    else if (key == "factor_vol") c.factor_vol = parse_double(value, key);
    else if (key == "idio_vol") c.idio_vol = parse_double(value, key);
    else if (key == "proxy_noise") c.proxy_noise = parse_double(value, key);
    else if (key == "loading_lo") c.loading_lo = parse_double(value, key);
    else if (key == "loading_hi") c.loading_hi = parse_double(value, key);
    else if (key == "burn_in") c.burn_in = parse_size(value, key);
    else throw ConfigError("unknown synth key '" + key + "'");
  }
  return c;
}

std::vector<std::string> synth_feature_names(std::size_t n_features) {
  static const std::vector<std::string> base = {"ret_0",  "ret_1", "ret_2", "mean_5",
                                                "mean_10", "vol_5", "vol_10", "proxy_0"};
  std::vector<std::string> out;
  for (std::size_t f = 0; f < n_features; ++f) {
    out.push_back(f < base.size() ? base[f] : "proxy_" + std::to_string(f - base.size() + 1));
  }
  return out;
}

namespace {

std::string padded(char prefix, std::size_t value, int width) {
  std::string digits_text = std::to_string(value);
  if (static_cast<int>(digits_text.size()) < width) digits_text.insert(0, width - digits_text.size(), '0');
  return prefix + digits_text;
}

int digits(std::size_t n) {
  int d = 1;
  while (n >= 10) {
    n /= 10;
    ++d;
  }
  return d;
}

double window_mean(const std::vector<double>& r, std::size_t end, std::size_t len) {
  double s = 0.0;
  for (std::size_t k = end + 1 - len; k <= end; ++k) s += r[k];
  return s / static_cast<double>(len);
}

double window_std(const std::vector<double>& r, std::size_t end, std::size_t len) {
  const double m = window_mean(r, end, len);
  double s = 0.0;
  for (std::size_t k = end + 1 - len; k <= end; ++k) s += (r[k] - m) * (r[k] - m);
  return std::sqrt(s / static_cast<double>(len));
}

}  // namespace

SynthMarket synth_market(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t N = cfg.n_nodes, K = cfg.n_clusters, F = cfg.n_features;
  const std::size_t total = cfg.burn_in + cfg.n_days;
  Rng rng(cfg.seed);

  SynthMarket m;
  m.cluster_of.resize(N);
  for (std::size_t n = 0; n < N; ++n) m.cluster_of[n] = n * K / N;
  m.loadings.resize(N);
  for (double& b : m.loadings) b = rng.uniform(cfg.loading_lo, cfg.loading_hi);

  const double stationary = cfg.factor_vol / std::sqrt(1.0 - cfg.factor_ar * cfg.factor_ar);
  std::vector<double> factor(total * K);
  std::vector<std::vector<double>> returns(N, std::vector<double>(total));
  for (std::size_t c = 0; c < K; ++c) factor[c] = stationary * rng.normal();
  for (std::size_t d = 0; d < total; ++d) {
    if (d > 0) {
      for (std::size_t c = 0; c < K; ++c) {
        factor[d * K + c] = cfg.factor_ar * factor[(d - 1) * K + c] + cfg.factor_vol * rng.normal();
      }
    }
    for (std::size_t n = 0; n < N; ++n) {
      returns[n][d] = m.loadings[n] * factor[d * K + m.cluster_of[n]] + cfg.idio_vol * rng.normal();
    }
  }

  PanelDataset& p = m.panel;
  const int node_width = std::max(3, digits(N - 1));
  const int day_width = std::max(5, digits(cfg.n_days - 1));
  for (std::size_t n = 0; n < N; ++n) p.node_ids.push_back(padded('N', n, node_width));
  for (std::size_t d = 0; d < cfg.n_days; ++d) p.dates.push_back(padded('D', d, day_width));
  p.feature_names = synth_feature_names(F);
  p.features.resize(cfg.n_days * N * F);
  p.targets.resize(cfg.n_days * N);
  m.factors.assign(factor.begin() + static_cast<std::ptrdiff_t>(cfg.burn_in * K), factor.end());

  for (std::size_t d = 0; d < cfg.n_days; ++d) {
    const std::size_t day = cfg.burn_in + d;
    for (std::size_t n = 0; n < N; ++n) {
      const std::vector<double>& r = returns[n];
      const double f_now = factor[day * K + m.cluster_of[n]];
      double* out = &p.features[(d * N + n) * F];
      for (std::size_t f = 0; f < F; ++f) {
        switch (f) {
          case 0: out[f] = r[day]; break;
          case 1: out[f] = r[day - 1]; break;
          case 2: out[f] = r[day - 2]; break;
          case 3: out[f] = window_mean(r, day, 5); break;
          case 4: out[f] = window_mean(r, day, 10); break;
          case 5: out[f] = window_std(r, day, 5); break;
          case 6: out[f] = window_std(r, day, 10); break;
          default: out[f] = f_now + cfg.proxy_noise * stationary * rng.normal(); break;
        }
      }
      p.targets[d * N + n] = r[day];
    }
  }
  return m;
}

}  // namespace stif
