#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stiformer/tensor.h"

namespace stif {

/// Dense day x node x feature panel. targets(d, n) is the simple return of
/// node n realized on day d (previous close to this close).
struct PanelDataset {
  std::vector<std::string> dates;  // strictly increasing
  std::vector<std::string> node_ids;
  std::vector<std::string> feature_names;
  std::vector<double> features;  // [day][node][feature]
  std::vector<double> targets;   // [day][node]

  std::size_t n_days() const { return dates.size(); }
  std::size_t n_nodes() const { return node_ids.size(); }
  std::size_t n_features() const { return feature_names.size(); }

  double feature(std::size_t day, std::size_t node, std::size_t f) const {
    return features[(day * n_nodes() + node) * n_features() + f];
  }
  double target(std::size_t day, std::size_t node) const { return targets[day * n_nodes() + node]; }

  void validate() const;
};

/// One sample per decision day d: x covers days [d-T+1, d], y the returns of
/// days d+1 .. d+t (column s compounds days d+1 .. d+1+s).
struct WindowSample {
  Tensor x;  // N x T x F
  Tensor y;  // N x t
  std::size_t day_index = 0;
};

/// Contiguous train/val/test blocks of the day axis, as counts or fractions.
struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  bool counts = false;

  static SplitSpec from_counts(std::size_t train, std::size_t val, std::size_t test);
  static SplitSpec from_fractions(double train, double val, double test);

  /// Day counts per block; fractions round val and test, train takes the rest.
  std::array<std::size_t, 3> resolve(std::size_t n_days) const;
};

struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> stdev;  // constant features get 1
};

/// Per-feature population mean/std over days [0, n_fit_days).
FeatureScaler fit_scaler(const PanelDataset& ds, std::size_t n_fit_days);
PanelDataset apply_scaler(const PanelDataset& ds, const FeatureScaler& scaler);

struct DataSplits {
  std::vector<WindowSample> train;
  std::vector<WindowSample> val;
  std::vector<WindowSample> test;
  std::array<std::size_t, 3> block_days{};
};

/// A sample belongs to the block containing all of its target days; its
/// lookback may reach into earlier blocks.
DataSplits make_windows(const PanelDataset& ds, std::size_t lookback, std::size_t horizon,
                        const SplitSpec& split);

/// z-scores features with statistics from the training block, then windows.
DataSplits prepare_splits(const PanelDataset& ds, std::size_t lookback, std::size_t horizon,
                          const SplitSpec& split);

WindowSample window_at(const PanelDataset& ds, std::size_t day, std::size_t lookback,
                       std::size_t horizon);

// --- CSV -------------------------------------------------------------------

struct IngestOptions {
  std::size_t max_fill_days = 3;      // longest gap bridged by forward fill
  double max_missing_fraction = 0.1;  // nodes missing more dates are dropped
};

struct IngestResult {
  PanelDataset panel;
  std::vector<std::string> warnings;
};

/// Reads "date,node_id,<features...>,target" rows (header required).
IngestResult ingest_csv(const std::filesystem::path& path, const IngestOptions& options = {});
IngestResult ingest_csv_text(const std::string& text, const IngestOptions& options = {});

/// Inverse of ingest_csv: one row per (date, node), dates outer.
std::string panel_to_csv(const PanelDataset& ds);

// --- synthetic market ------------------------------------------------------

struct SynthConfig {
  std::size_t n_nodes = 50;
  std::size_t n_days = 600;
  std::size_t n_features = 8;
  std::size_t n_clusters = 5;
  std::uint64_t seed = 0;
  double factor_ar = 0.5;         // AR(1) coefficient of each cluster factor
  double factor_vol = 0.01;       // innovation std of the factors
  double idio_vol = 0.01;         // idiosyncratic return noise std
  double proxy_noise = 2.0;       // proxy noise std, in units of stationary factor std
  double loading_lo = 0.5;
  double loading_hi = 1.5;
  std::size_t burn_in = 50;

  void validate() const;
  std::string to_text() const;
  static SynthConfig from_text(const std::string& text);
};

struct SynthMarket {
  PanelDataset panel;
  std::vector<std::size_t> cluster_of;  // per node
  std::vector<double> loadings;         // per node
  std::vector<double> factors;          // [day][cluster]
};

/// Cluster factor model: r[d][n] = loading[n] * f[d][cluster(n)] + noise.
/// Features: recent returns, rolling means/vols and noisy factor proxies.
SynthMarket synth_market(const SynthConfig& config);

std::vector<std::string> synth_feature_names(std::size_t n_features);

}  // namespace stif
