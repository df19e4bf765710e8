#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stiformer/data.h"
#include "stiformer/loss.h"
#include "stiformer/metrics.h"
#include "stiformer/model.h"

namespace stif {

struct TrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t accumulate = 1;  // day-samples per optimizer step
  std::uint64_t seed = 0;
  std::size_t patience = 10;   // epochs without validation-IC gain before stopping
  double top_frac = 0.1;       // portfolio share used by evaluation
  LossConfig loss;

  void validate() const;
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_ic = 0.0;
};

struct RunLog {
  std::string model_config;  // ModelConfig::to_text()
  std::string train_config;  // TrainConfig::to_text()
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_ic = 0.0;
  bool stopped_early = false;
  double wall_clock_seconds = 0.0;

  /// One JSON object per line: a header, one line per epoch, a summary.
  /// Wall-clock time is left out so that reruns compare byte-for-byte.
  std::string to_jsonl() const;
};

struct TrainResult {
  ModelParams params;  // best validation-IC epoch
  RunLog log;
};

/// Adam over a fixed parameter list; missing gradients count as zero.
class Adam {
 public:
  Adam(std::vector<Tensor> params, const TrainConfig& config);
  void step();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains on splits.train, selecting the epoch with the best IC on
/// splits.val. Raises NumericError naming the epoch and day if the loss
/// becomes non-finite.
TrainResult train_model(const DataSplits& splits, const ModelConfig& model_config,
                        const TrainConfig& train_config, const EpochCallback& on_epoch = {});

/// Scores are the first-step predictions, realized returns the first-step targets.
std::vector<DailyScores> predict_days(const ModelParams& params, const ModelConfig& config,
                                      const std::vector<WindowSample>& samples);

struct Evaluation {
  BacktestReport report;
  std::vector<std::size_t> days;
};

Evaluation evaluate(const ModelParams& params, const ModelConfig& config,
                    const std::vector<WindowSample>& samples, double top_frac);

/// Mean total loss over samples, without recording gradients.
double mean_loss(const ModelParams& params, const ModelConfig& config,
                 const std::vector<WindowSample>& samples, const LossConfig& loss);

// --- experiment harness ----------------------------------------------------

struct AblationRow {
  std::string label;
  ModelConfig config;
  BacktestReport report;  // on splits.test
  std::size_t best_epoch = 0;
};

/// The full model plus one row per single ablation flag, same data and seed.
std::vector<AblationRow> ablation_suite(const DataSplits& splits, const ModelConfig& base,
                                        const TrainConfig& train_config, std::size_t workers = 1);

std::string format_ablation_table(const std::vector<AblationRow>& rows);

struct SweepGrid {
  std::vector<std::size_t> n_layers = {1, 2, 3};
  std::vector<std::size_t> n_heads = {2, 4};
  std::vector<std::size_t> d_model = {32, 64};
};

struct SweepRow {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t d_model = 0;
  BacktestReport report;
  std::size_t best_epoch = 0;
};

/// One training run per grid point; rows come back in grid order whatever
/// the worker count.
std::vector<SweepRow> sweep(const DataSplits& splits, const ModelConfig& base,
                            const TrainConfig& train_config, const SweepGrid& grid,
                            std::size_t workers = 1);

std::string format_sweep_table(const std::vector<SweepRow>& rows);

/// Runs jobs 0..count-1 on up to `workers` threads; the first exception is
/// rethrown after all threads finish.
void run_parallel(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job);

}  // namespace stif
