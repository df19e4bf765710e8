#include "stiformer/train.h"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "stiformer/kv.h"
#include "stiformer/ops.h"
#include "stiformer/random.h"

namespace stif {

void TrainConfig::validate() const {
  if (epochs == 0) throw ParameterError("train.epochs must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ParameterError("train.learning_rate must be finite and non-negative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ParameterError("train.beta1 and train.beta2 must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ParameterError("train.adam_eps must be positive");
  if (accumulate == 0) throw ParameterError("train.accumulate must be >= 1");
  if (!(top_frac > 0.0 && top_frac <= 1.0)) throw ParameterError("train.top_frac must be in (0, 1]");
  loss.validate();
}

std::string TrainConfig::to_text() const {
  std::string out;
  out += "epochs=" + std::to_string(epochs) + "\n";
  out += "learning_rate=" + format_double(learning_rate) + "\n";
  out += "beta1=" + format_double(beta1) + "\n";
  out += "beta2=" + format_double(beta2) + "\n";
  out += "adam_eps=" + format_double(adam_eps) + "\n";
  out += "accumulate=" + std::to_string(accumulate) + "\n";
  out += "seed=" + std::to_string(seed) + "\n";
  out += "patience=" + std::to_string(patience) + "\n";
  out += "top_frac=" + format_double(top_frac) + "\n";
  out += "lambda_m=" + format_double(loss.lambda_m) + "\n";
  out += "loss_eps=" + format_double(loss.eps) + "\n";
  return out;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  for (const auto& [key, value] : parse_kv_lines(text)) {
    if (key == "epochs") c.epochs = parse_size(value, key);
    else if (key == "learning_rate") c.learning_rate = parse_double(value, key);
    else if (key == "beta1") c.beta1 = parse_double(value, key);
    else if (key == "beta2") c.beta2 = parse_double(value, key);
    else if (key == "adam_eps") c.adam_eps = parse_double(value, key);
    else if (key == "accumulate") c.accumulate = parse_size(value, key);
    else if (key == "seed") c.seed = parse_u64(value, key);
    else if (key == "patience") c.patience = parse_size(value, key);
    else if (key == "top_frac") c.top_frac = parse_double(value, key);
    else if (key == "lambda_m") c.loss.lambda_m = parse_double(value, key);
    else if (key == "loss_eps") c.loss.eps = parse_double(value, key);
    else throw ConfigError("unknown train key '" + key + "'");
  }
  return c;
}

std::string RunLog::to_jsonl() const {
  using nlohmann::ordered_json;
  std::string out;
  ordered_json header;
  header["type"] = "config";
  header["model"] = model_config;
  header["train"] = train_config;
  out += header.dump() + "\n";
  for (const EpochRecord& e : epochs) {
    ordered_json line;
    line["type"] = "epoch";
    line["epoch"] = e.epoch;
    line["train_loss"] = e.train_loss;
    line["val_loss"] = e.val_loss;
    line["val_ic"] = e.val_ic;
    out += line.dump() + "\n";
  }
  ordered_json summary;
  summary["type"] = "summary";
  summary["best_epoch"] = best_epoch;
  summary["best_val_ic"] = best_val_ic;
  summary["stopped_early"] = stopped_early;
  out += summary.dump() + "\n";
  return out;
}

// --- optimizer -------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, const TrainConfig& config)
    : params_(std::move(params)),
      lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_eps) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto g = params_[i].grad();
    if (g.empty()) continue;  // never reached by the loss
    auto w = params_[i].mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

// --- training --------------------------------------------------------------

std::vector<DailyScores> predict_days(const ModelParams& params, const ModelConfig& config,
                                      const std::vector<WindowSample>& samples) {
  NoGradGuard no_grad;
  std::vector<DailyScores> days;
  days.reserve(samples.size());
  for (const WindowSample& s : samples) {
    const Tensor y_hat = forward(s.x, params, config).y_hat;
    const std::size_t n = y_hat.size(0), steps = y_hat.size(1);
    DailyScores d;
    d.day_index = s.day_index;
    for (std::size_t i = 0; i < n; ++i) {
      d.scores.push_back(y_hat.data()[i * steps]);
      d.realized_returns.push_back(s.y.data()[i * steps]);
    }
    days.push_back(std::move(d));
  }
  return days;
}

Evaluation evaluate(const ModelParams& params, const ModelConfig& config,
                    const std::vector<WindowSample>& samples, double top_frac) {
  const std::vector<DailyScores> days = predict_days(params, config, samples);
  Evaluation ev;
  ev.report = backtest(days, top_frac);
  for (const DailyScores& d : days) ev.days.push_back(d.day_index);
  return ev;
}

double mean_loss(const ModelParams& params, const ModelConfig& config,
                 const std::vector<WindowSample>& samples, const LossConfig& loss) {
  if (samples.empty()) throw ParameterError("mean_loss: no samples");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const WindowSample& s : samples) total += total_loss(forward(s.x, params, config).y_hat, s.y, loss).item();
  return total / static_cast<double>(samples.size());
}

TrainResult train_model(const DataSplits& splits, const ModelConfig& model_config,
                        const TrainConfig& train_config, const EpochCallback& on_epoch) {
  model_config.validate();
  train_config.validate();
  if (splits.train.empty()) throw ParameterError("train_model: no training samples");
  if (splits.val.empty()) throw ParameterError("train_model: no validation samples");
  const auto started = std::chrono::steady_clock::now();

  ModelParams params = ModelParams::init(model_config, train_config.seed);
  Adam optimizer(params.tensors(), train_config);
  Rng order_rng(train_config.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(splits.train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result{params.clone(), {}};
  RunLog& log = result.log;
  log.model_config = model_config.to_text();
  log.train_config = train_config.to_text();
  double best_ic = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  const double loss_scale = 1.0 / static_cast<double>(train_config.accumulate);

  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t pending = 0;
    params.zero_grad();
    for (std::size_t idx : order) {
      const WindowSample& s = splits.train[idx];
      const Tensor loss = total_loss(forward(s.x, params, model_config).y_hat, s.y, train_config.loss);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                           ", day " + std::to_string(s.day_index));
      }
      loss_sum += value;
      scale(loss, loss_scale).backward();
      if (++pending == train_config.accumulate) {
        optimizer.step();
        params.zero_grad();
        pending = 0;
      }
    }
    if (pending > 0) {
      optimizer.step();
      params.zero_grad();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_loss = mean_loss(params, model_config, splits.val, train_config.loss);
    rec.val_ic = information_coefficient(predict_days(params, model_config, splits.val));
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_ic > best_ic) {
      best_ic = rec.val_ic;
      log.best_epoch = epoch;
      log.best_val_ic = rec.val_ic;
      result.params = params.clone();
      since_best = 0;
    } else if (train_config.patience > 0 && ++since_best >= train_config.patience) {
      log.stopped_early = epoch < train_config.epochs;
      break;
    }
  }
  log.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// --- experiment harness ----------------------------------------------------

void run_parallel(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

namespace {

struct AblationVariant {
  const char* label;
  const char* flag;
};

constexpr AblationVariant kAblationVariants[] = {
    {"DPA-STIFormer", "none"},
    {"w/o DPgate", "no_dpgate"},
    {"w/o temporal path", "no_temporal_path"},
    {"w/o feature path", "no_feature_path"},
    {"w/o Inverted Temporal Block", "no_itblock"},
    {"w/o importance weight", "no_importance"},
};

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : "n/a"; }

std::string fixed(double v) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << v;
  return out.str();
}

std::string fixed(const std::optional<double>& v) { return v ? fixed(*v) : "n/a"; }

}  // namespace

std::vector<AblationRow> ablation_suite(const DataSplits& splits, const ModelConfig& base,
                                        const TrainConfig& train_config, std::size_t workers) {
  if (base.ablation.any()) throw ParameterError("ablation_suite: base config must not ablate anything");
  std::vector<AblationRow> rows;
  for (const AblationVariant& v : kAblationVariants) {
    AblationRow row;
    row.label = v.label;
    row.config = base;
    row.config.ablation = Ablation::parse(v.flag);
    row.config.validate();
    rows.push_back(std::move(row));
  }
  run_parallel(rows.size(), workers, [&](std::size_t i) {
    const TrainResult r = train_model(splits, rows[i].config, train_config);
    rows[i].report = evaluate(r.params, rows[i].config, splits.test, train_config.top_frac).report;
    rows[i].best_epoch = r.log.best_epoch;
  });
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "model,IC,A_RET,SHARPE\n";
  for (const AblationRow& r : rows) {
    out << r.label << ',' << fixed(r.report.ic) << ',' << fixed(r.report.ar) << ',' << fixed(r.report.sharpe)
        << '\n';
  }
  return out.str();
}

std::vector<SweepRow> sweep(const DataSplits& splits, const ModelConfig& base,
                            const TrainConfig& train_config, const SweepGrid& grid,
                            std::size_t workers) {
  std::vector<SweepRow> rows;
  std::vector<ModelConfig> configs;
  for (std::size_t layers : grid.n_layers)
    for (std::size_t heads : grid.n_heads)
      for (std::size_t width : grid.d_model) {
        ModelConfig c = base;
        c.n_layers = layers;
        c.n_heads = heads;
        c.d_model = width;
        c.validate();
        configs.push_back(c);
        rows.push_back({layers, heads, width, {}, 0});
      }
  if (rows.empty()) throw ParameterError("sweep: empty grid");
  run_parallel(rows.size(), workers, [&](std::size_t i) {
    const TrainResult r = train_model(splits, configs[i], train_config);
    rows[i].report = evaluate(r.params, configs[i], splits.test, train_config.top_frac).report;
    rows[i].best_epoch = r.log.best_epoch;
  });
  return rows;
}

std::string format_sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "n_layers,n_heads,d_model,best_epoch,IC,A_RET,SHARPE\n";
  for (const SweepRow& r : rows) {
    out << r.n_layers << ',' << r.n_heads << ',' << r.d_model << ',' << r.best_epoch << ','
        << opt_text(r.report.ic) << ',' << opt_text(r.report.ar) << ',' << opt_text(r.report.sharpe) << '\n';
  }
  return out.str();
}

}  // namespace stif
