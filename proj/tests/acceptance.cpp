// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stiformer/cli.h"
#include "stiformer/gradcheck.h"
#include "stiformer/kv.h"
#include "stiformer/loss.h"
#include "stiformer/metrics.h"
#include "stiformer/model.h"
#include "stiformer/random.h"
#include "stiformer/train.h"

namespace stif::acceptance {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(values));
}

ModelConfig tiny_config(std::size_t n_nodes) {
  ModelConfig c;
  c.n_nodes = n_nodes;
  c.lookback = 6;
  c.n_features = 3;
  c.horizon = 1;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.ffd_hidden = 8;
  return c;
}

// --- 1: gradient check -------------------------------------------------------

void gradient_check() {
  const auto start = Clock::now();
  const ModelConfig c = tiny_config(4);
  ModelParams p = ModelParams::init(c, 1);
  Rng rng(101);
  const Tensor x = uniform_tensor({4, 6, 3}, rng, -1, 1);
  const Tensor y = uniform_tensor({4, 1}, rng, -0.05, 0.05);
  std::vector<Tensor> params = p.tensors();
  const GradCheckReport r = grad_check_params([&] { return total_loss(forward(x, p, c).y_hat, y); }, params);
  const double elapsed = seconds_since(start);
  verdict(1, r.max_rel_err < 1e-4 && elapsed < 60.0 && r.param_count == p.parameter_count(),
          "max relative error " + fmt(r.max_rel_err) + " over " + std::to_string(r.param_count) +
              " parameters in " + fmt(elapsed, 3) + " s");
}

// --- 2: neighbour sparsity ---------------------------------------------------

void attention_sparsity() {
  const ModelConfig c = tiny_config(20);
  const ModelParams p = ModelParams::init(c, 2);
  Rng rng(102);
  std::size_t rows = 0, bad = 0;
  double worst_sum = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const ForwardResult r = forward(uniform_tensor({20, 6, 3}, rng, -2, 2), p, c);
    for (const LayerAttention& layer : r.attention)
      for (const Tensor* a : {&layer.feature_path.weights, &layer.temporal_path.weights})
        for (std::size_t i = 0; i < 20; ++i) {
          int nonzero = 0;
          double total = 0.0;
          for (std::size_t j = 0; j < 20; ++j) {
            nonzero += a->at({i, j}) != 0.0;
            total += a->at({i, j});
          }
          ++rows;
          worst_sum = std::max(worst_sum, std::abs(total - 1.0));
          if (nonzero != 2 || std::abs(total - 1.0) > 1e-6) ++bad;
        }
  }
  verdict(2, bad == 0,
          std::to_string(rows - bad) + "/" + std::to_string(rows) +
              " rows with exactly 2 nonzeros summing to 1 (worst |sum-1| " + fmt(worst_sum) + ")");
}

// --- 3: decoder bound --------------------------------------------------------

void decoder_bound() {
  ModelConfig c = tiny_config(4);
  c.horizon = 2;
  ModelParams p = ModelParams::init(c, 3);
  Rng rng(103);
  // Random biases so the mean term takes large values as well.
  for (Tensor* t : {&p.decoder.mean_b, &p.decoder.dev_b})
    for (double& v : t->mutable_data()) v = rng.uniform(-50, 50);
  const double lo = std::exp(-1.0), hi = std::exp(1.0);
  std::size_t checked = 0, term_violations = 0, gap_violations = 0;
  for (int trial = 0; trial < 10000 / 8; ++trial) {
    const DecoderOutput out = decode(uniform_tensor({4, 3, 8}, rng, -100, 100), p.decoder);
    for (std::size_t i = 0; i < out.y_hat.numel(); ++i) {
      ++checked;
      const double term = std::exp(std::tanh(out.dev.data()[i]));
      if (!(term >= lo && term <= hi)) ++term_violations;
      // y_hat - mean recovers the term up to rounding of the sum.
      const double scale = std::max(std::abs(out.y_hat.data()[i]), std::abs(out.mean.data()[i]));
      const double tol = 4 * std::numeric_limits<double>::epsilon() * scale;
      const double gap = out.y_hat.data()[i] - out.mean.data()[i];
      if (!(gap >= lo - tol && gap <= hi + tol)) ++gap_violations;
    }
  }
  verdict(3, term_violations == 0 && gap_violations == 0 && checked >= 10000,
          std::to_string(checked) + " predictions, " + std::to_string(term_violations) +
              " deviation-term violations, " + std::to_string(gap_violations) + " y_hat-mean violations");
}

// --- 4: permutation equivariance ---------------------------------------------

void permutation_equivariance() {
  const ModelConfig c = tiny_config(6);
  const ModelParams p = ModelParams::init(c, 4);
  Rng rng(104);
  const Tensor x = uniform_tensor({6, 6, 3}, rng, -1, 1);
  const ForwardResult base = forward(x, p, c);
  const std::size_t block = 6 * 3;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<double> px;
    for (std::size_t i : perm) px.insert(px.end(), x.data().begin() + i * block, x.data().begin() + (i + 1) * block);
    const Tensor moved_x = Tensor::from({6, 6, 3}, px);
    const ForwardResult moved = forward(moved_x, p, c);
    for (std::size_t i = 0; i < 6; ++i) worst = std::max(worst, std::abs(moved.y_hat.at({i, 0}) - base.y_hat.at({perm[i], 0})));
  }
  verdict(4, worst < 1e-9, "max |f(Px) - Pf(x)| = " + fmt(worst) + " over 20 permutations");
}

// --- 5: loss oracle ----------------------------------------------------------

double loss_oracle(const std::vector<double>& yh, const std::vector<double>& y, std::size_t n, std::size_t t,
                   double lambda_m, double eps) {
  double mse = 0.0;
  for (std::size_t i = 0; i < yh.size(); ++i) mse += (yh[i] - y[i]) * (yh[i] - y[i]);
  mse /= static_cast<double>(yh.size());
  double corr = 0.0;
  for (std::size_t s = 0; s < t; ++s) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ma += yh[i * t + s];
      mb += y[i * t + s];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = yh[i * t + s] - ma, b = y[i * t + s] - mb;
      cov += a * b;
      va += a * a;
      vb += b * b;
    }
    if (va / n >= eps && vb / n >= eps) corr += cov / std::sqrt(va * vb);
  }
  return lambda_m * mse - corr / static_cast<double>(t);
}

void loss_checks() {
  Rng rng(105);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(20), t = 1 + rng.below(4);
    const Tensor yh = uniform_tensor({n, t}, rng, -1, 1);
    const Tensor y = uniform_tensor({n, t}, rng, -0.1, 0.1);
    const LossConfig cfg{rng.uniform(0, 1), 1e-8};
    const double got = total_loss(yh, y, cfg).item();
    const std::vector<double> a(yh.data().begin(), yh.data().end()), b(y.data().begin(), y.data().end());
    worst = std::max(worst, std::abs(got - loss_oracle(a, b, n, t, cfg.lambda_m, cfg.eps)));
  }
  const Tensor y = uniform_tensor({30, 2}, rng, -0.1, 0.1);
  const double self = pearson_loss(y, y).item();
  verdict(5, worst < 1e-12 && std::abs(self + 1.0) < 1e-12,
          "max |loss - oracle| " + fmt(worst) + " over 100 cases; pearson_loss(y, y) = " + fmt(self, 15));
}

// --- 6: metrics --------------------------------------------------------------

void metric_checks() {
  const BacktestReport r = aggregate_metrics({0.1, -0.2, 0.05});
  const bool hand = std::abs(r.pnl - (-0.05)) < 1e-12 && std::abs(r.mdd - 0.2) < 1e-12 && std::abs(r.winr - 2.0 / 3.0) < 1e-12 && r.pl_ratio && std::abs(*r.pl_ratio - 0.375) < 1e-12;

  Rng rng(106);
  std::vector<DailyScores> days;
  for (std::size_t d = 0; d < 50; ++d) {
    DailyScores s;
    s.day_index = d;
    for (int i = 0; i < 20; ++i) s.realized_returns.push_back(rng.normal() * 0.02);
    s.scores = s.realized_returns;
    days.push_back(std::move(s));
  }
  const double ic = information_coefficient(days);
  verdict(6, hand && std::abs(ic - 1.0) < 1e-12,
          "PNL " + fmt(r.pnl) + ", MDD " + fmt(r.mdd) + ", WinR " + fmt(r.winr) + ", PL " +
              (r.pl_ratio ? fmt(*r.pl_ratio) : "n/a") + "; oracle IC " + fmt(ic, 15));
}

// --- 7-9: trained models -----------------------------------------------------

struct Market {
  SynthMarket market;
  DataSplits splits;
  ModelConfig model;
};

Market default_market(std::uint64_t seed) {
  RunConfig rc("desk");
  rc.set("generator", "seed", std::to_string(seed));
  rc.resolve();
  Market m{synth_market(rc.generator), {}, rc.model};
  m.model.n_nodes = m.market.panel.n_nodes();
  m.model.n_features = m.market.panel.n_features();
  m.splits = prepare_splits(m.market.panel, m.model.lookback, m.model.horizon, rc.split);
  return m;
}

TrainConfig default_train(std::uint64_t seed) {
  RunConfig rc("desk");
  rc.set("train", "seed", std::to_string(seed));
  rc.resolve();
  return rc.train;
}

void learning_smoke(const Market& m, const TrainResult& full, double train_seconds) {
  const Evaluation ev = evaluate(full.params, m.model, m.splits.test, default_train(0).top_frac);
  // Seeded Gaussian scores over the same test days.
  Rng rng(107);
  std::vector<DailyScores> random_days;
  for (const WindowSample& s : m.splits.test) {
    DailyScores d;
    d.day_index = s.day_index;
    for (std::size_t n = 0; n < s.y.size(0); ++n) {
      d.scores.push_back(rng.normal());
      d.realized_returns.push_back(s.y.at({n, 0}));
    }
    random_days.push_back(std::move(d));
  }
  const double random_ic = information_coefficient(random_days);
  verdict(7,
          ev.report.ic >= 0.05 && std::abs(random_ic) < 0.03 && full.log.epochs.size() <= 30 &&
              train_seconds <= 15 * 60,
          "test IC " + fmt(ev.report.ic) + ", random-score IC " + fmt(random_ic) + ", " +
              std::to_string(full.log.epochs.size()) + " epochs (best " + std::to_string(full.log.best_epoch) +
              ") in " + fmt(train_seconds, 3) + " s");
}

void ablation_ordering(const TrainResult& seed0_full, const Market& seed0_market) {
  const std::vector<std::pair<std::string, std::string>> variants = {
      {"DPA-STIFormer", "none"},
      {"w/o DPgate", "no_dpgate"},
      {"w/o temporal path", "no_temporal_path"},
      {"w/o feature path", "no_feature_path"}};
  int seeds_ok = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Market m = seed == 0 ? seed0_market : default_market(seed);
    const TrainConfig tc = default_train(seed);
    std::vector<AblationRow> rows;
    for (const auto& [label, flags] : variants) {
      ModelConfig mc = m.model;
      mc.ablation = Ablation::parse(flags);
      const TrainResult r = (seed == 0 && flags == "none") ? seed0_full : train_model(m.splits, mc, tc);
      rows.push_back({label, mc, evaluate(r.params, mc, m.splits.test, tc.top_frac).report, r.log.best_epoch});
    }
    std::cout << "ablation table, seed " << seed << "\n" << format_ablation_table(rows);
    const bool ok = std::all_of(rows.begin() + 1, rows.end(),
                                [&](const AblationRow& r) { return rows[0].report.ic >= r.report.ic; });
    seeds_ok += ok;
    detail += (seed ? "; " : "") + std::string("seed ") + std::to_string(seed) + (ok ? " holds" : " violated");
  }
  verdict(8, seeds_ok >= 2, "full model IC >= every single-path ablation on " + std::to_string(seeds_ok) +
                                "/3 seeds (" + detail + ")");
}

void cluster_structure(const Market& m, const TrainResult& full) {
  std::vector<Tensor> feature_maps, temporal_maps, both;
  {
    NoGradGuard no_grad;
    for (const WindowSample& s : m.splits.test) {
      const ForwardResult r = forward(s.x, full.params, m.model);
      feature_maps.push_back(r.attention.back().feature_path.weights);
      temporal_maps.push_back(r.attention.back().temporal_path.weights);
    }
  }
  both = feature_maps;
  both.insert(both.end(), temporal_maps.begin(), temporal_maps.end());
  const ClusterRecovery all = cluster_recovery(both, m.market.cluster_of);
  const ClusterRecovery feat = cluster_recovery(feature_maps, m.market.cluster_of);
  const ClusterRecovery temp = cluster_recovery(temporal_maps, m.market.cluster_of);
  verdict(9, all.ratio >= 1.5,
          "intra/inter attention ratio " + fmt(all.ratio) + " (intra " + fmt(all.intra) + ", inter " +
              fmt(all.inter) + "; feature path " + fmt(feat.ratio) + ", temporal path " + fmt(temp.ratio) + ")");
}

// --- 10: reproducible pipeline -----------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

bool run_pipeline(const fs::path& dir) {
  std::ostringstream out, err;
  const auto cli = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "stiformer");
    return run_cli(args, out, err) == kExitOk;
  };
  const bool ok = cli({"gen-data", "--out", (dir / "data").string()}) &&
                  cli({"train", "--config", (dir / "data/manifest.cfg").string(), "--set", "train.epochs=3",
                       "--out", (dir / "run").string(), "--quiet"}) &&
                  cli({"backtest", "--run", (dir / "run").string()});
  if (!ok) std::cerr << err.str();
  return ok;
}

void reproducible_pipeline() {
  const fs::path root = fs::temp_directory_path() / "stif_acceptance_repro";
  fs::remove_all(root);
  const bool ran = run_pipeline(root / "a") && run_pipeline(root / "b");
  std::size_t same = 0;
  const std::vector<std::string> artifacts = {"data/panel.csv", "run/model.ckpt", "run/runlog.jsonl",
                                              "run/report.txt", "run/daily_returns.csv"};
  for (const std::string& f : artifacts) {
    const std::string a = slurp(root / "a" / f);
    same += !a.empty() && a == slurp(root / "b" / f);
  }
  fs::remove_all(root);
  verdict(10, ran && same == artifacts.size(),
          std::to_string(same) + "/" + std::to_string(artifacts.size()) +
              " artifacts byte-identical across two gen-data/train/backtest runs");
}

}  // namespace
}  // namespace stif::acceptance

int main() {
  using namespace stif::acceptance;
  try {
    gradient_check();
    attention_sparsity();
    decoder_bound();
    permutation_equivariance();
    loss_checks();
    metric_checks();

    const Market m = default_market(0);
    const auto start = Clock::now();
    const stif::TrainResult full = stif::train_model(m.splits, m.model, default_train(0));
    const double train_seconds = seconds_since(start);
    learning_smoke(m, full, train_seconds);
    ablation_ordering(full, m);
    cluster_structure(m, full);
    reproducible_pipeline();
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
