#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stiformer/checkpoint.h"
#include "stiformer/cli.h"
#include "stiformer/kv.h"
#include "stiformer/metrics.h"

namespace stif {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "stiformer");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  for (std::string& l : split(text, '\n'))
    if (!l.empty()) out.push_back(std::move(l));
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("stif_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Small panel plus a short training run shared by several tests.
  void gen_and_train(const std::string& extra_ablation = "") {
    ASSERT_EQ(run({"gen-data", "--out", path("data"), "--nodes", "10", "--days", "120", "--clusters", "2"}).code,
              kExitOk);
    std::vector<std::string> args = {"train",          "--config", path("data/manifest.cfg"),
                                     "--set",          "train.epochs=2",
                                     "--set",          "model.lookback=10",
                                     "--out",          path("run"),
                                     "--quiet"};
    if (!extra_ablation.empty()) {
      args.push_back("--ablation");
      args.push_back(extra_ablation);
    }
    const Outcome o = run(args);
    ASSERT_EQ(o.code, kExitOk) << o.err;
  }

  fs::path dir_;
};

TEST_F(CliTest, GenDataWritesPanelOfRequestedShape) {
  const Outcome o = run({"gen-data", "--out", path("d"), "--nodes", "10", "--days", "100"});
  ASSERT_EQ(o.code, kExitOk) << o.err;
  const auto rows = lines_of(slurp(dir_ / "d/panel.csv"));
  ASSERT_EQ(rows.size(), 1001u);
  const std::size_t n_features = 8;
  for (const std::string& row : rows) EXPECT_EQ(split(row, ',').size(), 2 + n_features + 1);
  EXPECT_EQ(rows[0].substr(0, 13), "date,node_id,");
  EXPECT_EQ(lines_of(slurp(dir_ / "d/clusters.csv")).size(), 11u);
}

TEST_F(CliTest, GenDataIsByteIdenticalOnRerun) {
  ASSERT_EQ(run({"gen-data", "--out", path("a"), "--nodes", "6", "--days", "60", "--seed", "3"}).code, kExitOk);
  ASSERT_EQ(run({"gen-data", "--out", path("b"), "--nodes", "6", "--days", "60", "--seed", "3"}).code, kExitOk);
  EXPECT_EQ(slurp(dir_ / "a/panel.csv"), slurp(dir_ / "b/panel.csv"));
  ASSERT_EQ(run({"gen-data", "--out", path("c"), "--nodes", "6", "--days", "60", "--seed", "4"}).code, kExitOk);
  EXPECT_NE(slurp(dir_ / "a/panel.csv"), slurp(dir_ / "c/panel.csv"));
}

TEST_F(CliTest, ManifestFeedsTrainingAndRecordsAblation) {
  gen_and_train("no_dpgate");
  for (const char* f : {"model.ckpt", "runlog.jsonl", "config.cfg"}) EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  EXPECT_NE(slurp(dir_ / "run/runlog.jsonl").find("ablation=no_dpgate"), std::string::npos);
  const LoadedModel m = load_checkpoint(dir_ / "run/model.ckpt");
  EXPECT_EQ(m.config.n_nodes, 10u);
  EXPECT_EQ(m.config.n_features, 8u);
  EXPECT_EQ(m.config.lookback, 10u);
  EXPECT_TRUE(m.config.ablation.no_dpgate);
}

TEST_F(CliTest, BacktestReportHasEveryKeyAndOneRowPerTestDay) {
  gen_and_train();
  const Outcome o = run({"backtest", "--run", path("run")});
  ASSERT_EQ(o.code, kExitOk) << o.err;
  const auto report = lines_of(slurp(dir_ / "run/report.txt"));
  ASSERT_EQ(report.size(), report_keys().size());
  for (std::size_t i = 0; i < report.size(); ++i) EXPECT_EQ(report[i].substr(0, report[i].find('=')), report_keys()[i]);
  EXPECT_EQ(o.out, slurp(dir_ / "run/report.txt"));

  // 120 days, default 0.6/0.2/0.2 split: 24 test days, each one a full sample.
  const auto daily = lines_of(slurp(dir_ / "run/daily_returns.csv"));
  EXPECT_EQ(daily.front(), "day,return");
  EXPECT_EQ(daily.size(), 1u + 24u);
}

TEST_F(CliTest, BacktestAcceptsExplicitConfigAndCheckpoint) {
  gen_and_train();
  const Outcome o = run({"backtest", "--config", path("run/config.cfg"), "--checkpoint", path("run/model.ckpt"),
                         "--out", path("bt")});
  ASSERT_EQ(o.code, kExitOk) << o.err;
  EXPECT_EQ(slurp(dir_ / "bt/report.txt"), o.out);
}

TEST_F(CliTest, ExportAttentionWritesRowStochasticSparseMatrices) {
  gen_and_train();
  const Outcome o = run({"export-attention", "--run", path("run"), "--out", path("att")});
  ASSERT_EQ(o.code, kExitOk) << o.err;
  for (const char* stem : {"layer0_feature", "layer0_temporal"}) {
    const auto rows = lines_of(slurp(dir_ / "att" / (std::string(stem) + ".csv")));
    ASSERT_EQ(rows.size(), 10u) << stem;
    for (const std::string& row : rows) {
      const auto cells = split(row, ',');
      ASSERT_EQ(cells.size(), 10u);
      double total = 0.0;
      int nonzero = 0;
      for (const std::string& c : cells) {
        const double v = parse_double(c, "cell");
        EXPECT_GE(v, 0.0);
        total += v;
        nonzero += v > 0.0;
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
      EXPECT_EQ(nonzero, 1);  // ceil(0.1 * 10)
    }
    const std::string svg = slurp(dir_ / "att" / (std::string(stem) + ".svg"));
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
  }
  const std::string recovery = slurp(dir_ / "att/cluster_recovery.txt");
  EXPECT_NE(recovery.find("both.ratio="), std::string::npos);
}

TEST_F(CliTest, ExportAttentionSkipsAblatedPath) {
  gen_and_train("no_temporal_path");
  ASSERT_EQ(run({"export-attention", "--run", path("run"), "--out", path("att")}).code, kExitOk);
  EXPECT_TRUE(fs::exists(dir_ / "att/layer0_feature.csv"));
  EXPECT_FALSE(fs::exists(dir_ / "att/layer0_temporal.csv"));
}

TEST_F(CliTest, InvalidAblationCombinationIsConfigError) {
  ASSERT_EQ(run({"gen-data", "--out", path("data"), "--nodes", "6", "--days", "60"}).code, kExitOk);
  const Outcome o = run({"train", "--config", path("data/manifest.cfg"), "--out", path("run"), "--ablation",
                         "no_temporal_path,no_feature_path"});
  EXPECT_EQ(o.code, kExitConfigError);
  EXPECT_FALSE(o.err.empty());
}

TEST_F(CliTest, UnknownInputsAreConfigErrors) {
  EXPECT_EQ(run({"train", "--out", path("r"), "--bogus"}).code, kExitConfigError);
  EXPECT_EQ(run({"frobnicate"}).code, kExitConfigError);
  EXPECT_EQ(run({}).code, kExitConfigError);
  EXPECT_EQ(run({"train", "--out", path("r"), "--set", "model.colour=blue"}).code, kExitConfigError);
  EXPECT_EQ(run({"train", "--out", path("r"), "--set", "nosection=1"}).code, kExitConfigError);
  EXPECT_EQ(run({"train", "--out", path("r"), "--profile", "huge"}).code, kExitConfigError);
  EXPECT_EQ(run({"train", "--out", path("r"), "--set", "train.learning_rate=-1"}).code, kExitConfigError);

  std::ofstream(path("bad.cfg")) << "[model]\nd_model=16\n[nonsense]\nx=1\n";
  const Outcome o = run({"train", "--config", path("bad.cfg"), "--out", path("r")});
  EXPECT_EQ(o.code, kExitConfigError);
  EXPECT_NE(o.err.find("line 3"), std::string::npos) << o.err;
}

TEST_F(CliTest, DeclaredShapeMustMatchData) {
  ASSERT_EQ(run({"gen-data", "--out", path("data"), "--nodes", "6", "--days", "60"}).code, kExitOk);
  const Outcome o =
      run({"train", "--config", path("data/manifest.cfg"), "--set", "model.n_nodes=7", "--out", path("run")});
  EXPECT_EQ(o.code, kExitConfigError);
  EXPECT_NE(o.err.find("n_nodes"), std::string::npos);
}

TEST_F(CliTest, MissingCheckpointIsFailure) {
  ASSERT_EQ(run({"gen-data", "--out", path("data"), "--nodes", "6", "--days", "60"}).code, kExitOk);
  const Outcome o = run({"backtest", "--config", path("data/manifest.cfg"), "--checkpoint", path("none.ckpt"),
                         "--out", path("bt")});
  EXPECT_EQ(o.code, kExitFailure);
}

TEST_F(CliTest, HelpSucceedsForEverySubcommand) {
  EXPECT_EQ(run({"--help"}).code, kExitOk);
  for (const char* sub : {"gen-data", "train", "backtest", "ablate", "sweep", "export-attention"}) {
    const Outcome o = run({sub, "--help"});
    EXPECT_EQ(o.code, kExitOk) << sub;
    EXPECT_NE(o.out.find("--"), std::string::npos) << sub;
  }
}

TEST(RunConfigTest, LaterSourcesWin) {
  RunConfig rc("paper");
  EXPECT_EQ(rc.model.d_model, 256u);
  EXPECT_EQ(rc.model.n_layers, 3u);
  rc.load_text("[model]\nd_model=64\n[train]\nepochs=7\n[backtest]\ntop_frac=0.2\n");
  rc.set_override("model.d_model=32");
  rc.resolve();
  EXPECT_EQ(rc.model.d_model, 32u);
  EXPECT_EQ(rc.model.n_heads, 4u);
  EXPECT_EQ(rc.train.epochs, 7u);
  EXPECT_DOUBLE_EQ(rc.train.top_frac, 0.2);
}

TEST(RunConfigTest, ResolvedTextRoundTrips) {
  RunConfig rc;
  rc.load_text("[data]\nsplit_mode=counts\nsplit_train=300\nsplit_val=100\nsplit_test=200\n[generator]\nseed=9\n");
  rc.resolve();
  RunConfig again;
  again.load_text(rc.to_text());
  again.resolve();
  EXPECT_EQ(again.to_text(), rc.to_text());
  EXPECT_TRUE(again.split.counts);
  EXPECT_EQ(again.generator.seed, 9u);
}

TEST(RunConfigTest, RelativeDataPathsResolveAgainstConfigDirectory) {
  RunConfig rc;
  rc.load_text("[data]\nsource=csv\npath=panel.csv\n", "/some/where");
  rc.resolve();
  EXPECT_EQ(rc.csv_path, fs::path("/some/where/panel.csv"));
}

TEST(ClusterRecoveryTest, MatchesHandComputedMeans) {
  // Clusters {0,1} and {2}; diagonal is ignored.
  const Tensor m = Tensor::from({3, 3}, {0.5, 0.4, 0.1,  //
                                         0.3, 0.3, 0.4,  //
                                         0.2, 0.2, 0.6});
  const ClusterRecovery r = cluster_recovery({m}, {0, 0, 1});
  EXPECT_DOUBLE_EQ(r.intra, (0.4 + 0.3) / 2);
  EXPECT_DOUBLE_EQ(r.inter, (0.1 + 0.4 + 0.2 + 0.2) / 4);
  EXPECT_DOUBLE_EQ(r.ratio, r.intra / r.inter);
  EXPECT_THROW(cluster_recovery({m}, {0, 0, 0}), ParameterError);
  EXPECT_THROW(cluster_recovery({m}, {0, 1}), ShapeError);
}

TEST(HeatmapTest, OneCellPerPositiveEntry) {
  const Tensor m = Tensor::from({2, 2}, {1.0, 0.0, 0.25, 0.75});
  const std::string svg = heatmap_svg(m, "a<b");
  std::size_t cells = 0;
  for (std::size_t p = svg.find("fill=\"rgb("); p != std::string::npos; p = svg.find("fill=\"rgb(", p + 1)) ++cells;
  EXPECT_EQ(cells, 3u);
  EXPECT_NE(svg.find("a&lt;b"), std::string::npos);
}

}  // namespace
}  // namespace stif
