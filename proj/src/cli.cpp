#include "stiformer/cli.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "stiformer/checkpoint.h"
#include "stiformer/kv.h"

namespace stif {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// RunConfig

namespace {

const std::vector<std::string> kSections = {"data", "generator", "model", "train", "backtest"};

// Per-section defaults of each profile.
std::vector<std::pair<std::string, std::string>> profile_entries(const std::string& profile) {
  if (profile == "desk") {
    // The small model tolerates a larger step; chosen on validation IC.
    return {{"model.d_model", "16"}, {"model.n_heads", "2"}, {"model.n_layers", "1"}, {"model.ffd_hidden", "32"},
            {"train.learning_rate", "0.003"}};
  }
  if (profile == "paper") {
    return {{"model.d_model", "256"}, {"model.n_heads", "4"}, {"model.n_layers", "3"}, {"model.ffd_hidden", "256"}};
  }
  throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
}

std::string join_lines(const std::vector<std::pair<std::string, std::string>>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

}  // namespace

RunConfig::RunConfig(const std::string& profile) {
  for (const auto& [key, value] : profile_entries(profile)) set_override(key + "=" + value);
  resolve();
}

void RunConfig::load_file(const fs::path& path) {
  load_text(read_file(path), path.parent_path());
}

void RunConfig::load_text(const std::string& text, const fs::path& base_dir) {
  const fs::path saved = base_dir_;
  base_dir_ = base_dir;
  std::string section;
  std::size_t line_no = 0;
  for (const std::string& raw : stif::split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (std::find(kSections.begin(), kSections.end(), section) == kSections.end()) {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section + "]");
      }
      continue;
    }
    if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    }
    set(section, trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)));
  }
  base_dir_ = saved;
}

void RunConfig::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const std::string section = trim(std::string_view(assignment).substr(0, dot));
  if (std::find(kSections.begin(), kSections.end(), section) == kSections.end()) {
    throw ConfigError("override '" + assignment + "': unknown section '" + section + "'");
  }
  set(section, trim(std::string_view(assignment).substr(dot + 1, eq - dot - 1)),
      trim(std::string_view(assignment).substr(eq + 1)));
}

void RunConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  std::string stored = value;
  if (section == "data" && (key == "path" || key == "clusters") && !value.empty()) {
    const fs::path p(value);
    stored = fs::absolute(p.is_relative() ? base_dir_ / p : p).lexically_normal().string();
  }
  entries_[section].emplace_back(key, stored);
}

void RunConfig::resolve() {
  // [data]
  std::string split_mode = "fractions";
  double parts[3] = {split.train, split.val, split.test};
  for (const auto& [key, value] : entries_["data"]) {
    if (key == "source") {
      if (value != "synthetic" && value != "csv") throw ConfigError("data.source must be synthetic or csv");
      source = value;
    } else if (key == "path") {
      csv_path = value;
    } else if (key == "clusters") {
      clusters_path = value;
    } else if (key == "split_mode") {
      if (value != "fractions" && value != "counts") throw ConfigError("data.split_mode must be fractions or counts");
      split_mode = value;
    } else if (key == "split_train") {
      parts[0] = parse_double(value, key);
    } else if (key == "split_val") {
      parts[1] = parse_double(value, key);
    } else if (key == "split_test") {
      parts[2] = parse_double(value, key);
    } else if (key == "max_fill_days") {
      ingest.max_fill_days = parse_size(value, key);
    } else if (key == "max_missing_fraction") {
      ingest.max_missing_fraction = parse_double(value, key);
    } else {
      throw ConfigError("unknown data key '" + key + "'");
    }
  }
  split = {parts[0], parts[1], parts[2], split_mode == "counts"};
  if (source == "csv" && csv_path.empty()) throw ConfigError("data.source=csv needs data.path");

  generator = SynthConfig::from_text(join_lines(entries_["generator"]));
  generator.validate();
  model = ModelConfig::from_text(join_lines(entries_["model"]));
  auto train_lines = entries_["train"];
  for (const auto& [key, value] : entries_["backtest"]) {
    if (key != "top_frac") throw ConfigError("unknown backtest key '" + key + "'");
    train_lines.emplace_back(key, value);
  }
  train = TrainConfig::from_text(join_lines(train_lines));
  train.validate();
}

std::string RunConfig::to_text() const {
  std::string out = "[data]\nsource=" + source + "\n";
  if (!csv_path.empty()) out += "path=" + csv_path.string() + "\n";
  if (!clusters_path.empty()) out += "clusters=" + clusters_path.string() + "\n";
  out += std::string("split_mode=") + (split.counts ? "counts" : "fractions") + "\n";
  out += "split_train=" + format_double(split.train) + "\n";
  out += "split_val=" + format_double(split.val) + "\n";
  out += "split_test=" + format_double(split.test) + "\n";
  out += "max_fill_days=" + std::to_string(ingest.max_fill_days) + "\n";
  out += "max_missing_fraction=" + format_double(ingest.max_missing_fraction) + "\n";
  out += "\n[generator]\n" + generator.to_text();
  out += "\n[model]\n" + model.to_text();
  out += "\n[train]\n" + train.to_text();
  return out;
}

PanelDataset RunConfig::load_panel() const {
  if (source == "synthetic") return synth_market(generator).panel;
  IngestResult r = ingest_csv(csv_path, ingest);
  for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";
  return std::move(r.panel);
}

std::vector<std::size_t> RunConfig::load_clusters(const PanelDataset& panel) const {
  if (clusters_path.empty()) {
    if (source != "synthetic") return {};
    return synth_market(generator).cluster_of;
  }
  std::map<std::string, std::size_t> by_node;
  const std::vector<std::string> lines = stif::split(read_file(clusters_path), '\n');
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty()) continue;
    const auto cells = stif::split(line, ',');
    if (cells.size() != 2) throw ConfigError(clusters_path.string() + " line " + std::to_string(i + 1) + ": expected node_id,cluster");
    by_node[trim(cells[0])] = parse_size(trim(cells[1]), "cluster");
  }
  std::vector<std::size_t> out;
  for (const std::string& node : panel.node_ids) {
    const auto it = by_node.find(node);
    if (it == by_node.end()) throw ConfigError("clusters file has no entry for node '" + node + "'");
    out.push_back(it->second);
  }
  return out;
}

DataSplits RunConfig::load_splits(const PanelDataset& panel) {
  for (const auto& [key, value] : entries_["model"]) {
    if (key == "n_nodes" && parse_size(value, key) != panel.n_nodes()) {
      throw ConfigError("model.n_nodes=" + value + " but the data has " + std::to_string(panel.n_nodes()) + " nodes");
    }
    if (key == "n_features" && parse_size(value, key) != panel.n_features()) {
      throw ConfigError("model.n_features=" + value + " but the data has " + std::to_string(panel.n_features()) +
                        " features");
    }
  }
  model.n_nodes = panel.n_nodes();
  model.n_features = panel.n_features();
  model.validate();
  return prepare_splits(panel, model.lookback, model.horizon, split);
}

// ---------------------------------------------------------------------------
// Attention export helpers

std::string heatmap_svg(const Tensor& matrix, const std::string& title) {
  if (matrix.dim() != 2) throw ShapeError("heatmap_svg: expected a matrix");
  const std::size_t rows = matrix.size(0), cols = matrix.size(1);
  const int cell = static_cast<int>(std::max<std::size_t>(4, 600 / std::max(rows, cols)));
  const int margin = 30;
  const int width = static_cast<int>(cols) * cell + 2 * margin;
  const int height = static_cast<int>(rows) * cell + 2 * margin;
  double peak = 0.0;
  for (double v : matrix.data()) peak = std::max(peak, v);
  if (peak <= 0.0) peak = 1.0;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::string safe_title;
  for (char c : title) {
    if (c == '<') safe_title += "&lt;";
    else if (c == '>') safe_title += "&gt;";
    else if (c == '&') safe_title += "&amp;";
    else safe_title += c;
  }
  svg << "<text x=\"" << margin << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << safe_title
      << "</text>\n";
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = matrix.data()[i * cols + j];
      if (v <= 0.0) continue;
      // White to dark blue.
      const double t = std::clamp(v / peak, 0.0, 1.0);
      const int r = static_cast<int>(std::lround(255 * (1 - t)));
      const int g = static_cast<int>(std::lround(255 * (1 - 0.8 * t)));
      svg << "<rect x=\"" << margin + static_cast<int>(j) * cell << "\" y=\"" << margin + static_cast<int>(i) * cell
          << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << r << ',' << g << ",255)\"/>\n";
    }
  svg << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << cols * cell << "\" height=\""
      << rows * cell << "\" fill=\"none\" stroke=\"black\"/>\n";
  svg << "</svg>\n";
  return svg.str();
}

ClusterRecovery cluster_recovery(const std::vector<Tensor>& maps, const std::vector<std::size_t>& cluster_of) {
  if (maps.empty()) throw ParameterError("cluster_recovery: no attention maps");
  const std::size_t n = cluster_of.size();
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (const Tensor& m : maps) {
    if (m.shape() != Shape{n, n}) throw ShapeError("cluster_recovery: map shape does not match cluster list");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double a = m.data()[i * n + j];
        if (cluster_of[i] == cluster_of[j]) {
          intra += a;
          ++n_intra;
        } else {
          inter += a;
          ++n_inter;
        }
      }
  }
  if (n_intra == 0 || n_inter == 0) throw ParameterError("cluster_recovery: need both intra- and inter-cluster pairs");
  ClusterRecovery r;
  r.intra = intra / static_cast<double>(n_intra);
  r.inter = inter / static_cast<double>(n_inter);
  r.ratio = r.inter > 0.0 ? r.intra / r.inter : std::numeric_limits<double>::infinity();
  return r;
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

std::string matrix_csv(const Tensor& m) {
  const std::size_t rows = m.size(0), cols = m.size(1);
  std::string out;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j > 0) out += ',';
      out += format_double(m.data()[i * cols + j]);
    }
    out += '\n';
  }
  return out;
}

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string profile = "desk";

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Sectioned key=value config file");
    cmd->add_option("--set", overrides, "Override as section.key=value (repeatable)");
    cmd->add_option("--profile", profile, "Model size defaults: desk or paper")->capture_default_str();
  }

  RunConfig build() const {
    RunConfig rc(profile);
    if (!config_path.empty()) rc.load_file(config_path);
    for (const std::string& o : overrides) rc.set_override(o);
    rc.resolve();
    return rc;
  }
};

// Run directory layout written by `train`.
constexpr const char* kRunConfig = "config.cfg";
constexpr const char* kCheckpoint = "model.ckpt";
constexpr const char* kRunLog = "runlog.jsonl";

struct TrainedRun {
  RunConfig config;
  LoadedModel model;
  DataSplits splits;
  PanelDataset panel;
};

TrainedRun open_run(const std::string& run_dir, const std::string& config_path, const std::string& ckpt_path) {
  fs::path cfg = config_path, ckpt = ckpt_path;
  if (!run_dir.empty()) {
    if (cfg.empty()) cfg = fs::path(run_dir) / kRunConfig;
    if (ckpt.empty()) ckpt = fs::path(run_dir) / kCheckpoint;
  }
  if (cfg.empty() || ckpt.empty()) throw ConfigError("need --run or both --config and --checkpoint");
  TrainedRun run{RunConfig("desk"), load_checkpoint(ckpt), {}, {}};
  run.config.load_file(cfg);
  run.config.resolve();
  run.panel = run.config.load_panel();
  run.splits = run.config.load_splits(run.panel);
  if (run.model.config.n_nodes != run.config.model.n_nodes ||
      run.model.config.n_features != run.config.model.n_features ||
      run.model.config.lookback != run.config.model.lookback ||
      run.model.config.horizon != run.config.model.horizon) {
    throw ConfigError("checkpoint shape does not match the configured data");
  }
  return run;
}

int cmd_gen_data(const ConfigArgs& cfg_args, const std::string& out_dir, const std::optional<std::size_t>& nodes,
                 const std::optional<std::size_t>& days, const std::optional<std::size_t>& features,
                 const std::optional<std::size_t>& clusters, const std::optional<std::uint64_t>& seed,
                 std::ostream& out) {
  RunConfig rc = cfg_args.build();
  SynthConfig sc = rc.generator;
  if (nodes) sc.n_nodes = *nodes;
  if (days) sc.n_days = *days;
  if (features) sc.n_features = *features;
  if (clusters) sc.n_clusters = *clusters;
  if (seed) sc.seed = *seed;
  const SynthMarket market = synth_market(sc);
  ensure_dir(out_dir);
  write_file(fs::path(out_dir) / "panel.csv", panel_to_csv(market.panel));
  std::string cl = "node_id,cluster\n";
  for (std::size_t n = 0; n < market.panel.n_nodes(); ++n) {
    cl += market.panel.node_ids[n] + "," + std::to_string(market.cluster_of[n]) + "\n";
  }
  write_file(fs::path(out_dir) / "clusters.csv", cl);
  const std::string manifest =
      "# Synthetic panel; usable directly as `train --config`.\n"
      "[data]\nsource=csv\npath=panel.csv\nclusters=clusters.csv\n\n[generator]\n" + sc.to_text();
  write_file(fs::path(out_dir) / "manifest.cfg", manifest);
  out << "wrote " << market.panel.n_days() * market.panel.n_nodes() << " rows for " << market.panel.n_nodes()
      << " nodes x " << market.panel.n_days() << " days to " << (fs::path(out_dir) / "panel.csv").string() << "\n";
  return kExitOk;
}

int cmd_train(const ConfigArgs& cfg_args, const std::string& out_dir, const std::string& ablation, bool quiet,
              std::ostream& out, std::ostream& err) {
  RunConfig rc = cfg_args.build();
  if (!ablation.empty()) {
    rc.set("model", "ablation", ablation);
    rc.resolve();
  }
  const PanelDataset panel = rc.load_panel();
  const DataSplits splits = rc.load_splits(panel);
  ensure_dir(out_dir);
  const TrainResult result = train_model(splits, rc.model, rc.train, [&](const EpochRecord& e) {
    if (!quiet) {
      err << "epoch " << e.epoch << "  train_loss " << format_double(e.train_loss) << "  val_loss "
          << format_double(e.val_loss) << "  val_ic " << format_double(e.val_ic) << "\n";
    }
  });
  save_checkpoint(fs::path(out_dir) / kCheckpoint, rc.model, result.params);
  write_file(fs::path(out_dir) / kRunLog, result.log.to_jsonl());
  write_file(fs::path(out_dir) / kRunConfig, rc.to_text());
  out << "best epoch " << result.log.best_epoch << " (val IC " << format_double(result.log.best_val_ic) << ") in "
      << result.log.epochs.size() << " epochs; checkpoint " << (fs::path(out_dir) / kCheckpoint).string() << "\n";
  return kExitOk;
}

int cmd_backtest(const std::string& run_dir, const std::string& config_path, const std::string& ckpt_path,
                 std::string out_dir, std::optional<double> top_frac, std::ostream& out) {
  TrainedRun run = open_run(run_dir, config_path, ckpt_path);
  if (out_dir.empty()) out_dir = run_dir;
  if (out_dir.empty()) throw ConfigError("backtest needs --out when --run is not given");
  ensure_dir(out_dir);
  const Evaluation ev =
      evaluate(run.model.params, run.model.config, run.splits.test, top_frac.value_or(run.config.train.top_frac));
  write_file(fs::path(out_dir) / "report.txt", ev.report.to_text());
  write_file(fs::path(out_dir) / "daily_returns.csv", ev.report.daily_csv(ev.days));
  out << ev.report.to_text();
  return kExitOk;
}

int cmd_ablate(const ConfigArgs& cfg_args, const std::string& out_dir, std::size_t workers, std::ostream& out) {
  RunConfig rc = cfg_args.build();
  const PanelDataset panel = rc.load_panel();
  const DataSplits splits = rc.load_splits(panel);
  const auto rows = ablation_suite(splits, rc.model, rc.train, workers);
  const std::string table = format_ablation_table(rows);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_file(fs::path(out_dir) / "ablation.csv", table);
  }
  out << table;
  return kExitOk;
}

int cmd_sweep(const ConfigArgs& cfg_args, const std::string& out_dir, const SweepGrid& grid, std::size_t workers,
              std::ostream& out) {
  RunConfig rc = cfg_args.build();
  const PanelDataset panel = rc.load_panel();
  const DataSplits splits = rc.load_splits(panel);
  const std::string table = format_sweep_table(sweep(splits, rc.model, rc.train, grid, workers));
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_file(fs::path(out_dir) / "sweep.csv", table);
  }
  out << table;
  return kExitOk;
}

int cmd_export_attention(const std::string& run_dir, const std::string& config_path, const std::string& ckpt_path,
                         const std::string& out_dir, std::optional<std::size_t> day, std::ostream& out) {
  TrainedRun run = open_run(run_dir, config_path, ckpt_path);
  const auto& test = run.splits.test;
  if (test.empty()) throw ConfigError("export-attention: the test split is empty");
  std::size_t pick = test.size() - 1;
  if (day) {
    const auto it = std::find_if(test.begin(), test.end(), [&](const WindowSample& s) { return s.day_index == *day; });
    if (it == test.end()) throw ConfigError("export-attention: day " + std::to_string(*day) + " is not a test day");
    pick = static_cast<std::size_t>(it - test.begin());
  }
  ensure_dir(out_dir);
  std::vector<Tensor> feature_maps, temporal_maps;
  ForwardResult chosen;
  {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < test.size(); ++i) {
      ForwardResult r = forward(test[i].x, run.model.params, run.model.config);
      const LayerAttention& last = r.attention.back();
      if (last.feature_path.weights.defined()) feature_maps.push_back(last.feature_path.weights);
      if (last.temporal_path.weights.defined()) temporal_maps.push_back(last.temporal_path.weights);
      if (i == pick) chosen = std::move(r);
    }
  }
  const std::string date = run.panel.dates[test[pick].day_index];
  for (std::size_t l = 0; l < chosen.attention.size(); ++l) {
    const LayerAttention& la = chosen.attention[l];
    for (const auto& [name, path] : {std::pair<std::string, const PathAttention*>{"feature", &la.feature_path},
                                     std::pair<std::string, const PathAttention*>{"temporal", &la.temporal_path}}) {
      if (!path->weights.defined()) continue;  // path ablated
      const std::string stem = "layer" + std::to_string(l) + "_" + name;
      write_file(fs::path(out_dir) / (stem + ".csv"), matrix_csv(path->weights));
      write_file(fs::path(out_dir) / (stem + ".svg"),
                 heatmap_svg(path->weights, stem + " attention, " + date));
    }
  }
  out << "exported attention for " << date << " (" << chosen.attention.size() << " layers) to " << out_dir << "\n";
  const std::vector<std::size_t> clusters = run.config.load_clusters(run.panel);
  if (!clusters.empty()) {
    std::vector<Tensor> both = feature_maps;
    both.insert(both.end(), temporal_maps.begin(), temporal_maps.end());
    std::string text = "days=" + std::to_string(test.size()) + "\n";
    for (const auto& [name, maps] : {std::pair<std::string, const std::vector<Tensor>*>{"feature", &feature_maps},
                                     std::pair<std::string, const std::vector<Tensor>*>{"temporal", &temporal_maps},
                                     std::pair<std::string, const std::vector<Tensor>*>{"both", &both}}) {
      if (maps->empty()) continue;
      const ClusterRecovery cr = cluster_recovery(*maps, clusters);
      text += name + ".intra=" + format_double(cr.intra) + "\n" + name + ".inter=" + format_double(cr.inter) + "\n" +
              name + ".ratio=" + format_double(cr.ratio) + "\n";
    }
    write_file(fs::path(out_dir) / "cluster_recovery.txt", text);
    out << text;
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DPA-STIFormer: spatial-temporal inverted transformer for cross-sectional return prediction"};
  app.name(args.empty() ? "stiformer" : args[0]);
  app.require_subcommand(1);

  // gen-data
  ConfigArgs gen_cfg;
  std::string gen_out;
  std::optional<std::size_t> gen_nodes, gen_days, gen_features, gen_clusters;
  std::optional<std::uint64_t> gen_seed;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic clustered market panel");
  gen_cfg.add_to(gen);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--nodes", gen_nodes, "Number of nodes (stocks)");
  gen->add_option("--days", gen_days, "Number of trading days");
  gen->add_option("--features", gen_features, "Features per node and day");
  gen->add_option("--clusters", gen_clusters, "Number of latent factor clusters");
  gen->add_option("--seed", gen_seed, "Generator seed");

  // train
  ConfigArgs train_cfg;
  std::string train_out, train_ablation;
  bool train_quiet = false;
  CLI::App* train = app.add_subcommand("train", "Train a model and write checkpoint, run log and resolved config");
  train_cfg.add_to(train);
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_option("--ablation", train_ablation,
                    "Comma list of no_dpgate,no_temporal_path,no_feature_path,no_itblock,no_importance");
  train->add_flag("--quiet", train_quiet, "Suppress per-epoch progress");

  // backtest
  std::string bt_run, bt_config, bt_ckpt, bt_out;
  std::optional<double> bt_top;
  CLI::App* bt = app.add_subcommand("backtest", "Evaluate a checkpoint on the test span");
  bt->add_option("--run", bt_run, "Run directory written by train");
  bt->add_option("--config", bt_config, "Config file (instead of --run)");
  bt->add_option("--checkpoint", bt_ckpt, "Checkpoint file (instead of --run)");
  bt->add_option("--out", bt_out, "Report directory (default: the run directory)");
  bt->add_option("--top-frac", bt_top, "Share of nodes held long each day");

  // ablate
  ConfigArgs ab_cfg;
  std::string ab_out;
  std::size_t ab_workers = 1;
  CLI::App* ab = app.add_subcommand("ablate", "Train the full model and each single ablation; print a table");
  ab_cfg.add_to(ab);
  ab->add_option("--out", ab_out, "Directory for ablation.csv");
  ab->add_option("--workers", ab_workers, "Parallel training jobs")->capture_default_str();

  // sweep
  ConfigArgs sw_cfg;
  std::string sw_out;
  std::size_t sw_workers = 1;
  SweepGrid grid;
  CLI::App* sw = app.add_subcommand("sweep", "Grid over layers, heads and model width");
  sw_cfg.add_to(sw);
  sw->add_option("--out", sw_out, "Directory for sweep.csv");
  sw->add_option("--layers", grid.n_layers, "Layer counts")->delimiter(',')->capture_default_str();
  sw->add_option("--heads", grid.n_heads, "Head counts")->delimiter(',')->capture_default_str();
  sw->add_option("--dims", grid.d_model, "Model widths")->delimiter(',')->capture_default_str();
  sw->add_option("--workers", sw_workers, "Parallel training jobs")->capture_default_str();

  // export-attention
  std::string ex_run, ex_config, ex_ckpt, ex_out;
  std::optional<std::size_t> ex_day;
  CLI::App* ex = app.add_subcommand("export-attention", "Write node-to-node attention matrices and heatmaps");
  ex->add_option("--run", ex_run, "Run directory written by train");
  ex->add_option("--config", ex_config, "Config file (instead of --run)");
  ex->add_option("--checkpoint", ex_ckpt, "Checkpoint file (instead of --run)");
  ex->add_option("--out", ex_out, "Output directory")->required();
  ex->add_option("--day", ex_day, "Day index of the exported maps (default: last test day)");

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("stiformer");
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (*gen) return cmd_gen_data(gen_cfg, gen_out, gen_nodes, gen_days, gen_features, gen_clusters, gen_seed, out);
    if (*train) return cmd_train(train_cfg, train_out, train_ablation, train_quiet, out, err);
    if (*bt) return cmd_backtest(bt_run, bt_config, bt_ckpt, bt_out, bt_top, out);
    if (*ab) return cmd_ablate(ab_cfg, ab_out, ab_workers, out);
    if (*sw) return cmd_sweep(sw_cfg, sw_out, grid, sw_workers, out);
    if (*ex) return cmd_export_attention(ex_run, ex_config, ex_ckpt, ex_out, ex_day, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumericError;
  } catch (const ParameterError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace stif
