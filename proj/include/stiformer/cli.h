#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "stiformer/data.h"
#include "stiformer/model.h"
#include "stiformer/train.h"

namespace stif {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;      // I/O and checkpoint problems
inline constexpr int kExitConfigError = 2;  // bad flags, keys or values
inline constexpr int kExitNumericError = 3;

/// Sectioned key=value configuration. Later sources win: profile defaults,
/// then the config file, then --set overrides.
class RunConfig {
 public:
  /// "desk" (small, minutes-scale) or "paper" (256-wide, 4 heads, 3 layers).
  explicit RunConfig(const std::string& profile = "desk");

  /// Reads "[section]" headers and key=value lines; relative data paths
  /// resolve against the file's directory.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::filesystem::path& base_dir = {});
  /// "section.key=value".
  void set_override(const std::string& assignment);
  void set(const std::string& section, const std::string& key, const std::string& value);

  /// Parses every section; unknown keys raise ConfigError.
  void resolve();

  /// Fully resolved configuration in the same sectioned format.
  std::string to_text() const;

  PanelDataset load_panel() const;
  /// Node -> cluster id from the clusters file or the synthetic generator;
  /// empty when neither is available.
  std::vector<std::size_t> load_clusters(const PanelDataset& panel) const;
  /// Windows and normalizes the panel; sets model.n_nodes and n_features.
  DataSplits load_splits(const PanelDataset& panel);

  std::string source = "synthetic";  // or "csv"
  std::filesystem::path csv_path;
  std::filesystem::path clusters_path;
  SplitSpec split;
  IngestOptions ingest;
  SynthConfig generator;
  ModelConfig model;
  TrainConfig train;

 private:
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> entries_;
  std::filesystem::path base_dir_;
};

/// Writes a self-contained SVG heatmap of a square matrix.
std::string heatmap_svg(const Tensor& matrix, const std::string& title);

struct ClusterRecovery {
  double intra = 0.0;  // mean attention per same-cluster pair (i != j)
  double inter = 0.0;  // mean attention per cross-cluster pair
  double ratio = 0.0;  // intra / inter (infinite when inter is 0)
};

/// Averages per-pair attention over the given maps.
ClusterRecovery cluster_recovery(const std::vector<Tensor>& maps, const std::vector<std::size_t>& cluster_of);

/// Entry point; returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stif
