#pragma once

// Command-line front end. Every subcommand is a function of its flags and
// seed; outputs carry no timestamps or absolute paths.

#include "flowgan/common.hpp"
#include "flowgan/data.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace flowgan::cli {

/// Relative output paths resolve under this variable's value when set.
inline constexpr const char* kOutputRootEnv = "FLOWGAN_OUTPUT_ROOT";

enum ExitCode : int {
  exit_ok = 0,
  exit_internal = 1,
  exit_usage = 2,
  exit_invalid_data = 3,
  exit_io = 4,
  exit_divergence = 5,
  exit_evaluation = 6,
};

int exit_code_for(ErrorKind kind);

/// Runs one subcommand; `args` excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(const std::vector<std::string>& args);

/// Per-checkpoint record stored in a run manifest.
struct ManifestCheckpoint {
  std::size_t step = 0;
  std::string id;
  /// Relative to the run directory.
  std::string file;
  nlohmann::json diagnostics;
  std::optional<double> macro_f1;
  std::optional<double> l1;
  std::optional<double> jaccard;
  std::optional<double> jaccard_p1;
};

struct RunManifest {
  std::string run_id;
  std::string config_digest;
  std::uint64_t seed = 0;
  int label = 0;
  std::size_t steps = 0;
  std::size_t metric_rows = 0;
  std::size_t bins = 0;
  bool diverged = false;
  std::string error;
  nlohmann::json config;
  nlohmann::json scaler;
  std::vector<ManifestCheckpoint> checkpoints;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
/// Reads run_dir/manifest.json and checks every checkpoint file exists.
RunManifest load_manifest(const std::filesystem::path& run_dir);

/// Seed of the sample drawn to compute a checkpoint's histogram metrics.
std::uint64_t metric_sample_seed(std::uint64_t run_seed, std::size_t step);

/// CSV step,macro_f1,l1,jaccard,jaccard_p1 ordered by step; absent values
/// are left empty.
void write_metric_series(std::ostream& out, const RunManifest& m);

/// CSV rank,b1..bd,mass_real,mass_synth sorted by real mass ascending.
void write_histogram_compare(std::ostream& out, const data::FlowDataset& real, const data::FlowDataset& synth,
                             std::size_t bins_per_dim);

/// Reads a dataset CSV, taking the dimension from its header.
data::FlowDataset read_dataset(const std::filesystem::path& path);

}  // namespace flowgan::cli
