#pragma once

// Mean baseline generator, policy-driven synthetic training sets, elitism
// ranking and sampled best-pair selection.

#include "flowgan/eval.hpp"
#include "flowgan/wgan.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace flowgan::policy {

/// Per-class, per-feature normal fit with population variance.
struct MeanBaseline {
  std::size_t dimension = 0;
  std::map<int, std::vector<double>> mean;
  std::map<int, std::vector<double>> variance;
};

MeanBaseline fit_mean_baseline(const data::FlowDataset& real_train);
/// n rows, each feature an independent normal draw.
data::FlowDataset sample_baseline(const MeanBaseline& baseline, int label, std::size_t n, Rng& rng);
nlohmann::json to_json(const MeanBaseline& baseline);

enum class Policy {
  /// One generator per label, N label-0 and M label-1 rows.
  p1,
  /// Two generators per label split 50/50, N and M rows.
  p2,
  /// One generator per label, M rows of each.
  p3,
};

struct PolicySpec {
  Policy policy = Policy::p1;
  std::size_t n0 = 400000;
  std::size_t n1 = 4000;
  std::size_t draws = 20;

  void validate() const;
  /// Reference sizes: 400K/4K for P1 and P2, 4K/4K for P3.
  static PolicySpec reference(Policy p);
};

Policy parse_policy(const std::string& text);
std::string to_string(Policy p);

enum class Criterion { none, f1, l1, jaccard };

struct ElitismSpec {
  Criterion criterion = Criterion::none;
  std::size_t top_k = 10;
};

/// "none", or "<f1|l1|jaccard>[:k]".
ElitismSpec parse_elitism(const std::string& text);
std::string to_string(const ElitismSpec& e);

/// Per-checkpoint marginal measures collected during training.
struct CheckpointMetrics {
  std::optional<double> macro_f1;
  std::optional<double> l1;
  std::optional<double> jaccard;
  std::optional<double> jaccard_p1;
};

/// A checkpoint candidate. The checkpoint itself is loaded from `path` on
/// first use when not supplied in memory.
struct PoolEntry {
  std::string id;
  std::size_t step = 0;
  int label = 0;
  CheckpointMetrics metrics;
  std::filesystem::path path;
  mutable std::shared_ptr<const wgan::Checkpoint> checkpoint;

  const wgan::Checkpoint& get() const;
  static PoolEntry from(wgan::Checkpoint ckpt, CheckpointMetrics metrics = {});
};

using Pool = std::vector<PoolEntry>;

/// Top-k by the criterion (f1 and jaccard descending, l1 ascending), ties
/// by earliest step. Criterion none returns the pool unchanged.
Pool rank_checkpoints(const Pool& pool, const ElitismSpec& elitism);

struct Assembled {
  data::FlowDataset dataset;
  /// Label-0 ids first, then label-1 ids.
  std::vector<std::string> ids;
};

/// Picks checkpoints uniformly at random from each pool (two distinct ones
/// per pool for P2) and generates the policy's rows. Generation streams are
/// derived from `generation_seed` and the chosen ids, so the same choice
/// always yields the same dataset.
Assembled assemble_policy_dataset(const PolicySpec& spec, const Pool& pool0, const Pool& pool1, Rng& rng,
                                  std::uint64_t generation_seed);

/// Dataset for an explicit choice of checkpoints (1 or 2 per label).
Assembled assemble_from(const PolicySpec& spec, const std::vector<const PoolEntry*>& chosen0,
                        const std::vector<const PoolEntry*>& chosen1, std::uint64_t generation_seed);

struct LeaderboardEntry {
  std::size_t draw = 0;
  std::vector<std::string> ids;
  /// Steps of the chosen checkpoints, used for tie breaks.
  std::vector<std::size_t> steps;
  std::optional<eval::EvalReport> report;
  std::string error;

  bool ok() const { return report.has_value(); }
  double macro_f1() const { return report ? report->best_macro_f1() : -1.0; }
};

struct SelectionResult {
  std::vector<LeaderboardEntry> leaderboard;
  std::size_t chosen = 0;

  const LeaderboardEntry& best() const { return leaderboard.at(chosen); }
};

struct SelectOptions {
  PolicySpec policy;
  ElitismSpec elitism0;
  ElitismSpec elitism1;
  eval::EvalOptions eval;
  std::uint64_t seed = 0;
  /// Evaluate every combination instead of sampling `draws` of them.
  bool exhaustive = false;
};

/// Samples pairs from the elitism-filtered pools, evaluates each on the real
/// test set and returns the argmax of best-threshold macro-F1 (ties: earliest
/// steps, then earliest draw). Repeated pairs reuse their first evaluation.
SelectionResult select_best(const Pool& pool0, const Pool& pool1, const data::FlowDataset& real_test,
                            const SelectOptions& options);

nlohmann::json to_json(const SelectionResult& result);
/// draw,ckpt0,ckpt1,best_threshold,macro_f1 (P2 ids joined by '+').
void write_leaderboard(std::ostream& out, const SelectionResult& result);

}  // namespace flowgan::policy
