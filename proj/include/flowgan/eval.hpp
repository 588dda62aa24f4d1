#pragma once

// Nested evaluation: train a random forest on a (partly) synthetic training
// set, sweep decision thresholds on a real test set and report confusion
// matrices with per-class and macro-averaged F1.

#include "flowgan/data.hpp"
#include "flowgan/forest.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace flowgan::wgan {
struct Checkpoint;
}

namespace flowgan::eval {

/// Rows are the true label, columns the prediction: [[tn, fp], [fn, tp]].
struct ConfusionMatrix {
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tp = 0;

  std::uint64_t total() const noexcept { return tn + fp + fn + tp; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct F1Report {
  ClassScores class0;
  ClassScores class1;
  double macro = 0.0;
};

/// Per-class scores (class 0 treats label 0 as positive) and their
/// unweighted mean. A ratio with a zero denominator is 0.
F1Report macro_f1(const ConfusionMatrix& cm);

/// Predicts 1 iff prob > threshold.
ConfusionMatrix confusion_at_threshold(std::span<const double> probs, std::span<const int> labels,
                                       double threshold);

std::vector<double> default_thresholds();

struct ThresholdResult {
  double threshold = 0.0;
  ConfusionMatrix cm;
  F1Report scores;
};

struct EvalReport {
  /// Checkpoints or datasets that produced the training set.
  std::vector<std::string> ids;
  std::vector<ThresholdResult> results;
  /// Set when a generated class came out as a single repeated row.
  bool degenerate = false;
  std::size_t train_rows = 0;
  std::size_t train_real_rows = 0;
  std::size_t train_synthetic_rows = 0;
  std::size_t test_rows = 0;

  /// Index of the highest macro-F1; the earliest threshold wins ties.
  std::size_t best_index() const;
  const ThresholdResult& best() const { return results.at(best_index()); }
  double best_macro_f1() const { return best().scores.macro; }
};

nlohmann::json to_json(const EvalReport& report);

/// Header and one row per threshold:
/// ids,threshold,tn,fp,fn,tp,p0,r0,f0,p1,r1,f1,macro_f1.
void write_csv_header(std::ostream& out);
void write_csv_rows(std::ostream& out, const EvalReport& report);

struct EvalOptions {
  forest::ForestOptions forest;
  std::vector<double> thresholds = default_thresholds();
};

/// Trains a forest on `train` and sweeps thresholds on `test`.
EvalReport evaluate_dataset(const data::FlowDataset& train, const data::FlowDataset& test,
                            const EvalOptions& options, std::vector<std::string> ids = {});

/// True when the dataset has at least two rows and all of them are equal.
bool all_rows_identical(const data::FlowDataset& rows);

/// Row counts for a marginal or pair evaluation.
struct Sizes {
  std::size_t label0 = 0;
  std::size_t label1 = 0;
};

/// Synthetic rows of the checkpoint's class plus all of `real_other`
/// (which must hold only the opposite class). The checkpoint supplies
/// sizes.label0 or sizes.label1 rows depending on its class.
EvalReport evaluate_marginal(const wgan::Checkpoint& ckpt, const data::FlowDataset& real_other,
                             const data::FlowDataset& real_test, Sizes sizes, const EvalOptions& options,
                             std::uint64_t generation_seed);

/// Fully synthetic training set: sizes.label0 rows from ckpt0 and
/// sizes.label1 rows from ckpt1.
EvalReport evaluate_pair(const wgan::Checkpoint& ckpt0, const wgan::Checkpoint& ckpt1,
                         const data::FlowDataset& real_test, Sizes sizes, const EvalOptions& options,
                         std::uint64_t generation_seed);

}  // namespace flowgan::eval
