#pragma once

// Random forest of unbounded-depth Gini trees for binary labels.

#include "flowgan/data.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace flowgan::forest {

struct TreeNode {
  /// -1 marks a leaf.
  std::int32_t feature = -1;
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::uint8_t label = 0;

  bool leaf() const noexcept { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

/// Nodes in preorder; node 0 is the root. A row goes left when
/// x[feature] <= threshold.
struct DecisionTree {
  std::vector<TreeNode> nodes;

  int predict(std::span<const double> x) const;
  std::size_t depth() const;
  std::size_t leaves() const;
  bool operator==(const DecisionTree&) const = default;
};

/// Number of features drawn at each split: ceil(sqrt(d)).
std::size_t features_per_split(std::size_t dimension);

/// Fits one tree on rows weighted by their bootstrap multiplicity (0 means
/// out of bag). At each impure node the feature order is a fresh
/// std::shuffle of 0..d-1 from `rng`; the first `max_features` are searched
/// and, if none of them can split the node, the rest are tried in order.
DecisionTree fit_tree(const data::FlowDataset& train, std::span<const std::uint32_t> weights,
                      std::size_t max_features, Rng& rng);

struct ForestOptions {
  std::size_t n_trees = 300;
  std::uint64_t seed = 0;
  /// 0 picks the hardware concurrency.
  std::size_t threads = 0;
};

class ForestModel {
 public:
  ForestModel() = default;
  ForestModel(std::size_t dimension, std::vector<DecisionTree> trees);

  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t size() const noexcept { return trees_.size(); }
  const std::vector<DecisionTree>& trees() const noexcept { return trees_; }

  /// Fraction of trees voting 1 for each row.
  std::vector<double> predict_proba(const data::FlowDataset& rows) const;
  std::vector<double> predict_proba(const Matrix& rows) const;

 private:
  std::size_t dimension_ = 0;
  std::vector<DecisionTree> trees_;
};

/// Each tree sees a size-n bootstrap drawn from its own derived seed, so the
/// model does not depend on the thread count.
ForestModel train_forest(const data::FlowDataset& train, const ForestOptions& options);

/// Size-n bootstrap as multiplicities: n draws of
/// uniform_int_distribution(0, n-1) from `rng`. Tree t of a forest seeds its
/// Rng with derive_seed(seed, t), draws its bootstrap, then hands the same
/// Rng to fit_tree.
std::vector<std::uint32_t> bootstrap_weights(std::size_t rows, Rng& rng);

}  // namespace flowgan::forest
