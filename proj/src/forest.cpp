#include "flowgan/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace flowgan::forest {

int DecisionTree::predict(std::span<const double> x) const {
  std::size_t i = 0;
  while (!nodes[i].leaf()) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes[i].label;
}

std::size_t DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::size_t> level(nodes.size(), 0);
  std::size_t deepest = 0;
  // Preorder guarantees parents precede children.
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    deepest = std::max(deepest, level[i]);
    if (!nodes[i].leaf()) {
      level[static_cast<std::size_t>(nodes[i].left)] = level[i] + 1;
      level[static_cast<std::size_t>(nodes[i].right)] = level[i] + 1;
    }
  }
  return deepest;
}

std::size_t DecisionTree::leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.leaf(); }));
}

std::size_t features_per_split(std::size_t dimension) {
  auto k = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(dimension))));
  while (k * k < dimension) ++k;
  while (k > 1 && (k - 1) * (k - 1) >= dimension) --k;
  return std::max<std::size_t>(k, 1);
}

std::vector<std::uint32_t> bootstrap_weights(std::size_t rows, Rng& rng) {
  std::vector<std::uint32_t> w(rows, 0);
  if (rows == 0) return w;
  std::uniform_int_distribution<std::size_t> pick(0, rows - 1);
  for (std::size_t i = 0; i < rows; ++i) ++w[pick(rng)];
  return w;
}

namespace {

struct Task {
  std::size_t begin;
  std::size_t end;
  std::int32_t parent;
  bool is_left;
};

struct Split {
  bool found = false;
  double score = 0.0;
  std::size_t feature = 0;
  double threshold = 0.0;
};

double split_point(double a, double b) {
  double t = 0.5 * a + 0.5 * b;
  if (!(t >= a && t < b)) t = a;
  return t;
}

}  // namespace

DecisionTree fit_tree(const data::FlowDataset& train, std::span<const std::uint32_t> weights,
                      std::size_t max_features, Rng& rng) {
  const std::size_t n = train.size();
  const std::size_t d = train.dimension();
  if (weights.size() != n) throw Error(ErrorKind::invalid_argument, "weight count does not match rows");
  if (d == 0) throw Error(ErrorKind::invalid_argument, "cannot fit a tree on zero features");
  max_features = std::clamp<std::size_t>(max_features, 1, d);

  std::vector<std::uint32_t> bag;
  for (std::size_t i = 0; i < n; ++i)
    if (weights[i] > 0) bag.push_back(static_cast<std::uint32_t>(i));
  if (bag.empty()) throw Error(ErrorKind::invalid_argument, "empty bootstrap sample");

  // One index list per feature, each sorted by that feature; every node owns
  // the same [begin, end) range in all of them.
  std::vector<std::vector<std::uint32_t>> order(d, bag);
  for (std::size_t f = 0; f < d; ++f) {
    std::stable_sort(order[f].begin(), order[f].end(), [&](std::uint32_t a, std::uint32_t b) {
      return train.value(a, f) < train.value(b, f);
    });
  }

  DecisionTree tree;
  std::vector<std::size_t> feats(d);
  std::vector<std::uint8_t> goes_left(n, 0);
  std::vector<std::uint32_t> buffer;
  std::vector<Task> stack{{0, bag.size(), -1, false}};

  while (!stack.empty()) {
    const Task task = stack.back();
    stack.pop_back();
    const auto id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    if (task.parent >= 0) {
      auto& p = tree.nodes[static_cast<std::size_t>(task.parent)];
      (task.is_left ? p.left : p.right) = id;
    }

    double c0 = 0, c1 = 0;
    for (std::size_t k = task.begin; k < task.end; ++k) {
      const auto i = order[0][k];
      (train.label(i) == 1 ? c1 : c0) += weights[i];
    }
    auto make_leaf = [&] { tree.nodes[static_cast<std::size_t>(id)].label = c1 > c0 ? 1 : 0; };
    if (c0 == 0 || c1 == 0) {
      make_leaf();
      continue;
    }

    std::iota(feats.begin(), feats.end(), std::size_t{0});
    std::shuffle(feats.begin(), feats.end(), rng);
    Split best;
    for (std::size_t k = 0; k < d; ++k) {
      if (k >= max_features && best.found) break;
      const std::size_t f = feats[k];
      const auto& ord = order[f];
      double l0 = 0, l1 = 0;
      for (std::size_t p = task.begin; p + 1 < task.end; ++p) {
        const auto i = ord[p];
        (train.label(i) == 1 ? l1 : l0) += weights[i];
        const double a = train.value(i, f);
        const double b = train.value(ord[p + 1], f);
        if (!(a < b)) continue;
        const double r0 = c0 - l0, r1 = c1 - l1;
        const double score = (l0 * l0 + l1 * l1) / (l0 + l1) + (r0 * r0 + r1 * r1) / (r0 + r1);
        if (!best.found || score > best.score) best = {true, score, f, split_point(a, b)};
      }
    }
    if (!best.found) {
      make_leaf();
      continue;
    }

    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = static_cast<std::int32_t>(best.feature);
    node.threshold = best.threshold;

    std::size_t mid = task.begin;
    for (std::size_t k = task.begin; k < task.end; ++k) {
      const auto i = order[0][k];
      goes_left[i] = train.value(i, best.feature) <= best.threshold;
      mid += goes_left[i];
    }
    for (std::size_t f = 0; f < d; ++f) {
      auto& ord = order[f];
      buffer.clear();
      std::size_t w = task.begin;
      for (std::size_t k = task.begin; k < task.end; ++k) {
        if (goes_left[ord[k]]) ord[w++] = ord[k];
        else buffer.push_back(ord[k]);
      }
      std::copy(buffer.begin(), buffer.end(), ord.begin() + static_cast<std::ptrdiff_t>(w));
    }
    stack.push_back({mid, task.end, id, false});
    stack.push_back({task.begin, mid, id, true});
  }
  return tree;
}

ForestModel::ForestModel(std::size_t dimension, std::vector<DecisionTree> trees)
    : dimension_(dimension), trees_(std::move(trees)) {}

namespace {

std::size_t pick_threads(std::size_t requested, std::size_t work) {
  std::size_t t = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return std::clamp<std::size_t>(t, 1, std::max<std::size_t>(work, 1));
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += threads) fn(i, t);
    });
  }
  for (auto& th : pool) th.join();
}

std::vector<double> vote(const std::vector<DecisionTree>& trees, std::size_t d, std::size_t rows,
                         const double* data) {
  std::vector<std::uint32_t> votes(rows, 0);
  for (const auto& tree : trees) {
    for (std::size_t i = 0; i < rows; ++i) votes[i] += static_cast<std::uint32_t>(tree.predict({data + i * d, d}));
  }
  std::vector<double> p(rows);
  const double total = static_cast<double>(trees.size());
  for (std::size_t i = 0; i < rows; ++i) p[i] = static_cast<double>(votes[i]) / total;
  return p;
}

}  // namespace

std::vector<double> ForestModel::predict_proba(const data::FlowDataset& rows) const {
  if (rows.dimension() != dimension_) throw Error(ErrorKind::invalid_argument, "dimension mismatch in predict_proba");
  return vote(trees_, dimension_, rows.size(), rows.values().data());
}

std::vector<double> ForestModel::predict_proba(const Matrix& rows) const {
  if (static_cast<std::size_t>(rows.cols()) != dimension_) {
    throw Error(ErrorKind::invalid_argument, "dimension mismatch in predict_proba");
  }
  return vote(trees_, dimension_, static_cast<std::size_t>(rows.rows()), rows.data());
}

ForestModel train_forest(const data::FlowDataset& train, const ForestOptions& options) {
  if (options.n_trees == 0) throw Error(ErrorKind::invalid_argument, "forest needs at least one tree");
  const auto counts = train.class_counts();
  if (counts.size() < 2) throw Error(ErrorKind::evaluation, "forest training set has a single class");
  const std::size_t k = features_per_split(train.dimension());
  std::vector<DecisionTree> trees(options.n_trees);
  parallel_for(options.n_trees, pick_threads(options.threads, options.n_trees), [&](std::size_t t, std::size_t) {
    Rng rng(derive_seed(options.seed, t));
    auto w = bootstrap_weights(train.size(), rng);
    trees[t] = fit_tree(train, w, k, rng);
  });
  return ForestModel(train.dimension(), std::move(trees));
}

}  // namespace flowgan::forest
