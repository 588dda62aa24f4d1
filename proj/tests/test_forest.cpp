#include "flowgan/eval.hpp"
#include "flowgan/forest.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

using namespace flowgan;
using data::FlowDataset;

namespace {

FlowDataset toy_separable(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FlowDataset ds(2);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = u(rng), b = u(rng);
    if (std::abs(a + b - 1.0) < 0.05) continue;
    ds.add(std::vector<double>{a, b}, a + b > 1.0 ? 1 : 0);
  }
  return ds;
}

FlowDataset noisy_blobs(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  FlowDataset ds(d);
  std::vector<double> row(d);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i % 3 == 0 ? 1 : 0;
    for (auto& v : row) v = g(rng) + (label ? 0.8 : 0.0);
    ds.add(row, label);
  }
  return ds;
}

// Straightforward recursive tree builder that re-sorts at every node. It
// follows the same draw order and tie rules as the production builder.
struct OracleBuilder {
  const FlowDataset& data;
  const std::vector<std::uint32_t>& w;
  std::size_t max_features;
  Rng& rng;
  std::vector<forest::TreeNode> nodes;

  std::int32_t build(std::vector<std::size_t> rows) {
    const auto id = static_cast<std::int32_t>(nodes.size());
    nodes.emplace_back();
    double c0 = 0, c1 = 0;
    for (auto i : rows) (data.label(i) ? c1 : c0) += w[i];
    if (c0 == 0 || c1 == 0) {
      nodes[static_cast<std::size_t>(id)].label = c1 > c0;
      return id;
    }
    const std::size_t d = data.dimension();
    std::vector<std::size_t> feats(d);
    std::iota(feats.begin(), feats.end(), std::size_t{0});
    std::shuffle(feats.begin(), feats.end(), rng);
    bool found = false;
    double best_score = 0, best_thr = 0;
    std::size_t best_f = 0;
    for (std::size_t k = 0; k < d; ++k) {
      if (k >= max_features && found) break;
      const auto f = feats[k];
      auto sorted = rows;
      std::stable_sort(sorted.begin(), sorted.end(),
                       [&](std::size_t a, std::size_t b) { return data.value(a, f) < data.value(b, f); });
      for (std::size_t p = 0; p + 1 < sorted.size(); ++p) {
        const double a = data.value(sorted[p], f), b = data.value(sorted[p + 1], f);
        if (!(a < b)) continue;
        double l0 = 0, l1 = 0;
        for (std::size_t q = 0; q <= p; ++q) (data.label(sorted[q]) ? l1 : l0) += w[sorted[q]];
        const double r0 = c0 - l0, r1 = c1 - l1;
        const double score = (l0 * l0 + l1 * l1) / (l0 + l1) + (r0 * r0 + r1 * r1) / (r0 + r1);
        if (!found || score > best_score) {
          found = true;
          best_score = score;
          best_f = f;
          best_thr = 0.5 * a + 0.5 * b;
          if (!(best_thr >= a && best_thr < b)) best_thr = a;
        }
      }
    }
    if (!found) {
      nodes[static_cast<std::size_t>(id)].label = c1 > c0;
      return id;
    }
    std::vector<std::size_t> left, right;
    for (auto i : rows) (data.value(i, best_f) <= best_thr ? left : right).push_back(i);
    nodes[static_cast<std::size_t>(id)].feature = static_cast<std::int32_t>(best_f);
    nodes[static_cast<std::size_t>(id)].threshold = best_thr;
    const auto l = build(left);
    nodes[static_cast<std::size_t>(id)].left = l;
    const auto r = build(right);
    nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }
};

forest::DecisionTree leaf_tree(std::uint8_t label) {
  forest::DecisionTree t;
  t.nodes.push_back({-1, 0.0, -1, -1, label});
  return t;
}

}  // namespace

TEST(Forest, FeaturesPerSplit) {
  EXPECT_EQ(forest::features_per_split(1), 1u);
  EXPECT_EQ(forest::features_per_split(4), 2u);
  EXPECT_EQ(forest::features_per_split(5), 3u);
  EXPECT_EQ(forest::features_per_split(9), 3u);
  EXPECT_EQ(forest::features_per_split(10), 4u);
}

TEST(Forest, SeparableToyIsFitPerfectly) {
  auto train = toy_separable(300, 1);
  auto model = forest::train_forest(train, {300, 7, 1});
  auto p = model.predict_proba(train);
  for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(p[i] > 0.5, train.label(i) == 1) << i;
}

TEST(Forest, DeterministicAndThreadIndependent) {
  auto train = noisy_blobs(400, 4, 2);
  auto probe = noisy_blobs(200, 4, 3);
  auto a = forest::train_forest(train, {25, 11, 1});
  auto b = forest::train_forest(train, {25, 11, 1});
  auto c = forest::train_forest(train, {25, 11, 3});
  EXPECT_EQ(a.trees(), b.trees());
  EXPECT_EQ(a.trees(), c.trees());
  EXPECT_EQ(a.predict_proba(probe), c.predict_proba(probe));
  auto other = forest::train_forest(train, {25, 12, 1});
  EXPECT_NE(a.trees(), other.trees());
}

TEST(Forest, SingleTreeMatchesRecursiveOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto train = noisy_blobs(20, 3, 100 + seed);
    // Coarse values force tied feature values.
    FlowDataset coarse(3);
    for (std::size_t i = 0; i < train.size(); ++i) {
      std::vector<double> r(train.row(i).begin(), train.row(i).end());
      for (auto& v : r) v = std::round(v * 2.0) / 2.0;
      coarse.add(r, train.label(i));
    }
    auto model = forest::train_forest(coarse, {1, seed, 1});

    Rng rng(derive_seed(seed, 0));
    auto w = forest::bootstrap_weights(coarse.size(), rng);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < coarse.size(); ++i)
      if (w[i] > 0) rows.push_back(i);
    OracleBuilder oracle{coarse, w, forest::features_per_split(3), rng, {}};
    oracle.build(rows);
    EXPECT_EQ(model.trees()[0].nodes, oracle.nodes) << "seed " << seed;
  }
}

TEST(Forest, TreesAreUnboundedUntilPure) {
  auto train = noisy_blobs(300, 2, 5);
  std::vector<std::uint32_t> w(train.size(), 1);
  Rng rng(1);
  auto tree = forest::fit_tree(train, w, 2, rng);
  // Continuous features, no duplicates: every training row is recovered.
  for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(tree.predict(train.row(i)), train.label(i));
  for (const auto& n : tree.nodes) {
    if (!n.leaf()) {
      EXPECT_GE(n.left, 0);
      EXPECT_GE(n.right, 0);
    }
  }
}

TEST(Forest, UnsplittableNodeTakesMajority) {
  FlowDataset ds(1);
  for (int i = 0; i < 3; ++i) ds.add(std::vector<double>{1.0}, 1);
  for (int i = 0; i < 2; ++i) ds.add(std::vector<double>{1.0}, 0);
  std::vector<std::uint32_t> w(5, 1);
  Rng rng(0);
  auto tree = forest::fit_tree(ds, w, 1, rng);
  ASSERT_EQ(tree.nodes.size(), 1u);
  EXPECT_EQ(tree.nodes[0].label, 1);
  w = {1, 1, 0, 1, 1};
  tree = forest::fit_tree(ds, w, 1, rng);
  EXPECT_EQ(tree.nodes[0].label, 0);  // ties go to 0
}

TEST(Forest, VoteFractions) {
  std::vector<forest::DecisionTree> all_one(300, leaf_tree(1));
  forest::ForestModel ones(2, all_one);
  Matrix probe = Matrix::Zero(3, 2);
  for (double p : ones.predict_proba(probe)) EXPECT_EQ(p, 1.0);

  std::vector<forest::DecisionTree> half;
  for (int i = 0; i < 300; ++i) half.push_back(leaf_tree(i % 2));
  for (double p : forest::ForestModel(2, half).predict_proba(probe)) EXPECT_EQ(p, 0.5);
  EXPECT_THROW(forest::ForestModel(2, half).predict_proba(Matrix::Zero(1, 3)), Error);
}

TEST(Forest, ProbabilitiesMatchTallyAndIgnoreTreeOrder) {
  auto train = noisy_blobs(500, 4, 8);
  auto probe = noisy_blobs(100, 4, 9);
  auto model = forest::train_forest(train, {31, 4, 1});
  auto p = model.predict_proba(probe);
  for (std::size_t i = 0; i < probe.size(); ++i) {
    int votes = 0;
    for (const auto& t : model.trees()) votes += t.predict(probe.row(i));
    EXPECT_EQ(p[i], votes / 31.0);
  }
  auto trees = model.trees();
  std::reverse(trees.begin(), trees.end());
  std::rotate(trees.begin(), trees.begin() + 7, trees.end());
  EXPECT_EQ(forest::ForestModel(4, trees).predict_proba(probe), p);
}

TEST(Forest, RejectsSingleClassAndZeroTrees) {
  FlowDataset ds(1);
  ds.add(std::vector<double>{1.0}, 0);
  ds.add(std::vector<double>{2.0}, 0);
  EXPECT_THROW(forest::train_forest(ds, {10, 0, 1}), Error);
  ds.add(std::vector<double>{3.0}, 1);
  EXPECT_THROW(forest::train_forest(ds, {0, 0, 1}), Error);
}

// ---------------------------------------------------------------------------
// Scores

TEST(MacroF1, ReferenceMatricesReproduceExpectedScores) {
  struct Case {
    std::uint64_t tn, fp, fn, tp;
    double f1;
  };
  const Case cases[] = {
      {399817, 183, 459, 3929, .962},   {399877, 123, 1008, 3380, .928}, {398602, 1398, 197, 4191, .919},
      {394172, 5828, 62, 4326, .793},   {396318, 3682, 1894, 2493, .732}, {390060, 9940, 1416, 2971, .664},
      {377352, 22648, 839, 3548, .601}, {370528, 29472, 537, 3850, .583}, {399926, 74, 927, 3461, .936},
      {399962, 38, 998, 3390, .933},    {399449, 551, 701, 3687, .927},   {399601, 399, 983, 3405, .915},
      {399030, 970, 1108, 3280, .878},  {396381, 3619, 315, 4073, .835},  {382755, 17245, 241, 4146, .649},
      {357385, 42615, 96, 4291, .555},  {399511, 489, 767, 3621, .925},   {399221, 779, 722, 3666, .914},
      {399800, 200, 608, 3780, .951},   {399832, 168, 658, 3730, .950},   {399491, 509, 1506, 2882, .869},
      {398536, 1464, 1094, 3294, .858}, {399033, 967, 1031, 3357, .884},  {396881, 3119, 720, 3668, .826},
  };
  for (const auto& c : cases) {
    auto r = eval::macro_f1({c.tn, c.fp, c.fn, c.tp});
    EXPECT_NEAR(r.macro, c.f1, 0.001) << c.tn << ' ' << c.fp << ' ' << c.fn << ' ' << c.tp;
  }
}

TEST(MacroF1, PerClassScoresOfFirstReferenceMatrix) {
  auto r = eval::macro_f1({399817, 183, 459, 3929});
  // Hand arithmetic: class 1 uses tp/(tp+fp) and tp/(tp+fn); class 0 swaps roles.
  const double p1 = 3929.0 / (3929 + 183), r1 = 3929.0 / (3929 + 459);
  const double p0 = 399817.0 / (399817 + 459), r0 = 399817.0 / (399817 + 183);
  EXPECT_DOUBLE_EQ(r.class1.precision, p1);
  EXPECT_DOUBLE_EQ(r.class1.recall, r1);
  EXPECT_DOUBLE_EQ(r.class0.precision, p0);
  EXPECT_DOUBLE_EQ(r.class0.recall, r0);
  EXPECT_NEAR(r.class1.f1, 0.92447, 1e-5);
  EXPECT_NEAR(r.class0.f1, 0.99920, 1e-5);
  EXPECT_DOUBLE_EQ(r.macro, (2 * p1 * r1 / (p1 + r1) + 2 * p0 * r0 / (p0 + r0)) / 2);
}

TEST(MacroF1, PerfectAndEmptyDenominators) {
  EXPECT_EQ(eval::macro_f1({10, 0, 0, 5}).macro, 1.0);
  auto none_predicted_positive = eval::macro_f1({10, 0, 5, 0});
  EXPECT_EQ(none_predicted_positive.class1.precision, 0.0);
  EXPECT_EQ(none_predicted_positive.class1.f1, 0.0);
  auto empty = eval::macro_f1({0, 0, 0, 0});
  EXPECT_EQ(empty.macro, 0.0);
}

TEST(Confusion, ThresholdZeroPredictsEverythingPositive) {
  std::vector<double> p{0.1, 0.5, 0.9, 1.0};
  std::vector<int> y{0, 1, 0, 1};
  auto cm = eval::confusion_at_threshold(p, y, 0.0);
  EXPECT_EQ(cm.tn, 0u);
  EXPECT_EQ(cm.fn, 0u);
  EXPECT_EQ(cm.total(), 4u);
}

TEST(Confusion, PerfectProbabilities) {
  std::vector<double> p{0, 1, 1, 0};
  std::vector<int> y{0, 1, 1, 0};
  auto cm = eval::confusion_at_threshold(p, y, 0.5);
  EXPECT_EQ(cm, (eval::ConfusionMatrix{2, 0, 0, 2}));
  EXPECT_THROW(eval::confusion_at_threshold(p, std::vector<int>{0}, 0.5), Error);
}

TEST(Confusion, MonotoneInThreshold) {
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(200);
    std::vector<int> y(200);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::round(u(rng) * 10) / 10;
      y[i] = u(rng) < 0.3;
    }
    eval::ConfusionMatrix prev = eval::confusion_at_threshold(p, y, 0.0);
    for (double t : {0.1, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0}) {
      auto cm = eval::confusion_at_threshold(p, y, t);
      EXPECT_LE(cm.fp, prev.fp);
      EXPECT_GE(cm.fn, prev.fn);
      EXPECT_EQ(cm.total(), 200u);
      prev = cm;
    }
  }
}

TEST(Evaluate, SweepsThresholdsAndRecordsLineage) {
  auto train = noisy_blobs(600, 4, 20);
  auto test = noisy_blobs(300, 4, 21);
  eval::EvalOptions opt;
  opt.forest = {40, 3, 1};
  auto report = eval::evaluate_dataset(train, test, opt, {"real"});
  ASSERT_EQ(report.results.size(), 5u);
  EXPECT_EQ(report.train_real_rows, 600u);
  EXPECT_EQ(report.train_synthetic_rows, 0u);
  for (std::size_t i = 0; i < report.results.size(); ++i) {
    const auto& r = report.results[i];
    EXPECT_EQ(r.cm.total(), 300u);
    EXPECT_GE(r.scores.macro, 0.0);
    EXPECT_LE(r.scores.macro, 1.0);
    if (i) EXPECT_GT(r.threshold, report.results[i - 1].threshold);
  }
  EXPECT_GT(report.best_macro_f1(), 0.6);
  auto j = eval::to_json(report);
  EXPECT_EQ(j["thresholds"].size(), 5u);
  std::ostringstream csv;
  eval::write_csv_header(csv);
  eval::write_csv_rows(csv, report);
  const auto text = csv.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
}

TEST(Evaluate, RejectsBadThresholds) {
  auto train = noisy_blobs(60, 2, 1);
  eval::EvalOptions opt;
  opt.forest = {5, 0, 1};
  opt.thresholds = {0.5, 0.4};
  EXPECT_THROW(eval::evaluate_dataset(train, train, opt), Error);
  opt.thresholds = {1.5};
  EXPECT_THROW(eval::evaluate_dataset(train, train, opt), Error);
}

TEST(Evaluate, BestIndexPrefersEarliestOnTies) {
  eval::EvalReport r;
  for (double t : {0.2, 0.4, 0.5}) {
    eval::ThresholdResult x;
    x.threshold = t;
    x.scores.macro = t == 0.2 ? 0.5 : 0.7;
    r.results.push_back(x);
  }
  EXPECT_EQ(r.best_index(), 1u);
}

TEST(Evaluate, IdenticalRowsDetection) {
  FlowDataset ds(2);
  ds.add(std::vector<double>{1, 2}, 0);
  EXPECT_FALSE(eval::all_rows_identical(ds));
  ds.add(std::vector<double>{1, 2}, 0);
  EXPECT_TRUE(eval::all_rows_identical(ds));
  ds.add(std::vector<double>{1, 3}, 0);
  EXPECT_FALSE(eval::all_rows_identical(ds));
}
