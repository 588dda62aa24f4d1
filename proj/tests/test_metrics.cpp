#include "flowgan/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace flowgan;
using namespace flowgan::metrics;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix random_samples(Rng& rng, Eigen::Index n, Eigen::Index d, double shift) {
  std::normal_distribution<double> g(shift, 1.0);
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = g(rng);
  return m;
}

// Brute-force assignment: linear scan for the edge interval, computing the
// edges independently of the grid.
std::size_t oracle_bin(double v, double lo, double hi, std::size_t w) {
  for (std::size_t k = 0; k + 1 < w; ++k) {
    const double upper = lo + (hi - lo) * static_cast<double>(k + 1) / static_cast<double>(w);
    if (v < upper) return k;
  }
  return w - 1;
}

struct Dense {
  std::vector<double> mass;
};

Dense dense_mass(const Matrix& s, const std::vector<double>& lo, const std::vector<double>& hi,
                 std::size_t w) {
  const auto d = static_cast<std::size_t>(s.cols());
  std::size_t total = 1;
  for (std::size_t j = 0; j < d; ++j) total *= w;
  std::vector<std::size_t> counts(total, 0);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    std::size_t flat = 0;
    for (std::size_t j = 0; j < d; ++j) flat = flat * w + oracle_bin(s(i, static_cast<Eigen::Index>(j)), lo[j], hi[j], w);
    ++counts[flat];
  }
  Dense out;
  out.mass.resize(total);
  for (std::size_t k = 0; k < total; ++k) out.mass[k] = static_cast<double>(counts[k]) / static_cast<double>(s.rows());
  return out;
}

}  // namespace

TEST(Partition, TwoPointBoundsAndVolume) {
  auto grid = build_partition(rows({{0, 0}}), rows({{1, 1}}), 2);
  EXPECT_EQ(grid.lower(0), 0.0);
  EXPECT_EQ(grid.upper(1), 1.0);
  EXPECT_DOUBLE_EQ(grid.bin_volume(), 0.25);
  EXPECT_FALSE(grid.any_degenerate());
}

TEST(Partition, IdenticalSetsUseTheirOwnRange) {
  Matrix a = rows({{1, 5}, {3, 2}, {2, 4}});
  auto grid = build_partition(a, a, 4);
  EXPECT_EQ(grid.lower(0), 1.0);
  EXPECT_EQ(grid.upper(0), 3.0);
  EXPECT_EQ(grid.lower(1), 2.0);
  EXPECT_EQ(grid.upper(1), 5.0);
}

TEST(Partition, EveryRandomSampleIsContained) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a = random_samples(rng, 300, 3, 0.0);
    Matrix b = random_samples(rng, 200, 3, 1.5);
    auto grid = build_partition(a, b, 7 + static_cast<std::size_t>(trial));
    for (const Matrix* m : {&a, &b}) {
      for (Eigen::Index i = 0; i < m->rows(); ++i) {
        EXPECT_TRUE(grid.locate({m->data() + i * 3, 3}).has_value());
      }
    }
    EXPECT_EQ(histogram_mass(grid, a).out_of_bounds, 0u);
  }
}

TEST(Partition, EdgesStrictlyIncreasingAndTopEdgeExact) {
  auto grid = build_partition(rows({{0.1}}), rows({{0.7}}), 3);
  const auto& e = grid.edges(0);
  ASSERT_EQ(e.size(), 4u);
  for (std::size_t k = 0; k + 1 < e.size(); ++k) EXPECT_LT(e[k], e[k + 1]);
  EXPECT_EQ(e.back(), 0.7);
  // Top edge belongs to the last bin.
  EXPECT_EQ((*grid.locate(std::vector<double>{0.7}))[0], 2u);
  EXPECT_EQ((*grid.locate(std::vector<double>{0.1}))[0], 0u);
}

TEST(Partition, DegenerateDimensionCollapses) {
  auto grid = build_partition(rows({{2, 0}, {2, 1}}), rows({{2, 3}}), 4);
  EXPECT_TRUE(grid.degenerate(0));
  EXPECT_FALSE(grid.degenerate(1));
  EXPECT_EQ(grid.bins_in(0), 1u);
  EXPECT_DOUBLE_EQ(grid.bin_volume(), 0.75);
}

TEST(Partition, RejectsBadInput) {
  EXPECT_THROW(build_partition(rows({{0}}), rows({{1}}), 1), Error);
  EXPECT_THROW(build_partition(Matrix(0, 2), rows({{1, 1}}), 4), Error);
  EXPECT_THROW(build_partition(rows({{0}}), rows({{1, 1}}), 4), Error);
}

TEST(Mass, SingleAndSplitBins) {
  auto grid = build_partition(rows({{0}}), rows({{1}}), 2);
  auto one = histogram_mass(grid, rows({{0.1}, {0.2}, {0.3}, {0.4}}));
  ASSERT_EQ(one.occupied(), 1u);
  EXPECT_EQ(one.mass.begin()->second, 1.0);

  auto two = histogram_mass(grid, rows({{0.1}, {0.2}, {0.8}, {0.9}}));
  ASSERT_EQ(two.occupied(), 2u);
  for (const auto& [bin, m] : two.mass) EXPECT_EQ(m, 0.5);
}

TEST(Mass, OutOfBoundsRowsAreCountedAndExcluded) {
  auto grid = build_partition(rows({{0}}), rows({{1}}), 2);
  auto t = histogram_mass(grid, rows({{0.1}, {2.0}, {-1.0}, {0.9}}));
  EXPECT_EQ(t.out_of_bounds, 2u);
  double total = 0;
  for (const auto& [bin, m] : t.mass) total += m;
  EXPECT_DOUBLE_EQ(total, 0.5);
}

TEST(Mass, MatchesBruteForceOracle) {
  Rng rng(11);
  Matrix a = random_samples(rng, 10000, 3, 0.0);
  Matrix b = random_samples(rng, 10, 3, 0.0);
  const std::size_t w = 9;
  auto grid = build_partition(a, b, w);
  std::vector<double> lo(3), hi(3);
  for (std::size_t j = 0; j < 3; ++j) {
    lo[j] = grid.lower(j);
    hi[j] = grid.upper(j);
  }
  auto table = histogram_mass(grid, a);
  auto dense = dense_mass(a, lo, hi, w);
  std::size_t occupied = 0;
  for (std::size_t k = 0; k < dense.mass.size(); ++k) {
    if (dense.mass[k] == 0.0) continue;
    ++occupied;
    BinIndex idx{static_cast<std::uint32_t>(k / (w * w)), static_cast<std::uint32_t>(k / w % w),
                 static_cast<std::uint32_t>(k % w)};
    auto it = table.mass.find(idx);
    ASSERT_NE(it, table.mass.end());
    EXPECT_EQ(it->second, dense.mass[k]);
  }
  EXPECT_EQ(occupied, table.occupied());
}

TEST(L1, IdenticalIsZeroAndDisjointIsForced) {
  auto grid = build_partition(rows({{0, 0}}), rows({{1, 1}}), 2);
  auto a = histogram_mass(grid, rows({{0, 0}}));
  auto b = histogram_mass(grid, rows({{1, 1}}));
  EXPECT_EQ(l1_distance(grid, a, a), 0.0);
  EXPECT_DOUBLE_EQ(l1_distance(grid, a, b), 0.5);
}

TEST(L1, ProportionalCountsGiveZero) {
  auto grid = build_partition(rows({{0}}), rows({{1}}), 2);
  auto a = histogram_mass(grid, rows({{0.1}, {0.9}}));
  auto b = histogram_mass(grid, rows({{0.2}, {0.3}, {0.7}, {0.8}}));
  EXPECT_EQ(l1_distance(grid, a, b), 0.0);
}

TEST(L1, GridMismatchThrows) {
  auto g1 = build_partition(rows({{0}}), rows({{1}}), 2);
  auto g2 = build_partition(rows({{0}}), rows({{2}}), 2);
  auto a = histogram_mass(g1, rows({{0.5}}));
  auto b = histogram_mass(g2, rows({{0.5}}));
  EXPECT_THROW(l1_distance(g1, a, b), Error);
  EXPECT_THROW(jaccard_index(g1, a, b), Error);
}

TEST(L1, SparseEqualsDenseOracleBitForBit) {
  Rng rng(21);
  for (int trial = 0; trial < 12; ++trial) {
    const Eigen::Index d = 1 + trial % 4;
    const std::size_t w = d == 4 ? 12 : 20 + static_cast<std::size_t>(trial);
    Matrix a = random_samples(rng, 2000, d, 0.0);
    Matrix b = random_samples(rng, 1500, d, 0.4 * trial / 12.0);
    auto grid = build_partition(a, b, w);
    std::vector<double> lo(static_cast<std::size_t>(d)), hi(lo.size());
    for (std::size_t j = 0; j < lo.size(); ++j) {
      lo[j] = grid.lower(j);
      hi[j] = grid.upper(j);
    }
    auto da = dense_mass(a, lo, hi, w);
    auto db = dense_mass(b, lo, hi, w);
    double sum = 0.0;
    for (std::size_t k = 0; k < da.mass.size(); ++k) sum += std::abs(da.mass[k] - db.mass[k]);
    double volume = 1.0;
    for (std::size_t j = 0; j < lo.size(); ++j) volume *= (hi[j] - lo[j]) / static_cast<double>(w);
    const double oracle = volume * sum;

    auto ma = histogram_mass(grid, a);
    auto mb = histogram_mass(grid, b);
    EXPECT_EQ(l1_distance(grid, ma, mb), oracle) << "trial " << trial;
    EXPECT_EQ(l1_distance(grid, ma, mb), l1_distance(grid, mb, ma));
  }
}

TEST(Jaccard, ForcedExamples) {
  auto grid = build_partition(rows({{0}}), rows({{1}}), 3);
  auto ab = histogram_mass(grid, rows({{0.1}, {0.5}}));
  auto bc = histogram_mass(grid, rows({{0.5}, {0.9}}));
  auto c = histogram_mass(grid, rows({{0.9}}));
  auto a = histogram_mass(grid, rows({{0.1}}));
  EXPECT_DOUBLE_EQ(jaccard_index(grid, ab, bc), 1.0 / 3.0);
  EXPECT_EQ(jaccard_index(grid, ab, ab), 1.0);
  EXPECT_EQ(jaccard_index(grid, a, c), 0.0);
  auto empty = histogram_mass(grid, Matrix(0, 1));
  EXPECT_THROW(jaccard_index(grid, empty, empty), Error);
}

TEST(Jaccard, SymmetricAndBounded) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a = random_samples(rng, 400, 2, 0.0);
    Matrix b = random_samples(rng, 300, 2, 0.3 * trial);
    auto grid = build_partition(a, b, 10);
    auto ma = histogram_mass(grid, a);
    auto mb = histogram_mass(grid, b);
    const double j = jaccard_index(grid, ma, mb);
    EXPECT_GE(j, 0.0);
    EXPECT_LE(j, 1.0);
    EXPECT_EQ(j, jaccard_index(grid, mb, ma));
  }
}

TEST(Jaccard, RefiningNeverIncreasesOnSeparatedSupports) {
  Matrix a = rows({{0.00, 0.0}, {0.10, 0.3}, {0.33, 0.9}, {0.52, 0.5}});
  Matrix b = rows({{0.05, 0.05}, {0.21, 0.41}, {0.47, 0.77}, {1.00, 1.0}});
  double previous = 1.0;
  for (std::size_t w : {2u, 4u, 8u, 16u, 32u, 64u}) {
    auto grid = build_partition(a, b, w);
    const double j = jaccard_index(grid, histogram_mass(grid, a), histogram_mass(grid, b));
    EXPECT_LE(j, previous) << "w=" << w;
    previous = j;
  }
  EXPECT_EQ(previous, 0.0);
}

TEST(Percentile, LinearInterpolation) {
  Matrix a = rows({{1}, {3}});
  Matrix b = rows({{2}, {4}, {5}});
  EXPECT_DOUBLE_EQ(pooled_percentile(a, b, 0, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(pooled_percentile(a, b, 0, 100.0), 5.0);
  EXPECT_DOUBLE_EQ(pooled_percentile(a, b, 0, 50.0), 3.0);
  EXPECT_DOUBLE_EQ(pooled_percentile(a, b, 0, 10.0), 1.4);
}

TEST(Percentile, ZeroMatchesPlainJaccard) {
  Rng rng(8);
  Matrix a = random_samples(rng, 500, 2, 0.0);
  Matrix b = random_samples(rng, 500, 2, 0.5);
  auto grid = build_partition(a, b, 12);
  const double plain = jaccard_index(grid, histogram_mass(grid, a), histogram_mass(grid, b));
  EXPECT_EQ(jaccard_from_percentile(a, b, 12, 0.0), plain);
}

TEST(Percentile, IdenticalSetsGiveOne) {
  Rng rng(9);
  Matrix a = random_samples(rng, 300, 3, 0.0);
  for (double p : {0.0, 1.0, 10.0, 49.0}) EXPECT_EQ(jaccard_from_percentile(a, a, 8, p), 1.0);
}

TEST(Percentile, OutlierTrimDoesNotLowerJaccard) {
  // b equals a except for one extreme low outlier in a; the trim drops the
  // outlier and the same low rows from both sides.
  Rng rng(10);
  Matrix b = random_samples(rng, 400, 2, 0.0);
  Matrix a(401, 2);
  a.topRows(400) = b;
  a.row(400) << -8.0, -8.0;
  auto grid = build_partition(a, b, 20);
  const double plain = jaccard_index(grid, histogram_mass(grid, a), histogram_mass(grid, b));
  const double trimmed = jaccard_from_percentile(a, b, 20, 1.0);
  EXPECT_LT(plain, 1.0);
  EXPECT_GE(trimmed, plain);
  EXPECT_EQ(trimmed, 1.0);
}

TEST(Percentile, RejectsBadInput) {
  Matrix a = rows({{1}, {2}});
  EXPECT_THROW(jaccard_from_percentile(a, a, 4, 50.0), Error);
  EXPECT_THROW(jaccard_from_percentile(a, a, 4, -1.0), Error);
  // Every row of b sits below the pooled 40th percentile.
  Matrix lo = rows({{0}, {0}});
  Matrix hi = rows({{5}, {6}, {7}, {8}, {9}, {10}, {11}, {12}});
  EXPECT_THROW(jaccard_from_percentile(hi, lo, 4, 40.0), Error);
}

TEST(Compare, BinDumpOrderedByMass) {
  auto grid = build_partition(rows({{0}}), rows({{1}}), 4);
  auto a = histogram_mass(grid, rows({{0.1}, {0.9}, {0.95}, {0.6}}));
  auto b = histogram_mass(grid, rows({{0.3}}));
  auto rows_out = compare_bins(a, b);
  ASSERT_EQ(rows_out.size(), 4u);
  EXPECT_EQ(rows_out[0].mass_a, 0.0);
  EXPECT_EQ(rows_out[0].mass_b, 1.0);
  EXPECT_EQ(rows_out.back().bin, BinIndex{3});
  EXPECT_EQ(rows_out.back().mass_a, 0.5);
  for (std::size_t i = 1; i < rows_out.size(); ++i) EXPECT_LE(rows_out[i - 1].mass_a, rows_out[i].mass_a);
  std::ostringstream csv;
  write_bin_comparison(csv, rows_out, "mass_real", "mass_synth");
  EXPECT_EQ(csv.str().substr(0, 28), "rank,b1,mass_real,mass_synth");
}
