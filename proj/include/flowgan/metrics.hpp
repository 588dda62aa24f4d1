#pragma once

// Histogram-based similarity between two sample sets: the sampling L1
// distance and the sampling Jaccard index of occupied bins, both over a
// shared uniform d-dimensional partition.

#include "flowgan/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flowgan::metrics {

/// Index tuple of a bin, one entry per dimension.
using BinIndex = std::vector<std::uint32_t>;

class HistogramGrid {
 public:
  /// Uniform partition of the box [lower, upper] with `bins_per_dim` bins
  /// per dimension. A dimension with lower == upper collapses to one bin
  /// and is reported by degenerate().
  HistogramGrid(std::vector<double> lower, std::vector<double> upper, std::size_t bins_per_dim);

  std::size_t dimension() const noexcept { return lower_.size(); }
  std::size_t bins_per_dim() const noexcept { return w_; }
  std::size_t bins_in(std::size_t j) const { return degenerate_[j] ? 1 : w_; }
  double lower(std::size_t j) const { return lower_[j]; }
  double upper(std::size_t j) const { return upper_[j]; }
  bool degenerate(std::size_t j) const { return degenerate_[j]; }
  bool any_degenerate() const;
  /// s_0 .. s_w for dimension j; the last edge equals upper(j) exactly.
  const std::vector<double>& edges(std::size_t j) const { return edges_[j]; }

  /// Volume of one cell: product over non-degenerate dimensions of
  /// (upper - lower) / w.
  double bin_volume() const noexcept { return volume_; }

  /// Cell containing x, half-open on the right except the last cell of each
  /// dimension, which includes its upper edge. nullopt when x is outside.
  std::optional<BinIndex> locate(std::span<const double> x) const;

  bool operator==(const HistogramGrid&) const = default;

 private:
  std::vector<double> lower_;
  std::vector<double> upper_;
  std::size_t w_;
  std::vector<bool> degenerate_;
  std::vector<std::vector<double>> edges_;
  double volume_ = 1.0;
};

/// Per-bin probability mass (count / n) of one sample set on one grid.
struct MassTable {
  HistogramGrid grid;
  std::map<BinIndex, double> mass;
  std::size_t samples = 0;
  /// Rows that fell outside the grid; excluded from every bin.
  std::size_t out_of_bounds = 0;

  std::size_t occupied() const noexcept { return mass.size(); }
};

/// Grid spanning the per-dimension min/max of the union of both sets.
HistogramGrid build_partition(const Matrix& a, const Matrix& b, std::size_t bins_per_dim);

MassTable histogram_mass(const HistogramGrid& grid, const Matrix& samples);

/// L * sum_k |h_a(C_k) - h_b(C_k)| over the union of occupied bins, summed in
/// lexicographic bin order.
double l1_distance(const HistogramGrid& grid, const MassTable& a, const MassTable& b);

/// |occupied(a) n occupied(b)| / |occupied(a) u occupied(b)|.
double jaccard_index(const HistogramGrid& grid, const MassTable& a, const MassTable& b);

/// Pooled p-th percentile (linear interpolation) of column j of a and b.
double pooled_percentile(const Matrix& a, const Matrix& b, std::size_t j, double p);

/// Drops every row of either set whose value in some dimension lies below
/// the pooled p-th percentile of that dimension, then computes the Jaccard
/// index on a fresh partition of the trimmed sets.
double jaccard_from_percentile(const Matrix& a, const Matrix& b, std::size_t bins_per_dim, double p);

struct Similarity {
  double l1 = 0.0;
  double jaccard = 0.0;
  double jaccard_p1 = 0.0;
};

/// All three measures on one comparison (the trimmed Jaccard uses p = 1).
Similarity compare(const Matrix& a, const Matrix& b, std::size_t bins_per_dim);

/// One row of a bin-by-bin comparison of two mass tables.
struct BinComparison {
  BinIndex bin;
  double mass_a = 0.0;
  double mass_b = 0.0;
};

/// Union of occupied bins, ordered by mass_a ascending, then mass_b
/// ascending, then bin index.
std::vector<BinComparison> compare_bins(const MassTable& a, const MassTable& b);

/// CSV: rank,b1..bd,<name_a>,<name_b>.
void write_bin_comparison(std::ostream& out, const std::vector<BinComparison>& rows,
                          const std::string& name_a = "mass_a", const std::string& name_b = "mass_b");

inline constexpr std::size_t kDefaultBinsPerDim = 20;

}  // namespace flowgan::metrics
