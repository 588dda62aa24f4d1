#include "flowgan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace flowgan::metrics {

namespace {

Error arg_error(const std::string& what) { return Error(ErrorKind::invalid_argument, what); }

}  // namespace

HistogramGrid::HistogramGrid(std::vector<double> lower, std::vector<double> upper,
                             std::size_t bins_per_dim)
    : lower_(std::move(lower)), upper_(std::move(upper)), w_(bins_per_dim) {
  if (lower_.empty() || lower_.size() != upper_.size()) throw arg_error("grid bounds mismatch");
  if (w_ < 2) throw arg_error("need at least 2 bins per dimension");
  for (std::size_t j = 0; j < lower_.size(); ++j) {
    const double lo = lower_[j], hi = upper_[j];
    if (!std::isfinite(lo) || !std::isfinite(hi) || hi < lo) throw arg_error("invalid grid bounds");
    const bool flat = !(hi > lo);
    degenerate_.push_back(flat);
    std::vector<double> e;
    if (flat) {
      e = {lo, hi};
    } else {
      e.resize(w_ + 1);
      for (std::size_t k = 0; k < w_; ++k) {
        e[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(w_);
      }
      e[w_] = hi;
      volume_ *= (hi - lo) / static_cast<double>(w_);
    }
    edges_.push_back(std::move(e));
  }
}

bool HistogramGrid::any_degenerate() const {
  return std::find(degenerate_.begin(), degenerate_.end(), true) != degenerate_.end();
}

std::optional<BinIndex> HistogramGrid::locate(std::span<const double> x) const {
  if (x.size() != dimension()) throw arg_error("sample dimension does not match grid");
  BinIndex idx(dimension());
  for (std::size_t j = 0; j < dimension(); ++j) {
    const double v = x[j];
    if (!(v >= lower_[j] && v <= upper_[j])) return std::nullopt;
    if (degenerate_[j]) {
      idx[j] = 0;
      continue;
    }
    const auto& e = edges_[j];
    const double t = (v - lower_[j]) / (upper_[j] - lower_[j]) * static_cast<double>(w_);
    auto k = static_cast<std::size_t>(std::clamp(std::floor(t), 0.0, static_cast<double>(w_ - 1)));
    // The arithmetic guess can be off by one near an edge; the edges decide.
    while (k > 0 && v < e[k]) --k;
    while (k + 1 < w_ && v >= e[k + 1]) ++k;
    idx[j] = static_cast<std::uint32_t>(k);
  }
  return idx;
}

HistogramGrid build_partition(const Matrix& a, const Matrix& b, std::size_t bins_per_dim) {
  if (a.rows() == 0 || b.rows() == 0) throw arg_error("build_partition needs non-empty sample sets");
  if (a.cols() != b.cols()) throw arg_error("sample sets differ in dimension");
  const auto d = static_cast<std::size_t>(a.cols());
  std::vector<double> lo(d), hi(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    lo[j] = std::min(a.col(c).minCoeff(), b.col(c).minCoeff());
    hi[j] = std::max(a.col(c).maxCoeff(), b.col(c).maxCoeff());
  }
  return HistogramGrid(std::move(lo), std::move(hi), bins_per_dim);
}

MassTable histogram_mass(const HistogramGrid& grid, const Matrix& samples) {
  if (static_cast<std::size_t>(samples.cols()) != grid.dimension()) {
    throw arg_error("sample dimension does not match grid");
  }
  MassTable table{grid, {}, static_cast<std::size_t>(samples.rows()), 0};
  std::map<BinIndex, std::size_t> counts;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    auto bin = grid.locate({samples.data() + i * samples.cols(), grid.dimension()});
    if (!bin) {
      ++table.out_of_bounds;
      continue;
    }
    ++counts[*bin];
  }
  const double n = static_cast<double>(samples.rows());
  for (const auto& [bin, c] : counts) table.mass.emplace(bin, static_cast<double>(c) / n);
  return table;
}

double l1_distance(const HistogramGrid& grid, const MassTable& a, const MassTable& b) {
  if (!(a.grid == grid) || !(b.grid == grid)) throw arg_error("mass tables built on a different grid");
  double sum = 0.0;
  auto ia = a.mass.begin();
  auto ib = b.mass.begin();
  while (ia != a.mass.end() || ib != b.mass.end()) {
    if (ib == b.mass.end() || (ia != a.mass.end() && ia->first < ib->first)) {
      sum += std::abs(ia->second - 0.0);
      ++ia;
    } else if (ia == a.mass.end() || ib->first < ia->first) {
      sum += std::abs(0.0 - ib->second);
      ++ib;
    } else {
      sum += std::abs(ia->second - ib->second);
      ++ia;
      ++ib;
    }
  }
  return grid.bin_volume() * sum;
}

double jaccard_index(const HistogramGrid& grid, const MassTable& a, const MassTable& b) {
  if (!(a.grid == grid) || !(b.grid == grid)) throw arg_error("mass tables built on a different grid");
  if (a.mass.empty() && b.mass.empty()) throw arg_error("jaccard_index of two empty tables");
  std::size_t shared = 0;
  for (const auto& [bin, m] : a.mass) shared += b.mass.count(bin);
  const std::size_t united = a.mass.size() + b.mass.size() - shared;
  return static_cast<double>(shared) / static_cast<double>(united);
}

double pooled_percentile(const Matrix& a, const Matrix& b, std::size_t j, double p) {
  const auto c = static_cast<Eigen::Index>(j);
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(a.rows() + b.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) v.push_back(a(i, c));
  for (Eigen::Index i = 0; i < b.rows(); ++i) v.push_back(b(i, c));
  if (v.empty()) throw arg_error("percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return frac == 0.0 ? v[lo] : v[lo] + (v[hi] - v[lo]) * frac;
}

namespace {

Matrix keep_rows_at_or_above(const Matrix& m, const std::vector<double>& cut) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    bool keep = true;
    for (Eigen::Index j = 0; j < m.cols() && keep; ++j) keep = m(i, j) >= cut[static_cast<std::size_t>(j)];
    if (keep) rows.push_back(i);
  }
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
  return out;
}

}  // namespace

double jaccard_from_percentile(const Matrix& a, const Matrix& b, std::size_t bins_per_dim, double p) {
  if (!(p >= 0.0 && p < 50.0)) throw arg_error("percentile must lie in [0, 50)");
  if (a.cols() != b.cols()) throw arg_error("sample sets differ in dimension");
  std::vector<double> cut(static_cast<std::size_t>(a.cols()));
  for (std::size_t j = 0; j < cut.size(); ++j) cut[j] = pooled_percentile(a, b, j, p);
  Matrix ta = keep_rows_at_or_above(a, cut);
  Matrix tb = keep_rows_at_or_above(b, cut);
  if (ta.rows() == 0 || tb.rows() == 0) {
    throw Error(ErrorKind::evaluation, "percentile trim left an empty sample set");
  }
  auto grid = build_partition(ta, tb, bins_per_dim);
  return jaccard_index(grid, histogram_mass(grid, ta), histogram_mass(grid, tb));
}

Similarity compare(const Matrix& a, const Matrix& b, std::size_t bins_per_dim) {
  auto grid = build_partition(a, b, bins_per_dim);
  auto ma = histogram_mass(grid, a);
  auto mb = histogram_mass(grid, b);
  Similarity s;
  s.l1 = l1_distance(grid, ma, mb);
  s.jaccard = jaccard_index(grid, ma, mb);
  s.jaccard_p1 = jaccard_from_percentile(a, b, bins_per_dim, 1.0);
  return s;
}

std::vector<BinComparison> compare_bins(const MassTable& a, const MassTable& b) {
  if (!(a.grid == b.grid)) throw arg_error("mass tables built on a different grid");
  std::map<BinIndex, BinComparison> merged;
  for (const auto& [bin, m] : a.mass) merged[bin] = {bin, m, 0.0};
  for (const auto& [bin, m] : b.mass) {
    auto [it, fresh] = merged.try_emplace(bin, BinComparison{bin, 0.0, m});
    if (!fresh) it->second.mass_b = m;
  }
  std::vector<BinComparison> rows;
  rows.reserve(merged.size());
  for (auto& [bin, row] : merged) rows.push_back(std::move(row));
  std::stable_sort(rows.begin(), rows.end(), [](const BinComparison& x, const BinComparison& y) {
    if (x.mass_a != y.mass_a) return x.mass_a < y.mass_a;
    return x.mass_b < y.mass_b;
  });
  return rows;
}

void write_bin_comparison(std::ostream& out, const std::vector<BinComparison>& rows, const std::string& name_a,
                          const std::string& name_b) {
  const std::size_t d = rows.empty() ? 0 : rows.front().bin.size();
  out << "rank";
  for (std::size_t j = 0; j < d; ++j) out << ",b" << (j + 1);
  out << ',' << name_a << ',' << name_b << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out << r;
    for (auto k : rows[r].bin) out << ',' << k;
    out << ',' << format_double(rows[r].mass_a) << ',' << format_double(rows[r].mass_b) << '\n';
  }
}

}  // namespace flowgan::metrics
