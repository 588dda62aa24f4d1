#pragma once

// Labeled flow-feature records: storage, CSV I/O, standardization, and
// seeded synthetic fixtures.

#include "flowgan/common.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flowgan::data {

/// Where a row came from. Used to prove that fully synthetic training sets
/// never contain real rows.
enum class Origin : std::uint8_t { real, synthetic };

struct FlowRecord {
  std::vector<double> features;
  int label = 0;
};

/// Fixed-arity numeric records with a 0/1 label per row. Values are stored
/// row-major so the whole table can be viewed as an n x d matrix.
class FlowDataset {
 public:
  explicit FlowDataset(std::size_t dimension = 0);

  /// Builds from a matrix with one label for every row.
  static FlowDataset from_matrix(const Matrix& features, int label, Origin origin);

  void reserve(std::size_t rows);
  void add(std::span<const double> features, int label, Origin origin = Origin::real);
  void append(const FlowDataset& other);

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  std::size_t dimension() const noexcept { return dimension_; }

  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * dimension_, dimension_};
  }
  double value(std::size_t i, std::size_t j) const { return values_[i * dimension_ + j]; }
  int label(std::size_t i) const { return labels_[i]; }
  Origin origin(std::size_t i) const { return origins_[i]; }
  FlowRecord record(std::size_t i) const;

  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<double>& values() const noexcept { return values_; }

  /// Copy of the feature table as an n x d matrix.
  Matrix features() const;

  std::map<int, std::size_t> class_counts() const;
  std::size_t count_origin(Origin origin) const;

  /// Rows at the given indices, in that order.
  FlowDataset subset(std::span<const std::size_t> indices) const;

  bool operator==(const FlowDataset& other) const = default;

 private:
  std::size_t dimension_;
  std::vector<double> values_;
  std::vector<int> labels_;
  std::vector<Origin> origins_;
};

/// Reads `f1,...,fd,label` CSV with a header row. Errors name the offending
/// data row (1-based, header excluded).
FlowDataset load_dataset(const std::filesystem::path& path, std::size_t dimension);
FlowDataset parse_dataset(std::istream& in, std::size_t dimension);

/// Writes the same format with shortest round-trip float formatting.
void save_dataset(const FlowDataset& dataset, const std::filesystem::path& path);
void write_dataset(const FlowDataset& dataset, std::ostream& out);

/// Per-feature affine map x -> (x - shift) / scale.
struct ScalerParams {
  std::vector<double> shift;
  std::vector<double> scale;
  /// Features whose variance was zero; their scale is forced to 1.
  std::vector<bool> degenerate;

  std::size_t dimension() const noexcept { return shift.size(); }
  bool any_degenerate() const;

  FlowDataset apply(const FlowDataset& dataset) const;
  FlowDataset invert(const FlowDataset& dataset) const;
  void apply_in_place(Matrix& values) const;
  void invert_in_place(Matrix& values) const;

  /// Image of raw value `raw` for feature j in standardized units.
  double standardized(std::size_t j, double raw) const { return (raw - shift[j]) / scale[j]; }

  bool operator==(const ScalerParams&) const = default;
};

/// Z-score parameters with population standard deviation.
ScalerParams fit_scaler(const FlowDataset& dataset);
std::pair<FlowDataset, ScalerParams> standardize(const FlowDataset& dataset);

nlohmann::json to_json(const ScalerParams& scaler);
ScalerParams scaler_from_json(const nlohmann::json& j);

std::map<int, FlowDataset> split_by_label(const FlowDataset& dataset);

// ---------------------------------------------------------------------------
// Fixtures

struct Distribution {
  enum class Kind { exponential, lognormal, uniform, normal };
  Kind kind = Kind::exponential;
  /// exponential: a = rate. lognormal/normal: a = mu, b = sigma.
  /// uniform: [a, b).
  double a = 1.0;
  double b = 0.0;

  static Distribution exponential(double rate) { return {Kind::exponential, rate, 0.0}; }
  static Distribution lognormal(double mu, double sigma) { return {Kind::lognormal, mu, sigma}; }
  static Distribution uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
  static Distribution normal(double mu, double sigma) { return {Kind::normal, mu, sigma}; }

  double mean() const;
  void validate() const;
  double sample(Rng& rng) const;
};

/// One product distribution (independent features) inside a class mixture.
struct FixtureComponent {
  double weight = 1.0;
  std::vector<Distribution> features;
};

struct FixtureClass {
  int label = 0;
  std::size_t count = 0;
  std::vector<FixtureComponent> components;

  double mean(std::size_t feature) const;
};

struct FixtureSpec {
  std::size_t dimension = 0;
  std::vector<FixtureClass> classes;
  std::uint64_t seed = 0;

  void validate() const;
};

FixtureSpec fixture_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FixtureSpec& spec);

/// Deterministic in `spec.seed`; rows are grouped by class in spec order.
FlowDataset synth_fixture(const FixtureSpec& spec);

}  // namespace flowgan::data
