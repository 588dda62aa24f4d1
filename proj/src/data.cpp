#include "flowgan/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace flowgan::data {

namespace {

Error data_error(const std::string& what) { return Error(ErrorKind::invalid_data, what); }

void check_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw data_error("non-finite feature value");
  }
}

void check_label(int label) {
  if (label != 0 && label != 1) {
    throw data_error("label " + std::to_string(label) + " outside {0,1}");
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    fields.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

void append_double(std::string& out, double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, end);
}

}  // namespace

FlowDataset::FlowDataset(std::size_t dimension) : dimension_(dimension) {}

FlowDataset FlowDataset::from_matrix(const Matrix& features, int label, Origin origin) {
  FlowDataset ds(static_cast<std::size_t>(features.cols()));
  ds.reserve(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    ds.add({features.data() + i * features.cols(), static_cast<std::size_t>(features.cols())},
           label, origin);
  }
  return ds;
}

void FlowDataset::reserve(std::size_t rows) {
  values_.reserve(rows * dimension_);
  labels_.reserve(rows);
  origins_.reserve(rows);
}

void FlowDataset::add(std::span<const double> features, int label, Origin origin) {
  if (features.size() != dimension_) {
    throw data_error("record has " + std::to_string(features.size()) +
                     " features, dataset dimension is " + std::to_string(dimension_));
  }
  check_finite(features);
  check_label(label);
  values_.insert(values_.end(), features.begin(), features.end());
  labels_.push_back(label);
  origins_.push_back(origin);
}

void FlowDataset::append(const FlowDataset& other) {
  if (other.empty()) return;
  if (empty() && dimension_ == 0) dimension_ = other.dimension_;
  if (other.dimension_ != dimension_) throw data_error("dimension mismatch in append");
  values_.insert(values_.end(), other.values_.begin(), other.values_.end());
  labels_.insert(labels_.end(), other.labels_.begin(), other.labels_.end());
  origins_.insert(origins_.end(), other.origins_.begin(), other.origins_.end());
}

FlowRecord FlowDataset::record(std::size_t i) const {
  auto r = row(i);
  return {std::vector<double>(r.begin(), r.end()), labels_[i]};
}

Matrix FlowDataset::features() const {
  Matrix m(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(dimension_));
  std::copy(values_.begin(), values_.end(), m.data());
  return m;
}

std::map<int, std::size_t> FlowDataset::class_counts() const {
  std::map<int, std::size_t> counts;
  for (int l : labels_) ++counts[l];
  return counts;
}

std::size_t FlowDataset::count_origin(Origin origin) const {
  return static_cast<std::size_t>(std::count(origins_.begin(), origins_.end(), origin));
}

FlowDataset FlowDataset::subset(std::span<const std::size_t> indices) const {
  FlowDataset out(dimension_);
  out.reserve(indices.size());
  for (auto i : indices) {
    auto r = row(i);
    out.values_.insert(out.values_.end(), r.begin(), r.end());
    out.labels_.push_back(labels_[i]);
    out.origins_.push_back(origins_[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

FlowDataset parse_dataset(std::istream& in, std::size_t dimension) {
  if (dimension == 0) throw Error(ErrorKind::invalid_argument, "dimension must be positive");
  FlowDataset ds(dimension);
  std::string line;
  if (!std::getline(in, line)) throw data_error("missing header row");
  if (split_fields(line).size() != dimension + 1) {
    throw data_error("header has " + std::to_string(split_fields(line).size()) +
                     " columns, expected " + std::to_string(dimension + 1));
  }
  std::vector<double> features(dimension);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    auto fail = [&](const std::string& why) {
      return data_error("row " + std::to_string(row) + ": " + why);
    };
    auto fields = split_fields(line);
    if (fields.size() != dimension + 1) {
      throw fail("expected " + std::to_string(dimension) + " feature columns plus label, got " +
                 std::to_string(fields.size()) + " columns");
    }
    for (std::size_t j = 0; j < dimension; ++j) {
      auto f = fields[j];
      double v = 0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size()) {
        throw fail("malformed number '" + std::string(f) + "'");
      }
      if (!std::isfinite(v)) throw fail("non-finite value");
      features[j] = v;
    }
    auto lf = fields[dimension];
    int label = 0;
    auto [p, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (ec != std::errc() || p != lf.data() + lf.size()) {
      throw fail("malformed label '" + std::string(lf) + "'");
    }
    if (label != 0 && label != 1) throw fail("label " + std::to_string(label) + " outside {0,1}");
    ds.add(features, label, Origin::real);
  }
  return ds;
}

FlowDataset load_dataset(const std::filesystem::path& path, std::size_t dimension) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  try {
    return parse_dataset(in, dimension);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_dataset(const FlowDataset& dataset, std::ostream& out) {
  std::string buf;
  for (std::size_t j = 0; j < dataset.dimension(); ++j) {
    buf += 'f';
    buf += std::to_string(j + 1);
    buf += ',';
  }
  buf += "label\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (double v : dataset.row(i)) {
      append_double(buf, v);
      buf += ',';
    }
    buf += std::to_string(dataset.label(i));
    buf += '\n';
    if (buf.size() > (1u << 16)) {
      out << buf;
      buf.clear();
    }
  }
  out << buf;
}

void save_dataset(const FlowDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  write_dataset(dataset, out);
}

// ---------------------------------------------------------------------------
// Standardization

bool ScalerParams::any_degenerate() const {
  return std::find(degenerate.begin(), degenerate.end(), true) != degenerate.end();
}

void ScalerParams::apply_in_place(Matrix& values) const {
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    values.col(j) = (values.col(j).array() - shift[j]) / scale[j];
  }
}

void ScalerParams::invert_in_place(Matrix& values) const {
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    values.col(j) = values.col(j).array() * scale[j] + shift[j];
  }
}

namespace {

FlowDataset map_values(const FlowDataset& ds, const ScalerParams& s, bool forward) {
  if (ds.dimension() != s.dimension()) throw data_error("scaler dimension mismatch");
  FlowDataset out(ds.dimension());
  out.reserve(ds.size());
  std::vector<double> buf(ds.dimension());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.dimension(); ++j) {
      double v = ds.value(i, j);
      buf[j] = forward ? (v - s.shift[j]) / s.scale[j] : v * s.scale[j] + s.shift[j];
    }
    out.add(buf, ds.label(i), ds.origin(i));
  }
  return out;
}

}  // namespace

FlowDataset ScalerParams::apply(const FlowDataset& dataset) const {
  return map_values(dataset, *this, true);
}

FlowDataset ScalerParams::invert(const FlowDataset& dataset) const {
  return map_values(dataset, *this, false);
}

ScalerParams fit_scaler(const FlowDataset& dataset) {
  if (dataset.empty()) throw data_error("cannot standardize an empty dataset");
  const std::size_t d = dataset.dimension();
  const double n = static_cast<double>(dataset.size());
  ScalerParams s;
  s.shift.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  s.degenerate.assign(d, false);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) mean += dataset.value(i, j);
    mean /= n;
    double var = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      double t = dataset.value(i, j) - mean;
      var += t * t;
    }
    var /= n;
    s.shift[j] = mean;
    double sd = std::sqrt(var);
    if (!(sd > 0.0) || sd <= 1e-300) {
      s.degenerate[j] = true;
    } else {
      s.scale[j] = sd;
    }
  }
  return s;
}

std::pair<FlowDataset, ScalerParams> standardize(const FlowDataset& dataset) {
  auto s = fit_scaler(dataset);
  return {s.apply(dataset), s};
}

nlohmann::json to_json(const ScalerParams& scaler) {
  return {{"shift", scaler.shift},
          {"scale", scaler.scale},
          {"degenerate", std::vector<bool>(scaler.degenerate.begin(), scaler.degenerate.end())}};
}

ScalerParams scaler_from_json(const nlohmann::json& j) {
  ScalerParams s;
  s.shift = j.at("shift").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  s.degenerate = j.value("degenerate", std::vector<bool>(s.shift.size(), false));
  if (s.scale.size() != s.shift.size() || s.degenerate.size() != s.shift.size()) {
    throw data_error("scaler arrays differ in length");
  }
  for (double sc : s.scale) {
    if (!(sc > 0)) throw data_error("scaler scale must be positive");
  }
  return s;
}

std::map<int, FlowDataset> split_by_label(const FlowDataset& dataset) {
  std::map<int, std::vector<std::size_t>> idx;
  for (std::size_t i = 0; i < dataset.size(); ++i) idx[dataset.label(i)].push_back(i);
  std::map<int, FlowDataset> out;
  for (auto& [label, rows] : idx) out.emplace(label, dataset.subset(rows));
  return out;
}

// ---------------------------------------------------------------------------
// Fixtures

double Distribution::mean() const {
  switch (kind) {
    case Kind::exponential: return 1.0 / a;
    case Kind::lognormal: return std::exp(a + 0.5 * b * b);
    case Kind::uniform: return 0.5 * (a + b);
    case Kind::normal: return a;
  }
  return 0.0;
}

void Distribution::validate() const {
  auto bad = [](const std::string& w) { return Error(ErrorKind::invalid_argument, w); };
  switch (kind) {
    case Kind::exponential:
      if (!(a > 0) || !std::isfinite(a)) throw bad("exponential rate must be > 0");
      break;
    case Kind::lognormal:
    case Kind::normal:
      if (!(b > 0) || !std::isfinite(a) || !std::isfinite(b)) throw bad("sigma must be > 0");
      break;
    case Kind::uniform:
      if (!(a < b) || !std::isfinite(a) || !std::isfinite(b)) throw bad("uniform requires a < b");
      break;
  }
}

double Distribution::sample(Rng& rng) const {
  switch (kind) {
    case Kind::exponential: return std::exponential_distribution<double>(a)(rng);
    case Kind::lognormal: return std::lognormal_distribution<double>(a, b)(rng);
    case Kind::uniform: return std::uniform_real_distribution<double>(a, b)(rng);
    case Kind::normal: return std::normal_distribution<double>(a, b)(rng);
  }
  return 0.0;
}

double FixtureClass::mean(std::size_t feature) const {
  double wsum = 0, m = 0;
  for (const auto& c : components) {
    wsum += c.weight;
    m += c.weight * c.features.at(feature).mean();
  }
  return m / wsum;
}

void FixtureSpec::validate() const {
  auto bad = [](const std::string& w) { return Error(ErrorKind::invalid_argument, w); };
  if (dimension == 0) throw bad("fixture dimension must be positive");
  if (classes.empty()) throw bad("fixture has no classes");
  for (const auto& c : classes) {
    check_label(c.label);
    if (c.components.empty()) throw bad("fixture class without distributions");
    for (const auto& comp : c.components) {
      if (!(comp.weight > 0)) throw bad("mixture weight must be > 0");
      if (comp.features.size() != dimension) throw bad("component arity differs from dimension");
      for (const auto& d : comp.features) d.validate();
    }
  }
}

namespace {

Distribution distribution_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "exponential") return Distribution::exponential(j.at("rate").get<double>());
  if (kind == "lognormal") {
    return Distribution::lognormal(j.at("mu").get<double>(), j.at("sigma").get<double>());
  }
  if (kind == "uniform") return Distribution::uniform(j.at("a").get<double>(), j.at("b").get<double>());
  if (kind == "normal") {
    return Distribution::normal(j.at("mu").get<double>(), j.at("sigma").get<double>());
  }
  throw Error(ErrorKind::invalid_argument, "unknown distribution kind '" + kind + "'");
}

nlohmann::json distribution_to_json(const Distribution& d) {
  using K = Distribution::Kind;
  switch (d.kind) {
    case K::exponential: return {{"kind", "exponential"}, {"rate", d.a}};
    case K::lognormal: return {{"kind", "lognormal"}, {"mu", d.a}, {"sigma", d.b}};
    case K::uniform: return {{"kind", "uniform"}, {"a", d.a}, {"b", d.b}};
    case K::normal: return {{"kind", "normal"}, {"mu", d.a}, {"sigma", d.b}};
  }
  return {};
}

std::vector<Distribution> features_from_json(const nlohmann::json& j) {
  std::vector<Distribution> out;
  for (const auto& f : j) out.push_back(distribution_from_json(f));
  return out;
}

}  // namespace

FixtureSpec fixture_from_json(const nlohmann::json& j) {
  try {
    FixtureSpec spec;
    spec.dimension = j.at("dimension").get<std::size_t>();
    spec.seed = j.value("seed", std::uint64_t{0});
    for (const auto& jc : j.at("classes")) {
      FixtureClass c;
      c.label = jc.at("label").get<int>();
      c.count = jc.at("count").get<std::size_t>();
      if (jc.contains("components")) {
        for (const auto& comp : jc.at("components")) {
          c.components.push_back({comp.value("weight", 1.0), features_from_json(comp.at("features"))});
        }
      } else {
        c.components.push_back({1.0, features_from_json(jc.at("features"))});
      }
      spec.classes.push_back(std::move(c));
    }
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_argument, std::string("fixture spec: ") + e.what());
  }
}

nlohmann::json to_json(const FixtureSpec& spec) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : spec.classes) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& comp : c.components) {
      nlohmann::json feats = nlohmann::json::array();
      for (const auto& d : comp.features) feats.push_back(distribution_to_json(d));
      comps.push_back({{"weight", comp.weight}, {"features", feats}});
    }
    classes.push_back({{"label", c.label}, {"count", c.count}, {"components", comps}});
  }
  return {{"dimension", spec.dimension}, {"seed", spec.seed}, {"classes", classes}};
}

FlowDataset synth_fixture(const FixtureSpec& spec) {
  spec.validate();
  FlowDataset ds(spec.dimension);
  std::size_t total = 0;
  for (const auto& c : spec.classes) total += c.count;
  ds.reserve(total);
  std::vector<double> row(spec.dimension);
  for (std::size_t ci = 0; ci < spec.classes.size(); ++ci) {
    const auto& c = spec.classes[ci];
    Rng rng(derive_seed(spec.seed, ci));
    std::vector<double> weights;
    for (const auto& comp : c.components) weights.push_back(comp.weight);
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    for (std::size_t i = 0; i < c.count; ++i) {
      const auto& comp = c.components[c.components.size() == 1 ? 0 : pick(rng)];
      for (std::size_t j = 0; j < spec.dimension; ++j) row[j] = comp.features[j].sample(rng);
      ds.add(row, c.label, Origin::real);
    }
  }
  return ds;
}

}  // namespace flowgan::data
