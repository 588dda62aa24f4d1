#include "flowgan/eval.hpp"

#include "flowgan/wgan.hpp"

#include <algorithm>
#include <ostream>

namespace flowgan::eval {

namespace {

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

ClassScores scores(double tp, double fp, double fn) {
  ClassScores s;
  s.precision = ratio(tp, tp + fp);
  s.recall = ratio(tp, tp + fn);
  s.f1 = ratio(2.0 * s.precision * s.recall, s.precision + s.recall);
  return s;
}

}  // namespace

F1Report macro_f1(const ConfusionMatrix& cm) {
  const auto tn = static_cast<double>(cm.tn), fp = static_cast<double>(cm.fp);
  const auto fn = static_cast<double>(cm.fn), tp = static_cast<double>(cm.tp);
  F1Report r;
  r.class1 = scores(tp, fp, fn);
  // Label 0 as the positive class: its false positives are our false negatives.
  r.class0 = scores(tn, fn, fp);
  r.macro = 0.5 * (r.class0.f1 + r.class1.f1);
  return r;
}

ConfusionMatrix confusion_at_threshold(std::span<const double> probs, std::span<const int> labels,
                                       double threshold) {
  if (probs.size() != labels.size()) throw Error(ErrorKind::invalid_argument, "probability and label counts differ");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] > threshold;
    if (labels[i] == 1) (predicted ? cm.tp : cm.fn) += 1;
    else (predicted ? cm.fp : cm.tn) += 1;
  }
  return cm;
}

std::vector<double> default_thresholds() { return {0.2, 0.4, 0.5, 0.6, 0.8}; }

std::size_t EvalReport::best_index() const {
  if (results.empty()) throw Error(ErrorKind::evaluation, "empty evaluation report");
  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i)
    if (results[i].scores.macro > results[best].scores.macro) best = i;
  return best;
}

namespace {

nlohmann::json scores_json(const ClassScores& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? "+" : "") + ids[i];
  return out;
}

}  // namespace

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.results) {
    rows.push_back({{"threshold", r.threshold},
                    {"confusion", {{"tn", r.cm.tn}, {"fp", r.cm.fp}, {"fn", r.cm.fn}, {"tp", r.cm.tp}}},
                    {"class0", scores_json(r.scores.class0)},
                    {"class1", scores_json(r.scores.class1)},
                    {"macro_f1", r.scores.macro}});
  }
  nlohmann::json j = {{"ids", report.ids},
                      {"thresholds", rows},
                      {"degenerate", report.degenerate},
                      {"train_rows", report.train_rows},
                      {"train_real_rows", report.train_real_rows},
                      {"train_synthetic_rows", report.train_synthetic_rows},
                      {"test_rows", report.test_rows}};
  if (!report.results.empty()) {
    j["best_threshold"] = report.best().threshold;
    j["best_macro_f1"] = report.best_macro_f1();
  }
  return j;
}

void write_csv_header(std::ostream& out) { out << "ids,threshold,tn,fp,fn,tp,p0,r0,f0,p1,r1,f1,macro_f1\n"; }

void write_csv_rows(std::ostream& out, const EvalReport& report) {
  const auto ids = join_ids(report.ids);
  for (const auto& r : report.results) {
    const auto& s = r.scores;
    out << ids << ',' << format_double(r.threshold) << ',' << r.cm.tn << ',' << r.cm.fp << ',' << r.cm.fn << ','
        << r.cm.tp << ',' << format_double(s.class0.precision) << ',' << format_double(s.class0.recall) << ','
        << format_double(s.class0.f1) << ',' << format_double(s.class1.precision) << ','
        << format_double(s.class1.recall) << ',' << format_double(s.class1.f1) << ',' << format_double(s.macro)
        << '\n';
  }
}

bool all_rows_identical(const data::FlowDataset& rows) {
  if (rows.size() < 2) return false;
  const auto first = rows.row(0);
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (!std::equal(first.begin(), first.end(), rows.row(i).begin())) return false;
  return true;
}

EvalReport evaluate_dataset(const data::FlowDataset& train, const data::FlowDataset& test,
                            const EvalOptions& options, std::vector<std::string> ids) {
  if (train.empty()) throw Error(ErrorKind::evaluation, "empty training set");
  if (test.empty()) throw Error(ErrorKind::evaluation, "empty test set");
  if (train.dimension() != test.dimension()) throw Error(ErrorKind::invalid_argument, "train/test dimension mismatch");
  if (options.thresholds.empty()) throw Error(ErrorKind::invalid_argument, "no thresholds");
  for (std::size_t i = 0; i < options.thresholds.size(); ++i) {
    const double t = options.thresholds[i];
    if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorKind::invalid_argument, "thresholds must lie in [0, 1]");
    if (i > 0 && !(t > options.thresholds[i - 1])) {
      throw Error(ErrorKind::invalid_argument, "thresholds must be strictly increasing");
    }
  }

  const auto model = forest::train_forest(train, options.forest);
  const auto probs = model.predict_proba(test);

  EvalReport report;
  report.ids = std::move(ids);
  report.train_rows = train.size();
  report.train_real_rows = train.count_origin(data::Origin::real);
  report.train_synthetic_rows = train.count_origin(data::Origin::synthetic);
  report.test_rows = test.size();
  for (double t : options.thresholds) {
    ThresholdResult r;
    r.threshold = t;
    r.cm = confusion_at_threshold(probs, test.labels(), t);
    r.scores = macro_f1(r.cm);
    report.results.push_back(r);
  }
  return report;
}

EvalReport evaluate_marginal(const wgan::Checkpoint& ckpt, const data::FlowDataset& real_other,
                             const data::FlowDataset& real_test, Sizes sizes, const EvalOptions& options,
                             std::uint64_t generation_seed) {
  const auto counts = real_other.class_counts();
  if (counts.size() != 1 || counts.begin()->first == ckpt.label) {
    throw Error(ErrorKind::invalid_argument, "real_other must hold only the opposite class");
  }
  const std::size_t n = ckpt.label == 0 ? sizes.label0 : sizes.label1;
  if (n == 0) throw Error(ErrorKind::invalid_argument, "marginal evaluation needs synthetic rows");
  Rng rng(generation_seed);
  auto synthetic = wgan::generate(ckpt, n, {}, rng);
  const bool degenerate = all_rows_identical(synthetic);
  data::FlowDataset train = synthetic;
  train.append(real_other);
  auto report = evaluate_dataset(train, real_test, options, {ckpt.id});
  report.degenerate = degenerate;
  return report;
}

EvalReport evaluate_pair(const wgan::Checkpoint& ckpt0, const wgan::Checkpoint& ckpt1,
                         const data::FlowDataset& real_test, Sizes sizes, const EvalOptions& options,
                         std::uint64_t generation_seed) {
  if (ckpt0.label != 0 || ckpt1.label != 1) {
    throw Error(ErrorKind::invalid_argument, "pair evaluation needs a label-0 and a label-1 checkpoint");
  }
  if (sizes.label0 == 0 && sizes.label1 == 0) throw Error(ErrorKind::evaluation, "empty training set");
  if (sizes.label0 == 0 || sizes.label1 == 0) {
    throw Error(ErrorKind::evaluation, "pair evaluation needs rows of both classes");
  }
  Rng rng0(derive_seed(generation_seed, 0));
  Rng rng1(derive_seed(generation_seed, 1));
  auto train = wgan::generate(ckpt0, sizes.label0, {}, rng0);
  auto ones = wgan::generate(ckpt1, sizes.label1, {}, rng1);
  const bool degenerate = all_rows_identical(train) || all_rows_identical(ones);
  train.append(ones);
  auto report = evaluate_dataset(train, real_test, options, {ckpt0.id, ckpt1.id});
  report.degenerate = degenerate;
  return report;
}

}  // namespace flowgan::eval
