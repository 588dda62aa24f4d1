#include "flowgan/cli.hpp"

#include "flowgan/eval.hpp"
#include "flowgan/metrics.hpp"
#include "flowgan/policy.hpp"
#include "flowgan/wgan.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace flowgan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return exit_usage;
    case ErrorKind::invalid_data: return exit_invalid_data;
    case ErrorKind::io: return exit_io;
    case ErrorKind::divergence: return exit_divergence;
    case ErrorKind::evaluation: return exit_evaluation;
  }
  return exit_internal;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

fs::path output_path(const std::string& p) {
  fs::path path(p);
  if (path.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / path;
  }
  return path;
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::ofstream open_out(const fs::path& file) {
  ensure_parent(file);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + file.string());
  return out;
}

void write_json(const fs::path& file, const json& j) {
  auto out = open_out(file);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::io, "failed writing " + file.string());
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::io, "cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_data, file.string() + ": " + e.what());
  }
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

data::FlowDataset only_label(const data::FlowDataset& d, int label) {
  auto parts = data::split_by_label(d);
  auto it = parts.find(label);
  if (it == parts.end()) return data::FlowDataset(d.dimension());
  return it->second;
}

eval::EvalOptions eval_options(std::size_t trees, std::uint64_t seed, std::size_t threads,
                               const std::vector<double>& thresholds) {
  eval::EvalOptions o;
  o.forest.n_trees = trees;
  o.forest.seed = seed;
  o.forest.threads = threads;
  if (!thresholds.empty()) o.thresholds = thresholds;
  return o;
}

void write_report(const fs::path& dir, const eval::EvalReport& report, json extra = json::object()) {
  json j = eval::to_json(report);
  for (auto& [k, v] : extra.items()) j[k] = v;
  write_json(dir / "report.json", j);
  auto csv = open_out(dir / "report.csv");
  eval::write_csv_header(csv);
  eval::write_csv_rows(csv, report);
}

// ---------------------------------------------------------------------------
// Subcommands

struct Common {
  std::uint64_t seed = 0;
  std::size_t trees = 300;
  std::size_t threads = 0;
  std::vector<double> thresholds;
};

void add_eval_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--trees", c.trees, "Forest size")->capture_default_str();
  cmd->add_option("--threads", c.threads, "Forest worker threads (0: hardware)")->capture_default_str();
  cmd->add_option("--thresholds", c.thresholds, "Decision thresholds (default 0.2 0.4 0.5 0.6 0.8)");
}

struct FixtureArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
};

void run_fixture(const FixtureArgs& a, std::ostream& out) {
  auto spec = data::fixture_from_json(read_json(a.spec));
  if (a.seed) spec.seed = *a.seed;
  const auto d = data::synth_fixture(spec);
  const auto path = output_path(a.out);
  ensure_parent(path);
  data::save_dataset(d, path);
  out << "wrote " << d.size() << " rows to " << a.out << '\n';
}

struct TrainArgs {
  std::string config, data, test, out;
  int label = 0;
  std::size_t steps = 0;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> checkpoint_every;
  std::size_t metric_rows = 0;
  std::size_t bins = metrics::kDefaultBinsPerDim;
  std::size_t eval_trees = 30;
  std::size_t threads = 0;
  bool no_metrics = false;
};

void run_train(const TrainArgs& a, std::ostream& out) {
  auto config = wgan::load_gan_config(a.config);
  if (a.seed) config.seed = *a.seed;
  if (a.checkpoint_every) config.checkpoint_every = *a.checkpoint_every;
  if (a.steps == 0) throw Error(ErrorKind::invalid_argument, "--steps must be >= 1");
  const auto all = read_dataset(a.data);
  if (all.dimension() != config.data_dimension) {
    throw Error(ErrorKind::invalid_argument, "config dimension does not match the data");
  }
  const auto cls = only_label(all, a.label);
  const auto other = only_label(all, 1 - a.label);
  if (cls.empty()) throw Error(ErrorKind::invalid_data, "no rows with label " + std::to_string(a.label));
  std::optional<data::FlowDataset> test;
  if (!a.test.empty()) test = read_dataset(a.test);
  if (test && other.empty()) throw Error(ErrorKind::invalid_data, "marginal metrics need rows of the other class");

  const std::size_t metric_rows = a.metric_rows ? std::min(a.metric_rows, cls.size()) : cls.size();
  Matrix real_sample = cls.features().topRows(static_cast<Eigen::Index>(metric_rows));

  const auto dir = output_path(a.out);
  fs::create_directories(dir / "checkpoints");

  RunManifest m;
  m.config = wgan::to_json(config);
  m.config_digest = hex64(fnv1a(m.config.dump()));
  m.seed = config.seed;
  m.label = a.label;
  m.steps = a.steps;
  m.metric_rows = a.no_metrics ? 0 : metric_rows;
  m.bins = a.bins;
  m.run_id = "label" + std::to_string(a.label) + "-" +
             hex64(fnv1a(m.config_digest + ":" + std::to_string(a.steps) + ":" + std::to_string(cls.size())));

  wgan::TrainOptions opt;
  opt.steps = a.steps;
  opt.label = a.label;
  if (config.complementary_ratio > 0.0 && !other.empty()) opt.complementary = &other;
  const auto eval_opts = eval_options(a.eval_trees, derive_seed(config.seed, 7), a.threads, {});
  opt.on_checkpoint = [&](const wgan::Checkpoint& ckpt) {
    ManifestCheckpoint mc;
    mc.step = ckpt.step;
    mc.id = ckpt.id;
    char name[32];
    std::snprintf(name, sizeof(name), "step-%06zu.json", ckpt.step);
    mc.file = std::string("checkpoints/") + name;
    wgan::save_checkpoint(ckpt, dir / mc.file);
    mc.diagnostics = wgan::to_json(ckpt.report);
    if (!a.no_metrics) {
      Rng rng(metric_sample_seed(config.seed, ckpt.step));
      const auto synth = wgan::generate(ckpt, metric_rows, {}, rng).features();
      const auto sim = metrics::compare(real_sample, synth, a.bins);
      mc.l1 = sim.l1;
      mc.jaccard = sim.jaccard;
      mc.jaccard_p1 = sim.jaccard_p1;
      if (test) {
        eval::Sizes sizes;
        (a.label == 0 ? sizes.label0 : sizes.label1) = cls.size();
        const auto report = eval::evaluate_marginal(ckpt, other, *test, sizes, eval_opts,
                                                    derive_seed(metric_sample_seed(config.seed, ckpt.step), 1));
        mc.macro_f1 = report.best_macro_f1();
      }
    }
    m.checkpoints.push_back(std::move(mc));
  };

  const auto result = wgan::train(config, cls, opt);
  m.diverged = result.diverged;
  m.error = result.error;
  m.scaler = data::to_json(result.scaler);

  write_json(dir / "manifest.json", to_json(m));
  {
    auto csv = open_out(dir / "diagnostics.csv");
    csv << "step,d_cycles,g_cycles,ratio_tp,ratio_tn,ratio_fake_pass,d_loss,g_loss,d_capped,g_capped\n";
    for (const auto& r : result.reports) {
      csv << r.step << ',' << r.d_cycles << ',' << r.g_cycles << ',' << format_double(r.ratio_tp) << ','
          << format_double(r.ratio_tn) << ',' << format_double(r.ratio_fake_pass) << ',' << format_double(r.d_loss)
          << ',' << format_double(r.g_loss) << ',' << int(r.d_capped) << ',' << int(r.g_capped) << '\n';
    }
  }
  {
    auto csv = open_out(dir / "metrics.csv");
    write_metric_series(csv, m);
  }
  out << "trained " << result.reports.size() << " steps, kept " << m.checkpoints.size() << " checkpoints in "
      << a.out << '\n';
  if (result.diverged) throw Error(ErrorKind::divergence, "training diverged: " + result.error);
}

struct GenerateArgs {
  std::string checkpoint, out, filter = "none";
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double percentile = 50.0;
  bool clip_negatives = false;
};

void run_generate(const GenerateArgs& a, std::ostream& out) {
  const auto ckpt = wgan::load_checkpoint(a.checkpoint);
  wgan::GenerateOptions opt;
  if (a.filter == "none") opt.filter = wgan::GenerateOptions::Filter::none;
  else if (a.filter == "positive") opt.filter = wgan::GenerateOptions::Filter::positive;
  else if (a.filter == "percentile") opt.filter = wgan::GenerateOptions::Filter::percentile;
  else throw Error(ErrorKind::invalid_argument, "unknown filter '" + a.filter + "'");
  opt.percentile = a.percentile;
  opt.clip_negatives = a.clip_negatives;
  Rng rng(a.seed);
  const auto d = wgan::generate(ckpt, a.n, opt, rng);
  const auto path = output_path(a.out);
  ensure_parent(path);
  data::save_dataset(d, path);
  out << "wrote " << d.size() << " rows to " << a.out << '\n';
}

struct MetricsArgs {
  std::string real, synth, out;
  std::optional<int> label;
  std::size_t bins = metrics::kDefaultBinsPerDim;
};

void run_metrics(const MetricsArgs& a, std::ostream& out) {
  auto real = read_dataset(a.real);
  auto synth = read_dataset(a.synth);
  if (a.label) {
    real = only_label(real, *a.label);
    synth = only_label(synth, *a.label);
  }
  if (real.empty() || synth.empty()) throw Error(ErrorKind::invalid_data, "metrics need non-empty datasets");
  const auto sim = metrics::compare(real.features(), synth.features(), a.bins);
  json j = {{"bins_per_dim", a.bins},
            {"real_rows", real.size()},
            {"synth_rows", synth.size()},
            {"l1", sim.l1},
            {"jaccard", sim.jaccard},
            {"jaccard_p1", sim.jaccard_p1}};
  if (a.label) j["label"] = *a.label;
  write_json(output_path(a.out), j);
  out << "l1=" << format_double(sim.l1) << " jaccard=" << format_double(sim.jaccard) << '\n';
}

struct EvaluateArgs {
  std::string mode = "pair", test, out, train, checkpoint, real_other, ckpt0, ckpt1;
  std::size_t n0 = 0, n1 = 0;
  Common common;
};

void run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto test = read_dataset(a.test);
  const auto opts = eval_options(a.common.trees, a.common.seed, a.common.threads, a.common.thresholds);
  eval::EvalReport report;
  if (a.mode == "real") {
    if (a.train.empty()) throw Error(ErrorKind::invalid_argument, "--mode real needs --train");
    report = eval::evaluate_dataset(read_dataset(a.train), test, opts, {fs::path(a.train).filename().string()});
  } else if (a.mode == "marginal") {
    if (a.checkpoint.empty() || a.real_other.empty()) {
      throw Error(ErrorKind::invalid_argument, "--mode marginal needs --checkpoint and --real-other");
    }
    const auto ckpt = wgan::load_checkpoint(a.checkpoint);
    const auto other = only_label(read_dataset(a.real_other), 1 - ckpt.label);
    report = eval::evaluate_marginal(ckpt, other, test, {a.n0, a.n1}, opts, derive_seed(a.common.seed, 1));
  } else if (a.mode == "pair") {
    if (a.ckpt0.empty() || a.ckpt1.empty()) throw Error(ErrorKind::invalid_argument, "--mode pair needs --ckpt0 and --ckpt1");
    report = eval::evaluate_pair(wgan::load_checkpoint(a.ckpt0), wgan::load_checkpoint(a.ckpt1), test, {a.n0, a.n1},
                                 opts, derive_seed(a.common.seed, 1));
  } else {
    throw Error(ErrorKind::invalid_argument, "unknown mode '" + a.mode + "'");
  }
  write_report(output_path(a.out), report, {{"mode", a.mode}, {"seed", a.common.seed}});
  out << "best threshold " << format_double(report.best().threshold) << " macro-F1 "
      << format_double(report.best_macro_f1()) << '\n';
}

struct SelectArgs {
  std::string run0, run1, policy = "P1", elitism = "none", elitism0, elitism1, test, out;
  std::optional<std::size_t> n0, n1;
  std::size_t draws = 20;
  bool exhaustive = false;
  Common common;
};

policy::Pool pool_from(const fs::path& run_dir) {
  const auto m = load_manifest(run_dir);
  policy::Pool pool;
  for (const auto& c : m.checkpoints) {
    policy::PoolEntry e;
    e.id = c.id;
    e.step = c.step;
    e.label = m.label;
    e.metrics = {c.macro_f1, c.l1, c.jaccard, c.jaccard_p1};
    e.path = run_dir / c.file;
    pool.push_back(std::move(e));
  }
  if (pool.empty()) throw Error(ErrorKind::invalid_data, run_dir.string() + " has no checkpoints");
  return pool;
}

void run_select(const SelectArgs& a, std::ostream& out) {
  policy::SelectOptions o;
  o.policy = policy::PolicySpec::reference(policy::parse_policy(a.policy));
  if (a.n0) o.policy.n0 = *a.n0;
  if (a.n1) o.policy.n1 = *a.n1;
  o.policy.draws = a.draws;
  o.elitism0 = policy::parse_elitism(a.elitism0.empty() ? a.elitism : a.elitism0);
  o.elitism1 = policy::parse_elitism(a.elitism1.empty() ? a.elitism : a.elitism1);
  o.eval = eval_options(a.common.trees, a.common.seed, a.common.threads, a.common.thresholds);
  o.seed = a.common.seed;
  o.exhaustive = a.exhaustive;
  const auto pool0 = pool_from(a.run0);
  const auto pool1 = pool_from(a.run1);
  for (const auto& e : pool0)
    if (e.label != 0) throw Error(ErrorKind::invalid_argument, "--run0 must be a label-0 run");
  for (const auto& e : pool1)
    if (e.label != 1) throw Error(ErrorKind::invalid_argument, "--run1 must be a label-1 run");
  const auto result = policy::select_best(pool0, pool1, read_dataset(a.test), o);
  const auto dir = output_path(a.out);
  json j = policy::to_json(result);
  j["policy"] = {{"policy", policy::to_string(o.policy.policy)},
                 {"n0", o.policy.n0},
                 {"n1", o.policy.n1},
                 {"draws", o.policy.draws},
                 {"elitism0", policy::to_string(o.elitism0)},
                 {"elitism1", policy::to_string(o.elitism1)},
                 {"exhaustive", o.exhaustive}};
  j["seed"] = o.seed;
  write_json(dir / "selection.json", j);
  auto csv = open_out(dir / "leaderboard.csv");
  policy::write_leaderboard(csv, result);
  const auto& best = result.best();
  out << "best draw " << best.draw << " macro-F1 " << format_double(best.macro_f1()) << '\n';
}

struct BaselineArgs {
  std::string data, test, out;
  std::optional<std::size_t> n0, n1;
  Common common;
};

void run_baseline(const BaselineArgs& a, std::ostream& out) {
  const auto train = read_dataset(a.data);
  const auto test = read_dataset(a.test);
  const auto b = policy::fit_mean_baseline(train);
  const auto counts = train.class_counts();
  const std::size_t n0 = a.n0.value_or(counts.at(0)), n1 = a.n1.value_or(counts.at(1));
  Rng rng0(derive_seed(a.common.seed, 0)), rng1(derive_seed(a.common.seed, 1));
  auto synth = policy::sample_baseline(b, 0, n0, rng0);
  synth.append(policy::sample_baseline(b, 1, n1, rng1));
  const auto opts = eval_options(a.common.trees, a.common.seed, a.common.threads, a.common.thresholds);
  const auto report = eval::evaluate_dataset(synth, test, opts, {"baseline0", "baseline1"});
  write_report(output_path(a.out), report, {{"baseline", policy::to_json(b)}, {"seed", a.common.seed}});
  out << "baseline macro-F1 " << format_double(report.best_macro_f1()) << '\n';
}

struct PlotArgs {
  std::string run, out, real, synth;
  std::optional<std::size_t> step;
  std::optional<std::size_t> n;
  std::size_t bins = metrics::kDefaultBinsPerDim;
  std::uint64_t seed = 0;
};

void run_emit_plots(const PlotArgs& a, std::ostream& out) {
  const auto dir = output_path(a.out);
  std::optional<RunManifest> m;
  if (!a.run.empty()) {
    m = load_manifest(a.run);
    if (m->checkpoints.empty()) throw Error(ErrorKind::invalid_data, "manifest has no checkpoints");
    auto csv = open_out(dir / "metric_series.csv");
    write_metric_series(csv, *m);
    out << "wrote metric_series.csv\n";
  }
  if (a.real.empty()) return;
  auto real = read_dataset(a.real);
  data::FlowDataset synth;
  if (!a.synth.empty()) {
    synth = read_dataset(a.synth);
    if (m) real = only_label(real, m->label);
  } else {
    if (!m) throw Error(ErrorKind::invalid_argument, "--real needs --synth or --run");
    real = only_label(real, m->label);
    const ManifestCheckpoint* chosen = &m->checkpoints.back();
    if (a.step) {
      auto it = std::find_if(m->checkpoints.begin(), m->checkpoints.end(),
                             [&](const ManifestCheckpoint& c) { return c.step == *a.step; });
      if (it == m->checkpoints.end()) throw Error(ErrorKind::invalid_argument, "no checkpoint at that step");
      chosen = &*it;
    }
    const auto ckpt = wgan::load_checkpoint(fs::path(a.run) / chosen->file);
    Rng rng(a.seed);
    synth = wgan::generate(ckpt, a.n.value_or(real.size()), {}, rng);
  }
  if (real.empty() || synth.empty()) throw Error(ErrorKind::invalid_data, "histogram compare needs non-empty datasets");
  auto csv = open_out(dir / "histogram_compare.csv");
  write_histogram_compare(csv, real, synth, a.bins);
  out << "wrote histogram_compare.csv\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

nlohmann::json to_json(const RunManifest& m) {
  json ckpts = json::array();
  for (const auto& c : m.checkpoints) {
    ckpts.push_back({{"step", c.step},
                     {"id", c.id},
                     {"file", c.file},
                     {"diagnostics", c.diagnostics},
                     {"metrics",
                      {{"macro_f1", optional_json(c.macro_f1)},
                       {"l1", optional_json(c.l1)},
                       {"jaccard", optional_json(c.jaccard)},
                       {"jaccard_p1", optional_json(c.jaccard_p1)}}}});
  }
  return {{"format", "flowgan-run"},
          {"version", 1},
          {"run_id", m.run_id},
          {"config_digest", m.config_digest},
          {"seed", m.seed},
          {"label", m.label},
          {"steps", m.steps},
          {"metric_rows", m.metric_rows},
          {"bins_per_dim", m.bins},
          {"diverged", m.diverged},
          {"error", m.error},
          {"config", m.config},
          {"scaler", m.scaler},
          {"checkpoints", ckpts}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "flowgan-run" || j.at("version") != 1) {
      throw Error(ErrorKind::invalid_data, "not a run manifest");
    }
    RunManifest m;
    m.run_id = j.at("run_id");
    m.config_digest = j.at("config_digest");
    m.seed = j.at("seed");
    m.label = j.at("label");
    m.steps = j.at("steps");
    m.metric_rows = j.at("metric_rows");
    m.bins = j.at("bins_per_dim");
    m.diverged = j.at("diverged");
    m.error = j.at("error");
    m.config = j.at("config");
    m.scaler = j.at("scaler");
    for (const auto& c : j.at("checkpoints")) {
      ManifestCheckpoint mc;
      mc.step = c.at("step");
      mc.id = c.at("id");
      mc.file = c.at("file");
      mc.diagnostics = c.at("diagnostics");
      const auto& mt = c.at("metrics");
      mc.macro_f1 = optional_from(mt, "macro_f1");
      mc.l1 = optional_from(mt, "l1");
      mc.jaccard = optional_from(mt, "jaccard");
      mc.jaccard_p1 = optional_from(mt, "jaccard_p1");
      m.checkpoints.push_back(std::move(mc));
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_data, std::string("manifest: ") + e.what());
  }
}

RunManifest load_manifest(const std::filesystem::path& run_dir) {
  auto m = manifest_from_json(read_json(run_dir / "manifest.json"));
  for (const auto& c : m.checkpoints) {
    if (!fs::exists(run_dir / c.file)) throw Error(ErrorKind::io, "missing checkpoint file " + c.file);
  }
  return m;
}

std::uint64_t metric_sample_seed(std::uint64_t run_seed, std::size_t step) {
  return derive_seed(derive_seed(run_seed, 4), step);
}

void write_metric_series(std::ostream& out, const RunManifest& m) {
  std::vector<const ManifestCheckpoint*> rows;
  for (const auto& c : m.checkpoints) rows.push_back(&c);
  std::stable_sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->step < b->step; });
  out << "step,macro_f1,l1,jaccard,jaccard_p1\n";
  for (const auto* c : rows) {
    out << c->step << ',' << optional_cell(c->macro_f1) << ',' << optional_cell(c->l1) << ','
        << optional_cell(c->jaccard) << ',' << optional_cell(c->jaccard_p1) << '\n';
  }
}

void write_histogram_compare(std::ostream& out, const data::FlowDataset& real, const data::FlowDataset& synth,
                             std::size_t bins_per_dim) {
  const Matrix a = real.features(), b = synth.features();
  const auto grid = metrics::build_partition(a, b, bins_per_dim);
  const auto rows = metrics::compare_bins(metrics::histogram_mass(grid, a), metrics::histogram_mass(grid, b));
  metrics::write_bin_comparison(out, rows, "mass_real", "mass_synth");
}

data::FlowDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw Error(ErrorKind::invalid_data, path.string() + ": empty file");
  const auto columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  if (columns < 2) throw Error(ErrorKind::invalid_data, path.string() + ": header needs features and a label");
  return data::load_dataset(path, columns - 1);
}

// ---------------------------------------------------------------------------
// Dispatch

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic flow data with adaptive WGANs", "flowgan"};
  app.require_subcommand(1);

  FixtureArgs fixture;
  auto* c_fixture = app.add_subcommand("fixture", "Write a seeded synthetic dataset");
  c_fixture->add_option("--spec", fixture.spec, "Fixture spec JSON")->required();
  c_fixture->add_option("--out", fixture.out, "Output CSV")->required();
  c_fixture->add_option("--seed", fixture.seed, "Overrides the spec's seed");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train one class's WGAN and checkpoint it");
  c_train->add_option("--config", train.config, "GAN config JSON")->required();
  c_train->add_option("--data", train.data, "Training CSV")->required();
  c_train->add_option("--label", train.label, "Class to learn")->capture_default_str();
  c_train->add_option("--steps", train.steps, "Mini-batch steps")->required();
  c_train->add_option("--out", train.out, "Run directory")->required();
  c_train->add_option("--seed", train.seed, "Overrides the config's seed");
  c_train->add_option("--checkpoint-every", train.checkpoint_every, "Keep every k-th checkpoint");
  c_train->add_option("--test", train.test, "Test CSV for per-checkpoint marginal macro-F1");
  c_train->add_option("--metric-rows", train.metric_rows, "Rows compared for histogram metrics (0: class size)");
  c_train->add_option("--bins", train.bins, "Bins per dimension")->capture_default_str();
  c_train->add_option("--eval-trees", train.eval_trees, "Forest size for marginal evaluation")->capture_default_str();
  c_train->add_option("--threads", train.threads, "Forest worker threads (0: hardware)");
  c_train->add_flag("--no-metrics", train.no_metrics, "Skip per-checkpoint metrics");

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Sample rows from a checkpoint");
  c_gen->add_option("--checkpoint", gen.checkpoint, "Checkpoint JSON")->required();
  c_gen->add_option("--n", gen.n, "Rows to emit")->required();
  c_gen->add_option("--out", gen.out, "Output CSV")->required();
  c_gen->add_option("--seed", gen.seed, "Sampling seed")->capture_default_str();
  c_gen->add_option("--filter", gen.filter, "none, positive or percentile")->capture_default_str();
  c_gen->add_option("--percentile", gen.percentile, "Critic percentile for --filter percentile")->capture_default_str();
  c_gen->add_flag("--clip-negatives", gen.clip_negatives, "Drop rows negative in non-negative features");

  MetricsArgs met;
  auto* c_met = app.add_subcommand("metrics", "Histogram L1 and Jaccard between two datasets");
  c_met->add_option("--real", met.real, "Reference CSV")->required();
  c_met->add_option("--synth", met.synth, "Compared CSV")->required();
  c_met->add_option("--out", met.out, "Output JSON")->required();
  c_met->add_option("--label", met.label, "Restrict both sets to one class");
  c_met->add_option("--bins", met.bins, "Bins per dimension")->capture_default_str();

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Train a forest and score it on real test data");
  c_ev->add_option("--mode", ev.mode, "real, marginal or pair")->capture_default_str();
  c_ev->add_option("--test", ev.test, "Real test CSV")->required();
  c_ev->add_option("--out", ev.out, "Output directory")->required();
  c_ev->add_option("--train", ev.train, "Training CSV (mode real)");
  c_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint (mode marginal)");
  c_ev->add_option("--real-other", ev.real_other, "Real rows of the other class (mode marginal)");
  c_ev->add_option("--ckpt0", ev.ckpt0, "Label-0 checkpoint (mode pair)");
  c_ev->add_option("--ckpt1", ev.ckpt1, "Label-1 checkpoint (mode pair)");
  c_ev->add_option("--n0", ev.n0, "Synthetic label-0 rows");
  c_ev->add_option("--n1", ev.n1, "Synthetic label-1 rows");
  c_ev->add_option("--seed", ev.common.seed, "Seed")->capture_default_str();
  add_eval_flags(c_ev, ev.common);

  SelectArgs sel;
  auto* c_sel = app.add_subcommand("select", "Pick the best generator pair from two runs");
  c_sel->add_option("--run0", sel.run0, "Label-0 run directory")->required();
  c_sel->add_option("--run1", sel.run1, "Label-1 run directory")->required();
  c_sel->add_option("--test", sel.test, "Real test CSV")->required();
  c_sel->add_option("--out", sel.out, "Output directory")->required();
  c_sel->add_option("--policy", sel.policy, "P1, P2 or P3")->capture_default_str();
  c_sel->add_option("--elitism", sel.elitism, "none or <f1|l1|jaccard>[:k] for both pools")->capture_default_str();
  c_sel->add_option("--elitism0", sel.elitism0, "Elitism for the label-0 pool");
  c_sel->add_option("--elitism1", sel.elitism1, "Elitism for the label-1 pool");
  c_sel->add_option("--draws", sel.draws, "Sampled pairs")->capture_default_str();
  c_sel->add_option("--n0", sel.n0, "Label-0 rows (policy default otherwise)");
  c_sel->add_option("--n1", sel.n1, "Label-1 rows (policy default otherwise)");
  c_sel->add_flag("--exhaustive", sel.exhaustive, "Evaluate every pair instead of sampling");
  c_sel->add_option("--seed", sel.common.seed, "Seed")->capture_default_str();
  add_eval_flags(c_sel, sel.common);

  BaselineArgs base;
  auto* c_base = app.add_subcommand("baseline", "Score the per-class normal baseline");
  c_base->add_option("--data", base.data, "Real training CSV")->required();
  c_base->add_option("--test", base.test, "Real test CSV")->required();
  c_base->add_option("--out", base.out, "Output directory")->required();
  c_base->add_option("--n0", base.n0, "Label-0 rows (training count otherwise)");
  c_base->add_option("--n1", base.n1, "Label-1 rows (training count otherwise)");
  c_base->add_option("--seed", base.common.seed, "Seed")->capture_default_str();
  add_eval_flags(c_base, base.common);

  PlotArgs plot;
  auto* c_plot = app.add_subcommand("emit-plots", "Write plot data for a run");
  c_plot->add_option("--out", plot.out, "Output directory")->required();
  c_plot->add_option("--run", plot.run, "Run directory (metric series)");
  c_plot->add_option("--real", plot.real, "Real CSV for the histogram comparison");
  c_plot->add_option("--synth", plot.synth, "Synthetic CSV (otherwise generated from the run)");
  c_plot->add_option("--step", plot.step, "Checkpoint step (default: last)");
  c_plot->add_option("--n", plot.n, "Generated rows (default: real class size)");
  c_plot->add_option("--bins", plot.bins, "Bins per dimension")->capture_default_str();
  c_plot->add_option("--seed", plot.seed, "Sampling seed")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  }

  try {
    if (c_fixture->parsed()) run_fixture(fixture, out);
    else if (c_train->parsed()) run_train(train, out);
    else if (c_gen->parsed()) run_generate(gen, out);
    else if (c_met->parsed()) run_metrics(met, out);
    else if (c_ev->parsed()) run_evaluate(ev, out);
    else if (c_sel->parsed()) run_select(sel, out);
    else if (c_base->parsed()) run_baseline(base, out);
    else if (c_plot->parsed()) run_emit_plots(plot, out);
    return exit_ok;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_io;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return exit_internal;
  }
}

int run_command(const std::vector<std::string>& args) { return run_command(args, std::cout, std::cerr); }

}  // namespace flowgan::cli
