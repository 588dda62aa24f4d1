#include "flowgan/policy.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace flowgan::policy {

namespace {

Error arg_error(const std::string& what) { return Error(ErrorKind::invalid_argument, what); }

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string join(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? "+" : "") + ids[i];
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Baseline

MeanBaseline fit_mean_baseline(const data::FlowDataset& real_train) {
  const auto counts = real_train.class_counts();
  if (!counts.count(0) || !counts.count(1)) throw Error(ErrorKind::invalid_data, "baseline needs both classes");
  MeanBaseline b;
  b.dimension = real_train.dimension();
  for (const auto& [label, part] : data::split_by_label(real_train)) {
    if (part.size() < 2) {
      throw Error(ErrorKind::invalid_data, "class " + std::to_string(label) + " has fewer than 2 rows");
    }
    std::vector<double> mean(b.dimension, 0.0), var(b.dimension, 0.0);
    const double n = static_cast<double>(part.size());
    for (std::size_t j = 0; j < b.dimension; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < part.size(); ++i) s += part.value(i, j);
      mean[j] = s / n;
      double ss = 0.0;
      for (std::size_t i = 0; i < part.size(); ++i) ss += (part.value(i, j) - mean[j]) * (part.value(i, j) - mean[j]);
      var[j] = ss / n;
    }
    b.mean[label] = std::move(mean);
    b.variance[label] = std::move(var);
  }
  return b;
}

data::FlowDataset sample_baseline(const MeanBaseline& baseline, int label, std::size_t n, Rng& rng) {
  if (n == 0) throw arg_error("sample_baseline needs n > 0");
  auto m = baseline.mean.find(label);
  if (m == baseline.mean.end()) throw arg_error("baseline has no class " + std::to_string(label));
  const auto& var = baseline.variance.at(label);
  data::FlowDataset out(baseline.dimension);
  out.reserve(n);
  std::vector<double> row(baseline.dimension);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = m->second[j] + std::sqrt(var[j]) * g(rng);
    out.add(row, label, data::Origin::synthetic);
  }
  return out;
}

nlohmann::json to_json(const MeanBaseline& b) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [label, mean] : b.mean) {
    classes[std::to_string(label)] = {{"mean", mean}, {"variance", b.variance.at(label)}};
  }
  return {{"dimension", b.dimension}, {"classes", classes}};
}

// ---------------------------------------------------------------------------
// Specs

void PolicySpec::validate() const {
  if (n0 == 0 || n1 == 0) throw arg_error("policy row counts must be positive");
  if (policy == Policy::p3 && n0 != n1) throw arg_error("policy P3 needs equal row counts");
  if (draws == 0) throw arg_error("draws must be >= 1");
}

PolicySpec PolicySpec::reference(Policy p) {
  PolicySpec s;
  s.policy = p;
  if (p == Policy::p3) s.n0 = 4000;
  return s;
}

Policy parse_policy(const std::string& text) {
  if (text == "P1" || text == "p1") return Policy::p1;
  if (text == "P2" || text == "p2") return Policy::p2;
  if (text == "P3" || text == "p3") return Policy::p3;
  throw arg_error("unknown policy '" + text + "' (expected P1, P2 or P3)");
}

std::string to_string(Policy p) {
  switch (p) {
    case Policy::p1: return "P1";
    case Policy::p2: return "P2";
    default: return "P3";
  }
}

ElitismSpec parse_elitism(const std::string& text) {
  ElitismSpec e;
  if (text == "none") return e;
  const auto colon = text.find(':');
  const auto name = text.substr(0, colon);
  if (name == "f1") e.criterion = Criterion::f1;
  else if (name == "l1") e.criterion = Criterion::l1;
  else if (name == "jaccard") e.criterion = Criterion::jaccard;
  else throw arg_error("unknown elitism criterion '" + name + "'");
  if (colon != std::string::npos) {
    try {
      std::size_t used = 0;
      const long k = std::stol(text.substr(colon + 1), &used);
      if (used != text.size() - colon - 1 || k < 1) throw std::invalid_argument("k");
      e.top_k = static_cast<std::size_t>(k);
    } catch (const std::exception&) {
      throw arg_error("elitism top-k must be a positive integer in '" + text + "'");
    }
  }
  return e;
}

std::string to_string(const ElitismSpec& e) {
  switch (e.criterion) {
    case Criterion::none: return "none";
    case Criterion::f1: return "f1:" + std::to_string(e.top_k);
    case Criterion::l1: return "l1:" + std::to_string(e.top_k);
    default: return "jaccard:" + std::to_string(e.top_k);
  }
}

// ---------------------------------------------------------------------------
// Pools

const wgan::Checkpoint& PoolEntry::get() const {
  if (!checkpoint) {
    if (path.empty()) throw arg_error("pool entry " + id + " has neither a checkpoint nor a path");
    checkpoint = std::make_shared<const wgan::Checkpoint>(wgan::load_checkpoint(path));
  }
  return *checkpoint;
}

PoolEntry PoolEntry::from(wgan::Checkpoint ckpt, CheckpointMetrics metrics) {
  PoolEntry e;
  e.id = ckpt.id;
  e.step = ckpt.step;
  e.label = ckpt.label;
  e.metrics = metrics;
  e.checkpoint = std::make_shared<const wgan::Checkpoint>(std::move(ckpt));
  return e;
}

Pool rank_checkpoints(const Pool& pool, const ElitismSpec& elitism) {
  if (elitism.criterion == Criterion::none) return pool;
  if (elitism.top_k == 0) throw arg_error("elitism top_k must be >= 1");
  auto metric = [&](const PoolEntry& e) -> double {
    std::optional<double> v;
    const char* name = "";
    switch (elitism.criterion) {
      case Criterion::f1: v = e.metrics.macro_f1, name = "macro_f1"; break;
      case Criterion::l1: v = e.metrics.l1, name = "l1"; break;
      default: v = e.metrics.jaccard, name = "jaccard"; break;
    }
    if (!v) throw Error(ErrorKind::invalid_data, std::string("checkpoint ") + e.id + " has no " + name + " metric");
    // Larger is better after this sign flip.
    return elitism.criterion == Criterion::l1 ? -*v : *v;
  };
  std::vector<std::pair<double, const PoolEntry*>> keyed;
  for (const auto& e : pool) keyed.emplace_back(metric(e), &e);
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second->step < b.second->step;
  });
  Pool out;
  for (std::size_t i = 0; i < keyed.size() && i < elitism.top_k; ++i) out.push_back(*keyed[i].second);
  return out;
}

// ---------------------------------------------------------------------------
// Assembly

Assembled assemble_from(const PolicySpec& spec, const std::vector<const PoolEntry*>& chosen0,
                        const std::vector<const PoolEntry*>& chosen1, std::uint64_t generation_seed) {
  spec.validate();
  const std::size_t per = spec.policy == Policy::p2 ? 2 : 1;
  if (chosen0.size() != per || chosen1.size() != per) throw arg_error("wrong number of checkpoints for policy");
  Assembled out;
  bool first = true;
  for (const auto* chosen : {&chosen0, &chosen1}) {
    const std::size_t total = chosen == &chosen0 ? spec.n0 : spec.n1;
    const int label = chosen == &chosen0 ? 0 : 1;
    for (std::size_t k = 0; k < per; ++k) {
      const auto& entry = *(*chosen)[k];
      const auto& ckpt = entry.get();
      if (ckpt.label != label) throw arg_error("checkpoint " + entry.id + " has the wrong label for its pool");
      const std::size_t rows = per == 1 ? total : (k == 0 ? (total + 1) / 2 : total / 2);
      if (rows == 0) continue;
      Rng rng(derive_seed(generation_seed, fnv1a(entry.id) ^ k));
      auto part = wgan::generate(ckpt, rows, {}, rng);
      if (first) {
        out.dataset = std::move(part);
        first = false;
      } else {
        out.dataset.append(part);
      }
      out.ids.push_back(entry.id);
    }
  }
  return out;
}

namespace {

std::vector<const PoolEntry*> pick(const Pool& pool, std::size_t count, Rng& rng) {
  if (pool.size() < count) throw arg_error("pool too small for policy");
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<const PoolEntry*> out;
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> u(k, idx.size() - 1);
    std::swap(idx[k], idx[u(rng)]);
    out.push_back(&pool[idx[k]]);
  }
  // Canonical order so {a,b} and {b,a} are the same choice.
  std::sort(out.begin(), out.end(), [](const PoolEntry* a, const PoolEntry* b) { return a->step < b->step; });
  return out;
}

std::vector<std::vector<const PoolEntry*>> all_choices(const Pool& pool, std::size_t count) {
  std::vector<std::vector<const PoolEntry*>> out;
  if (count == 1) {
    for (const auto& e : pool) out.push_back({&e});
  } else {
    for (std::size_t i = 0; i < pool.size(); ++i)
      for (std::size_t j = i + 1; j < pool.size(); ++j) {
        std::vector<const PoolEntry*> c{&pool[i], &pool[j]};
        if (c[1]->step < c[0]->step) std::swap(c[0], c[1]);
        out.push_back(c);
      }
  }
  return out;
}

}  // namespace

Assembled assemble_policy_dataset(const PolicySpec& spec, const Pool& pool0, const Pool& pool1, Rng& rng,
                                  std::uint64_t generation_seed) {
  spec.validate();
  if (pool0.empty() || pool1.empty()) throw arg_error("checkpoint pools must be non-empty");
  const std::size_t per = spec.policy == Policy::p2 ? 2 : 1;
  auto c0 = pick(pool0, per, rng);
  auto c1 = pick(pool1, per, rng);
  return assemble_from(spec, c0, c1, generation_seed);
}

// ---------------------------------------------------------------------------
// Selection

SelectionResult select_best(const Pool& pool0_in, const Pool& pool1_in, const data::FlowDataset& real_test,
                            const SelectOptions& options) {
  const auto& spec = options.policy;
  spec.validate();
  if (pool0_in.empty() || pool1_in.empty()) throw arg_error("checkpoint pools must be non-empty");
  const Pool pool0 = rank_checkpoints(pool0_in, options.elitism0);
  const Pool pool1 = rank_checkpoints(pool1_in, options.elitism1);
  const std::size_t per = spec.policy == Policy::p2 ? 2 : 1;
  if (pool0.size() < per || pool1.size() < per) throw arg_error("pool too small for policy");

  std::vector<std::pair<std::vector<const PoolEntry*>, std::vector<const PoolEntry*>>> plan;
  if (options.exhaustive) {
    for (const auto& a : all_choices(pool0, per))
      for (const auto& b : all_choices(pool1, per)) plan.emplace_back(a, b);
  } else {
    Rng rng(options.seed);
    for (std::size_t d = 0; d < spec.draws; ++d) {
      auto a = pick(pool0, per, rng);
      auto b = pick(pool1, per, rng);
      plan.emplace_back(std::move(a), std::move(b));
    }
  }

  SelectionResult result;
  std::map<std::string, std::size_t> seen;
  for (std::size_t d = 0; d < plan.size(); ++d) {
    LeaderboardEntry entry;
    entry.draw = d;
    for (const auto* set : {&plan[d].first, &plan[d].second})
      for (const auto* e : *set) {
        entry.ids.push_back(e->id);
        entry.steps.push_back(e->step);
      }
    const auto key = join(entry.ids);
    if (auto it = seen.find(key); it != seen.end()) {
      entry.report = result.leaderboard[it->second].report;
      entry.error = result.leaderboard[it->second].error;
    } else {
      try {
        auto assembled = assemble_from(spec, plan[d].first, plan[d].second, options.seed);
        entry.report = eval::evaluate_dataset(assembled.dataset, real_test, options.eval, assembled.ids);
        entry.report->degenerate = eval::all_rows_identical(assembled.dataset);
      } catch (const Error& e) {
        entry.error = e.what();
      }
      seen.emplace(key, d);
    }
    result.leaderboard.push_back(std::move(entry));
  }

  bool any = false;
  for (std::size_t i = 0; i < result.leaderboard.size(); ++i) {
    const auto& e = result.leaderboard[i];
    if (!e.ok()) continue;
    if (!any) {
      result.chosen = i;
      any = true;
      continue;
    }
    const auto& b = result.leaderboard[result.chosen];
    if (e.macro_f1() > b.macro_f1() || (e.macro_f1() == b.macro_f1() && e.steps < b.steps)) result.chosen = i;
  }
  if (!any) {
    throw Error(ErrorKind::evaluation, "every draw failed: " + result.leaderboard.front().error);
  }
  return result;
}

nlohmann::json to_json(const SelectionResult& result) {
  nlohmann::json board = nlohmann::json::array();
  for (const auto& e : result.leaderboard) {
    nlohmann::json j = {{"draw", e.draw}, {"ids", e.ids}, {"steps", e.steps}};
    if (e.report) {
      j["best_threshold"] = e.report->best().threshold;
      j["macro_f1"] = e.report->best_macro_f1();
    } else {
      j["error"] = e.error;
    }
    board.push_back(j);
  }
  const auto& best = result.best();
  return {{"chosen",
           {{"draw", best.draw}, {"ids", best.ids}, {"steps", best.steps}, {"report", eval::to_json(*best.report)}}},
          {"leaderboard", board}};
}

void write_leaderboard(std::ostream& out, const SelectionResult& result) {
  out << "draw,ckpt0,ckpt1,best_threshold,macro_f1\n";
  for (const auto& e : result.leaderboard) {
    const std::size_t half = e.ids.size() / 2;
    std::vector<std::string> a(e.ids.begin(), e.ids.begin() + static_cast<std::ptrdiff_t>(half));
    std::vector<std::string> b(e.ids.begin() + static_cast<std::ptrdiff_t>(half), e.ids.end());
    out << e.draw << ',' << join(a) << ',' << join(b) << ',';
    if (e.report) out << format_double(e.report->best().threshold) << ',' << format_double(e.report->best_macro_f1());
    else out << ',';
    out << '\n';
  }
}

}  // namespace flowgan::policy
