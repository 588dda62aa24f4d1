#include "flowgan/wgan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace flowgan::wgan {

namespace {

Error arg_error(const std::string& what) { return Error(ErrorKind::invalid_argument, what); }

// Kink position for features allowed to go negative: far below any
// standardized value, so the output is effectively linear.
constexpr double kNoKink = -1e300;

std::vector<double> to_vec(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

Matrix matrix_from(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  auto v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != rows * cols) throw Error(ErrorKind::invalid_data, "matrix size mismatch");
  Matrix m(rows, cols);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Latent space and noise

Matrix sample_noise(const NoiseSpec& noise, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  if (noise.std == 0.0) {
    m.setZero();
    return m;
  }
  if (noise.kind == NoiseSpec::Kind::normal) {
    std::normal_distribution<double> g(0.0, noise.std);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  } else {
    const double half = std::sqrt(3.0) * noise.std;
    std::uniform_real_distribution<double> u(-half, half);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  }
  return m;
}

void LatentSpec::validate() const {
  if (dimension == 0) throw arg_error("latent dimension must be positive");
  if (!(noise.std >= 0.0) || !std::isfinite(noise.std)) throw arg_error("latent noise std must be >= 0");
  if (embedding) {
    if (embedding->categories < 1 || embedding->categories > 20) {
      throw arg_error("embedding categories must lie in [1, 20]");
    }
    if (embedding->centroids.size() != 0 &&
        (embedding->centroids.rows() != static_cast<Eigen::Index>(embedding->categories) ||
         embedding->centroids.cols() != static_cast<Eigen::Index>(dimension))) {
      throw arg_error("centroid table must be categories x latent dimension");
    }
  }
}

void init_centroids(LatentSpec& latent, Rng& rng) {
  if (!latent.embedding || latent.embedding->centroids.size() != 0) return;
  auto& e = *latent.embedding;
  std::uniform_real_distribution<double> u(-e.centroid_scale, e.centroid_scale);
  e.centroids.resize(static_cast<Eigen::Index>(e.categories), static_cast<Eigen::Index>(latent.dimension));
  for (Eigen::Index i = 0; i < e.centroids.size(); ++i) e.centroids.data()[i] = u(rng);
}

LatentBatch sample_latent(const LatentSpec& latent, Eigen::Index n, Rng& rng) {
  if (n <= 0) throw arg_error("sample_latent needs n > 0");
  const auto l = static_cast<Eigen::Index>(latent.dimension);
  LatentBatch out;
  if (!latent.embedding) {
    out.z = sample_noise(latent.noise, n, l, rng);
    return out;
  }
  const auto& e = *latent.embedding;
  if (e.centroids.rows() != static_cast<Eigen::Index>(e.categories)) {
    throw arg_error("embedding centroids are not initialized");
  }
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(e.categories - 1));
  out.categories.resize(static_cast<std::size_t>(n));
  for (auto& c : out.categories) c = pick(rng);
  out.z = sample_noise(latent.noise, n, l, rng);
  for (Eigen::Index i = 0; i < n; ++i) out.z.row(i) += e.centroids.row(out.categories[static_cast<std::size_t>(i)]);
  return out;
}

// ---------------------------------------------------------------------------
// Config

void GanConfig::validate() const {
  if (data_dimension == 0) throw arg_error("data dimension must be positive");
  latent.validate();
  generator.validate();
  discriminator.validate();
  if (generator.input_width() != latent.dimension) throw arg_error("generator input width must equal latent dimension");
  if (generator.output_width() != data_dimension) throw arg_error("generator output width must equal data dimension");
  if (discriminator.input_width() != data_dimension) {
    throw arg_error("discriminator input width must equal data dimension");
  }
  if (discriminator.output_width() != 1) throw arg_error("discriminator must have a single output");
  if (discriminator.layers.back().activation.kind != nn::Activation::Kind::linear) {
    throw arg_error("discriminator output activation must be linear");
  }
  if (!(minibatch_ratio > 0.0 && minibatch_ratio <= 1.0)) throw arg_error("minibatch_ratio must lie in (0, 1]");
  for (double r : {adaptive.min_ratio_fake_pass, adaptive.min_ratio_tp, adaptive.min_ratio_tn}) {
    if (!(r >= 0.0 && r <= 1.0)) throw arg_error("adaptive ratios must lie in [0, 1]");
  }
  for (const auto* n : {&noise.fake_noise, &noise.all_noise}) {
    if (*n && !((*n)->std >= 0.0 && std::isfinite((*n)->std))) throw arg_error("noise std must be >= 0");
  }
  if (!(noise.label_flip_ratio >= 0.0 && noise.label_flip_ratio <= 0.2)) {
    throw arg_error("label_flip_ratio must lie in [0, 0.2]");
  }
  if (!(complementary_ratio >= 0.0 && complementary_ratio <= 0.5)) {
    throw arg_error("complementary_ratio must lie in [0, 0.5]");
  }
  if (!(generator_lr > 0.0) || !(discriminator_lr > 0.0)) throw arg_error("learning rates must be positive");
  if (checkpoint_every == 0) throw arg_error("checkpoint_every must be >= 1");
}

namespace {

nlohmann::json noise_json(const NoiseSpec& n) {
  return {{"distribution", n.kind == NoiseSpec::Kind::normal ? "normal" : "uniform"}, {"std", n.std}};
}

NoiseSpec noise_from(const nlohmann::json& j) {
  NoiseSpec n;
  const auto d = j.value("distribution", std::string("normal"));
  if (d == "normal") n.kind = NoiseSpec::Kind::normal;
  else if (d == "uniform") n.kind = NoiseSpec::Kind::uniform;
  else throw arg_error("unknown noise distribution '" + d + "'");
  n.std = j.at("std").get<double>();
  return n;
}

std::optional<NoiseSpec> optional_noise(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return noise_from(j.at(key));
}

nlohmann::json latent_json(const LatentSpec& l) {
  nlohmann::json j = {{"dimension", l.dimension}, {"noise", noise_json(l.noise)}};
  if (l.embedding) {
    nlohmann::json e = {{"categories", l.embedding->categories},
                        {"trainable", l.embedding->trainable},
                        {"centroid_scale", l.embedding->centroid_scale}};
    if (l.embedding->centroids.size() != 0) e["centroids"] = to_vec(l.embedding->centroids);
    j["embedding"] = e;
  }
  return j;
}

LatentSpec latent_from(const nlohmann::json& j) {
  LatentSpec l;
  l.dimension = j.at("dimension").get<std::size_t>();
  if (j.contains("noise")) l.noise = noise_from(j.at("noise"));
  if (j.contains("embedding") && !j.at("embedding").is_null()) {
    const auto& e = j.at("embedding");
    EmbeddingSpec spec;
    spec.categories = e.at("categories").get<std::size_t>();
    spec.trainable = e.value("trainable", false);
    spec.centroid_scale = e.value("centroid_scale", 1.0);
    if (e.contains("centroids")) {
      spec.centroids = matrix_from(e.at("centroids"), static_cast<Eigen::Index>(spec.categories),
                                   static_cast<Eigen::Index>(l.dimension));
    }
    l.embedding = std::move(spec);
  }
  l.validate();
  return l;
}

// Shorthand network: {"hidden": [..], "hidden_activation": {..},
// "output_activation": {..}, "batch_norm", "dropout", "l2"}.
nn::MlpSpec network_from(const nlohmann::json& j, std::size_t in, std::size_t out,
                         const nn::Activation& default_hidden, const nn::Activation& default_output) {
  if (j.contains("layers")) return nn::mlp_spec_from_json(j);
  std::vector<std::size_t> widths{in};
  for (auto w : j.value("hidden", std::vector<std::size_t>{})) widths.push_back(w);
  widths.push_back(out);
  auto hidden = j.contains("hidden_activation") ? nn::activation_from_json(j.at("hidden_activation")) : default_hidden;
  auto output = j.contains("output_activation") ? nn::activation_from_json(j.at("output_activation")) : default_output;
  return nn::MlpSpec::chain(widths, hidden, output, j.value("batch_norm", false), j.value("dropout", 0.0),
                            j.value("l2", 0.0));
}

}  // namespace

nlohmann::json to_json(const GanConfig& c) {
  nlohmann::json noise = {{"label_change_ratio", c.noise.label_flip_ratio}};
  noise["fakes"] = c.noise.fake_noise ? noise_json(*c.noise.fake_noise) : nlohmann::json(nullptr);
  noise["all"] = c.noise.all_noise ? noise_json(*c.noise.all_noise) : nlohmann::json(nullptr);
  return {{"dimension", c.data_dimension},
          {"generator", nn::to_json(c.generator)},
          {"discriminator", nn::to_json(c.discriminator)},
          {"latent", latent_json(c.latent)},
          {"minibatch_ratio", c.minibatch_ratio},
          {"adaptive",
           {{"ratio_fake_pass", c.adaptive.min_ratio_fake_pass},
            {"ratio_tp", c.adaptive.min_ratio_tp},
            {"ratio_tn", c.adaptive.min_ratio_tn},
            {"max_extra_cycles", c.adaptive.max_extra_cycles}}},
          {"discriminator_noise", noise},
          {"complementary_ratio", c.complementary_ratio},
          {"generator_lr", c.generator_lr},
          {"discriminator_lr", c.discriminator_lr},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every}};
}

GanConfig gan_config_from_json(const nlohmann::json& j) {
  try {
    GanConfig c;
    c.data_dimension = j.at("dimension").get<std::size_t>();
    c.latent = latent_from(j.at("latent"));
    c.generator = network_from(j.at("generator"), c.latent.dimension, c.data_dimension,
                               nn::Activation::leaky_relu(0.15), nn::Activation::linear());
    c.discriminator = network_from(j.at("discriminator"), c.data_dimension, 1, nn::Activation::leaky_relu(0.2),
                                   nn::Activation::linear());
    c.minibatch_ratio = j.value("minibatch_ratio", c.minibatch_ratio);
    if (j.contains("adaptive")) {
      const auto& a = j.at("adaptive");
      c.adaptive.min_ratio_fake_pass = a.value("ratio_fake_pass", c.adaptive.min_ratio_fake_pass);
      c.adaptive.min_ratio_tp = a.value("ratio_tp", c.adaptive.min_ratio_tp);
      c.adaptive.min_ratio_tn = a.value("ratio_tn", c.adaptive.min_ratio_tn);
      c.adaptive.max_extra_cycles = a.value("max_extra_cycles", c.adaptive.max_extra_cycles);
    }
    if (j.contains("discriminator_noise")) {
      const auto& n = j.at("discriminator_noise");
      c.noise.fake_noise = optional_noise(n, "fakes");
      c.noise.all_noise = optional_noise(n, "all");
      c.noise.label_flip_ratio = n.value("label_change_ratio", 0.0);
    }
    c.complementary_ratio = j.value("complementary_ratio", 0.0);
    c.generator_lr = j.value("generator_lr", c.generator_lr);
    c.discriminator_lr = j.value("discriminator_lr", c.discriminator_lr);
    c.seed = j.value("seed", std::uint64_t{0});
    c.checkpoint_every = j.value("checkpoint_every", std::size_t{1});
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_argument, std::string("bad GAN config: ") + e.what());
  }
}

GanConfig load_gan_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_argument, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return gan_config_from_json(j);
}

GanConfig default_config(std::size_t d) {
  GanConfig c;
  c.data_dimension = d;
  c.latent.dimension = 32;
  c.latent.noise = {NoiseSpec::Kind::normal, 1.0};
  c.generator = nn::MlpSpec::chain({32, 64, 64, d}, nn::Activation::leaky_relu(0.15),
                                   nn::Activation::custom_output_leaky(0.01));
  c.discriminator = nn::MlpSpec::chain({d, 64, 64, 1}, nn::Activation::leaky_relu(0.2), nn::Activation::linear());
  c.minibatch_ratio = 0.01;
  c.generator_lr = 1e-3;
  c.discriminator_lr = 1e-4;
  return c;
}

nn::MlpSpec with_output_kinks(nn::MlpSpec generator, const data::ScalerParams& scaler,
                              const std::vector<bool>& nonnegative) {
  auto& out = generator.layers.back();
  if (out.activation.kind != nn::Activation::Kind::custom_output_leaky) return generator;
  if (scaler.dimension() != out.output_width || nonnegative.size() != out.output_width) {
    throw arg_error("scaler and non-negative mask must match the generator output width");
  }
  out.activation.floor.resize(out.output_width);
  for (std::size_t j = 0; j < out.output_width; ++j) {
    out.activation.floor[j] = nonnegative[j] ? scaler.standardized(j, 0.0) : kNoKink;
  }
  return generator;
}

// ---------------------------------------------------------------------------
// Heuristics

Perturbed perturb_inputs(Matrix batch, std::vector<bool> is_real, const NoiseHeuristics& noise, Rng& rng) {
  if (static_cast<Eigen::Index>(is_real.size()) != batch.rows()) throw arg_error("label count must match batch rows");
  if (noise.fake_noise && noise.fake_noise->std > 0.0) {
    Matrix extra = sample_noise(*noise.fake_noise, batch.rows(), batch.cols(), rng);
    for (Eigen::Index i = 0; i < batch.rows(); ++i)
      if (!is_real[static_cast<std::size_t>(i)]) batch.row(i) += extra.row(i);
  }
  if (noise.all_noise && noise.all_noise->std > 0.0) {
    batch += sample_noise(*noise.all_noise, batch.rows(), batch.cols(), rng);
  }
  const auto n = is_real.size();
  const auto flips = static_cast<std::size_t>(std::llround(noise.label_flip_ratio * static_cast<double>(n)));
  if (flips > 0) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: the first `flips` entries are a uniform sample.
    for (std::size_t k = 0; k < flips; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, n - 1);
      std::swap(idx[k], idx[pick(rng)]);
      is_real[idx[k]] = !is_real[idx[k]];
    }
  }
  return {std::move(batch), std::move(is_real), flips};
}

// ---------------------------------------------------------------------------
// Step reports

nlohmann::json to_json(const TrainStepReport& r) {
  return {{"step", r.step},         {"d_cycles", r.d_cycles},   {"g_cycles", r.g_cycles},
          {"ratio_tp", r.ratio_tp}, {"ratio_tn", r.ratio_tn},   {"ratio_fake_pass", r.ratio_fake_pass},
          {"d_loss", r.d_loss},     {"g_loss", r.g_loss},       {"d_capped", r.d_capped},
          {"g_capped", r.g_capped}};
}

TrainStepReport step_report_from_json(const nlohmann::json& j) {
  TrainStepReport r;
  r.step = j.at("step").get<std::size_t>();
  r.d_cycles = j.at("d_cycles").get<std::size_t>();
  r.g_cycles = j.at("g_cycles").get<std::size_t>();
  r.ratio_tp = j.at("ratio_tp").get<double>();
  r.ratio_tn = j.at("ratio_tn").get<double>();
  r.ratio_fake_pass = j.at("ratio_fake_pass").get<double>();
  r.d_loss = j.at("d_loss").get<double>();
  r.g_loss = j.at("g_loss").get<double>();
  r.d_capped = j.at("d_capped").get<bool>();
  r.g_capped = j.at("g_capped").get<bool>();
  return r;
}

// ---------------------------------------------------------------------------
// Training state

GanState::GanState(const GanConfig& config, Rng& init_rng)
    : config_(config),
      latent_(config.latent),
      g_(config.generator, init_rng),
      d_(config.discriminator, init_rng),
      g_opt_(nn::Optimizer::adam(config.generator_lr)),
      d_opt_(nn::Optimizer::rmsprop(config.discriminator_lr)),
      embed_opt_(nn::Optimizer::adam(config.generator_lr)) {
  init_centroids(latent_, init_rng);
}

void GanState::check_loss(double loss, const char* phase) {
  if (!std::isfinite(loss)) {
    poisoned_ = true;
    throw Error(ErrorKind::divergence, std::string("non-finite ") + phase + " loss at step " + std::to_string(steps_ + 1));
  }
}

double GanState::fraction_positive(const Matrix& rows) {
  const Matrix out = d_.predict(rows);
  const auto pos = (out.array() > 0.0).count();
  return static_cast<double>(pos) / static_cast<double>(out.rows());
}

double GanState::discriminator_cycle(const Matrix& real_batch, const Matrix* complementary, Rng& rng) {
  const Eigen::Index n = real_batch.rows();
  const Eigen::Index c = complementary ? complementary->rows() : 0;
  const Matrix fake = g_.predict(sample_latent(latent_, n, rng).z);
  Matrix batch(2 * n + c, real_batch.cols());
  batch.topRows(n) = real_batch;
  batch.middleRows(n, n) = fake;
  if (c > 0) batch.bottomRows(c) = *complementary;
  std::vector<bool> is_real(static_cast<std::size_t>(2 * n + c), false);
  std::fill(is_real.begin(), is_real.begin() + n, true);

  auto p = perturb_inputs(std::move(batch), std::move(is_real), config_.noise, rng);
  nn::ForwardOptions fo{nn::Mode::train, &rng, true};
  auto acts = d_.forward(p.batch, fo);
  auto loss = nn::critic_loss(acts.output, p.is_real);
  check_loss(loss.loss, "discriminator");
  if (!d_frozen_) {
    auto grads = d_.backward(acts, loss.grad);
    if (!grads.all_finite()) check_loss(std::nan(""), "discriminator");
    auto blocks = grads.blocks(d_.spec());
    d_opt_.step(d_.parameter_blocks(), blocks);
  }
  return loss.loss;
}

double GanState::generator_cycle(Eigen::Index n, Rng& rng) {
  auto latent = sample_latent(latent_, n, rng);
  auto g_acts = g_.forward(latent.z, {nn::Mode::train, &rng, true});
  auto d_acts = d_.forward(g_acts.output, {nn::Mode::train, &rng, false});
  auto loss = nn::wasserstein_loss(d_acts.output, nn::CriticRole::real);
  check_loss(loss.loss, "generator");
  auto d_grads = d_.backward(d_acts, loss.grad);
  auto g_grads = g_.backward(g_acts, d_grads.input);
  if (!g_grads.all_finite()) check_loss(std::nan(""), "generator");
  g_opt_.step(g_.parameter_blocks(), g_grads.blocks(g_.spec()));

  if (latent_.embedding && latent_.embedding->trainable) {
    auto& centroids = latent_.embedding->centroids;
    Matrix grad = Matrix::Zero(centroids.rows(), centroids.cols());
    for (Eigen::Index i = 0; i < n; ++i) grad.row(latent.categories[static_cast<std::size_t>(i)]) += g_grads.input.row(i);
    std::vector<std::span<double>> params{{centroids.data(), static_cast<std::size_t>(centroids.size())}};
    std::vector<std::span<const double>> gv{{grad.data(), static_cast<std::size_t>(grad.size())}};
    embed_opt_.step(params, gv);
  }
  return loss.loss;
}

TrainStepReport GanState::train_minibatch(const Matrix& real_batch, const Matrix* complementary, Rng& rng) {
  try {
    return run_minibatch(real_batch, complementary, rng);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::divergence) poisoned_ = true;
    throw;
  }
}

TrainStepReport GanState::run_minibatch(const Matrix& real_batch, const Matrix* complementary, Rng& rng) {
  if (poisoned_) throw Error(ErrorKind::divergence, "training state is poisoned by an earlier divergence");
  if (real_batch.rows() < 1) throw arg_error("empty real batch");
  if (static_cast<std::size_t>(real_batch.cols()) != config_.data_dimension) {
    throw arg_error("real batch width does not match the data dimension");
  }
  const auto& a = config_.adaptive;
  const Eigen::Index n = real_batch.rows();
  TrainStepReport r;
  r.step = steps_ + 1;

  // Critic phase: train until it recognizes enough real and fake rows.
  while (true) {
    r.d_loss = discriminator_cycle(real_batch, complementary, rng);
    ++r.d_cycles;
    r.ratio_tp = fraction_positive(real_batch);
    r.ratio_tn = 1.0 - fraction_positive(g_.predict(sample_latent(latent_, n, rng).z));
    if (r.ratio_tp >= a.min_ratio_tp && r.ratio_tn >= a.min_ratio_tn) break;
    if (r.d_cycles > a.max_extra_cycles) {
      r.d_capped = true;
      break;
    }
  }
  // Generator phase: train until enough fakes pass the critic.
  while (true) {
    r.g_loss = generator_cycle(n, rng);
    ++r.g_cycles;
    r.ratio_fake_pass = fraction_positive(g_.predict(sample_latent(latent_, n, rng).z));
    if (r.ratio_fake_pass >= a.min_ratio_fake_pass) break;
    if (r.g_cycles > a.max_extra_cycles) {
      r.g_capped = true;
      break;
    }
  }
  ++steps_;
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string checkpoint_id(int label, std::size_t step) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "label%d-step%06zu", label, step);
  return buf;
}

nlohmann::json to_json(const Checkpoint& c) {
  return {{"format", "flowgan-checkpoint"},
          {"version", 1},
          {"id", c.id},
          {"step", c.step},
          {"label", c.label},
          {"generator", c.generator.to_json()},
          {"discriminator", c.discriminator.to_json()},
          {"latent", latent_json(c.latent)},
          {"scaler", data::to_json(c.scaler)},
          {"nonnegative", c.nonnegative},
          {"report", to_json(c.report)}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "flowgan-checkpoint" || j.value("version", 0) != 1) {
    throw Error(ErrorKind::invalid_data, "not a version-1 checkpoint");
  }
  try {
    Checkpoint c;
    c.id = j.at("id").get<std::string>();
    c.step = j.at("step").get<std::size_t>();
    c.label = j.at("label").get<int>();
    c.generator = nn::Mlp::from_json(j.at("generator"));
    c.discriminator = nn::Mlp::from_json(j.at("discriminator"));
    c.latent = latent_from(j.at("latent"));
    c.scaler = data::scaler_from_json(j.at("scaler"));
    c.nonnegative = j.at("nonnegative").get<std::vector<bool>>();
    c.report = step_report_from_json(j.at("report"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_data, std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write checkpoint " + path.string());
  out << to_json(ckpt).dump() << '\n';
  if (!out) throw Error(ErrorKind::io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_data, "checkpoint " + path.string() + " is not valid JSON");
  }
  return checkpoint_from_json(j);
}

// ---------------------------------------------------------------------------
// Training loop

std::size_t minibatch_size(double ratio, std::size_t rows) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw arg_error("minibatch_ratio must lie in (0, 1]");
  auto b = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(rows) - 1e-9));
  b = std::min(std::max<std::size_t>(b, 2), rows);
  if (b < 2) throw Error(ErrorKind::invalid_data, "class dataset too small for a mini-batch of 2 rows");
  return b;
}

namespace {

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

}  // namespace

TrainResult train(const GanConfig& config_in, const data::FlowDataset& class_data, const TrainOptions& options) {
  config_in.validate();
  if (class_data.dimension() != config_in.data_dimension) throw arg_error("dataset dimension does not match config");
  const auto counts = class_data.class_counts();
  if (counts.size() != 1) throw Error(ErrorKind::invalid_data, "GAN training data must hold exactly one class");
  if (counts.begin()->first != options.label) throw arg_error("dataset label does not match the requested label");
  const std::size_t batch = minibatch_size(config_in.minibatch_ratio, class_data.size());
  const std::size_t d = class_data.dimension();

  TrainResult result;
  auto [scaled, scaler] = data::standardize(class_data);
  result.scaler = scaler;
  const Matrix x = scaled.features();

  std::vector<bool> nonneg = options.nonnegative.value_or(std::vector<bool>{});
  if (!options.nonnegative) {
    nonneg.assign(d, true);
    for (std::size_t i = 0; i < class_data.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (class_data.value(i, j) < 0.0) nonneg[j] = false;
  }
  if (nonneg.size() != d) throw arg_error("non-negative mask must have one entry per feature");

  Matrix comp;
  std::size_t comp_per_step = 0;
  if (options.complementary && config_in.complementary_ratio > 0.0 && !options.complementary->empty()) {
    if (options.complementary->dimension() != d) throw arg_error("complementary data dimension mismatch");
    comp = options.complementary->features();
    scaler.apply_in_place(comp);
    comp_per_step = static_cast<std::size_t>(std::llround(config_in.complementary_ratio * static_cast<double>(batch)));
  }

  GanConfig config = config_in;
  config.generator = with_output_kinks(config.generator, scaler, nonneg);

  Rng init_rng(derive_seed(config.seed, 1));
  Rng train_rng(derive_seed(config.seed, 2));
  Rng batch_rng(derive_seed(config.seed, 3));
  GanState state(config, init_rng);

  std::vector<std::size_t> perm(class_data.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::size_t cursor = perm.size();
  std::vector<std::size_t> comp_idx(comp_per_step);

  for (std::size_t step = 1; step <= options.steps; ++step) {
    if (cursor + batch > perm.size()) {
      std::shuffle(perm.begin(), perm.end(), batch_rng);
      cursor = 0;
    }
    const Matrix real = gather_rows(x, {perm.data() + cursor, batch});
    cursor += batch;
    Matrix comp_batch;
    if (comp_per_step > 0) {
      std::uniform_int_distribution<std::size_t> pick(0, static_cast<std::size_t>(comp.rows()) - 1);
      for (auto& k : comp_idx) k = pick(batch_rng);
      comp_batch = gather_rows(comp, comp_idx);
    }

    TrainStepReport report;
    try {
      report = state.train_minibatch(real, comp_per_step > 0 ? &comp_batch : nullptr, train_rng);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::divergence) throw;
      result.diverged = true;
      result.error = e.what();
      break;
    }
    result.reports.push_back(report);
    if (step % config.checkpoint_every == 0 || step == options.steps) {
      Checkpoint c;
      c.step = step;
      c.id = checkpoint_id(options.label, step);
      c.label = options.label;
      c.generator = state.generator();
      c.discriminator = state.discriminator();
      c.latent = state.latent();
      c.scaler = scaler;
      c.nonnegative = nonneg;
      c.report = report;
      if (options.on_checkpoint) options.on_checkpoint(c);
      result.checkpoints.push_back(std::move(c));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Generation

Matrix generate_standardized(const Checkpoint& ckpt, const Matrix& z) { return ckpt.generator.predict(z); }

data::FlowDataset generate(const Checkpoint& ckpt, std::size_t n, const GenerateOptions& options, Rng& rng) {
  if (n == 0) throw arg_error("generate needs n > 0");
  using Filter = GenerateOptions::Filter;
  const std::size_t d = ckpt.scaler.dimension();
  const bool filtering = options.filter != Filter::none || options.clip_negatives;
  if (options.filter == Filter::percentile && !(options.percentile >= 0.0 && options.percentile <= 100.0)) {
    throw arg_error("filter percentile must lie in [0, 100]");
  }

  double critic_cut = 0.0;
  if (options.filter == Filter::percentile) {
    const Eigen::Index cal = static_cast<Eigen::Index>(std::max<std::size_t>(n, 1000));
    Matrix out = ckpt.discriminator.predict(ckpt.generator.predict(sample_latent(ckpt.latent, cal, rng).z));
    std::vector<double> v(out.data(), out.data() + out.size());
    std::sort(v.begin(), v.end());
    const double pos = options.percentile / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    critic_cut = v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
  }

  data::FlowDataset out(d);
  out.reserve(n);
  std::size_t probes = 0;
  const std::size_t budget = std::max<std::size_t>(10000, 2000 * n);
  std::vector<double> row(d);
  while (out.size() < n) {
    const std::size_t remaining = n - out.size();
    const std::size_t chunk = filtering ? std::clamp<std::size_t>(2 * remaining, 256, 65536) : remaining;
    Matrix z = sample_latent(ckpt.latent, static_cast<Eigen::Index>(chunk), rng).z;
    Matrix x = ckpt.generator.predict(z);
    Matrix critic;
    if (options.filter != Filter::none) critic = ckpt.discriminator.predict(x);
    ckpt.scaler.invert_in_place(x);
    probes += chunk;
    for (Eigen::Index i = 0; i < x.rows() && out.size() < n; ++i) {
      if (options.filter == Filter::positive && !(critic(i, 0) > 0.0)) continue;
      if (options.filter == Filter::percentile && !(critic(i, 0) > critic_cut)) continue;
      bool ok = true;
      if (options.clip_negatives) {
        for (std::size_t j = 0; j < d && ok; ++j) ok = !(ckpt.nonnegative[j] && x(i, static_cast<Eigen::Index>(j)) < 0.0);
      }
      if (!ok) continue;
      for (std::size_t j = 0; j < d; ++j) row[j] = x(i, static_cast<Eigen::Index>(j));
      out.add(row, ckpt.label, data::Origin::synthetic);
    }
    if (out.size() >= n) break;
    const double rate = static_cast<double>(out.size()) / static_cast<double>(probes);
    if ((probes >= 10000 && rate < 0.001) || probes >= budget) {
      std::string name = options.filter == Filter::positive     ? "critic > 0 filter"
                         : options.filter == Filter::percentile ? "critic percentile filter"
                                                                : "negative-value clipping";
      if (options.filter != Filter::none && options.clip_negatives) name += " with negative-value clipping";
      throw Error(ErrorKind::evaluation, name + " accepted " + std::to_string(out.size()) + " of " +
                                             std::to_string(probes) + " generated rows");
    }
  }
  return out;
}

}  // namespace flowgan::wgan
