#include "flowgan/nn.hpp"

#include <algorithm>
#include <cmath>

namespace flowgan::nn {

namespace {

Error arg_error(const std::string& what) { return Error(ErrorKind::invalid_argument, what); }

double kink_at(const Activation& a, std::size_t unit) {
  if (a.kind == Activation::Kind::custom_output_leaky && !a.floor.empty()) return a.floor[unit];
  return 0.0;
}

/// True when `unit` of a layer with activation `a` is piecewise-linear with
/// a kink (as opposed to linear or tanh).
bool unit_is_kinked(const Activation& a, std::size_t unit, std::size_t tanh_units) {
  switch (a.kind) {
    case Activation::Kind::leaky_relu:
    case Activation::Kind::custom_output_leaky: return true;
    case Activation::Kind::mixed_tanh_leaky: return unit >= tanh_units;
    default: return false;
  }
}

Matrix activate(const Activation& a, const Matrix& u) {
  using K = Activation::Kind;
  switch (a.kind) {
    case K::linear: return u;
    case K::tanh: return u.array().tanh().matrix();
    default: break;
  }
  Matrix out(u.rows(), u.cols());
  const std::size_t nt = a.tanh_units(static_cast<std::size_t>(u.cols()));
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    const auto uj = static_cast<std::size_t>(j);
    if (a.kind == K::mixed_tanh_leaky && uj < nt) {
      out.col(j) = u.col(j).array().tanh();
      continue;
    }
    const double k = kink_at(a, uj);
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      const double v = u(i, j);
      out(i, j) = v > k ? v : k + a.alpha * (v - k);
    }
  }
  return out;
}

Matrix activation_derivative(const Activation& a, const Matrix& u) {
  using K = Activation::Kind;
  if (a.kind == K::linear) return Matrix::Ones(u.rows(), u.cols());
  if (a.kind == K::tanh) return (1.0 - u.array().tanh().square()).matrix();
  Matrix out(u.rows(), u.cols());
  const std::size_t nt = a.tanh_units(static_cast<std::size_t>(u.cols()));
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    const auto uj = static_cast<std::size_t>(j);
    if (a.kind == K::mixed_tanh_leaky && uj < nt) {
      out.col(j) = 1.0 - u.col(j).array().tanh().square();
      continue;
    }
    const double k = kink_at(a, uj);
    for (Eigen::Index i = 0; i < u.rows(); ++i) out(i, j) = u(i, j) > k ? 1.0 : a.alpha;
  }
  return out;
}

std::vector<double> to_vec(const Matrix& m) { return {m.data(), m.data() + m.size()}; }
std::vector<double> to_vec(const RowVector& v) { return {v.data(), v.data() + v.size()}; }

RowVector row_from(const nlohmann::json& j, std::size_t n, const char* name) {
  auto v = j.at(name).get<std::vector<double>>();
  if (v.size() != n) throw Error(ErrorKind::invalid_data, std::string("bad length for ") + name);
  return Eigen::Map<RowVector>(v.data(), static_cast<Eigen::Index>(n));
}

}  // namespace

std::size_t Activation::tanh_units(std::size_t width) const {
  if (kind == Kind::tanh) return width;
  if (kind != Kind::mixed_tanh_leaky) return 0;
  // Tolerance keeps e.g. 0.15 * 100 from rounding up to 16.
  const double raw = tanh_fraction * static_cast<double>(width) - 1e-9;
  return std::min(width, static_cast<std::size_t>(std::max(0.0, std::ceil(raw))));
}

void MlpSpec::validate() const {
  if (layers.empty()) throw arg_error("network needs at least one layer");
  if (!(l2_coefficient >= 0)) throw arg_error("l2 coefficient must be >= 0");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.input_width == 0 || l.output_width == 0) throw arg_error("layer widths must be positive");
    if (i > 0 && layers[i - 1].output_width != l.input_width) {
      throw arg_error("layer " + std::to_string(i) + " input width does not chain");
    }
    if (!(l.activation.alpha >= 0)) throw arg_error("activation alpha must be >= 0");
    if (!(l.activation.tanh_fraction >= 0 && l.activation.tanh_fraction <= 1)) {
      throw arg_error("tanh fraction must lie in [0,1]");
    }
    if (!l.activation.floor.empty() && l.activation.floor.size() != l.output_width) {
      throw arg_error("activation floor length must equal layer width");
    }
    if (!(l.dropout_rate >= 0 && l.dropout_rate < 1)) throw arg_error("dropout must lie in [0,1)");
  }
}

MlpSpec MlpSpec::chain(const std::vector<std::size_t>& widths, const Activation& hidden,
                       const Activation& output, bool batch_norm, double dropout_rate,
                       double l2) {
  if (widths.size() < 2) throw arg_error("chain needs at least two widths");
  MlpSpec spec;
  spec.l2_coefficient = l2;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    spec.layers.push_back({widths[i], widths[i + 1], last ? output : hidden, last ? false : batch_norm,
                           last ? 0.0 : dropout_rate});
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------

Mlp::Mlp(MlpSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate();
  for (const auto& l : spec_.layers) {
    LayerParams p;
    const auto in = static_cast<Eigen::Index>(l.input_width);
    const auto out = static_cast<Eigen::Index>(l.output_width);
    const double limit = std::sqrt(6.0 / static_cast<double>(l.input_width + l.output_width));
    std::uniform_real_distribution<double> u(-limit, limit);
    p.weights.resize(in, out);
    for (Eigen::Index k = 0; k < p.weights.size(); ++k) p.weights.data()[k] = u(rng);
    p.bias = RowVector::Zero(out);
    p.gamma = RowVector::Ones(out);
    p.beta = RowVector::Zero(out);
    p.running_mean = RowVector::Zero(out);
    p.running_var = RowVector::Ones(out);
    layers_.push_back(std::move(p));
  }
}

Matrix Mlp::run(const Matrix& batch, const ForwardOptions& options, Activations* cache,
                std::vector<LayerParams>* stats) const {
  if (static_cast<std::size_t>(batch.cols()) != spec_.input_width()) {
    throw arg_error("batch width " + std::to_string(batch.cols()) + " does not match input width " +
                    std::to_string(spec_.input_width()));
  }
  const bool train = options.mode == Mode::train;
  const double n = static_cast<double>(batch.rows());
  Matrix x = batch;
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const auto& ls = spec_.layers[li];
    const auto& p = layers_[li];
    LayerCache* lc = nullptr;
    if (cache) {
      cache->layers.emplace_back();
      lc = &cache->layers.back();
      lc->input = x;
    }
    Matrix z = x * p.weights;
    Matrix u;
    if (ls.batch_norm) {
      RowVector inv;
      Matrix zh;
      if (train && batch.rows() > 0) {
        RowVector mean = z.colwise().mean();
        Matrix centered = z.rowwise() - mean;
        RowVector var = centered.array().square().colwise().sum().matrix() / n;
        inv = (var.array() + kBatchNormEps).rsqrt().matrix();
        zh = centered.array().rowwise() * inv.array();
        if (stats) {
          auto& s = (*stats)[li];
          s.running_mean = kBatchNormMomentum * s.running_mean + (1.0 - kBatchNormMomentum) * mean;
          s.running_var = kBatchNormMomentum * s.running_var + (1.0 - kBatchNormMomentum) * var;
        }
      } else {
        inv = (p.running_var.array() + kBatchNormEps).rsqrt().matrix();
        zh = (z.rowwise() - p.running_mean).array().rowwise() * inv.array();
      }
      u = (zh.array().rowwise() * p.gamma.array()).rowwise() + p.beta.array();
      if (lc) {
        lc->normalized = std::move(zh);
        lc->inv_std = std::move(inv);
      }
    } else {
      u = z.rowwise() + p.bias;
    }
    Matrix a = activate(ls.activation, u);
    if (lc) lc->preactivation = std::move(u);
    if (train && ls.dropout_rate > 0) {
      if (!options.rng) throw arg_error("train-mode dropout needs an rng");
      std::bernoulli_distribution keep(1.0 - ls.dropout_rate);
      const double scale = 1.0 / (1.0 - ls.dropout_rate);
      Matrix mask(a.rows(), a.cols());
      for (Eigen::Index k = 0; k < mask.size(); ++k) {
        mask.data()[k] = keep(*options.rng) ? scale : 0.0;
      }
      a = a.cwiseProduct(mask);
      if (lc) lc->mask = std::move(mask);
    }
    x = std::move(a);
  }
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (!std::isfinite(x.data()[k])) {
      throw Error(ErrorKind::divergence, "non-finite network output");
    }
  }
  return x;
}

Activations Mlp::forward(const Matrix& batch, const ForwardOptions& options) {
  Activations acts;
  acts.mode = options.mode;
  acts.owner = this;
  const bool update = options.mode == Mode::train && options.update_running_stats;
  acts.output = run(batch, options, &acts, update ? &layers_ : nullptr);
  acts.version = version_;
  return acts;
}

Matrix Mlp::predict(const Matrix& batch) const {
  return run(batch, ForwardOptions{Mode::infer, nullptr, false}, nullptr, nullptr);
}

Gradients Mlp::backward(const Activations& acts, const Matrix& loss_grad) const {
  if (acts.owner != this || acts.version != version_ || acts.layers.size() != layers_.size()) {
    throw Error(ErrorKind::invalid_argument, "stale activations record");
  }
  if (loss_grad.rows() != acts.output.rows() || loss_grad.cols() != acts.output.cols()) {
    throw arg_error("loss gradient shape does not match network output");
  }
  const bool train = acts.mode == Mode::train;
  Gradients grads;
  grads.layers.resize(layers_.size());
  Matrix g = loss_grad;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& ls = spec_.layers[li];
    const auto& p = layers_[li];
    const auto& lc = acts.layers[li];
    auto& lg = grads.layers[li];
    if (lc.mask.size() > 0) g = g.cwiseProduct(lc.mask);
    g = g.cwiseProduct(activation_derivative(ls.activation, lc.preactivation));
    Matrix gz;
    if (ls.batch_norm) {
      lg.gamma = g.cwiseProduct(lc.normalized).colwise().sum();
      lg.beta = g.colwise().sum();
      Matrix gzh = g.array().rowwise() * p.gamma.array();
      if (train) {
        const double n = static_cast<double>(g.rows());
        RowVector sum_g = gzh.colwise().sum();
        RowVector sum_gx = gzh.cwiseProduct(lc.normalized).colwise().sum();
        Matrix t = (gzh * n).rowwise() - sum_g;
        t -= (lc.normalized.array().rowwise() * sum_gx.array()).matrix();
        gz = (t.array().rowwise() * lc.inv_std.array()).matrix() / n;
      } else {
        gz = gzh.array().rowwise() * lc.inv_std.array();
      }
      lg.bias = RowVector::Zero(p.bias.size());
    } else {
      lg.bias = g.colwise().sum();
      gz = std::move(g);
    }
    lg.weights = lc.input.transpose() * gz;
    if (spec_.l2_coefficient > 0) lg.weights += spec_.l2_coefficient * p.weights;
    g = gz * p.weights.transpose();
  }
  grads.input = std::move(g);
  return grads;
}

double Mlp::l2_penalty() const {
  if (spec_.l2_coefficient == 0) return 0.0;
  double s = 0;
  for (const auto& p : layers_) s += p.weights.squaredNorm();
  return 0.5 * spec_.l2_coefficient * s;
}

std::vector<std::span<double>> Mlp::parameter_blocks() {
  ++version_;
  std::vector<std::span<double>> out;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    auto& p = layers_[li];
    out.emplace_back(p.weights.data(), static_cast<std::size_t>(p.weights.size()));
    if (spec_.layers[li].batch_norm) {
      out.emplace_back(p.gamma.data(), static_cast<std::size_t>(p.gamma.size()));
      out.emplace_back(p.beta.data(), static_cast<std::size_t>(p.beta.size()));
    } else {
      out.emplace_back(p.bias.data(), static_cast<std::size_t>(p.bias.size()));
    }
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    n += static_cast<std::size_t>(layers_[li].weights.size());
    n += spec_.layers[li].output_width * (spec_.layers[li].batch_norm ? 2 : 1);
  }
  return n;
}

std::vector<std::span<const double>> Gradients::blocks(const MlpSpec& spec) const {
  std::vector<std::span<const double>> out;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& g = layers[li];
    out.emplace_back(g.weights.data(), static_cast<std::size_t>(g.weights.size()));
    if (spec.layers[li].batch_norm) {
      out.emplace_back(g.gamma.data(), static_cast<std::size_t>(g.gamma.size()));
      out.emplace_back(g.beta.data(), static_cast<std::size_t>(g.beta.size()));
    } else {
      out.emplace_back(g.bias.data(), static_cast<std::size_t>(g.bias.size()));
    }
  }
  return out;
}

bool Gradients::all_finite() const {
  auto finite = [](const auto& m) { return m.size() == 0 || m.allFinite(); };
  for (const auto& g : layers) {
    if (!finite(g.weights) || !finite(g.bias) || !finite(g.gamma) || !finite(g.beta)) return false;
  }
  return finite(input);
}

std::vector<std::uint8_t> kink_signature(const Mlp& net, const Activations& acts) {
  std::vector<std::uint8_t> sig;
  const auto& spec = net.spec();
  for (std::size_t li = 0; li < acts.layers.size(); ++li) {
    const auto& a = spec.layers[li].activation;
    if (!a.has_kink()) continue;
    const auto& u = acts.layers[li].preactivation;
    const std::size_t nt = a.tanh_units(static_cast<std::size_t>(u.cols()));
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
      const auto uj = static_cast<std::size_t>(j);
      if (!unit_is_kinked(a, uj, nt)) continue;
      const double k = kink_at(a, uj);
      for (Eigen::Index i = 0; i < u.rows(); ++i) sig.push_back(u(i, j) > k ? 1 : 0);
    }
  }
  return sig;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const Activation& a) {
  static const char* names[] = {"linear", "tanh", "leaky_relu", "mixed_tanh_leaky",
                                "custom_output_leaky"};
  nlohmann::json j = {{"kind", names[static_cast<int>(a.kind)]}};
  if (a.kind != Activation::Kind::linear && a.kind != Activation::Kind::tanh) j["alpha"] = a.alpha;
  if (a.kind == Activation::Kind::mixed_tanh_leaky) j["tanh_fraction"] = a.tanh_fraction;
  if (!a.floor.empty()) j["floor"] = a.floor;
  return j;
}

Activation activation_from_json(const nlohmann::json& j) {
  if (j.is_string()) return activation_from_json(nlohmann::json{{"kind", j}});
  Activation a;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "linear") a.kind = Activation::Kind::linear;
  else if (kind == "tanh") a.kind = Activation::Kind::tanh;
  else if (kind == "leaky_relu") a.kind = Activation::Kind::leaky_relu;
  else if (kind == "mixed_tanh_leaky") a.kind = Activation::Kind::mixed_tanh_leaky;
  else if (kind == "custom_output_leaky") a.kind = Activation::Kind::custom_output_leaky;
  else throw arg_error("unknown activation '" + kind + "'");
  if (a.has_kink()) {
    const double default_alpha = a.kind == Activation::Kind::custom_output_leaky ? 0.01 : 0.15;
    a.alpha = j.value("alpha", default_alpha);
  }
  a.tanh_fraction = j.value("tanh_fraction", 0.0);
  a.floor = j.value("floor", std::vector<double>{});
  return a;
}

nlohmann::json to_json(const MlpSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    layers.push_back({{"input_width", l.input_width},
                      {"output_width", l.output_width},
                      {"activation", to_json(l.activation)},
                      {"batch_norm", l.batch_norm},
                      {"dropout_rate", l.dropout_rate}});
  }
  return {{"l2_coefficient", spec.l2_coefficient}, {"layers", layers}};
}

MlpSpec mlp_spec_from_json(const nlohmann::json& j) {
  MlpSpec spec;
  spec.l2_coefficient = j.value("l2_coefficient", 0.0);
  for (const auto& l : j.at("layers")) {
    spec.layers.push_back({l.at("input_width").get<std::size_t>(),
                           l.at("output_width").get<std::size_t>(),
                           activation_from_json(l.at("activation")), l.value("batch_norm", false),
                           l.value("dropout_rate", 0.0)});
  }
  spec.validate();
  return spec;
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : layers_) {
    params.push_back({{"weights", to_vec(p.weights)},
                      {"bias", to_vec(p.bias)},
                      {"gamma", to_vec(p.gamma)},
                      {"beta", to_vec(p.beta)},
                      {"running_mean", to_vec(p.running_mean)},
                      {"running_var", to_vec(p.running_var)}});
  }
  return {{"format", "flowgan-mlp"}, {"version", 1}, {"spec", nn::to_json(spec_)}, {"params", params}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "flowgan-mlp" || j.value("version", 0) != 1) {
    throw Error(ErrorKind::invalid_data, "not a version-1 network snapshot");
  }
  Mlp net;
  net.spec_ = mlp_spec_from_json(j.at("spec"));
  const auto& params = j.at("params");
  if (params.size() != net.spec_.layers.size()) {
    throw Error(ErrorKind::invalid_data, "snapshot layer count mismatch");
  }
  for (std::size_t li = 0; li < params.size(); ++li) {
    const auto& ls = net.spec_.layers[li];
    const auto& jp = params[li];
    LayerParams p;
    auto w = jp.at("weights").get<std::vector<double>>();
    if (w.size() != ls.input_width * ls.output_width) {
      throw Error(ErrorKind::invalid_data, "snapshot weight size mismatch");
    }
    p.weights = Eigen::Map<Matrix>(w.data(), static_cast<Eigen::Index>(ls.input_width),
                                   static_cast<Eigen::Index>(ls.output_width));
    p.bias = row_from(jp, ls.output_width, "bias");
    p.gamma = row_from(jp, ls.output_width, "gamma");
    p.beta = row_from(jp, ls.output_width, "beta");
    p.running_mean = row_from(jp, ls.output_width, "running_mean");
    p.running_var = row_from(jp, ls.output_width, "running_var");
    net.layers_.push_back(std::move(p));
  }
  return net;
}

// ---------------------------------------------------------------------------
// Optimizers

Optimizer::Optimizer(Kind kind, double lr) : kind_(kind), lr_(lr) {
  if (!(lr > 0)) throw arg_error("learning rate must be positive");
}

Optimizer Optimizer::adam(double learning_rate) { return {Kind::adam, learning_rate}; }
Optimizer Optimizer::rmsprop(double learning_rate) { return {Kind::rmsprop, learning_rate}; }

void Optimizer::step(std::span<const std::span<double>> params,
                     std::span<const std::span<const double>> grads) {
  if (params.size() != grads.size()) throw arg_error("optimizer: block count mismatch");
  if (first_.empty() && second_.empty()) {
    for (const auto& p : params) {
      second_.emplace_back(p.size(), 0.0);
      if (kind_ == Kind::adam) first_.emplace_back(p.size(), 0.0);
    }
  }
  if (second_.size() != params.size()) throw arg_error("optimizer: state shape mismatch");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size() || second_[b].size() != params[b].size()) {
      throw arg_error("optimizer: block size mismatch");
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  if (kind_ == Kind::adam) {
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t b = 0; b < params.size(); ++b) {
      auto& m = first_[b];
      auto& v = second_[b];
      for (std::size_t i = 0; i < params[b].size(); ++i) {
        const double g = grads[b][i];
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
        params[b][i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      }
    }
  } else {
    for (std::size_t b = 0; b < params.size(); ++b) {
      auto& v = second_[b];
      for (std::size_t i = 0; i < params[b].size(); ++i) {
        const double g = grads[b][i];
        v[i] = kRho * v[i] + (1.0 - kRho) * g * g;
        params[b][i] -= lr_ * g / std::sqrt(v[i] + kEps);
      }
    }
  }
}

nlohmann::json Optimizer::constants_json() const {
  if (kind_ == Kind::adam) {
    return {{"kind", "adam"}, {"learning_rate", lr_}, {"beta1", kBeta1}, {"beta2", kBeta2},
            {"epsilon", kEps}};
  }
  return {{"kind", "rmsprop"}, {"learning_rate", lr_}, {"rho", kRho}, {"epsilon", kEps}};
}

// ---------------------------------------------------------------------------
// Losses

LossValue wasserstein_loss(const Matrix& critic_out, CriticRole role) {
  const double sign = role == CriticRole::real ? -1.0 : 1.0;
  const auto n = critic_out.rows();
  LossValue lv;
  lv.grad = Matrix::Constant(critic_out.rows(), critic_out.cols(), n > 0 ? sign / static_cast<double>(n) : 0.0);
  lv.loss = n > 0 ? sign * critic_out.sum() / static_cast<double>(n) : 0.0;
  return lv;
}

LossValue critic_loss(const Matrix& critic_out, const std::vector<bool>& is_real) {
  if (static_cast<std::size_t>(critic_out.rows()) != is_real.size()) {
    throw arg_error("critic_loss: role vector length mismatch");
  }
  const auto n_real = static_cast<double>(std::count(is_real.begin(), is_real.end(), true));
  const auto n_fake = static_cast<double>(is_real.size()) - n_real;
  LossValue lv;
  lv.grad = Matrix::Zero(critic_out.rows(), critic_out.cols());
  double real_sum = 0, fake_sum = 0;
  for (Eigen::Index i = 0; i < critic_out.rows(); ++i) {
    if (is_real[static_cast<std::size_t>(i)]) {
      real_sum += critic_out(i, 0);
      lv.grad(i, 0) = -1.0 / n_real;
    } else {
      fake_sum += critic_out(i, 0);
      lv.grad(i, 0) = 1.0 / n_fake;
    }
  }
  lv.loss = (n_real > 0 ? -real_sum / n_real : 0.0) + (n_fake > 0 ? fake_sum / n_fake : 0.0);
  return lv;
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult grad_check(Mlp& net, const Matrix& batch, const LossFn& loss, double eps,
                           std::uint64_t mask_seed) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw arg_error("grad_check eps must lie in [1e-7, 1e-3]");

  struct Probe {
    double loss;
    std::vector<std::uint8_t> signature;
  };
  auto evaluate = [&](const Matrix& input) {
    Rng rng(mask_seed);
    auto acts = net.forward(input, {Mode::train, &rng, false});
    return Probe{loss(acts.output).loss + net.l2_penalty(), kink_signature(net, acts)};
  };

  Rng rng(mask_seed);
  const auto acts = net.forward(batch, {Mode::train, &rng, false});
  const auto base_sig = kink_signature(net, acts);
  const auto lv = loss(acts.output);
  const Gradients grads = net.backward(acts, lv.grad);
  const auto analytic_blocks = grads.blocks(net.spec());

  // Partials far below the loss scale are pure roundoff in the central
  // difference, so the denominator never drops under this floor.
  const double floor = 1e-6 * std::max(1.0, std::abs(lv.loss + net.l2_penalty()));
  GradCheckResult result;
  auto compare = [&](double analytic, const Probe& plus, const Probe& minus) {
    if (plus.signature != base_sig || minus.signature != base_sig) {
      ++result.excluded;
      return;
    }
    const double numeric = (plus.loss - minus.loss) / (2 * eps);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(analytic - numeric) / denom);
    ++result.checked;
  };

  auto params = net.parameter_blocks();
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double orig = params[b][i];
      params[b][i] = orig + eps;
      const auto plus = evaluate(batch);
      params[b][i] = orig - eps;
      const auto minus = evaluate(batch);
      params[b][i] = orig;
      compare(analytic_blocks[b][i], plus, minus);
    }
  }
  Matrix probe = batch;
  for (Eigen::Index k = 0; k < probe.size(); ++k) {
    const double orig = probe.data()[k];
    probe.data()[k] = orig + eps;
    const auto plus = evaluate(probe);
    probe.data()[k] = orig - eps;
    const auto minus = evaluate(probe);
    probe.data()[k] = orig;
    compare(grads.input.data()[k], plus, minus);
  }
  return result;
}

}  // namespace flowgan::nn
