#pragma once

// Small fully-connected network engine: forward/backward passes, batch
// normalization, inverted dropout, L2 weight decay, Adam and RMSProp.

#include "flowgan/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace flowgan::nn {

struct Activation {
  enum class Kind { linear, tanh, leaky_relu, mixed_tanh_leaky, custom_output_leaky };

  Kind kind = Kind::linear;
  /// Negative-side slope for the leaky variants.
  double alpha = 0.0;
  /// mixed_tanh_leaky: the first ceil(tanh_fraction * width) units are tanh.
  double tanh_fraction = 0.0;
  /// custom_output_leaky: per-unit kink position (empty means 0 for every
  /// unit). Inputs at or above the kink pass through unchanged; below it the
  /// slope is `alpha`.
  std::vector<double> floor;

  static Activation linear() { return {}; }
  static Activation tanh() { return {Kind::tanh, 0.0, 0.0, {}}; }
  static Activation leaky_relu(double alpha) { return {Kind::leaky_relu, alpha, 0.0, {}}; }
  static Activation mixed_tanh_leaky(double tanh_fraction, double alpha) {
    return {Kind::mixed_tanh_leaky, alpha, tanh_fraction, {}};
  }
  static Activation custom_output_leaky(double alpha_small = 0.01) {
    return {Kind::custom_output_leaky, alpha_small, 0.0, {}};
  }

  /// Number of tanh units in a layer of the given width.
  std::size_t tanh_units(std::size_t width) const;
  bool has_kink() const noexcept { return kind != Kind::linear && kind != Kind::tanh; }

  bool operator==(const Activation&) const = default;
};

struct LayerSpec {
  std::size_t input_width = 0;
  std::size_t output_width = 0;
  Activation activation;
  /// When set, the affine bias is dropped (beta plays its role).
  bool batch_norm = false;
  double dropout_rate = 0.0;

  bool operator==(const LayerSpec&) const = default;
};

struct MlpSpec {
  std::vector<LayerSpec> layers;
  double l2_coefficient = 0.0;

  void validate() const;
  std::size_t input_width() const { return layers.front().input_width; }
  std::size_t output_width() const { return layers.back().output_width; }

  /// Chains `widths` (input first) with `hidden` activation on inner layers
  /// and `output` on the last layer.
  static MlpSpec chain(const std::vector<std::size_t>& widths, const Activation& hidden,
                       const Activation& output, bool batch_norm = false,
                       double dropout_rate = 0.0, double l2 = 0.0);

  bool operator==(const MlpSpec&) const = default;
};

enum class Mode { train, infer };

struct ForwardOptions {
  Mode mode = Mode::infer;
  /// Dropout mask source; required in train mode when any layer drops.
  Rng* rng = nullptr;
  bool update_running_stats = true;
};

struct LayerCache {
  Matrix input;
  Matrix normalized;  // batch-norm x-hat (empty without batch norm)
  RowVector inv_std;  // 1/sqrt(var + eps) used for normalization
  Matrix preactivation;
  Matrix mask;  // dropout scale per element (empty when inactive)
};

/// Everything backward() needs from one forward pass.
struct Activations {
  std::vector<LayerCache> layers;
  Matrix output;
  Mode mode = Mode::infer;
  const void* owner = nullptr;
  std::uint64_t version = 0;
};

struct LayerGrads {
  Matrix weights;
  RowVector bias;
  RowVector gamma;
  RowVector beta;
};

struct Gradients {
  std::vector<LayerGrads> layers;
  /// d(loss)/d(batch input).
  Matrix input;

  /// Views in the same order as Mlp::parameter_blocks().
  std::vector<std::span<const double>> blocks(const MlpSpec& spec) const;
  bool all_finite() const;
};

struct LayerParams {
  Matrix weights;  // input_width x output_width
  RowVector bias;
  RowVector gamma;
  RowVector beta;
  RowVector running_mean;
  RowVector running_var;

  bool operator==(const LayerParams&) const = default;
};

class Mlp {
 public:
  static constexpr double kBatchNormEps = 1e-6;
  static constexpr double kBatchNormMomentum = 0.99;

  Mlp() = default;
  /// Glorot-uniform weights, zero biases, unit gammas.
  Mlp(MlpSpec spec, Rng& rng);

  const MlpSpec& spec() const noexcept { return spec_; }
  const std::vector<LayerParams>& layers() const noexcept { return layers_; }
  std::vector<LayerParams>& mutable_layers() {
    ++version_;
    return layers_;
  }

  Activations forward(const Matrix& batch, const ForwardOptions& options);
  /// Infer-mode forward without a cache.
  Matrix predict(const Matrix& batch) const;
  Gradients backward(const Activations& activations, const Matrix& loss_grad) const;

  /// 0.5 * l2 * sum of squared weights.
  double l2_penalty() const;

  /// Trainable tensors: per layer W, then b (without batch norm) or
  /// gamma, beta (with batch norm).
  std::vector<std::span<double>> parameter_blocks();
  std::size_t parameter_count() const;
  /// Marks parameters as changed; older Activations become stale.
  void touch() noexcept { ++version_; }
  std::uint64_t version() const noexcept { return version_; }

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

  bool operator==(const Mlp& other) const {
    return spec_ == other.spec_ && layers_ == other.layers_;
  }

 private:
  Matrix run(const Matrix& batch, const ForwardOptions& options, Activations* cache,
             std::vector<LayerParams>* stats) const;

  MlpSpec spec_;
  std::vector<LayerParams> layers_;
  std::uint64_t version_ = 0;
};

/// Region index (above/below kink) of every kinked unit, flattened. Two
/// passes with equal signatures traverse the same linear pieces.
std::vector<std::uint8_t> kink_signature(const Mlp& net, const Activations& activations);

nlohmann::json to_json(const MlpSpec& spec);
MlpSpec mlp_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Activation& a);
Activation activation_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Optimizers

class Optimizer {
 public:
  enum class Kind { adam, rmsprop };

  static Optimizer adam(double learning_rate);
  static Optimizer rmsprop(double learning_rate);

  Kind kind() const noexcept { return kind_; }
  double learning_rate() const noexcept { return lr_; }
  std::uint64_t steps() const noexcept { return step_; }

  /// Applies one update. Moment buffers are created on first use and must
  /// keep the same block shapes afterwards.
  void step(std::span<const std::span<double>> params,
            std::span<const std::span<const double>> grads);

  nlohmann::json constants_json() const;

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kRho = 0.9;
  static constexpr double kEps = 1e-8;

 private:
  Optimizer(Kind kind, double lr);

  Kind kind_;
  double lr_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

// ---------------------------------------------------------------------------
// Losses

struct LossValue {
  double loss = 0.0;
  Matrix grad;  // same shape as the network output
};

enum class CriticRole { real, fake };

/// mean(sign * critic_out) with sign -1 for real and +1 for fake.
LossValue wasserstein_loss(const Matrix& critic_out, CriticRole role);

/// Sum of the per-role Wasserstein losses over a mixed batch; `is_real[i]`
/// selects the role of row i. Roles with no rows contribute nothing.
LossValue critic_loss(const Matrix& critic_out, const std::vector<bool>& is_real);

using LossFn = std::function<LossValue(const Matrix& output)>;

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  /// Parameters skipped because a perturbation moved a unit across a kink.
  std::size_t excluded = 0;
};

/// Compares backward() against central differences for every parameter and
/// every input entry. Runs in train mode with dropout masks frozen by
/// `mask_seed`; batch-norm running statistics are left untouched. The
/// loss includes the L2 penalty. eps must lie in [1e-7, 1e-3]. Relative
/// error uses max(|a|, |n|, 1e-6 * max(1, |loss|)) as denominator.
GradCheckResult grad_check(Mlp& net, const Matrix& batch, const LossFn& loss, double eps,
                           std::uint64_t mask_seed = 1);

}  // namespace flowgan::nn
