#pragma once

// Single-class Wasserstein GAN with adaptive mini-batches, input-noise and
// label-flip heuristics, complementary-class rows for the critic and an
// optional latent embedding.

#include "flowgan/data.hpp"
#include "flowgan/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace flowgan::wgan {

struct NoiseSpec {
  enum class Kind { normal, uniform };
  Kind kind = Kind::normal;
  /// Standard deviation. Uniform noise with std s is U(-sqrt(3) s, sqrt(3) s).
  double std = 0.0;

  bool operator==(const NoiseSpec&) const = default;
};

/// rows x cols i.i.d. zero-mean draws.
Matrix sample_noise(const NoiseSpec& noise, Eigen::Index rows, Eigen::Index cols, Rng& rng);

struct EmbeddingSpec {
  std::size_t categories = 1;
  bool trainable = false;
  /// Centroids are drawn from U(-centroid_scale, centroid_scale).
  double centroid_scale = 1.0;
  /// categories x latent dimension; filled at initialization when empty.
  Matrix centroids;

  bool operator==(const EmbeddingSpec& o) const {
    return categories == o.categories && trainable == o.trainable && centroid_scale == o.centroid_scale &&
           centroids.rows() == o.centroids.rows() && centroids.cols() == o.centroids.cols() &&
           centroids == o.centroids;
  }
};

struct LatentSpec {
  std::size_t dimension = 123;
  NoiseSpec noise{NoiseSpec::Kind::normal, 1.0};
  std::optional<EmbeddingSpec> embedding;

  void validate() const;
  bool operator==(const LatentSpec&) const = default;
};

struct LatentBatch {
  Matrix z;
  /// Category of each row; empty without an embedding.
  std::vector<std::uint32_t> categories;
};

/// Without an embedding: pure noise. With one: a uniformly random centroid
/// per row plus noise. The embedding must have its centroids filled.
LatentBatch sample_latent(const LatentSpec& latent, Eigen::Index n, Rng& rng);

/// Fills an empty centroid table.
void init_centroids(LatentSpec& latent, Rng& rng);

struct AdaptiveSpec {
  double min_ratio_fake_pass = 0.3;
  double min_ratio_tp = 0.01;
  double min_ratio_tn = 0.01;
  /// Cycles allowed beyond the first one in each phase.
  std::size_t max_extra_cycles = 50;

  bool operator==(const AdaptiveSpec&) const = default;
};

struct NoiseHeuristics {
  std::optional<NoiseSpec> fake_noise;
  std::optional<NoiseSpec> all_noise;
  double label_flip_ratio = 0.0;

  bool operator==(const NoiseHeuristics&) const = default;
};

struct GanConfig {
  std::size_t data_dimension = 0;
  nn::MlpSpec generator;
  nn::MlpSpec discriminator;
  LatentSpec latent;
  double minibatch_ratio = 0.002;
  AdaptiveSpec adaptive;
  NoiseHeuristics noise;
  double complementary_ratio = 0.0;
  double generator_lr = 1e-3;
  double discriminator_lr = 1e-4;
  std::uint64_t seed = 0;
  /// Keep every k-th step's checkpoint (the last step is always kept).
  std::size_t checkpoint_every = 1;

  void validate() const;
  bool operator==(const GanConfig&) const = default;
};

/// Full-layer or shorthand network descriptions are both accepted on input;
/// output always lists full layers.
nlohmann::json to_json(const GanConfig& config);
GanConfig gan_config_from_json(const nlohmann::json& j);
GanConfig load_gan_config(const std::filesystem::path& path);

/// Small default for d features: leaky 0.15 generator with a custom leaky
/// output, leaky 0.2 critic with a linear output.
GanConfig default_config(std::size_t data_dimension);

/// Points every kink of a custom leaky output layer at the standardized
/// image of raw 0 for the non-negative features, and far below the data for
/// the others.
nn::MlpSpec with_output_kinks(nn::MlpSpec generator, const data::ScalerParams& scaler,
                              const std::vector<bool>& nonnegative);

struct Perturbed {
  Matrix batch;
  std::vector<bool> is_real;
  std::size_t flipped = 0;
};

/// Adds fake_noise to rows marked fake, then all_noise to every row, then
/// inverts exactly round(label_flip_ratio * n) real/fake marks chosen
/// uniformly without replacement.
Perturbed perturb_inputs(Matrix batch, std::vector<bool> is_real, const NoiseHeuristics& noise, Rng& rng);

struct TrainStepReport {
  std::size_t step = 0;
  std::size_t d_cycles = 0;
  std::size_t g_cycles = 0;
  double ratio_tp = 0.0;
  double ratio_tn = 0.0;
  double ratio_fake_pass = 0.0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  /// A phase ended on max_extra_cycles with its thresholds unmet.
  bool d_capped = false;
  bool g_capped = false;

  bool flagged() const noexcept { return d_capped || g_capped; }
  bool operator==(const TrainStepReport&) const = default;
};

nlohmann::json to_json(const TrainStepReport& r);
TrainStepReport step_report_from_json(const nlohmann::json& j);

/// Networks, optimizers and latent table of one training run.
class GanState {
 public:
  /// Config must already be validated; its generator spec is used as given.
  GanState(const GanConfig& config, Rng& init_rng);

  const GanConfig& config() const noexcept { return config_; }
  nn::Mlp& generator() noexcept { return g_; }
  nn::Mlp& discriminator() noexcept { return d_; }
  const nn::Mlp& generator() const noexcept { return g_; }
  const nn::Mlp& discriminator() const noexcept { return d_; }
  const LatentSpec& latent() const noexcept { return latent_; }
  std::size_t steps_done() const noexcept { return steps_; }
  bool poisoned() const noexcept { return poisoned_; }

  /// A frozen critic still runs but is never updated.
  void set_discriminator_frozen(bool frozen) noexcept { d_frozen_ = frozen; }

  /// One adaptive mini-batch step on standardized rows. Throws a divergence
  /// error (and poisons the state) on a non-finite loss.
  TrainStepReport train_minibatch(const Matrix& real_batch, const Matrix* complementary, Rng& rng);

 private:
  TrainStepReport run_minibatch(const Matrix& real_batch, const Matrix* complementary, Rng& rng);
  double discriminator_cycle(const Matrix& real_batch, const Matrix* complementary, Rng& rng);
  double generator_cycle(Eigen::Index n, Rng& rng);
  double fraction_positive(const Matrix& rows);
  void check_loss(double loss, const char* phase);

  GanConfig config_;
  LatentSpec latent_;
  nn::Mlp g_;
  nn::Mlp d_;
  nn::Optimizer g_opt_;
  nn::Optimizer d_opt_;
  nn::Optimizer embed_opt_;
  std::size_t steps_ = 0;
  bool poisoned_ = false;
  bool d_frozen_ = false;
};

inline TrainStepReport train_minibatch(GanState& state, const Matrix& real_batch, const Matrix* complementary,
                                       Rng& rng) {
  return state.train_minibatch(real_batch, complementary, rng);
}

struct Checkpoint {
  std::size_t step = 0;
  std::string id;
  int label = 0;
  nn::Mlp generator;
  nn::Mlp discriminator;
  LatentSpec latent;
  data::ScalerParams scaler;
  std::vector<bool> nonnegative;
  TrainStepReport report;

  bool operator==(const Checkpoint&) const = default;
};

std::string checkpoint_id(int label, std::size_t step);

nlohmann::json to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainOptions {
  std::size_t steps = 0;
  int label = 0;
  /// Raw rows of the other class offered to the critic as fakes.
  const data::FlowDataset* complementary = nullptr;
  /// Features that must stay non-negative; detected from the data when
  /// absent (a feature qualifies when its minimum is >= 0).
  std::optional<std::vector<bool>> nonnegative;
  /// Called with every kept checkpoint; must not retain references.
  std::function<void(const Checkpoint&)> on_checkpoint;
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;
  /// One per step run, including steps whose checkpoint was thinned away.
  std::vector<TrainStepReport> reports;
  data::ScalerParams scaler;
  bool diverged = false;
  std::string error;
};

/// Standardizes the class rows, builds the networks and runs `steps`
/// adaptive mini-batch steps. Batches are drawn without replacement from a
/// per-epoch shuffle. A divergence ends training early and is reported in
/// the result rather than thrown.
TrainResult train(const GanConfig& config, const data::FlowDataset& class_data, const TrainOptions& options);

/// ceil(ratio * rows), at least 2 and at most rows.
std::size_t minibatch_size(double ratio, std::size_t rows);

struct GenerateOptions {
  enum class Filter { none, positive, percentile };
  Filter filter = Filter::none;
  /// Percentile filter: keep rows whose critic output exceeds this
  /// percentile of a calibration batch's critic outputs.
  double percentile = 50.0;
  bool clip_negatives = false;
};

/// Generator output for explicit latent rows, still in standardized units.
Matrix generate_standardized(const Checkpoint& ckpt, const Matrix& z);

/// n raw-unit synthetic rows of the checkpoint's class. Filters oversample;
/// if fewer than 0.1% of probes survive after 10,000 probes, or the probe
/// budget runs out, an evaluation error names the filter.
data::FlowDataset generate(const Checkpoint& ckpt, std::size_t n, const GenerateOptions& options, Rng& rng);

}  // namespace flowgan::wgan
