#include "flowgan/wgan.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace flowgan;
using namespace flowgan::wgan;
using data::FlowDataset;

namespace {

GanConfig small_config(std::size_t d = 2, std::size_t latent = 4) {
  GanConfig c;
  c.data_dimension = d;
  c.latent.dimension = latent;
  c.latent.noise = {NoiseSpec::Kind::normal, 1.0};
  c.generator = nn::MlpSpec::chain({latent, 16, d}, nn::Activation::leaky_relu(0.15), nn::Activation::linear());
  c.discriminator = nn::MlpSpec::chain({d, 16, 1}, nn::Activation::leaky_relu(0.2), nn::Activation::linear());
  c.minibatch_ratio = 0.1;
  c.seed = 5;
  return c;
}

FlowDataset exponential_class(std::size_t n, std::size_t d, int label, std::uint64_t seed) {
  data::FixtureSpec spec;
  spec.dimension = d;
  spec.seed = seed;
  data::FixtureClass cls;
  cls.label = label;
  cls.count = n;
  cls.components.push_back({1.0, std::vector<data::Distribution>(d, data::Distribution::exponential(1.0))});
  spec.classes.push_back(cls);
  return data::synth_fixture(spec);
}

double column_std(const Matrix& m, Eigen::Index j) {
  const double mean = m.col(j).mean();
  return std::sqrt((m.col(j).array() - mean).square().mean());
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("flowgan_test_" + name);
}

}  // namespace

TEST(Latent, ZeroNoiseSingleCentroidRepeatsCentroid) {
  LatentSpec l;
  l.dimension = 3;
  l.noise = {NoiseSpec::Kind::normal, 0.0};
  EmbeddingSpec e;
  e.categories = 1;
  e.centroids = Matrix(1, 3);
  e.centroids << 0.5, -2.0, 7.0;
  l.embedding = e;
  Rng rng(1);
  auto batch = sample_latent(l, 10, rng);
  for (Eigen::Index i = 0; i < 10; ++i) EXPECT_TRUE(batch.z.row(i) == e.centroids.row(0));
}

TEST(Latent, NormalScaleFiveConcentrates) {
  LatentSpec l;
  l.dimension = 123;
  l.noise = {NoiseSpec::Kind::normal, 5.0};
  Rng rng(2);
  auto batch = sample_latent(l, 100000, rng);
  for (Eigen::Index j = 0; j < 123; ++j) {
    const double s = column_std(batch.z, j);
    EXPECT_GE(s, 4.9);
    EXPECT_LE(s, 5.1);
  }
}

TEST(Latent, UniformNoiseHasRequestedStd) {
  Rng rng(3);
  Matrix m = sample_noise({NoiseSpec::Kind::uniform, 2.0}, 200000, 1, rng);
  EXPECT_NEAR(column_std(m, 0), 2.0, 0.02);
  EXPECT_LE(m.maxCoeff(), std::sqrt(3.0) * 2.0);
  EXPECT_GE(m.minCoeff(), -std::sqrt(3.0) * 2.0);
}

TEST(Latent, EmbeddingCategoriesAreUniform) {
  LatentSpec l;
  l.dimension = 8;
  l.embedding = EmbeddingSpec{20, false, 1.0, {}};
  Rng rng(4);
  init_centroids(l, rng);
  ASSERT_EQ(l.embedding->centroids.rows(), 20);
  auto batch = sample_latent(l, 20000, rng);
  std::vector<int> freq(20, 0);
  for (auto c : batch.categories) ++freq[c];
  for (int f : freq) {
    EXPECT_GE(f, 800);
    EXPECT_LE(f, 1200);
  }
}

TEST(Latent, Validation) {
  LatentSpec l;
  l.dimension = 0;
  EXPECT_THROW(l.validate(), Error);
  l.dimension = 4;
  l.embedding = EmbeddingSpec{21, false, 1.0, {}};
  EXPECT_THROW(l.validate(), Error);
  Rng rng(0);
  l.embedding->categories = 2;
  EXPECT_THROW(sample_latent(l, 3, rng), Error);  // centroids missing
  EXPECT_THROW(sample_latent(LatentSpec{}, 0, rng), Error);
}

TEST(Perturb, IdentityWithoutOptions) {
  Rng rng(5);
  Matrix m = Matrix::Random(6, 3);
  std::vector<bool> r{true, true, true, false, false, false};
  auto out = perturb_inputs(m, r, {}, rng);
  EXPECT_TRUE(out.batch == m);
  EXPECT_EQ(out.is_real, r);
  EXPECT_EQ(out.flipped, 0u);
}

TEST(Perturb, ExactFlipCount) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<bool> r(100);
    for (std::size_t i = 0; i < 100; ++i) r[i] = i < 50;
    NoiseHeuristics h;
    h.label_flip_ratio = 0.1;
    auto out = perturb_inputs(Matrix::Zero(100, 2), r, h, rng);
    int changed = 0;
    for (std::size_t i = 0; i < 100; ++i) changed += out.is_real[i] != r[i];
    EXPECT_EQ(changed, 10);
    EXPECT_EQ(out.flipped, 10u);
  }
}

TEST(Perturb, AllNoiseStdConcentrates) {
  Rng rng(7);
  NoiseHeuristics h;
  h.all_noise = NoiseSpec{NoiseSpec::Kind::normal, 0.02};
  auto out = perturb_inputs(Matrix::Zero(50000, 4), std::vector<bool>(50000, true), h, rng);
  const double mean = out.batch.mean();
  const double s = std::sqrt((out.batch.array() - mean).square().mean());
  EXPECT_GE(s, 0.019);
  EXPECT_LE(s, 0.021);
}

TEST(Perturb, FakeNoiseTouchesOnlyFakeRows) {
  Rng rng(8);
  NoiseHeuristics h;
  h.fake_noise = NoiseSpec{NoiseSpec::Kind::uniform, 1.0};
  std::vector<bool> r{true, false, true, false};
  auto out = perturb_inputs(Matrix::Zero(4, 3), r, h, rng);
  EXPECT_TRUE(out.batch.row(0).isZero());
  EXPECT_TRUE(out.batch.row(2).isZero());
  EXPECT_FALSE(out.batch.row(1).isZero());
  EXPECT_FALSE(out.batch.row(3).isZero());
}

TEST(Config, ValidationCatchesWiring) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.discriminator.layers.back().activation = nn::Activation::tanh();
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.latent.dimension = 5;
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.noise.label_flip_ratio = 0.25;
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.complementary_ratio = 0.6;
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.minibatch_ratio = 0.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Config, JsonRoundTripAndShorthand) {
  auto c = small_config();
  c.noise.all_noise = NoiseSpec{NoiseSpec::Kind::normal, 0.02};
  c.noise.label_flip_ratio = 0.05;
  c.latent.embedding = EmbeddingSpec{3, true, 2.0, {}};
  EXPECT_EQ(gan_config_from_json(to_json(c)), c);

  nlohmann::json j = {{"dimension", 3},
                      {"latent", {{"dimension", 8}, {"noise", {{"distribution", "uniform"}, {"std", 2.0}}}}},
                      {"generator", {{"hidden", {16, 16}}, {"output_activation", {{"kind", "custom_output_leaky"}}}}},
                      {"discriminator", {{"hidden", {12}}, {"dropout", 0.1}}}};
  auto s = gan_config_from_json(j);
  EXPECT_EQ(s.generator.layers.size(), 3u);
  EXPECT_EQ(s.generator.input_width(), 8u);
  EXPECT_EQ(s.generator.output_width(), 3u);
  EXPECT_EQ(s.generator.layers[0].activation.alpha, 0.15);
  EXPECT_EQ(s.generator.layers.back().activation.alpha, 0.01);
  EXPECT_EQ(s.discriminator.layers[0].activation.alpha, 0.2);
  EXPECT_EQ(s.discriminator.layers[0].dropout_rate, 0.1);
  EXPECT_EQ(s.latent.noise.kind, NoiseSpec::Kind::uniform);
  EXPECT_EQ(s.adaptive.min_ratio_fake_pass, 0.3);
  EXPECT_EQ(s.adaptive.max_extra_cycles, 50u);
  EXPECT_THROW(gan_config_from_json(nlohmann::json{{"dimension", 2}}), Error);
}

TEST(Config, OutputKinksSitAtRawZero) {
  data::ScalerParams scaler{{2.0, -1.0}, {4.0, 0.5}, {false, false}};
  auto spec = nn::MlpSpec::chain({4, 2}, nn::Activation::linear(), nn::Activation::custom_output_leaky());
  auto kinked = with_output_kinks(spec, scaler, {true, false});
  const auto& floor = kinked.layers.back().activation.floor;
  ASSERT_EQ(floor.size(), 2u);
  EXPECT_EQ(floor[0], -0.5);
  EXPECT_LT(floor[1], -1e200);
  auto linear = nn::MlpSpec::chain({4, 2}, nn::Activation::linear(), nn::Activation::linear());
  EXPECT_EQ(with_output_kinks(linear, scaler, {true, true}), linear);
}

TEST(Minibatch, SizeFromRatio) {
  EXPECT_EQ(minibatch_size(0.002, 400000), 800u);
  EXPECT_EQ(minibatch_size(0.001, 100), 2u);
  EXPECT_EQ(minibatch_size(1.0, 7), 7u);
  EXPECT_THROW(minibatch_size(0.5, 1), Error);
}

TEST(Minibatch, ZeroThresholdsRunOneCycleEach) {
  auto c = small_config();
  c.adaptive = {0.0, 0.0, 0.0, 50};
  Rng init(1), rng(2);
  GanState state(c, init);
  Matrix real = Matrix::Random(20, 2);
  for (int s = 0; s < 5; ++s) {
    auto r = state.train_minibatch(real, nullptr, rng);
    EXPECT_EQ(r.d_cycles, 1u);
    EXPECT_EQ(r.g_cycles, 1u);
    EXPECT_FALSE(r.flagged());
  }
  EXPECT_EQ(state.steps_done(), 5u);
}

TEST(Minibatch, UnflaggedReportsMeetThresholds) {
  auto c = small_config();
  c.adaptive = {0.3, 0.01, 0.01, 10};
  Rng init(3), rng(4);
  GanState state(c, init);
  Matrix real = Matrix::Random(30, 2).array() + 2.0;
  for (int s = 0; s < 20; ++s) {
    auto r = state.train_minibatch(real, nullptr, rng);
    if (!r.d_capped) {
      EXPECT_GE(r.ratio_tp, 0.01);
      EXPECT_GE(r.ratio_tn, 0.01);
    }
    if (!r.g_capped) EXPECT_GE(r.ratio_fake_pass, 0.3);
    EXPECT_LE(r.d_cycles, 11u);
    EXPECT_LE(r.g_cycles, 11u);
  }
}

TEST(Minibatch, ConstantPositiveCriticHitsCycleCap) {
  auto c = small_config();
  c.adaptive.max_extra_cycles = 7;
  Rng init(5), rng(6);
  GanState state(c, init);
  auto& layers = state.discriminator().mutable_layers();
  for (auto& l : layers) l.weights.setZero();
  layers.back().bias.setConstant(1.0);
  state.set_discriminator_frozen(true);
  auto r = state.train_minibatch(Matrix::Random(10, 2), nullptr, rng);
  EXPECT_EQ(r.ratio_tn, 0.0);
  EXPECT_EQ(r.d_cycles, 8u);
  EXPECT_TRUE(r.d_capped);
  EXPECT_TRUE(r.flagged());
  // Every fake passes a constant positive critic.
  EXPECT_EQ(r.ratio_fake_pass, 1.0);
  EXPECT_FALSE(r.g_capped);
}

TEST(Minibatch, NonFiniteInputPoisonsState) {
  auto c = small_config();
  Rng init(1), rng(2);
  GanState state(c, init);
  Matrix real = Matrix::Zero(4, 2);
  real(0, 0) = std::nan("");
  EXPECT_THROW(state.train_minibatch(real, nullptr, rng), Error);
  EXPECT_TRUE(state.poisoned());
  EXPECT_THROW(state.train_minibatch(Matrix::Zero(4, 2), nullptr, rng), Error);
}

TEST(Minibatch, ComplementaryRowsEnterCriticBatch) {
  auto c = small_config();
  c.complementary_ratio = 0.5;
  Rng init(1), rng(2);
  GanState state(c, init);
  Matrix comp = Matrix::Constant(5, 2, -3.0);
  auto r = state.train_minibatch(Matrix::Random(10, 2), &comp, rng);
  EXPECT_GE(r.d_cycles, 1u);
  EXPECT_THROW(state.train_minibatch(Matrix::Random(10, 3), nullptr, rng), Error);
}

TEST(Train, OneCheckpointPerStep) {
  auto data = exponential_class(200, 2, 0, 1);
  TrainOptions opt;
  opt.steps = 3;
  opt.label = 0;
  std::vector<std::size_t> seen;
  opt.on_checkpoint = [&](const Checkpoint& c) { seen.push_back(c.step); };
  auto result = train(small_config(), data, opt);
  ASSERT_EQ(result.checkpoints.size(), 3u);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(result.checkpoints[i].step, i + 1);
    EXPECT_EQ(result.checkpoints[i].id, checkpoint_id(0, i + 1));
  }
  EXPECT_FALSE(result.diverged);
}

TEST(Train, ThinningKeepsEveryKthAndLast) {
  auto c = small_config();
  c.checkpoint_every = 3;
  TrainOptions opt;
  opt.steps = 7;
  auto result = train(c, exponential_class(100, 2, 0, 2), opt);
  std::vector<std::size_t> steps;
  for (const auto& k : result.checkpoints) steps.push_back(k.step);
  EXPECT_EQ(steps, (std::vector<std::size_t>{3, 6, 7}));
  EXPECT_EQ(result.reports.size(), 7u);
}

TEST(Train, SeedDeterminism) {
  auto c = small_config();
  c.noise.all_noise = NoiseSpec{NoiseSpec::Kind::normal, 0.02};
  c.noise.label_flip_ratio = 0.05;
  c.generator.layers[0].dropout_rate = 0.1;
  auto data = exponential_class(150, 2, 1, 3);
  TrainOptions opt;
  opt.steps = 6;
  opt.label = 1;
  auto a = train(c, data, opt);
  auto b = train(c, data, opt);
  ASSERT_EQ(a.checkpoints.size(), b.checkpoints.size());
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
    EXPECT_EQ(to_json(a.checkpoints[i]).dump(), to_json(b.checkpoints[i]).dump());
  }
  c.seed += 1;
  auto other = train(c, data, opt);
  EXPECT_NE(to_json(a.checkpoints.back()).dump(), to_json(other.checkpoints.back()).dump());
}

TEST(Train, RejectsMixedOrMislabeledData) {
  auto data = exponential_class(50, 2, 0, 4);
  TrainOptions opt;
  opt.steps = 1;
  opt.label = 1;
  EXPECT_THROW(train(small_config(), data, opt), Error);
  data.add(std::vector<double>{1.0, 1.0}, 1);
  opt.label = 0;
  EXPECT_THROW(train(small_config(), data, opt), Error);
}

TEST(Train, DivergenceReturnsPartialCheckpoints) {
  auto c = small_config();
  c.discriminator_lr = 1e300;
  TrainOptions opt;
  opt.steps = 10;
  auto result = train(c, exponential_class(100, 2, 0, 5), opt);
  EXPECT_TRUE(result.diverged);
  EXPECT_FALSE(result.error.empty());
  EXPECT_LT(result.checkpoints.size(), 10u);
  EXPECT_EQ(result.checkpoints.size(), result.reports.size());
}

TEST(Train, FrozenEmbeddingStaysBitIdentical) {
  auto c = small_config();
  c.latent.embedding = EmbeddingSpec{4, false, 1.0, {}};
  TrainOptions opt;
  opt.steps = 5;
  auto result = train(c, exponential_class(100, 2, 0, 6), opt);
  const auto& first = result.checkpoints.front().latent.embedding->centroids;
  for (const auto& k : result.checkpoints) EXPECT_TRUE(k.latent.embedding->centroids == first);

  c.latent.embedding->trainable = true;
  auto trained = train(c, exponential_class(100, 2, 0, 6), opt);
  EXPECT_FALSE(trained.checkpoints.back().latent.embedding->centroids ==
               trained.checkpoints.front().latent.embedding->centroids);
}

TEST(Train, CustomOutputKinksFollowScaler) {
  auto c = small_config();
  c.generator.layers.back().activation = nn::Activation::custom_output_leaky(0.01);
  TrainOptions opt;
  opt.steps = 1;
  auto result = train(c, exponential_class(300, 2, 0, 7), opt);
  const auto& floor = result.checkpoints[0].generator.spec().layers.back().activation.floor;
  ASSERT_EQ(floor.size(), 2u);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(floor[j], result.scaler.standardized(j, 0.0));
}

TEST(Checkpoint, SaveLoadGenerateIsBitIdentical) {
  auto c = small_config();
  c.latent.embedding = EmbeddingSpec{3, true, 1.0, {}};
  c.generator.layers[0].batch_norm = true;
  TrainOptions opt;
  opt.steps = 4;
  auto result = train(c, exponential_class(120, 2, 0, 8), opt);
  const auto& ckpt = result.checkpoints.back();
  const auto path = temp_path("ckpt.json");
  save_checkpoint(ckpt, path);
  auto loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded, ckpt);

  Rng zr(9);
  Matrix z = sample_latent(ckpt.latent, 50, zr).z;
  EXPECT_TRUE(generate_standardized(loaded, z) == generate_standardized(ckpt, z));
  Rng r1(10), r2(10);
  EXPECT_EQ(generate(loaded, 40, {}, r1), generate(ckpt, 40, {}, r2));
}

TEST(Checkpoint, RejectsForeignJson) {
  EXPECT_THROW(checkpoint_from_json(nlohmann::json{{"format", "other"}}), Error);
  EXPECT_THROW(load_checkpoint(temp_path("missing.json")), Error);
}

TEST(Generate, CountsFiltersAndOrigins) {
  TrainOptions opt;
  opt.steps = 5;
  opt.label = 1;
  auto r1 = train(small_config(), exponential_class(200, 2, 1, 9), opt);
  const auto& ckpt = r1.checkpoints.back();
  Rng rng(1);
  auto plain = generate(ckpt, 5, {}, rng);
  EXPECT_EQ(plain.size(), 5u);
  EXPECT_EQ(plain.count_origin(data::Origin::synthetic), 5u);
  EXPECT_EQ(plain.class_counts().at(1), 5u);

  GenerateOptions pos;
  pos.filter = GenerateOptions::Filter::positive;
  try {
    auto kept = generate(ckpt, 50, pos, rng);
    EXPECT_EQ(kept.size(), 50u);
    Matrix x = kept.features();
    ckpt.scaler.apply_in_place(x);
    Matrix critic = ckpt.discriminator.predict(x);
    EXPECT_GT(critic.minCoeff(), -1e-9);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::evaluation);
    EXPECT_NE(std::string(e.what()).find("critic > 0 filter"), std::string::npos);
  }

  GenerateOptions clip;
  clip.clip_negatives = true;
  try {
    auto kept = generate(ckpt, 50, clip, rng);
    EXPECT_GE(kept.features().minCoeff(), 0.0);
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("clipping"), std::string::npos);
  }
  EXPECT_THROW(generate(ckpt, 0, {}, rng), Error);
}

TEST(Generate, ImpossibleFilterNamesItself) {
  TrainOptions opt;
  opt.steps = 1;
  auto result = train(small_config(), exponential_class(100, 2, 0, 10), opt);
  auto ckpt = result.checkpoints.back();
  // A critic that rejects everything.
  auto layers = ckpt.discriminator.layers();
  for (auto& l : layers) l.weights.setZero();
  layers.back().bias.setConstant(-1.0);
  ckpt.discriminator.mutable_layers() = layers;
  GenerateOptions pos;
  pos.filter = GenerateOptions::Filter::positive;
  Rng rng(2);
  try {
    generate(ckpt, 10, pos, rng);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::evaluation);
    EXPECT_NE(std::string(e.what()).find("critic > 0 filter"), std::string::npos);
  }
}

TEST(Generate, PercentileFilterKeepsUpperCriticTail) {
  TrainOptions opt;
  opt.steps = 3;
  auto result = train(small_config(), exponential_class(100, 2, 0, 11), opt);
  const auto& ckpt = result.checkpoints.back();
  GenerateOptions p;
  p.filter = GenerateOptions::Filter::percentile;
  p.percentile = 80.0;
  Rng rng(3);
  auto kept = generate(ckpt, 100, p, rng);
  EXPECT_EQ(kept.size(), 100u);
  p.percentile = 120.0;
  EXPECT_THROW(generate(ckpt, 10, p, rng), Error);
}
