#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace jenkins;
using namespace jenkins::encoder;

TEST(Classes, CountMapping) {
  EXPECT_EQ(count_to_class(0), 0);
  EXPECT_EQ(count_to_class(7), 7);
  EXPECT_EQ(count_to_class(8), 8);
  EXPECT_EQ(count_to_class(12), 8);
  EXPECT_THROW(count_to_class(-1), Error);
  EXPECT_EQ(class_to_count(8), 8);
  EXPECT_THROW(class_to_count(9), Error);
  for (int c = 0; c < kClasses; ++c) EXPECT_EQ(count_to_class(class_to_count(c)), c);
}

TEST(Input, ShapeAndLayout) {
  CountMatrix past = CountMatrix::Zero(3, kNeurons);
  past(0, 0) = 1;
  past(2, 5) = 11;
  VelocityMatrix pv(3, 2);
  pv << 1, 2, 3, 4, 5, 6;
  VelocityMatrix fv(2, 2);
  fv << 7, 8, 9, 10;
  const auto tokens = build_encoder_input(past, pv, fv);
  ASSERT_EQ(tokens.rows(), 90);
  ASSERT_EQ(tokens.cols(), kTokenFeatures);
  // Three past bins sit just before the look-ahead, padding on the old side.
  for (int r = 0; r < 47; ++r) ASSERT_EQ(tokens.row(r).cwiseAbs().sum(), 0.0) << r;
  EXPECT_EQ(tokens(47, 0), 1.0);
  EXPECT_EQ(tokens(49, 5), 8.0);  // clipped to the top class
  EXPECT_EQ(tokens(47, kNeurons), 1.0);
  EXPECT_EQ(tokens(49, kNeurons + 1), 6.0);
  EXPECT_EQ(tokens.block(50, 0, 2, kNeurons).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(tokens(50, kNeurons), 7.0);
  EXPECT_EQ(tokens(51, kNeurons + 1), 10.0);
  for (int r = 52; r < 90; ++r) ASSERT_EQ(tokens.row(r).cwiseAbs().sum(), 0.0) << r;
}

TEST(Input, OversizedInputsAreRejected) {
  const CountMatrix past = CountMatrix::Zero(51, kNeurons);
  const VelocityMatrix pv = VelocityMatrix::Zero(51, 2);
  EXPECT_THROW(build_encoder_input(past, pv, VelocityMatrix::Zero(0, 2)), ShapeError);
  EXPECT_THROW(build_encoder_input(CountMatrix::Zero(0, kNeurons), VelocityMatrix::Zero(0, 2),
                                   VelocityMatrix::Zero(41, 2)),
               ShapeError);
  EXPECT_THROW(build_encoder_input(CountMatrix::Zero(2, kNeurons), VelocityMatrix::Zero(1, 2),
                                   VelocityMatrix::Zero(0, 2)),
               ShapeError);
}

TEST(Input, TrialTokensMatchBuilder) {
  const auto ds = fixtures::small_dataset(8);
  const auto& trial = ds.trials[3];
  const int t = 30;
  TokenMatrix from_trial(90, kTokenFeatures);
  fill_trial_tokens(trial.counts, trial.velocities, t, 50, 40, from_trial);
  const auto built = build_encoder_input(trial.counts.topRows(t), trial.velocities.topRows(t),
                                         trial.velocities.middleRows(t, trial.bins() - t));
  EXPECT_EQ(from_trial, built);
}

TEST(Model, ZeroHeadIsUniform) {
  const auto m = fixtures::tiny_encoder();
  const auto d = m->predict_distribution(TokenMatrix::Zero(90, kTokenFeatures));
  ASSERT_EQ(d.rows(), kNeurons);
  ASSERT_EQ(d.cols(), kClasses);
  EXPECT_LT((d.array() - 1.0 / 9.0).abs().maxCoeff(), 1e-6);
}

TEST(Model, RowsSumToOne) {
  encoder::EncoderModel m(fixtures::tiny_encoder_config());
  Rng rng(4);
  m.init(rng);
  std::normal_distribution<float> n(0.0f, 0.5f);
  for (Eigen::Index i = 0; i < m.network.head.weight.value.size(); ++i) m.network.head.weight.value.data()[i] = n(rng);
  TokenMatrix tokens = TokenMatrix::Random(90, kTokenFeatures).cwiseAbs() * 3.0;
  const auto d = m.predict_distribution(tokens);
  for (Eigen::Index r = 0; r < d.rows(); ++r) EXPECT_NEAR(d.row(r).sum(), 1.0, 1e-6);
  EXPECT_GT((d.array() - 1.0 / 9.0).abs().maxCoeff(), 1e-3);
}

TEST(Model, ReadoutSeesTokenOrder) {
  encoder::EncoderModel m(fixtures::tiny_encoder_config());
  Rng rng(5);
  m.init(rng);
  m.network.head.weight.value.setConstant(0.3f);
  for (Eigen::Index i = 0; i < m.network.head.weight.value.size(); i += 7) m.network.head.weight.value.data()[i] = -1;
  TokenMatrix tokens = TokenMatrix::Zero(90, kTokenFeatures);
  tokens(10, 0) = 5;
  tokens(60, kNeurons) = 100;
  TokenMatrix swapped = tokens;
  swapped.row(10).swap(swapped.row(20));
  EXPECT_NE(m.predict_distribution(tokens), m.predict_distribution(swapped));
}

TEST(Model, PrepareRejectsWrongShape) {
  EXPECT_THROW(fixtures::tiny_encoder()->prepare(TokenMatrix::Zero(89, kTokenFeatures)), ShapeError);
}

TEST(Model, SaveLoadRoundTrip) {
  fixtures::TempDir dir;
  const auto m = fixtures::tiny_encoder();
  m->save(dir / "e.bin");
  const auto loaded = EncoderModel::load(dir / "e.bin");
  EXPECT_TRUE(loaded == *m);
  EXPECT_EQ(loaded.config().d_model, m->config().d_model);
  EXPECT_EQ(loaded.training_mean_count, 0.3);
  fixtures::tiny_decoder()->save(dir / "d.bin");
  EXPECT_THROW(EncoderModel::load(dir / "d.bin"), Error);
}

TEST(Config, Validation) {
  EncoderConfig c;
  c.heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = EncoderConfig{};
  c.lookahead_bins = 10;
  EXPECT_THROW(c.validate(), Error);
  c = EncoderConfig{};
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = EncoderConfig{};
  c.bins_per_trial = 3;
  EXPECT_EQ(EncoderConfig::from_json(c.to_json()).bins_per_trial, 3);
}

TEST(Sampling, DegenerateDistribution) {
  Distribution d = Distribution::Zero(kNeurons, kClasses);
  for (int n = 0; n < kNeurons; ++n) d(n, n % kClasses) = 1.0;
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto counts = sample_spikes(d, rng);
    for (int n = 0; n < kNeurons; ++n) ASSERT_EQ(counts[std::size_t(n)], n % kClasses);
  }
}

TEST(Sampling, ArgmaxLimit) {
  Distribution d = Distribution::Constant(3, kClasses, 0.1);
  d(0, 4) = 0.2;
  d(1, 0) = 0.2;
  d(2, 8) = 0.2;
  Rng rng(2);
  for (double t : {1e-4, 1e-9}) {
    EXPECT_EQ(sample_spikes(d, rng, t), (std::vector<int>{4, 0, 8}));
  }
}

TEST(Sampling, UniformFrequencies) {
  const Distribution d = Distribution::Constant(1, kClasses, 1.0 / 9.0);
  Rng rng(3);
  std::array<int, kClasses> hist{};
  constexpr int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) ++hist[std::size_t(sample_spikes(d, rng)[0])];
  for (int c = 0; c < kClasses; ++c) EXPECT_NEAR(hist[std::size_t(c)] / double(kDraws), 1.0 / 9.0, 0.01) << c;
}

TEST(Sampling, TemperatureSharpens) {
  Distribution d(1, kClasses);
  d << 0.3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05;
  Rng rng(4);
  int hits = 0;
  constexpr int kDraws = 20000;
  for (int i = 0; i < kDraws; ++i) hits += sample_spikes(d, rng, 0.5)[0] == 0;
  // p^2 renormalized: 0.09 / (0.09 + 6 * 0.01 + 2 * 0.0025) = 0.5806
  EXPECT_NEAR(hits / double(kDraws), 0.09 / 0.155, 0.015);
}

TEST(Sampling, BadInputs) {
  const Distribution d = Distribution::Constant(2, kClasses, 1.0 / 9.0);
  Rng rng(5);
  EXPECT_THROW(sample_spikes(d, rng, 0.0), Error);
  EXPECT_THROW(sample_spikes(d, rng, -1.0), Error);
  EXPECT_THROW(sample_spikes(Distribution::Zero(2, kClasses), rng), Error);
  EXPECT_THROW(sample_spikes(Distribution::Constant(2, 4, 0.25), rng), ShapeError);
}

TEST(ClosedLoop, SingleBin) {
  const auto m = fixtures::tiny_encoder();
  const CountMatrix c = generate_closed_loop(*m, VelocityMatrix::Zero(1, 2), 9);
  EXPECT_EQ(c.rows(), 1);
  EXPECT_EQ(c.cols(), kNeurons);
  EXPECT_GE(c.minCoeff(), 0);
  EXPECT_LE(c.maxCoeff(), 8);
}

TEST(ClosedLoop, DeterministicPerSeed) {
  const auto m = fixtures::tiny_encoder();
  VelocityMatrix v = VelocityMatrix::Zero(30, 2);
  v.col(0).setLinSpaced(0.0, 200.0);
  EXPECT_EQ(generate_closed_loop(*m, v, 11), generate_closed_loop(*m, v, 11));
  EXPECT_NE(generate_closed_loop(*m, v, 11), generate_closed_loop(*m, v, 12));
}

TEST(ClosedLoop, Errors) {
  const auto m = fixtures::tiny_encoder();
  EXPECT_THROW(generate_closed_loop(*m, VelocityMatrix::Zero(0, 2), 1), Error);
  VelocityMatrix v = VelocityMatrix::Zero(3, 2);
  v(1, 1) = std::nan("");
  EXPECT_THROW(generate_closed_loop(*m, v, 1), Error);
  EXPECT_THROW(SpikeGenerator(*m, 1, 0.0), Error);
}

TEST(ClosedLoop, HistoryIsBounded) {
  const auto m = fixtures::tiny_encoder();
  SpikeGenerator gen(*m, 3);
  for (int i = 0; i < 60; ++i) gen.step(VelocityMatrix::Zero(1, 2));
  EXPECT_EQ(gen.bin(), 60u);
  EXPECT_EQ(gen.history().size(), 50u);
}

TEST(ClosedLoop, GeneratorFeedsBackItsSamples) {
  const auto m = fixtures::tiny_encoder();
  SpikeGenerator gen(*m, 3);
  const auto first = gen.step(VelocityMatrix::Constant(1, 2, 5.0));
  const auto tokens = gen.current_tokens(VelocityMatrix::Zero(0, 2));
  for (int n = 0; n < kNeurons; ++n) EXPECT_EQ(tokens(49, n), first[std::size_t(n)]);
  EXPECT_EQ(tokens(49, kNeurons), 5.0);
}

TEST(Training, InitialLossIsUniformBaseline) {
  EXPECT_NEAR(uniform_baseline_loss(), 192.0 * std::log(9.0), 1e-9);
  EXPECT_NEAR(uniform_baseline_loss(), 421.87, 0.01);
  const auto ds = fixtures::small_dataset();
  const auto result = train_encoder(ds, fixtures::tiny_encoder_config());
  EXPECT_NEAR(result.history.initial_validation_loss, uniform_baseline_loss(), 1e-3);
}

TEST(Training, SilentDatasetLossCollapses) {
  auto ds = fixtures::small_dataset();
  for (auto& t : ds.trials) t.counts.setZero();
  auto cfg = fixtures::tiny_encoder_config();
  cfg.epochs = 3;
  cfg.lr = 0.01;
  const auto result = train_encoder(ds, cfg);
  EXPECT_LT(result.history.validation_loss.back(), 0.05 * result.history.initial_validation_loss);
  EXPECT_LT(evaluate_encoder(result.model, ds, data::Split::test), 0.05 * uniform_baseline_loss());
}

TEST(Training, BitReproducible) {
  const auto ds = fixtures::small_dataset();
  const auto cfg = fixtures::tiny_encoder_config();
  const auto a = train_encoder(ds, cfg);
  const auto b = train_encoder(ds, cfg);
  EXPECT_TRUE(a.model == b.model);
  EXPECT_EQ(a.history.validation_loss, b.history.validation_loss);
}

TEST(Training, BestEpochMatchesMinimum) {
  const auto ds = fixtures::small_dataset();
  auto cfg = fixtures::tiny_encoder_config();
  cfg.epochs = 3;
  const auto r = train_encoder(ds, cfg);
  const auto& v = r.history.validation_loss;
  EXPECT_EQ(r.history.best_epoch, int(std::min_element(v.begin(), v.end()) - v.begin()));
}
