#include <gtest/gtest.h>

#include "support.hpp"

using namespace jenkins;
using namespace jenkins::decoder;

namespace {

data::BinnedTrial numbered_trial(int bins) {
  data::BinnedTrial t;
  t.counts = CountMatrix::Zero(bins, kNeurons);
  t.velocities = VelocityMatrix::Zero(bins, 2);
  for (int b = 0; b < bins; ++b) {
    t.counts.row(b).setConstant(b + 1);
    t.velocities(b, 0) = b;
    t.velocities(b, 1) = -b;
  }
  return t;
}

}  // namespace

TEST(Windows, TrainModeCounts) {
  EXPECT_EQ(assemble_windows(numbered_trial(60), WindowMode::train).size(), 11u);
  EXPECT_EQ(assemble_windows(numbered_trial(50), WindowMode::train).size(), 1u);
  EXPECT_EQ(assemble_windows(numbered_trial(49), WindowMode::train).size(), 0u);
  EXPECT_EQ(assemble_windows(numbered_trial(49), WindowMode::stream).size(), 49u);
}

TEST(Windows, ContentsAndTargets) {
  const auto windows = assemble_windows(numbered_trial(60), WindowMode::train);
  const auto& first = windows.front();
  EXPECT_EQ(first.bin, 49);
  EXPECT_EQ(first.window.size(), std::size_t(50 * kNeurons));
  EXPECT_EQ(first.window.front(), 1.0f);   // oldest bin first
  EXPECT_EQ(first.window.back(), 50.0f);   // bin 49 holds count 50
  EXPECT_EQ(first.target, Vec2(49, -49));
}

TEST(Windows, StreamModePadsWithZeros) {
  const auto windows = assemble_windows(numbered_trial(5), WindowMode::stream);
  const auto& w0 = windows[0].window;
  for (std::size_t i = 0; i < w0.size() - kNeurons; ++i) ASSERT_EQ(w0[i], 0.0f);
  EXPECT_EQ(w0.back(), 1.0f);
  const auto& w4 = windows[4].window;
  EXPECT_EQ(w4[std::size_t(45 * kNeurons)], 1.0f);
  EXPECT_EQ(w4[std::size_t(44 * kNeurons)], 0.0f);
}

TEST(Windows, StreamAndTrainAgreeOnFullWindows) {
  const auto trial = numbered_trial(60);
  const auto train = assemble_windows(trial, WindowMode::train);
  const auto stream = assemble_windows(trial, WindowMode::stream);
  for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(train[i].window, stream[i + 49].window);
}

TEST(Windows, FillWindowShapeError) {
  std::vector<float> small(10);
  EXPECT_THROW(fill_window(numbered_trial(3).counts, 0, 50, small), ShapeError);
  EXPECT_THROW(assemble_windows(numbered_trial(3), WindowMode::train, 0), Error);
}

TEST(RSquared, Examples) {
  VelocityMatrix y(4, 2);
  y << 1, 2, 2, 4, 3, 6, 4, 8;
  EXPECT_DOUBLE_EQ(r_squared(y, y).mean, 1.0);

  VelocityMatrix mean_pred(4, 2);
  mean_pred.col(0).setConstant(2.5);
  mean_pred.col(1).setConstant(5.0);
  EXPECT_NEAR(r_squared(mean_pred, y).component[0], 0.0, 1e-15);
  EXPECT_NEAR(r_squared(mean_pred, y).mean, 0.0, 1e-15);

  // ss_res = 4 * 1 = 4, ss_tot = 5 -> 0.2 on the first component.
  VelocityMatrix off = y;
  off.col(0).array() += 1.0;
  EXPECT_NEAR(r_squared(off, y).component[0], 0.2, 1e-12);
  EXPECT_NEAR(r_squared(off, y).component[1], 1.0, 1e-12);
  EXPECT_NEAR(r_squared(off, y).mean, 0.6, 1e-12);
}

TEST(RSquared, InvariantToCommonShift) {
  VelocityMatrix y(5, 2), p(5, 2);
  y << 1, 0, 3, 1, 2, 5, 7, 2, 4, 4;
  p << 1.5, 0.1, 2, 1.3, 2.2, 4, 6, 2.5, 5, 3;
  const auto a = r_squared(p, y);
  const auto b = r_squared(VelocityMatrix(p.array() + 100.0), VelocityMatrix(y.array() + 100.0));
  EXPECT_NEAR(a.mean, b.mean, 1e-12);
}

TEST(RSquared, Errors) {
  VelocityMatrix constant = VelocityMatrix::Ones(4, 2);
  try {
    r_squared(constant, constant);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("undefined"), std::string::npos);
  }
  EXPECT_THROW(r_squared(VelocityMatrix::Zero(3, 2), VelocityMatrix::Zero(4, 2)), ShapeError);
  EXPECT_THROW(r_squared(VelocityMatrix::Zero(1, 2), VelocityMatrix::Zero(1, 2)), Error);
}

TEST(DecoderModel, PredictRejectsWrongWindow) {
  const auto m = fixtures::tiny_decoder();
  std::vector<float> window(10);
  EXPECT_THROW(m->predict(window), ShapeError);
}

TEST(DecoderModel, SaveLoadRoundTrip) {
  fixtures::TempDir dir;
  const auto m = fixtures::tiny_decoder();
  m->save(dir / "d.bin");
  const auto loaded = DecoderModel::load(dir / "d.bin");
  EXPECT_TRUE(loaded == *m);
  std::vector<float> window(std::size_t(m->config().input_dim()), 1.0f);
  EXPECT_EQ(loaded.predict(window), m->predict(window));
}

TEST(DecoderModel, LoadRejectsOtherKinds) {
  fixtures::TempDir dir;
  fixtures::tiny_encoder()->save(dir / "e.bin");
  EXPECT_THROW(DecoderModel::load(dir / "e.bin"), Error);
}

TEST(StreamingDecoder, MatchesStreamWindows) {
  const auto m = fixtures::tiny_decoder();
  const auto ds = fixtures::small_dataset(8);
  const auto& trial = ds.trials.front();
  StreamingDecoder stream(*m);
  const auto windows = assemble_windows(trial, WindowMode::stream);
  for (int t = 0; t < trial.bins(); ++t) {
    std::vector<int> counts(trial.counts.row(t).data(), trial.counts.row(t).data() + kNeurons);
    const Vec2 v = stream.push(counts);
    EXPECT_EQ(v, m->predict(windows[std::size_t(t)].window)) << t;
  }
  std::vector<int> bad(3);
  EXPECT_THROW(stream.push(bad), ShapeError);
}

TEST(Config, JsonRoundTripAndValidation) {
  DecoderConfig c;
  c.hidden_sizes = {7, 3};
  c.lr = 0.25;
  const auto back = DecoderConfig::from_json(c.to_json());
  EXPECT_EQ(back.hidden_sizes, c.hidden_sizes);
  EXPECT_EQ(back.lr, 0.25);
  c.hidden_sizes = {};
  EXPECT_THROW(c.validate(), Error);
  c = DecoderConfig{};
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Training, ValidationMinimumIsReturned) {
  const auto ds = fixtures::small_dataset();
  auto cfg = fixtures::tiny_decoder_config();
  cfg.epochs = 4;
  const auto result = train_decoder(ds, cfg);
  const auto& h = result.history;
  ASSERT_EQ(h.validation_loss.size(), 4u);
  const auto best = std::min_element(h.validation_loss.begin(), h.validation_loss.end());
  EXPECT_EQ(h.best_epoch, int(best - h.validation_loss.begin()));
}

TEST(Training, Deterministic) {
  const auto ds = fixtures::small_dataset();
  const auto cfg = fixtures::tiny_decoder_config();
  const auto a = train_decoder(ds, cfg);
  const auto b = train_decoder(ds, cfg);
  EXPECT_TRUE(a.model == b.model);
  EXPECT_EQ(a.history.train_loss, b.history.train_loss);
}

TEST(Training, ZeroVelocityDatasetPredictsNearZero) {
  auto ds = fixtures::small_dataset();
  for (auto& t : ds.trials) t.velocities.setZero();
  auto cfg = fixtures::tiny_decoder_config();
  cfg.epochs = 5;
  const auto result = train_decoder(ds, cfg);
  for (const auto* trial : ds.split(data::Split::test)) {
    for (const auto& w : assemble_windows(*trial, WindowMode::train)) {
      EXPECT_LT(result.model.predict(w.window).norm(), 1.0);
    }
  }
}

TEST(Training, EmptySplitsAreRejected) {
  auto ds = fixtures::small_dataset();
  for (auto& t : ds.trials) t.split = data::Split::train;
  EXPECT_THROW(train_decoder(ds, fixtures::tiny_decoder_config()), Error);
}

TEST(Evaluation, ScoresTestSplit) {
  const auto ds = fixtures::small_dataset();
  const auto result = train_decoder(ds, fixtures::tiny_decoder_config());
  const auto eval = evaluate_decoder(result.model, ds, data::Split::test);
  EXPECT_EQ(eval.samples, ds.split(data::Split::test).size() * 11);
  EXPECT_TRUE(std::isfinite(eval.r2.mean));
  EXPECT_GE(eval.mse, 0.0);
}
