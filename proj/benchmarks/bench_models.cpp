#include <benchmark/benchmark.h>

#include "jenkins/loop.hpp"
#include "jenkins/nn/loss.hpp"

using namespace jenkins;

namespace {

decoder::DecoderModel default_decoder() {
  decoder::DecoderModel m{decoder::DecoderConfig{}};
  Rng rng(1);
  m.init(rng);
  m.feature_mean.setZero(m.config().input_dim());
  m.feature_scale.setOnes(m.config().input_dim());
  return m;
}

encoder::EncoderModel default_encoder() {
  encoder::EncoderModel m{encoder::EncoderConfig{}};
  Rng rng(2);
  m.init(rng);
  std::normal_distribution<float> n(0.0f, 0.05f);
  for (Eigen::Index i = 0; i < m.network.head.weight.value.size(); ++i) m.network.head.weight.value.data()[i] = n(rng);
  m.training_mean_count = 0.4;
  return m;
}

void BM_DecoderPredict(benchmark::State& state) {
  const auto m = default_decoder();
  std::vector<float> window(std::size_t(m.config().input_dim()), 0.4f);
  for (auto _ : state) benchmark::DoNotOptimize(m.predict(window));
}
BENCHMARK(BM_DecoderPredict);

void BM_DecoderStreamPush(benchmark::State& state) {
  const auto m = default_decoder();
  decoder::StreamingDecoder stream(m);
  std::vector<int> counts(kNeurons, 1);
  for (auto _ : state) benchmark::DoNotOptimize(stream.push(counts));
}
BENCHMARK(BM_DecoderStreamPush);

void BM_EncoderStep(benchmark::State& state) {
  const auto m = default_encoder();
  encoder::SpikeGenerator gen(m, 3);
  VelocityMatrix lookahead = VelocityMatrix::Constant(40, 2, 50.0);
  for (auto _ : state) benchmark::DoNotOptimize(gen.step(lookahead));
}
BENCHMARK(BM_EncoderStep)->Unit(benchmark::kMicrosecond);

void BM_EncoderTrainBatch(benchmark::State& state) {
  auto m = default_encoder();
  const auto batch = state.range(0);
  nn::Matrix<float> tokens = nn::Matrix<float>::Random(batch * 90, encoder::kTokenFeatures).cwiseAbs();
  std::vector<int> targets(std::size_t(batch * kNeurons), 1);
  Rng rng(4);
  for (auto _ : state) {
    encoder::EncoderNetwork<float>::Cache cache;
    const auto logits = m.network.forward(tokens, &cache, &rng);
    const auto loss = nn::softmax_cross_entropy<float>(logits, targets);
    m.network.backward(cache, loss.grad);
    benchmark::DoNotOptimize(loss.loss);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_EncoderTrainBatch)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_SessionStep(benchmark::State& state) {
  loop::LoopConfig cfg;
  cfg.decoder = std::make_shared<const decoder::DecoderModel>(default_decoder());
  cfg.encoder = std::make_shared<const encoder::EncoderModel>(default_encoder());
  cfg.chain = std::make_shared<const kinematics::KinematicChain>(kinematics::KinematicChain::koch_follower());
  cfg.arm = loop::ArmSettings::from_chain(*cfg.chain);
  loop::SessionState session(cfg);
  double phase = 0.0;
  for (auto _ : state) {
    phase += 0.1;
    benchmark::DoNotOptimize(session.step_live(Vec2(100 * std::sin(phase), 100 * std::cos(phase))));
  }
}
BENCHMARK(BM_SessionStep)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
