#include <benchmark/benchmark.h>

#include "jenkins/kinematics.hpp"

using namespace jenkins;
using namespace jenkins::kinematics;

namespace {

void BM_ForwardKinematics(benchmark::State& state) {
  const auto chain = KinematicChain::koch_follower();
  const JointAngles q{0.2, 0.5, -1.0, 0.5, 0.1, 0.0};
  for (auto _ : state) benchmark::DoNotOptimize(forward_kinematics(chain, q));
}
BENCHMARK(BM_ForwardKinematics);

// One bin of tracking: a 2 mm move from the previous solution.
void BM_InverseKinematicsWarm(benchmark::State& state) {
  const auto chain = KinematicChain::koch_follower();
  JointAngles q = inverse_kinematics(chain, {230, 0, 0}, chain.ready_pose()).angles;
  double angle = 0.0;
  for (auto _ : state) {
    angle += 0.01;
    const Vec3 target(230 + 40 * std::cos(angle), 40 * std::sin(angle), 0);
    q = inverse_kinematics(chain, target, q).angles;
    benchmark::DoNotOptimize(q);
  }
}
BENCHMARK(BM_InverseKinematicsWarm)->Unit(benchmark::kMicrosecond);

void BM_InverseKinematicsCold(benchmark::State& state) {
  const auto chain = KinematicChain::koch_follower();
  Rng rng(1);
  std::uniform_real_distribution<double> r(170, 330), b(-2.5, 2.5);
  for (auto _ : state) {
    const double rad = r(rng), bearing = b(rng);
    benchmark::DoNotOptimize(
        inverse_kinematics(chain, {rad * std::cos(bearing), rad * std::sin(bearing), 0}, chain.ready_pose()));
  }
}
BENCHMARK(BM_InverseKinematicsCold)->Unit(benchmark::kMicrosecond);

}  // namespace
