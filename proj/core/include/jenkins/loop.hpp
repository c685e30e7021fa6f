#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "jenkins/decoder.hpp"
#include "jenkins/encoder.hpp"
#include "jenkins/kinematics.hpp"

namespace jenkins::loop {

struct ArmSettings {
  Vec2 anchor{230.0, 0.0};
  double decay = 0.95;
  double dt = kBinSeconds;
  double working_height = 0.0;

  static ArmSettings from_chain(const kinematics::KinematicChain& chain);
  void validate() const;
};

struct LoopConfig {
  std::shared_ptr<const decoder::DecoderModel> decoder;
  std::shared_ptr<const encoder::EncoderModel> encoder;
  std::shared_ptr<const kinematics::KinematicChain> chain;
  ArmSettings arm;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Thrown when a bin of a run fails; the message is prefixed with the bin index.
class BinError : public Error {
 public:
  BinError(std::uint64_t bin, const std::string& what)
      : Error("bin " + std::to_string(bin) + ": " + what), bin_(bin) {}
  std::uint64_t bin() const { return bin_; }

 private:
  std::uint64_t bin_;
};

struct ArmFrame {
  Vec2 position = Vec2::Zero();  // clamped commanded position
  Vec2 follower = Vec2::Zero();  // FK of the solved angles
  kinematics::JointAngles angles{};
};

/// Velocity -> filtered position -> workspace clamp -> warm-started IK.
class ArmTracker {
 public:
  ArmTracker(std::shared_ptr<const kinematics::KinematicChain> chain, const ArmSettings& settings);

  ArmFrame step(const Vec2& velocity);
  const kinematics::ArmState& state() const { return state_; }

 private:
  std::shared_ptr<const kinematics::KinematicChain> chain_;
  double working_height_;
  kinematics::ArmState state_;
};

struct BinOutput {
  std::uint64_t bin = 0;
  std::vector<int> counts;
  Vec2 decoded = Vec2::Zero();
  ArmFrame arm;
};

/// One live leader->spikes->decoder->arm session, advanced one bin at a time.
class SessionState {
 public:
  explicit SessionState(const LoopConfig& config);

  /// `lookahead` row 0 is the leader velocity for this bin, later rows the known future.
  BinOutput step(const VelocityMatrix& lookahead);
  /// Live input: the latest velocity is held across the whole look-ahead.
  BinOutput step_live(const Vec2& velocity);

  std::uint64_t bin() const { return bin_; }
  const ArmTracker& arm() const { return arm_; }

 private:
  LoopConfig config_;
  encoder::SpikeGenerator generator_;
  decoder::StreamingDecoder decoder_;
  ArmTracker arm_;
  std::uint64_t bin_ = 0;
};

struct OpenLoopResult {
  VelocityMatrix decoded;
  PositionMatrix positions;  // clamped commanded positions
  PositionMatrix follower;   // FK xy of the solved angles
  std::vector<kinematics::JointAngles> angles;
};

OpenLoopResult run_open_loop_decode(const decoder::DecoderModel& decoder,
                                    std::shared_ptr<const kinematics::KinematicChain> chain,
                                    const CountMatrix& spike_bins, const std::optional<ArmSettings>& arm = {});

struct FullLoopResult {
  CountMatrix spikes;
  VelocityMatrix decoded;
  PositionMatrix positions;
  PositionMatrix follower;
  std::vector<kinematics::JointAngles> angles;
};

FullLoopResult run_full_loop(const LoopConfig& config, const VelocityMatrix& leader_velocities);

/// Pure integration of a velocity trace through the decay filter (no clamp).
PositionMatrix integrate_trace(const VelocityMatrix& velocities, const ArmSettings& arm);

struct Correlation {
  double value = 0.0;
  bool degenerate = false;
};

/// Pearson correlation; a constant series gives 0 with the degenerate flag set.
Correlation pearson(std::span<const double> a, std::span<const double> b);

struct LoopMetrics {
  std::array<Correlation, 2> correlation{};
  double rmse_mm = 0.0;
  std::vector<double> rate_trace;  // population mean count per bin
  double in_band_fraction = 0.0;
  bool stable = false;
};

/// Rate inside [mean/3, 3*mean] on at least this fraction of bins counts as stable.
inline constexpr double kStableFraction = 0.95;

std::vector<double> population_rate(const CountMatrix& spikes);
/// Fraction of bins whose rate lies in [reference/3, 3*reference].
double fraction_in_band(std::span<const double> rates, double reference);

LoopMetrics evaluate_loop(const VelocityMatrix& leader, const FullLoopResult& outputs, const ArmSettings& arm,
                          double training_mean_count);

/// Correlation and RMSE pooled over several traces (bins concatenated).
LoopMetrics evaluate_loops(std::span<const VelocityMatrix> leaders, std::span<const FullLoopResult> outputs,
                           const ArmSettings& arm, double training_mean_count);

}  // namespace jenkins::loop
