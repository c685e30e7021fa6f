#include "jenkins/loop.hpp"

#include <cmath>

namespace jenkins::loop {

ArmSettings ArmSettings::from_chain(const kinematics::KinematicChain& chain) {
  ArmSettings s;
  s.anchor = chain.anchor;
  s.decay = chain.decay;
  s.working_height = chain.working_height;
  return s;
}

void ArmSettings::validate() const {
  if (!(decay > 0.0 && decay <= 1.0)) throw Error("lambda must be in (0, 1]");
  if (dt != kBinSeconds) throw Error("dt must equal the 20 ms bin width");
  if (!anchor.allFinite() || !std::isfinite(working_height)) throw Error("non-finite anchor or working height");
}

void LoopConfig::validate() const {
  if (!decoder || !encoder || !chain) throw Error("loop config needs a decoder, an encoder and a chain");
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  arm.validate();
}

ArmTracker::ArmTracker(std::shared_ptr<const kinematics::KinematicChain> chain, const ArmSettings& settings)
    : chain_(std::move(chain)), working_height_(settings.working_height) {
  if (!chain_) throw Error("ArmTracker: missing chain");
  settings.validate();
  state_.anchor = settings.anchor;
  state_.position = settings.anchor;
  state_.decay = settings.decay;
  state_.dt = settings.dt;
  const Vec3 home(settings.anchor.x(), settings.anchor.y(), working_height_);
  state_.angles = kinematics::inverse_kinematics(*chain_, home, chain_->ready_pose()).angles;
}

ArmFrame ArmTracker::step(const Vec2& velocity) {
  const Vec2 previous = state_.position;
  kinematics::integrate_velocity(state_, velocity);
  const Vec3 target(state_.position.x(), state_.position.y(), working_height_);
  const Vec3 clamped =
      kinematics::clamp_to_workspace(*chain_, target, Vec3(previous.x(), previous.y(), working_height_));
  state_.position = clamped.head<2>();
  const auto ik = kinematics::inverse_kinematics(*chain_, clamped, state_.angles);
  state_.angles = ik.angles;
  ArmFrame frame;
  frame.position = state_.position;
  frame.follower = kinematics::forward_kinematics(*chain_, ik.angles).head<2>();
  frame.angles = ik.angles;
  return frame;
}

SessionState::SessionState(const LoopConfig& config)
    : config_((config.validate(), config)),
      generator_(*config_.encoder, config_.seed, config_.temperature),
      decoder_(*config_.decoder),
      arm_(config_.chain, config_.arm) {}

BinOutput SessionState::step(const VelocityMatrix& lookahead) {
  BinOutput out;
  out.bin = bin_;
  try {
    if (lookahead.rows() < 1) throw Error("empty look-ahead");
    out.counts = generator_.step(lookahead);
    out.decoded = decoder_.push(out.counts);
    if (!out.decoded.allFinite()) throw Error("decoder produced a non-finite velocity");
    out.arm = arm_.step(out.decoded);
  } catch (const BinError&) {
    throw;
  } catch (const Error& e) {
    throw BinError(bin_, e.what());
  }
  ++bin_;
  return out;
}

BinOutput SessionState::step_live(const Vec2& velocity) {
  if (!velocity.allFinite()) throw BinError(bin_, "non-finite velocity");
  VelocityMatrix hold(config_.encoder->config().lookahead_bins, 2);
  hold.rowwise() = velocity.transpose();
  return step(hold);
}

OpenLoopResult run_open_loop_decode(const decoder::DecoderModel& decoder,
                                    std::shared_ptr<const kinematics::KinematicChain> chain,
                                    const CountMatrix& spike_bins, const std::optional<ArmSettings>& arm) {
  if (!chain) throw Error("run_open_loop_decode: missing chain");
  if (spike_bins.rows() > 0 && spike_bins.cols() != kNeurons) {
    throw ShapeError("run_open_loop_decode: expected 192 columns, got " + std::to_string(spike_bins.cols()));
  }
  const ArmSettings settings = arm.value_or(ArmSettings::from_chain(*chain));
  decoder::StreamingDecoder stream(decoder);
  ArmTracker tracker(chain, settings);
  const Eigen::Index total = spike_bins.rows();
  OpenLoopResult out;
  out.decoded.resize(total, 2);
  out.positions.resize(total, 2);
  out.follower.resize(total, 2);
  out.angles.reserve(std::size_t(total));
  for (Eigen::Index t = 0; t < total; ++t) {
    try {
      const Vec2 v = stream.push(std::span<const int>(spike_bins.row(t).data(), kNeurons));
      const ArmFrame frame = tracker.step(v);
      out.decoded.row(t) = v.transpose();
      out.positions.row(t) = frame.position.transpose();
      out.follower.row(t) = frame.follower.transpose();
      out.angles.push_back(frame.angles);
    } catch (const Error& e) {
      throw BinError(std::uint64_t(t), e.what());
    }
  }
  return out;
}

FullLoopResult run_full_loop(const LoopConfig& config, const VelocityMatrix& leader_velocities) {
  if (!leader_velocities.allFinite()) throw Error("run_full_loop: non-finite leader velocities");
  SessionState session(config);
  const Eigen::Index total = leader_velocities.rows();
  const Eigen::Index f = config.encoder->config().lookahead_bins;
  FullLoopResult out;
  out.spikes.resize(total, kNeurons);
  out.decoded.resize(total, 2);
  out.positions.resize(total, 2);
  out.follower.resize(total, 2);
  out.angles.reserve(std::size_t(total));
  for (Eigen::Index t = 0; t < total; ++t) {
    const BinOutput bin = session.step(leader_velocities.middleRows(t, std::min(f, total - t)));
    for (int n = 0; n < kNeurons; ++n) out.spikes(t, n) = bin.counts[std::size_t(n)];
    out.decoded.row(t) = bin.decoded.transpose();
    out.positions.row(t) = bin.arm.position.transpose();
    out.follower.row(t) = bin.arm.follower.transpose();
    out.angles.push_back(bin.arm.angles);
  }
  return out;
}

PositionMatrix integrate_trace(const VelocityMatrix& velocities, const ArmSettings& arm) {
  kinematics::ArmState state;
  state.anchor = arm.anchor;
  state.position = arm.anchor;
  state.decay = arm.decay;
  state.dt = arm.dt;
  PositionMatrix out(velocities.rows(), 2);
  for (Eigen::Index t = 0; t < velocities.rows(); ++t) {
    out.row(t) = kinematics::integrate_velocity(state, velocities.row(t).transpose()).transpose();
  }
  return out;
}

Correlation pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("pearson: length mismatch");
  if (a.empty()) return {0.0, true};
  const double n = double(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return {0.0, true};
  return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), false};
}

std::vector<double> population_rate(const CountMatrix& spikes) {
  std::vector<double> rates(std::size_t(spikes.rows()));
  for (Eigen::Index t = 0; t < spikes.rows(); ++t) {
    rates[std::size_t(t)] = spikes.cols() > 0 ? double(spikes.row(t).sum()) / double(spikes.cols()) : 0.0;
  }
  return rates;
}

double fraction_in_band(std::span<const double> rates, double reference) {
  if (rates.empty()) return 0.0;
  std::size_t inside = 0;
  for (double r : rates) {
    if (r >= reference / 3.0 && r <= 3.0 * reference) ++inside;
  }
  return double(inside) / double(rates.size());
}

LoopMetrics evaluate_loop(const VelocityMatrix& leader, const FullLoopResult& outputs, const ArmSettings& arm,
                          double training_mean_count) {
  return evaluate_loops(std::span(&leader, 1), std::span(&outputs, 1), arm, training_mean_count);
}

LoopMetrics evaluate_loops(std::span<const VelocityMatrix> leaders, std::span<const FullLoopResult> outputs,
                           const ArmSettings& arm, double training_mean_count) {
  if (leaders.size() != outputs.size()) throw Error("evaluate_loop: trace count mismatch");
  std::array<std::vector<double>, 2> lead;
  std::array<std::vector<double>, 2> dec;
  double sq = 0.0;
  std::size_t bins = 0;
  LoopMetrics m;
  for (std::size_t k = 0; k < leaders.size(); ++k) {
    const auto& l = leaders[k];
    const auto& o = outputs[k];
    if (o.decoded.rows() != l.rows() || o.follower.rows() != l.rows() || o.spikes.rows() != l.rows()) {
      throw Error("evaluate_loop: length mismatch between leader (" + std::to_string(l.rows()) +
                  " bins) and outputs (" + std::to_string(o.decoded.rows()) + " bins)");
    }
    const PositionMatrix reference = integrate_trace(l, arm);
    for (Eigen::Index t = 0; t < l.rows(); ++t) {
      for (int c = 0; c < 2; ++c) {
        lead[std::size_t(c)].push_back(l(t, c));
        dec[std::size_t(c)].push_back(o.decoded(t, c));
      }
      sq += (reference.row(t) - o.follower.row(t)).squaredNorm();
    }
    bins += std::size_t(l.rows());
    const auto rates = population_rate(o.spikes);
    m.rate_trace.insert(m.rate_trace.end(), rates.begin(), rates.end());
  }
  for (int c = 0; c < 2; ++c) m.correlation[std::size_t(c)] = pearson(lead[std::size_t(c)], dec[std::size_t(c)]);
  m.rmse_mm = bins > 0 ? std::sqrt(sq / double(bins)) : 0.0;
  m.in_band_fraction = fraction_in_band(m.rate_trace, training_mean_count);
  m.stable = m.in_band_fraction >= kStableFraction;
  return m;
}

}  // namespace jenkins::loop
