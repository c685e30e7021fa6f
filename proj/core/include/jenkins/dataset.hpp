#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jenkins/common.hpp"

namespace jenkins::data {

/// Raw spike events of one neuron, timestamps in ms.
struct SpikeTrain {
  int neuron_id = 0;
  std::vector<double> spike_times_ms;
};

/// Counts spikes into half-open bins [k*w, (k+1)*w). Spikes at or after
/// `duration_ms` are dropped; the result has ceil(duration_ms / w) entries.
std::vector<int> bin_spike_train(const SpikeTrain& train, double bin_width_ms, double duration_ms);

/// Finite-difference velocities of positions sampled once per bin (50 Hz).
/// Output length is one less than the input.
std::vector<Vec2> differentiate_positions(std::span<const Vec2> positions);

struct NeuronTuning {
  double baseline_hz = 0.0;
  double modulation_hz = 0.0;
  double preferred_rad = 0.0;
};

/// Cosine tuning: rate_i(v) = max(0, b_i + m_i * (v . u_i) / v_ref).
struct TuningModel {
  std::vector<NeuronTuning> neurons;
  double speed_scale = 1.0;  // v_ref, mm/s

  /// Draws b ~ U[5, 25] Hz, m ~ U[10, 40] Hz, theta ~ U[0, 2pi) per neuron.
  static TuningModel draw(std::uint64_t seed, double speed_scale, int neuron_count = kNeurons);
  /// Every neuron fires at the same constant rate (m = 0).
  static TuningModel constant(double baseline_hz, int neuron_count = kNeurons);

  double rate_hz(int neuron, const Vec2& velocity) const;
};

/// Timing of the instructed-delay reach inside each trial.
struct ReachConfig {
  std::vector<double> directions_deg{0, 45, 90, 135, 180, 225, 270, 315};
  int duration_bins = 60;
  int onset_bin = 35;
  int onset_jitter_bins = 2;
  int reach_bins = 20;
  int reach_jitter_bins = 2;
  double distance_mm = 80.0;
  double distance_jitter = 0.1;  // relative, uniform in [1 - j, 1 + j]

  /// Peak speed of the nominal minimum-jerk reach.
  double nominal_peak_speed() const;
};

enum class Split { train, validation, test };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct BinnedTrial {
  static constexpr int bin_width_ms = kBinMs;

  int trial_id = 0;
  Split split = Split::train;
  double direction_deg = 0.0;
  CountMatrix counts;          // T x 192
  VelocityMatrix velocities;   // T x 2, mm/s

  int bins() const { return static_cast<int>(counts.rows()); }
};

/// Minimum-jerk velocity trace for one reach, averaged exactly over each bin
/// and padded with zero-velocity hold bins at both ends.
VelocityMatrix reach_velocity(const ReachConfig& reach, double direction_deg, int duration_bins, Rng& rng);

/// One synthetic trial: the reach trace plus Poisson counts drawn from the
/// tuning model. Fully determined by `seed`.
BinnedTrial generate_trial(const TuningModel& tuning, const ReachConfig& reach, double direction_deg,
                           int duration_bins, std::uint64_t seed);

/// Poisson counts for an arbitrary velocity trace.
CountMatrix sample_counts(const TuningModel& tuning, const VelocityMatrix& velocities, Rng& rng);

struct Dataset {
  int neuron_count = kNeurons;
  std::vector<BinnedTrial> trials;

  std::vector<const BinnedTrial*> split(Split which) const;
  std::size_t total_bins() const;
  /// Throws on shape or schema violations.
  void validate() const;

  friend bool operator==(const Dataset& a, const Dataset& b);
};

struct GenerateOptions {
  int trials = 2000;
  std::uint64_t seed = 0;
  ReachConfig reach;
  double train_fraction = 0.8;
  double validation_fraction = 0.1;
};

/// Tuning model used by generate_dataset for a given seed.
TuningModel dataset_tuning(const GenerateOptions& options);

/// Trials cycle through the configured directions; each direction's trials
/// are split train/validation/test by the configured fractions.
Dataset generate_dataset(const GenerateOptions& options);

inline constexpr std::string_view kDatasetHeader = "jenkins-dataset v1 neurons=192 bin_ms=20";

void write_dataset(const Dataset& dataset, std::ostream& out);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(std::istream& in, const std::string& source = "<stream>");
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace jenkins::data
