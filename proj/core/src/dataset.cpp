#include "jenkins/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace jenkins::data {

std::vector<int> bin_spike_train(const SpikeTrain& train, double bin_width_ms, double duration_ms) {
  if (!(bin_width_ms > 0.0)) throw Error("bin_spike_train: bin width must be positive");
  if (!(duration_ms > 0.0)) throw Error("bin_spike_train: duration must be positive");
  const auto bins = static_cast<std::size_t>(std::ceil(duration_ms / bin_width_ms));
  std::vector<int> counts(bins, 0);
  for (double t : train.spike_times_ms) {
    if (t < 0.0) throw Error("bin_spike_train: negative spike timestamp");
    if (t >= duration_ms) continue;
    const auto k = static_cast<std::size_t>(std::floor(t / bin_width_ms));
    ++counts[std::min(k, bins - 1)];
  }
  return counts;
}

std::vector<Vec2> differentiate_positions(std::span<const Vec2> positions) {
  if (positions.size() < 2) throw Error("differentiate_positions: insufficient samples");
  std::vector<Vec2> velocities;
  velocities.reserve(positions.size() - 1);
  for (std::size_t k = 0; k + 1 < positions.size(); ++k) {
    velocities.emplace_back((positions[k + 1] - positions[k]) / kBinSeconds);
  }
  return velocities;
}

TuningModel TuningModel::draw(std::uint64_t seed, double speed_scale, int neuron_count) {
  if (!(speed_scale > 0.0)) throw Error("TuningModel: speed scale must be positive");
  Rng rng(seed);
  std::uniform_real_distribution<double> baseline(5.0, 25.0);
  std::uniform_real_distribution<double> modulation(10.0, 40.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  TuningModel model;
  model.speed_scale = speed_scale;
  model.neurons.resize(static_cast<std::size_t>(neuron_count));
  for (auto& n : model.neurons) {
    n.baseline_hz = baseline(rng);
    n.modulation_hz = modulation(rng);
    n.preferred_rad = angle(rng);
  }
  return model;
}

TuningModel TuningModel::constant(double baseline_hz, int neuron_count) {
  TuningModel model;
  model.neurons.assign(static_cast<std::size_t>(neuron_count), NeuronTuning{baseline_hz, 0.0, 0.0});
  return model;
}

double TuningModel::rate_hz(int neuron, const Vec2& velocity) const {
  const auto& n = neurons[static_cast<std::size_t>(neuron)];
  const double projection = velocity.x() * std::cos(n.preferred_rad) + velocity.y() * std::sin(n.preferred_rad);
  return std::max(0.0, n.baseline_hz + n.modulation_hz * projection / speed_scale);
}

double ReachConfig::nominal_peak_speed() const {
  return 1.875 * distance_mm / (reach_bins * kBinSeconds);
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::validation;
  if (name == "test") return Split::test;
  throw Error("unknown split '" + std::string(name) + "'");
}

namespace {

// Normalized minimum-jerk displacement, s(0) = 0, s(1) = 1.
double minimum_jerk(double tau) {
  tau = std::clamp(tau, 0.0, 1.0);
  const double t3 = tau * tau * tau;
  return t3 * (10.0 - 15.0 * tau + 6.0 * tau * tau);
}

bool is_configured_direction(const ReachConfig& reach, double direction_deg) {
  return std::any_of(reach.directions_deg.begin(), reach.directions_deg.end(),
                     [&](double d) { return std::abs(d - direction_deg) < 1e-9; });
}

}  // namespace

VelocityMatrix reach_velocity(const ReachConfig& reach, double direction_deg, int duration_bins, Rng& rng) {
  if (duration_bins < 3) throw Error("reach_velocity: need at least 3 bins");

  std::uniform_int_distribution<int> onset_jitter(-reach.onset_jitter_bins, reach.onset_jitter_bins);
  std::uniform_int_distribution<int> reach_jitter(-reach.reach_jitter_bins, reach.reach_jitter_bins);
  std::uniform_real_distribution<double> distance_scale(1.0 - reach.distance_jitter, 1.0 + reach.distance_jitter);
  int onset = reach.onset_bin + onset_jitter(rng);
  int length = reach.reach_bins + reach_jitter(rng);
  const double distance = reach.distance_mm * distance_scale(rng);

  // Keep at least one hold bin on each side; re-centre when the layout does not fit.
  length = std::clamp(length, 1, duration_bins - 2);
  if (onset < 1 || onset + length > duration_bins - 1) onset = (duration_bins - length) / 2;

  const double angle = direction_deg * std::numbers::pi / 180.0;
  const Vec2 unit(std::cos(angle), std::sin(angle));
  VelocityMatrix v = VelocityMatrix::Zero(duration_bins, 2);
  for (int k = 0; k < length; ++k) {
    const double ds = minimum_jerk(double(k + 1) / length) - minimum_jerk(double(k) / length);
    v.row(onset + k) = (unit * (distance * ds / kBinSeconds)).transpose();
  }
  return v;
}

CountMatrix sample_counts(const TuningModel& tuning, const VelocityMatrix& velocities, Rng& rng) {
  const int neurons = static_cast<int>(tuning.neurons.size());
  CountMatrix counts(velocities.rows(), neurons);
  for (Eigen::Index t = 0; t < velocities.rows(); ++t) {
    const Vec2 v = velocities.row(t).transpose();
    for (int i = 0; i < neurons; ++i) {
      const double mean = tuning.rate_hz(i, v) * kBinSeconds;
      if (mean <= 0.0) {
        counts(t, i) = 0;
        continue;
      }
      std::poisson_distribution<int> poisson(mean);
      counts(t, i) = poisson(rng);
    }
  }
  return counts;
}

BinnedTrial generate_trial(const TuningModel& tuning, const ReachConfig& reach, double direction_deg,
                           int duration_bins, std::uint64_t seed) {
  if (!is_configured_direction(reach, direction_deg)) {
    throw Error("generate_trial: unknown direction " + std::to_string(direction_deg));
  }
  if (duration_bins < 40) throw Error("generate_trial: trials need at least 40 bins");
  Rng rng(seed);
  BinnedTrial trial;
  trial.direction_deg = direction_deg;
  trial.velocities = reach_velocity(reach, direction_deg, duration_bins, rng);
  trial.counts = sample_counts(tuning, trial.velocities, rng);
  return trial;
}

std::vector<const BinnedTrial*> Dataset::split(Split which) const {
  std::vector<const BinnedTrial*> out;
  for (const auto& t : trials) {
    if (t.split == which) out.push_back(&t);
  }
  return out;
}

std::size_t Dataset::total_bins() const {
  std::size_t n = 0;
  for (const auto& t : trials) n += static_cast<std::size_t>(t.bins());
  return n;
}

void Dataset::validate() const {
  for (const auto& t : trials) {
    if (t.counts.cols() != neuron_count) {
      throw ShapeError("trial " + std::to_string(t.trial_id) + ": expected " + std::to_string(neuron_count) +
                       " neurons, got " + std::to_string(t.counts.cols()));
    }
    if (t.counts.rows() != t.velocities.rows()) {
      throw ShapeError("trial " + std::to_string(t.trial_id) + ": counts and velocities disagree on bin count");
    }
    if (t.counts.size() > 0 && t.counts.minCoeff() < 0) {
      throw Error("trial " + std::to_string(t.trial_id) + ": negative spike count");
    }
  }
}

bool operator==(const Dataset& a, const Dataset& b) {
  if (a.neuron_count != b.neuron_count || a.trials.size() != b.trials.size()) return false;
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    const auto& x = a.trials[i];
    const auto& y = b.trials[i];
    if (x.trial_id != y.trial_id || x.split != y.split || x.direction_deg != y.direction_deg) return false;
    if (x.counts.rows() != y.counts.rows() || x.counts.cols() != y.counts.cols()) return false;
    if (x.counts != y.counts || x.velocities != y.velocities) return false;
  }
  return true;
}

TuningModel dataset_tuning(const GenerateOptions& options) {
  return TuningModel::draw(mix_seed(options.seed, 0x7475'6e65ULL), options.reach.nominal_peak_speed());
}

Dataset generate_dataset(const GenerateOptions& options) {
  if (options.trials < 0) throw Error("generate_dataset: negative trial count");
  if (options.reach.directions_deg.empty()) throw Error("generate_dataset: no directions configured");
  const TuningModel tuning = dataset_tuning(options);
  const auto directions = static_cast<int>(options.reach.directions_deg.size());

  Dataset dataset;
  dataset.trials.reserve(static_cast<std::size_t>(options.trials));
  for (int i = 0; i < options.trials; ++i) {
    const int direction_index = i % directions;
    BinnedTrial trial = generate_trial(tuning, options.reach, options.reach.directions_deg[direction_index],
                                       options.reach.duration_bins, mix_seed(options.seed, std::uint64_t(i)));
    trial.trial_id = i;

    // Stratified split: the k-th of n trials in this direction.
    const int n = options.trials / directions + (direction_index < options.trials % directions ? 1 : 0);
    const int k = i / directions;
    const double position = (k + 0.5) / n;
    if (position < options.train_fraction) {
      trial.split = Split::train;
    } else if (position < options.train_fraction + options.validation_fraction) {
      trial.split = Split::validation;
    } else {
      trial.split = Split::test;
    }
    dataset.trials.push_back(std::move(trial));
  }
  return dataset;
}

namespace {

void append_number(std::string& out, double value) {
  char buffer[64];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  out.append(buffer, ptr);
}

void append_number(std::string& out, long long value) {
  char buffer[32];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  out.append(buffer, ptr);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r')) text.remove_suffix(1);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

void write_dataset(const Dataset& dataset, std::ostream& out) {
  dataset.validate();
  out << kDatasetHeader << '\n';
  std::string line;
  for (const auto& trial : dataset.trials) {
    for (int t = 0; t < trial.bins(); ++t) {
      line.clear();
      append_number(line, static_cast<long long>(trial.trial_id));
      line += ',';
      line += split_name(trial.split);
      line += ',';
      append_number(line, trial.direction_deg);
      line += ',';
      append_number(line, static_cast<long long>(t));
      for (int n = 0; n < trial.counts.cols(); ++n) {
        line += ',';
        append_number(line, static_cast<long long>(trial.counts(t, n)));
      }
      line += ',';
      append_number(line, trial.velocities(t, 0));
      line += ',';
      append_number(line, trial.velocities(t, 1));
      line += '\n';
      out << line;
    }
  }
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_dataset(dataset, out);
  if (!out) throw Error("failed writing " + path.string());
}

Dataset read_dataset(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(source, 1, "missing header");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kDatasetHeader) throw ParseError(source, line_no, "malformed header, expected '" + std::string(kDatasetHeader) + "'");

  Dataset dataset;
  const std::size_t expected_fields = 4 + kNeurons + 2;
  std::vector<std::vector<int>> counts;
  std::vector<Vec2> velocities;
  BinnedTrial* current = nullptr;
  std::vector<int> seen_ids;

  auto flush = [&]() {
    if (current == nullptr) return;
    const auto bins = static_cast<Eigen::Index>(counts.size());
    current->counts.resize(bins, kNeurons);
    current->velocities.resize(bins, 2);
    for (Eigen::Index t = 0; t < bins; ++t) {
      for (int n = 0; n < kNeurons; ++n) current->counts(t, n) = counts[std::size_t(t)][std::size_t(n)];
      current->velocities.row(t) = velocities[std::size_t(t)].transpose();
    }
    counts.clear();
    velocities.clear();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;

    const auto fields = split_fields(line);
    if (fields.size() != expected_fields) {
      throw ParseError(source, line_no,
                       "expected " + std::to_string(expected_fields) + " columns, got " + std::to_string(fields.size()));
    }
    int trial_id = 0;
    int bin_index = 0;
    double direction = 0.0;
    if (!parse_number(fields[0], trial_id)) throw ParseError(source, line_no, "bad trial_id");
    Split split;
    try {
      split = parse_split(fields[1]);
    } catch (const Error& e) {
      throw ParseError(source, line_no, e.what());
    }
    if (!parse_number(fields[2], direction)) throw ParseError(source, line_no, "bad direction_deg");
    if (!parse_number(fields[3], bin_index)) throw ParseError(source, line_no, "bad bin_index");

    if (current == nullptr || current->trial_id != trial_id) {
      if (std::find(seen_ids.begin(), seen_ids.end(), trial_id) != seen_ids.end()) {
        throw ParseError(source, line_no, "bins of trial " + std::to_string(trial_id) + " are not contiguous");
      }
      flush();
      seen_ids.push_back(trial_id);
      dataset.trials.emplace_back();
      current = &dataset.trials.back();
      current->trial_id = trial_id;
      current->split = split;
      current->direction_deg = direction;
    } else if (current->split != split || current->direction_deg != direction) {
      throw ParseError(source, line_no, "split or direction changes within trial " + std::to_string(trial_id));
    }
    if (bin_index != static_cast<int>(counts.size())) {
      throw ParseError(source, line_no, "expected bin_index " + std::to_string(counts.size()));
    }

    std::vector<int> row(kNeurons);
    for (int n = 0; n < kNeurons; ++n) {
      if (!parse_number(fields[4 + std::size_t(n)], row[std::size_t(n)])) {
        throw ParseError(source, line_no, "bad count in column c" + std::to_string(n));
      }
      if (row[std::size_t(n)] < 0) throw ParseError(source, line_no, "negative count in column c" + std::to_string(n));
    }
    Vec2 v;
    if (!parse_number(fields[4 + kNeurons], v.x()) || !parse_number(fields[5 + kNeurons], v.y())) {
      throw ParseError(source, line_no, "bad velocity");
    }
    counts.push_back(std::move(row));
    velocities.push_back(v);
  }
  flush();
  return dataset;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_dataset(in, path.string());
}

}  // namespace jenkins::data
