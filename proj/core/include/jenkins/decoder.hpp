#pragma once

#include <array>
#include <deque>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "jenkins/dataset.hpp"
#include "jenkins/nn/layers.hpp"
#include "jenkins/nn/weights.hpp"

namespace jenkins::decoder {

using Scalar = float;
using Matrix = nn::Matrix<Scalar>;

inline constexpr const char* kModelKind = "decoder-mlp-v1";

struct DecoderConfig {
  int window_bins = 50;
  std::vector<int> hidden_sizes{256, 128};
  int epochs = 30;
  int batch_size = 256;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  /// Besides the full-history windows, train on zero-padded cold-start
  /// windows at every `cold_start_stride`-th bin t < window_bins - 1.
  /// 0 disables them.
  int cold_start_stride = 3;

  int input_dim() const { return window_bins * kNeurons; }
  void validate() const;
  nlohmann::json to_json() const;
  static DecoderConfig from_json(const nlohmann::json& j);
};

enum class WindowMode { train, stream };

struct WindowedSample {
  std::vector<float> window;  // window_bins x 192, oldest bin first
  Vec2 target;
  int bin = 0;
};

/// Writes the window ending at bin t (bins t-window+1 .. t) into `out`;
/// bins before the start of the trial are zeros.
void fill_window(const CountMatrix& counts, int t, int window_bins, std::span<float> out);

/// train: one sample per t in [window-1, T); stream: one per t in [0, T).
std::vector<WindowedSample> assemble_windows(const data::BinnedTrial& trial, WindowMode mode, int window_bins = 50);

struct RSquared {
  std::array<double, 2> component{};
  double mean = 0.0;
};

RSquared r_squared(const VelocityMatrix& predictions, const VelocityMatrix& targets);

class DecoderModel {
 public:
  DecoderModel() = default;
  explicit DecoderModel(const DecoderConfig& config);

  const DecoderConfig& config() const { return config_; }

  void init(Rng& rng);
  nn::ParameterList<Scalar> parameters();

  /// Window of raw counts (length window_bins * 192) -> (vx, vy) mm/s.
  Vec2 predict(std::span<const float> window) const;
  /// Raw-count windows stacked row-wise -> one velocity per row.
  VelocityMatrix predict_batch(const Matrix& windows) const;

  /// Normalized windows -> normalized outputs (the trained function).
  Matrix forward(const Matrix& normalized, std::vector<nn::DenseCache<Scalar>>* caches = nullptr) const;
  void backward(const std::vector<nn::DenseCache<Scalar>>& caches, const Matrix& grad_output);

  void normalize_in_place(Matrix& windows) const;

  nn::RowVector<Scalar> feature_mean;
  nn::RowVector<Scalar> feature_scale;
  Vec2 target_mean = Vec2::Zero();
  Vec2 target_scale = Vec2::Ones();
  std::vector<nn::DenseLayer<Scalar>> layers;

  nlohmann::json manifest() const;
  void save(const std::filesystem::path& path) const;
  static DecoderModel load(const std::filesystem::path& path);
  static DecoderModel from_archive(const nn::WeightArchive& archive);

  friend bool operator==(const DecoderModel& a, const DecoderModel& b);

 private:
  DecoderConfig config_;
};

struct TrainingHistory {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  int best_epoch = -1;
};

struct DecoderTrainResult {
  DecoderModel model;
  TrainingHistory history;
};

using EpochCallback = std::function<void(int epoch, double train_loss, double validation_loss)>;

/// Adam on MSE of standardized velocities; returns the epoch with the lowest
/// validation loss.
DecoderTrainResult train_decoder(const data::Dataset& dataset, const DecoderConfig& config,
                                 const EpochCallback& on_epoch = {});

struct DecoderEvaluation {
  RSquared r2;
  double mse = 0.0;  // mm^2/s^2
  std::size_t samples = 0;
};

/// Scores train-mode windows of the given split.
DecoderEvaluation evaluate_decoder(const DecoderModel& model, const data::Dataset& dataset, data::Split split);

/// Rolling zero-padded window for bin-by-bin decoding.
class StreamingDecoder {
 public:
  explicit StreamingDecoder(const DecoderModel& model);

  Vec2 push(std::span<const int> counts);
  void reset();
  std::span<const float> window() const { return window_; }

 private:
  const DecoderModel* model_;
  std::vector<float> window_;
};

}  // namespace jenkins::decoder
