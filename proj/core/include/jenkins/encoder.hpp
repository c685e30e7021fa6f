#pragma once

#include <deque>
#include <filesystem>
#include <functional>
#include <vector>

#include "jenkins/dataset.hpp"
#include "jenkins/nn/attention.hpp"
#include "jenkins/nn/weights.hpp"

namespace jenkins::encoder {

using Scalar = float;

inline constexpr const char* kModelKind = "encoder-transformer-v1";
inline constexpr int kClasses = 9;
/// Each token carries a 192-wide count slot followed by (vx, vy).
inline constexpr int kTokenFeatures = kNeurons + 2;

struct EncoderConfig {
  int past_bins = 50;
  int lookahead_bins = 40;
  int classes = kClasses;
  int neuron_count = kNeurons;
  int d_model = 64;
  int layers = 2;
  int heads = 4;
  int ff_dim = 128;
  double dropout = 0.1;
  int epochs = 60;
  int batch_size = 64;
  double lr = 0.0005;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  /// Teacher-forced target bins drawn per training trial per epoch; <= 0 uses every bin.
  int bins_per_trial = 8;
  /// Fixed bins per validation trial for per-epoch model selection; <= 0 uses every bin.
  int validation_bins_per_trial = 8;

  int sequence_length() const { return past_bins + lookahead_bins; }
  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

/// 0..7 map to themselves, anything >= 8 to the "8+" class.
int count_to_class(int count);
/// Inverse on classes; class 8 feeds back as 8 spikes.
int class_to_count(int cls);

using TokenMatrix = nn::Matrix<double>;

/// Token features for one prediction, (past_bins + lookahead_bins) x 194.
/// Rows 0..P-1 hold (clipped counts, velocity) of past bins, oldest first,
/// zero-padded on the old side when fewer than P bins are given. Rows
/// P..P+F-1 hold (zero count slot, future velocity), zero-padded at the end.
TokenMatrix build_encoder_input(const CountMatrix& past_counts, const VelocityMatrix& past_velocities,
                                const VelocityMatrix& future_velocities, int past_bins = 50, int lookahead_bins = 40);

/// Writes tokens for target bin t of a trial straight into a token block.
template <typename Block>
void fill_trial_tokens(const CountMatrix& counts, const VelocityMatrix& velocities, int t, int past_bins,
                       int lookahead_bins, Block&& out);

/// Transformer body shared by the float model and double-precision checks.
/// Reads out at the final token, which sees the whole past and look-ahead.
template <typename T>
class EncoderNetwork {
 public:
  struct Cache {
    Eigen::Index batch = 0;
    nn::DenseCache<T> embed;
    nn::Matrix<T> embed_mask;
    std::vector<nn::AttentionCache<T>> blocks;
    nn::LayerNormCache<T> final_norm;
    nn::DenseCache<T> head;
  };

  EncoderNetwork() = default;
  explicit EncoderNetwork(const EncoderConfig& config);

  const EncoderConfig& config() const { return config_; }
  void init(Rng& rng);
  nn::ParameterList<T> parameters();

  /// tokens: (batch * seq) x 194 with standardized velocity columns.
  /// Returns (batch * neurons) x classes logits.
  nn::Matrix<T> forward(const nn::Matrix<T>& tokens, Cache* cache = nullptr, Rng* dropout_rng = nullptr) const;
  void backward(const Cache& cache, const nn::Matrix<T>& grad_logits);

  nn::DenseLayer<T> embed;
  nn::Parameter<T> position;
  std::vector<nn::AttentionBlock<T>> blocks;
  nn::LayerNorm<T> final_norm;
  nn::DenseLayer<T> head;

 private:
  EncoderConfig config_;
};

class EncoderModel {
 public:
  EncoderModel() = default;
  explicit EncoderModel(const EncoderConfig& config);

  const EncoderConfig& config() const { return config_; }

  void init(Rng& rng);

  /// Raw token features -> network input (velocity columns standardized).
  nn::Matrix<Scalar> prepare(const TokenMatrix& tokens) const;
  template <typename Block>
  void standardize_in_place(Block&& tokens) const;

  /// 192 x 9 per-neuron class probabilities for the current bin.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> predict_distribution(
      const TokenMatrix& tokens) const;

  EncoderNetwork<Scalar> network;
  Vec2 velocity_mean = Vec2::Zero();
  Vec2 velocity_scale = Vec2::Ones();
  /// Population mean count per neuron per bin on the training split.
  double training_mean_count = 0.0;

  nlohmann::json manifest() const;
  void save(const std::filesystem::path& path) const;
  static EncoderModel load(const std::filesystem::path& path);
  static EncoderModel from_archive(const nn::WeightArchive& archive);

  friend bool operator==(const EncoderModel& a, const EncoderModel& b);

 private:
  EncoderConfig config_;
};

using Distribution = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Temperatures below this are treated as the argmax limit.
inline constexpr double kArgmaxTemperature = 1e-3;

/// One count per neuron drawn from its (temperature-sharpened) class distribution.
std::vector<int> sample_spikes(const Distribution& distribution, Rng& rng, double temperature = 1.0);

/// Autoregressive state: the last P sampled count vectors and velocities.
class SpikeGenerator {
 public:
  SpikeGenerator(const EncoderModel& model, std::uint64_t seed, double temperature = 1.0);

  /// `lookahead` holds v_t, v_t+1, ... (at most F rows used; missing rows are zero).
  /// Returns the sampled counts for bin t and advances the history.
  std::vector<int> step(const VelocityMatrix& lookahead);

  std::uint64_t bin() const { return bin_; }
  const std::deque<std::vector<int>>& history() const { return past_counts_; }
  /// Token features the next step would see for the given look-ahead.
  TokenMatrix current_tokens(const VelocityMatrix& lookahead) const;

 private:
  const EncoderModel* model_;
  Rng rng_;
  double temperature_;
  std::uint64_t bin_ = 0;
  std::deque<std::vector<int>> past_counts_;
  std::deque<Vec2> past_velocities_;
};

/// Closed-loop generation over a whole velocity trace (T x 2).
CountMatrix generate_closed_loop(const EncoderModel& model, const VelocityMatrix& velocity_trace, std::uint64_t seed,
                                 double temperature = 1.0);

struct EncoderHistory {
  std::vector<double> train_loss;       // summed-over-neurons cross-entropy per bin
  std::vector<double> validation_loss;  // on the fixed validation subset
  double initial_validation_loss = 0.0;
  int best_epoch = -1;
};

struct EncoderTrainResult {
  EncoderModel model;
  EncoderHistory history;
};

using EpochCallback = std::function<void(int epoch, double train_loss, double validation_loss)>;

/// Teacher-forced training on summed per-neuron softmax cross-entropy with
/// Adam; returns the epoch with the lowest validation loss.
EncoderTrainResult train_encoder(const data::Dataset& dataset, const EncoderConfig& config,
                                 const EpochCallback& on_epoch = {});

/// Mean over every bin of the split of the summed per-neuron cross-entropy.
double evaluate_encoder(const EncoderModel& model, const data::Dataset& dataset, data::Split split);

/// Cross-entropy of the uniform 9-class guess, summed over neurons (192 ln 9).
double uniform_baseline_loss(int neurons = kNeurons, int classes = kClasses);

// ---------------------------------------------------------------------------

template <typename Block>
void fill_trial_tokens(const CountMatrix& counts, const VelocityMatrix& velocities, int t, int past_bins,
                       int lookahead_bins, Block&& out) {
  using T = typename std::decay_t<Block>::Scalar;
  const int total = static_cast<int>(counts.rows());
  out.setZero();
  for (int j = 0; j < past_bins; ++j) {
    const int bin = t - past_bins + j;
    if (bin < 0 || bin >= total) continue;
    for (int n = 0; n < kNeurons; ++n) out(j, n) = T(class_to_count(count_to_class(counts(bin, n))));
    out(j, kNeurons) = T(velocities(bin, 0));
    out(j, kNeurons + 1) = T(velocities(bin, 1));
  }
  for (int j = 0; j < lookahead_bins; ++j) {
    const int bin = t + j;
    if (bin < 0 || bin >= total) continue;
    out(past_bins + j, kNeurons) = T(velocities(bin, 0));
    out(past_bins + j, kNeurons + 1) = T(velocities(bin, 1));
  }
}

template <typename Block>
void EncoderModel::standardize_in_place(Block&& tokens) const {
  using T = typename std::decay_t<Block>::Scalar;
  for (Eigen::Index r = 0; r < tokens.rows(); ++r) {
    tokens(r, kNeurons) = T((double(tokens(r, kNeurons)) - velocity_mean.x()) / velocity_scale.x());
    tokens(r, kNeurons + 1) = T((double(tokens(r, kNeurons + 1)) - velocity_mean.y()) / velocity_scale.y());
  }
}

template <typename T>
EncoderNetwork<T>::EncoderNetwork(const EncoderConfig& config)
    : embed("embed", kTokenFeatures, config.d_model, nn::Activation::identity),
      position("position", config.sequence_length(), config.d_model),
      final_norm("final_norm", config.d_model),
      head("head", config.d_model, Eigen::Index(config.neuron_count) * config.classes, nn::Activation::identity),
      config_(config) {
  config.validate();
  nn::AttentionConfig block_config;
  block_config.d_model = config.d_model;
  block_config.heads = config.heads;
  block_config.ff_dim = config.ff_dim;
  block_config.max_len = config.sequence_length();
  block_config.causal = true;
  block_config.dropout = config.dropout;
  for (int i = 0; i < config.layers; ++i) blocks.emplace_back("block" + std::to_string(i), block_config);
}

template <typename T>
void EncoderNetwork<T>::init(Rng& rng) {
  embed.init(rng);
  nn::init_normal(position.value, 0.1, rng);
  for (auto& b : blocks) b.init(rng);
  // Zero head: the untrained model predicts a uniform distribution.
  head.weight.value.setZero();
  head.bias.value.setZero();
}

template <typename T>
nn::ParameterList<T> EncoderNetwork<T>::parameters() {
  nn::ParameterList<T> list = embed.parameters();
  list.push_back(&position);
  for (auto& b : blocks) {
    for (auto* p : b.parameters()) list.push_back(p);
  }
  for (auto* p : final_norm.parameters()) list.push_back(p);
  for (auto* p : head.parameters()) list.push_back(p);
  return list;
}

template <typename T>
nn::Matrix<T> EncoderNetwork<T>::forward(const nn::Matrix<T>& tokens, Cache* cache, Rng* dropout_rng) const {
  const Eigen::Index seq = config_.sequence_length();
  if (tokens.cols() != kTokenFeatures || tokens.rows() % seq != 0 || tokens.rows() == 0) {
    throw ShapeError("encoder: token block " + nn::shape_string(tokens.rows(), tokens.cols()) +
                     " is not a stack of " + std::to_string(seq) + "x" + std::to_string(kTokenFeatures) + " sequences");
  }
  const Eigen::Index batch = tokens.rows() / seq;
  Cache local;
  Cache& c = cache != nullptr ? *cache : local;
  c.batch = batch;
  c.blocks.resize(blocks.size());

  nn::Matrix<T> h = nn::dense_forward(embed, tokens, cache != nullptr ? &c.embed : nullptr);
  for (Eigen::Index b = 0; b < batch; ++b) h.middleRows(b * seq, seq) += position.value;
  c.embed_mask = dropout_rng != nullptr ? nn::dropout(h, config_.dropout, *dropout_rng, true) : nn::Matrix<T>();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    h = nn::attention_forward(blocks[i], h, seq, cache != nullptr ? &c.blocks[i] : nullptr, dropout_rng);
  }
  nn::Matrix<T> last(batch, config_.d_model);
  for (Eigen::Index b = 0; b < batch; ++b) last.row(b) = h.row(b * seq + seq - 1);
  const nn::Matrix<T> normed = nn::layer_norm_forward(final_norm, last, cache != nullptr ? &c.final_norm : nullptr);
  nn::Matrix<T> logits = nn::dense_forward(head, normed, cache != nullptr ? &c.head : nullptr);
  // batch x (neurons * classes) and (batch * neurons) x classes share a row-major layout.
  return Eigen::Map<nn::Matrix<T>>(logits.data(), batch * config_.neuron_count, config_.classes);
}

template <typename T>
void EncoderNetwork<T>::backward(const Cache& c, const nn::Matrix<T>& grad_logits) {
  const Eigen::Index seq = config_.sequence_length();
  const Eigen::Index batch = c.batch;
  nn::require_shape(grad_logits, batch * config_.neuron_count, config_.classes, "encoder backward: logits gradient");
  nn::Matrix<T> g = Eigen::Map<const nn::Matrix<T>>(grad_logits.data(), batch,
                                                    Eigen::Index(config_.neuron_count) * config_.classes);
  const nn::Matrix<T> dnormed = nn::dense_backward(head, c.head, g);
  const nn::Matrix<T> dlast = nn::layer_norm_backward(final_norm, c.final_norm, dnormed);
  nn::Matrix<T> dh = nn::Matrix<T>::Zero(batch * seq, config_.d_model);
  for (Eigen::Index b = 0; b < batch; ++b) dh.row(b * seq + seq - 1) = dlast.row(b);
  for (std::size_t i = blocks.size(); i-- > 0;) dh = nn::attention_backward(blocks[i], c.blocks[i], dh);
  nn::dropout_backward(dh, c.embed_mask);
  for (Eigen::Index b = 0; b < batch; ++b) position.grad += dh.middleRows(b * seq, seq);
  nn::dense_backward(embed, c.embed, dh, false);
}

}  // namespace jenkins::encoder
