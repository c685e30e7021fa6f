#include "jenkins/decoder.hpp"

#include <algorithm>
#include <numeric>

#include "jenkins/nn/adam.hpp"
#include "jenkins/nn/loss.hpp"

namespace jenkins::decoder {

void DecoderConfig::validate() const {
  if (window_bins < 1) throw Error("decoder config: window_bins must be >= 1");
  if (hidden_sizes.empty()) throw Error("decoder config: need at least one hidden layer");
  for (int h : hidden_sizes) {
    if (h <= 0) throw Error("decoder config: hidden sizes must be positive");
  }
  if (epochs < 1 || batch_size < 1) throw Error("decoder config: epochs and batch_size must be >= 1");
  if (!(lr > 0.0)) throw Error("decoder config: lr must be positive");
  if (cold_start_stride < 0) throw Error("decoder config: cold_start_stride must be >= 0");
}

nlohmann::json DecoderConfig::to_json() const {
  return {{"window_bins", window_bins}, {"hidden_sizes", hidden_sizes}, {"epochs", epochs},
          {"batch_size", batch_size},   {"lr", lr},                     {"seed", seed},
          {"cold_start_stride", cold_start_stride}, {"input_dim", input_dim()}, {"output_dim", 2}};
}

DecoderConfig DecoderConfig::from_json(const nlohmann::json& j) {
  DecoderConfig c;
  c.window_bins = j.at("window_bins").get<int>();
  c.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  c.cold_start_stride = j.value("cold_start_stride", c.cold_start_stride);
  c.validate();
  return c;
}

void fill_window(const CountMatrix& counts, int t, int window_bins, std::span<float> out) {
  const auto neurons = static_cast<std::size_t>(counts.cols());
  if (out.size() != std::size_t(window_bins) * neurons) {
    throw ShapeError("fill_window: output has " + std::to_string(out.size()) + " entries, expected " +
                     std::to_string(std::size_t(window_bins) * neurons));
  }
  for (int j = 0; j < window_bins; ++j) {
    const int bin = t - (window_bins - 1) + j;
    float* dst = out.data() + std::size_t(j) * neurons;
    if (bin < 0 || bin >= counts.rows()) {
      std::fill(dst, dst + neurons, 0.0f);
      continue;
    }
    for (std::size_t n = 0; n < neurons; ++n) dst[n] = static_cast<float>(counts(bin, Eigen::Index(n)));
  }
}

std::vector<WindowedSample> assemble_windows(const data::BinnedTrial& trial, WindowMode mode, int window_bins) {
  if (window_bins < 1) throw Error("assemble_windows: window_bins must be >= 1");
  std::vector<WindowedSample> samples;
  const int first = mode == WindowMode::train ? window_bins - 1 : 0;
  for (int t = first; t < trial.bins(); ++t) {
    WindowedSample s;
    s.window.resize(std::size_t(window_bins) * std::size_t(trial.counts.cols()));
    fill_window(trial.counts, t, window_bins, s.window);
    s.target = trial.velocities.row(t).transpose();
    s.bin = t;
    samples.push_back(std::move(s));
  }
  return samples;
}

RSquared r_squared(const VelocityMatrix& predictions, const VelocityMatrix& targets) {
  if (predictions.rows() != targets.rows()) throw ShapeError("r_squared: prediction/target length mismatch");
  if (targets.rows() < 2) throw Error("r_squared: need at least 2 samples");
  RSquared r;
  for (int c = 0; c < 2; ++c) {
    const double mean = targets.col(c).mean();
    double ss_res = 0.0;
    double ss_tot = 0.0;
    for (Eigen::Index i = 0; i < targets.rows(); ++i) {
      const double e = predictions(i, c) - targets(i, c);
      const double d = targets(i, c) - mean;
      ss_res += e * e;
      ss_tot += d * d;
    }
    if (ss_tot == 0.0) throw Error("r_squared: undefined R² (zero target variance)");
    r.component[std::size_t(c)] = 1.0 - ss_res / ss_tot;
  }
  r.mean = 0.5 * (r.component[0] + r.component[1]);
  return r;
}

DecoderModel::DecoderModel(const DecoderConfig& config) : config_(config) {
  config_.validate();
  Eigen::Index in = config_.input_dim();
  for (std::size_t i = 0; i < config_.hidden_sizes.size(); ++i) {
    layers.emplace_back("layer" + std::to_string(i), in, config_.hidden_sizes[i], nn::Activation::relu);
    in = config_.hidden_sizes[i];
  }
  layers.emplace_back("layer" + std::to_string(config_.hidden_sizes.size()), in, 2, nn::Activation::identity);
  feature_mean = nn::RowVector<Scalar>::Zero(config_.input_dim());
  feature_scale = nn::RowVector<Scalar>::Ones(config_.input_dim());
}

void DecoderModel::init(Rng& rng) {
  for (auto& layer : layers) layer.init(rng);
}

nn::ParameterList<Scalar> DecoderModel::parameters() {
  nn::ParameterList<Scalar> list;
  for (auto& layer : layers) {
    for (auto* p : layer.parameters()) list.push_back(p);
  }
  return list;
}

void DecoderModel::normalize_in_place(Matrix& windows) const {
  if (windows.cols() != config_.input_dim()) {
    throw ShapeError("decoder: window has " + std::to_string(windows.cols()) + " entries, expected " +
                     std::to_string(config_.input_dim()));
  }
  windows.rowwise() -= feature_mean;
  windows.array().rowwise() /= feature_scale.array();
}

Matrix DecoderModel::forward(const Matrix& normalized, std::vector<nn::DenseCache<Scalar>>* caches) const {
  if (caches != nullptr) caches->assign(layers.size(), {});
  Matrix h = normalized;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = nn::dense_forward(layers[i], h, caches != nullptr ? &(*caches)[i] : nullptr);
  }
  return h;
}

void DecoderModel::backward(const std::vector<nn::DenseCache<Scalar>>& caches, const Matrix& grad_output) {
  Matrix g = grad_output;
  for (std::size_t i = layers.size(); i-- > 0;) {
    g = nn::dense_backward(layers[i], caches[i], g, i > 0);
  }
}

VelocityMatrix DecoderModel::predict_batch(const Matrix& windows) const {
  const nn::DenormalGuard guard;
  Matrix x = windows;
  normalize_in_place(x);
  const Matrix y = forward(x);
  VelocityMatrix v(y.rows(), 2);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    v(r, 0) = double(y(r, 0)) * target_scale.x() + target_mean.x();
    v(r, 1) = double(y(r, 1)) * target_scale.y() + target_mean.y();
  }
  return v;
}

Vec2 DecoderModel::predict(std::span<const float> window) const {
  const nn::DenormalGuard guard;
  if (window.size() != std::size_t(config_.input_dim())) {
    throw ShapeError("predict_velocity: window has " + std::to_string(window.size()) + " entries, expected " +
                     std::to_string(config_.input_dim()));
  }
  Matrix x = Eigen::Map<const Matrix>(window.data(), 1, config_.input_dim());
  return predict_batch(x).row(0).transpose();
}

nlohmann::json DecoderModel::manifest() const {
  return {{"kind", kModelKind},
          {"config", config_.to_json()},
          {"target_mean", {target_mean.x(), target_mean.y()}},
          {"target_scale", {target_scale.x(), target_scale.y()}}};
}

void DecoderModel::save(const std::filesystem::path& path) const {
  nn::WeightArchive archive;
  archive.set_manifest(manifest());
  for (const auto& layer : layers) {
    archive.put(layer.weight);
    archive.put(layer.bias);
  }
  archive.put<Scalar>("feature_mean", feature_mean);
  archive.put<Scalar>("feature_scale", feature_scale);
  archive.save(path);
}

DecoderModel DecoderModel::from_archive(const nn::WeightArchive& archive) {
  if (archive.kind() != kModelKind) {
    throw Error("expected a '" + std::string(kModelKind) + "' model, got '" + archive.kind() + "'");
  }
  const auto& m = archive.manifest();
  DecoderModel model(DecoderConfig::from_json(m.at("config")));
  for (auto& layer : model.layers) {
    archive.get_into(layer.weight);
    archive.get_into(layer.bias);
  }
  model.feature_mean = archive.get<Scalar>("feature_mean", 1, model.config_.input_dim());
  model.feature_scale = archive.get<Scalar>("feature_scale", 1, model.config_.input_dim());
  if (!model.feature_scale.allFinite() || (model.feature_scale.array() <= 0).any()) {
    throw Error("decoder: normalization scale must be finite and positive");
  }
  model.target_mean = Vec2(m.at("target_mean")[0].get<double>(), m.at("target_mean")[1].get<double>());
  model.target_scale = Vec2(m.at("target_scale")[0].get<double>(), m.at("target_scale")[1].get<double>());
  return model;
}

DecoderModel DecoderModel::load(const std::filesystem::path& path) {
  return from_archive(nn::WeightArchive::load(path));
}

bool operator==(const DecoderModel& a, const DecoderModel& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].weight.value != b.layers[i].weight.value || a.layers[i].bias.value != b.layers[i].bias.value) {
      return false;
    }
  }
  return a.feature_mean == b.feature_mean && a.feature_scale == b.feature_scale && a.target_mean == b.target_mean &&
         a.target_scale == b.target_scale;
}

namespace {

struct SampleRef {
  const data::BinnedTrial* trial;
  int bin;
};

std::vector<SampleRef> training_samples(const std::vector<const data::BinnedTrial*>& trials, const DecoderConfig& c) {
  std::vector<SampleRef> refs;
  for (const auto* trial : trials) {
    if (c.cold_start_stride > 0) {
      for (int t = 0; t < std::min(c.window_bins - 1, trial->bins()); t += c.cold_start_stride) {
        refs.push_back({trial, t});
      }
    }
    for (int t = c.window_bins - 1; t < trial->bins(); ++t) refs.push_back({trial, t});
  }
  return refs;
}

void fill_batch(const std::vector<SampleRef>& refs, std::span<const std::size_t> order, const DecoderModel& model,
                Matrix& x, Matrix& y) {
  const int w = model.config().window_bins;
  x.resize(Eigen::Index(order.size()), model.config().input_dim());
  y.resize(Eigen::Index(order.size()), 2);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const SampleRef& r = refs[order[i]];
    fill_window(r.trial->counts, r.bin, w, std::span<float>(x.row(Eigen::Index(i)).data(), std::size_t(x.cols())));
    for (int c = 0; c < 2; ++c) {
      y(Eigen::Index(i), c) = Scalar((r.trial->velocities(r.bin, c) - model.target_mean[c]) / model.target_scale[c]);
    }
  }
  model.normalize_in_place(x);
}

double mean_loss(const DecoderModel& model, const std::vector<SampleRef>& refs, int batch_size) {
  std::vector<std::size_t> order(refs.size());
  std::iota(order.begin(), order.end(), 0);
  Matrix x;
  Matrix y;
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += std::size_t(batch_size)) {
    const std::size_t n = std::min(std::size_t(batch_size), order.size() - start);
    fill_batch(refs, std::span(order).subspan(start, n), model, x, y);
    total += nn::mse_loss<Scalar>(model.forward(x), y).loss * double(n);
  }
  return total / double(refs.size());
}

}  // namespace

DecoderTrainResult train_decoder(const data::Dataset& dataset, const DecoderConfig& config,
                                 const EpochCallback& on_epoch) {
  const nn::DenormalGuard guard;
  config.validate();
  const auto train_trials = dataset.split(data::Split::train);
  const auto val_trials = dataset.split(data::Split::validation);
  const auto train_refs = training_samples(train_trials, config);
  const auto val_refs = training_samples(val_trials, config);
  if (train_refs.empty()) throw Error("train_decoder: empty train split");
  if (val_refs.empty()) throw Error("train_decoder: empty validation split");

  Rng rng(config.seed);
  DecoderModel model(config);
  model.init(rng);

  // Per-feature standardization from the training windows.
  {
    const auto dim = std::size_t(config.input_dim());
    std::vector<double> sum(dim, 0.0);
    std::vector<double> sum_sq(dim, 0.0);
    std::vector<float> window(dim);
    Vec2 target_sum = Vec2::Zero();
    Vec2 target_sq = Vec2::Zero();
    for (const auto& r : train_refs) {
      fill_window(r.trial->counts, r.bin, config.window_bins, window);
      for (std::size_t i = 0; i < dim; ++i) {
        sum[i] += window[i];
        sum_sq[i] += double(window[i]) * window[i];
      }
      const Vec2 v = r.trial->velocities.row(r.bin).transpose();
      target_sum += v;
      target_sq += v.cwiseProduct(v);
    }
    const double n = double(train_refs.size());
    for (std::size_t i = 0; i < dim; ++i) {
      const double mean = sum[i] / n;
      const double var = std::max(0.0, sum_sq[i] / n - mean * mean);
      model.feature_mean(Eigen::Index(i)) = Scalar(mean);
      model.feature_scale(Eigen::Index(i)) = Scalar(std::max(std::sqrt(var), 1e-6));
    }
    for (int c = 0; c < 2; ++c) {
      const double mean = target_sum[c] / n;
      const double sd = std::sqrt(std::max(0.0, target_sq[c] / n - mean * mean));
      model.target_mean[c] = mean;
      model.target_scale[c] = sd > 1e-6 ? sd : 1.0;
    }
  }

  nn::Adam<Scalar> adam(nn::AdamOptions{.lr = config.lr});
  const auto params = model.parameters();
  DecoderTrainResult result;
  result.model = model;
  double best = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_refs.size());
  std::iota(order.begin(), order.end(), 0);
  Matrix x;
  Matrix y;
  std::vector<nn::DenseCache<Scalar>> caches;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size)) {
      const std::size_t n = std::min(std::size_t(config.batch_size), order.size() - start);
      fill_batch(train_refs, std::span(order).subspan(start, n), model, x, y);
      nn::zero_grads(params);
      const Matrix pred = model.forward(x, &caches);
      const auto loss = nn::mse_loss<Scalar>(pred, y);
      model.backward(caches, loss.grad);
      adam.step(params);
      total += loss.loss * double(n);
    }
    const double train_loss = total / double(order.size());
    const double val_loss = mean_loss(model, val_refs, config.batch_size);
    result.history.train_loss.push_back(train_loss);
    result.history.validation_loss.push_back(val_loss);
    if (val_loss < best) {
      best = val_loss;
      result.history.best_epoch = epoch;
      result.model = model;
    }
    if (on_epoch) on_epoch(epoch, train_loss, val_loss);
  }
  return result;
}

DecoderEvaluation evaluate_decoder(const DecoderModel& model, const data::Dataset& dataset, data::Split split) {
  const int w = model.config().window_bins;
  std::vector<std::pair<const data::BinnedTrial*, int>> refs;
  for (const auto* trial : dataset.split(split)) {
    for (int t = w - 1; t < trial->bins(); ++t) refs.emplace_back(trial, t);
  }
  if (refs.empty()) throw Error("evaluate_decoder: split has no full-history windows");

  VelocityMatrix pred(Eigen::Index(refs.size()), 2);
  VelocityMatrix target(Eigen::Index(refs.size()), 2);
  constexpr std::size_t kChunk = 512;
  Matrix x;
  for (std::size_t start = 0; start < refs.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, refs.size() - start);
    x.resize(Eigen::Index(n), model.config().input_dim());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& [trial, t] = refs[start + i];
      fill_window(trial->counts, t, w, std::span<float>(x.row(Eigen::Index(i)).data(), std::size_t(x.cols())));
      target.row(Eigen::Index(start + i)) = trial->velocities.row(t);
    }
    pred.middleRows(Eigen::Index(start), Eigen::Index(n)) = model.predict_batch(x);
  }

  DecoderEvaluation eval;
  eval.samples = refs.size();
  eval.mse = (pred - target).squaredNorm() / double(pred.size());
  eval.r2 = r_squared(pred, target);
  return eval;
}

StreamingDecoder::StreamingDecoder(const DecoderModel& model)
    : model_(&model), window_(std::size_t(model.config().input_dim()), 0.0f) {}

Vec2 StreamingDecoder::push(std::span<const int> counts) {
  if (counts.size() != std::size_t(kNeurons)) {
    throw ShapeError("StreamingDecoder: expected " + std::to_string(kNeurons) + " counts, got " +
                     std::to_string(counts.size()));
  }
  std::move(window_.begin() + kNeurons, window_.end(), window_.begin());
  std::transform(counts.begin(), counts.end(), window_.end() - kNeurons, [](int c) { return float(c); });
  return model_->predict(window_);
}

void StreamingDecoder::reset() { std::fill(window_.begin(), window_.end(), 0.0f); }

}  // namespace jenkins::decoder
