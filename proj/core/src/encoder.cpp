#include "jenkins/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "jenkins/nn/adam.hpp"
#include "jenkins/nn/loss.hpp"

namespace jenkins::encoder {

void EncoderConfig::validate() const {
  if (past_bins < 1) throw Error("encoder config: past_bins must be >= 1");
  if (lookahead_bins != 40) throw Error("encoder config: lookahead_bins is fixed at 40");
  if (classes != kClasses) throw Error("encoder config: classes is fixed at 9");
  if (neuron_count != kNeurons) throw Error("encoder config: neuron_count must be 192");
  if (d_model < 1 || layers < 0 || heads < 1 || ff_dim < 1) throw Error("encoder config: bad transformer shape");
  if (d_model % heads != 0) throw Error("encoder config: heads must divide d_model");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("encoder config: dropout must be in [0, 1)");
  if (epochs < 1 || batch_size < 1) throw Error("encoder config: epochs and batch_size must be >= 1");
  if (!(lr > 0.0) || weight_decay < 0.0) throw Error("encoder config: bad optimizer settings");
  if (!(temperature > 0.0)) throw Error("encoder config: temperature must be positive");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"past_bins", past_bins},
          {"lookahead_bins", lookahead_bins},
          {"classes", classes},
          {"neuron_count", neuron_count},
          {"d_model", d_model},
          {"layers", layers},
          {"heads", heads},
          {"ff_dim", ff_dim},
          {"dropout", dropout},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"seed", seed},
          {"temperature", temperature},
          {"bins_per_trial", bins_per_trial},
          {"validation_bins_per_trial", validation_bins_per_trial}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.past_bins = j.at("past_bins").get<int>();
  c.lookahead_bins = j.at("lookahead_bins").get<int>();
  c.classes = j.at("classes").get<int>();
  c.neuron_count = j.at("neuron_count").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.dropout = j.value("dropout", c.dropout);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  c.temperature = j.value("temperature", c.temperature);
  c.bins_per_trial = j.value("bins_per_trial", c.bins_per_trial);
  c.validation_bins_per_trial = j.value("validation_bins_per_trial", c.validation_bins_per_trial);
  c.validate();
  return c;
}

int count_to_class(int count) {
  if (count < 0) throw Error("count_to_class: negative count");
  return std::min(count, kClasses - 1);
}

int class_to_count(int cls) {
  if (cls < 0 || cls >= kClasses) throw Error("class_to_count: class " + std::to_string(cls) + " outside [0, 8]");
  return cls;
}

TokenMatrix build_encoder_input(const CountMatrix& past_counts, const VelocityMatrix& past_velocities,
                                const VelocityMatrix& future_velocities, int past_bins, int lookahead_bins) {
  if (past_counts.rows() > past_bins || past_counts.rows() != past_velocities.rows()) {
    throw ShapeError("build_encoder_input: past counts " + nn::shape_string(past_counts.rows(), past_counts.cols()) +
                     " and velocities " + nn::shape_string(past_velocities.rows(), 2) + " must agree and hold at most " +
                     std::to_string(past_bins) + " bins");
  }
  if (past_counts.rows() > 0 && past_counts.cols() != kNeurons) {
    throw ShapeError("build_encoder_input: expected " + std::to_string(kNeurons) + " count columns, got " +
                     std::to_string(past_counts.cols()));
  }
  if (future_velocities.rows() > lookahead_bins) {
    throw ShapeError("build_encoder_input: " + std::to_string(future_velocities.rows()) +
                     " future velocities exceed the look-ahead of " + std::to_string(lookahead_bins));
  }
  TokenMatrix tokens = TokenMatrix::Zero(past_bins + lookahead_bins, kTokenFeatures);
  const auto pad = past_bins - int(past_counts.rows());
  for (Eigen::Index j = 0; j < past_counts.rows(); ++j) {
    for (int n = 0; n < kNeurons; ++n) {
      tokens(pad + j, n) = class_to_count(count_to_class(past_counts(j, n)));
    }
    tokens(pad + j, kNeurons) = past_velocities(j, 0);
    tokens(pad + j, kNeurons + 1) = past_velocities(j, 1);
  }
  for (Eigen::Index j = 0; j < future_velocities.rows(); ++j) {
    tokens(past_bins + j, kNeurons) = future_velocities(j, 0);
    tokens(past_bins + j, kNeurons + 1) = future_velocities(j, 1);
  }
  return tokens;
}

EncoderModel::EncoderModel(const EncoderConfig& config) : network(config), config_(config) {}

void EncoderModel::init(Rng& rng) { network.init(rng); }

nn::Matrix<Scalar> EncoderModel::prepare(const TokenMatrix& tokens) const {
  nn::require_shape(tokens, config_.sequence_length(), kTokenFeatures, "encoder input");
  nn::Matrix<Scalar> x = tokens.cast<Scalar>();
  standardize_in_place(x);
  return x;
}

Distribution EncoderModel::predict_distribution(const TokenMatrix& tokens) const {
  const nn::DenormalGuard guard;
  const nn::Matrix<Scalar> logits = network.forward(prepare(tokens));
  return nn::softmax_rows<double>(logits.cast<double>());
}

nlohmann::json EncoderModel::manifest() const {
  return {{"kind", kModelKind},
          {"config", config_.to_json()},
          {"P", config_.past_bins},
          {"F", config_.lookahead_bins},
          {"K", config_.classes},
          {"d_model", config_.d_model},
          {"layers", config_.layers},
          {"heads", config_.heads},
          {"velocity_mean", {velocity_mean.x(), velocity_mean.y()}},
          {"velocity_scale", {velocity_scale.x(), velocity_scale.y()}},
          {"training_mean_count", training_mean_count}};
}

void EncoderModel::save(const std::filesystem::path& path) const {
  nn::WeightArchive archive;
  archive.set_manifest(manifest());
  auto& net = const_cast<EncoderNetwork<Scalar>&>(network);
  for (const auto* p : net.parameters()) archive.put(*p);
  archive.save(path);
}

EncoderModel EncoderModel::from_archive(const nn::WeightArchive& archive) {
  if (archive.kind() != kModelKind) {
    throw Error("expected a '" + std::string(kModelKind) + "' model, got '" + archive.kind() + "'");
  }
  const auto& m = archive.manifest();
  EncoderModel model(EncoderConfig::from_json(m.at("config")));
  for (auto* p : model.network.parameters()) archive.get_into(*p);
  model.velocity_mean = Vec2(m.at("velocity_mean")[0].get<double>(), m.at("velocity_mean")[1].get<double>());
  model.velocity_scale = Vec2(m.at("velocity_scale")[0].get<double>(), m.at("velocity_scale")[1].get<double>());
  model.training_mean_count = m.at("training_mean_count").get<double>();
  return model;
}

EncoderModel EncoderModel::load(const std::filesystem::path& path) {
  return from_archive(nn::WeightArchive::load(path));
}

bool operator==(const EncoderModel& a, const EncoderModel& b) {
  auto pa = const_cast<EncoderNetwork<Scalar>&>(a.network).parameters();
  auto pb = const_cast<EncoderNetwork<Scalar>&>(b.network).parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value.rows() != pb[i]->value.rows() || pa[i]->value.cols() != pb[i]->value.cols()) return false;
    if (pa[i]->value != pb[i]->value) return false;
  }
  return a.velocity_mean == b.velocity_mean && a.velocity_scale == b.velocity_scale &&
         a.training_mean_count == b.training_mean_count;
}

std::vector<int> sample_spikes(const Distribution& distribution, Rng& rng, double temperature) {
  if (!(temperature > 0.0)) throw Error("sample_spikes: temperature must be positive");
  if (distribution.cols() != kClasses) throw ShapeError("sample_spikes: expected 9 classes per neuron");
  std::vector<int> counts(std::size_t(distribution.rows()));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::array<double, kClasses> weights{};
  for (Eigen::Index n = 0; n < distribution.rows(); ++n) {
    int cls = 0;
    if (temperature < kArgmaxTemperature) {
      distribution.row(n).maxCoeff(&cls);
    } else {
      double max_log = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < kClasses; ++k) {
        const double p = distribution(n, k);
        if (p < 0.0 || !std::isfinite(p)) throw Error("sample_spikes: invalid probability");
        weights[std::size_t(k)] = p > 0.0 ? std::log(p) / temperature : -std::numeric_limits<double>::infinity();
        max_log = std::max(max_log, weights[std::size_t(k)]);
      }
      if (!std::isfinite(max_log)) throw Error("sample_spikes: distribution row has no mass");
      double total = 0.0;
      for (auto& w : weights) {
        w = std::exp(w - max_log);
        total += w;
      }
      const double u = uniform(rng) * total;
      double cumulative = 0.0;
      cls = kClasses - 1;
      for (int k = 0; k < kClasses; ++k) {
        cumulative += weights[std::size_t(k)];
        if (u < cumulative) {
          cls = k;
          break;
        }
      }
      // Never land on a zero-probability class through rounding at the top end.
      while (weights[std::size_t(cls)] == 0.0 && cls > 0) --cls;
    }
    counts[std::size_t(n)] = class_to_count(cls);
  }
  return counts;
}

SpikeGenerator::SpikeGenerator(const EncoderModel& model, std::uint64_t seed, double temperature)
    : model_(&model), rng_(seed), temperature_(temperature) {
  if (!(temperature > 0.0)) throw Error("SpikeGenerator: temperature must be positive");
}

TokenMatrix SpikeGenerator::current_tokens(const VelocityMatrix& lookahead) const {
  const auto& cfg = model_->config();
  CountMatrix past(Eigen::Index(past_counts_.size()), kNeurons);
  VelocityMatrix past_v(Eigen::Index(past_counts_.size()), 2);
  for (std::size_t j = 0; j < past_counts_.size(); ++j) {
    for (int n = 0; n < kNeurons; ++n) past(Eigen::Index(j), n) = past_counts_[j][std::size_t(n)];
    past_v.row(Eigen::Index(j)) = past_velocities_[j].transpose();
  }
  const Eigen::Index future = std::min<Eigen::Index>(lookahead.rows(), cfg.lookahead_bins);
  return build_encoder_input(past, past_v, lookahead.topRows(future), cfg.past_bins, cfg.lookahead_bins);
}

std::vector<int> SpikeGenerator::step(const VelocityMatrix& lookahead) {
  if (!lookahead.allFinite()) throw Error("SpikeGenerator: non-finite velocity");
  const auto dist = model_->predict_distribution(current_tokens(lookahead));
  std::vector<int> counts = sample_spikes(dist, rng_, temperature_);
  past_counts_.push_back(counts);
  past_velocities_.push_back(lookahead.rows() > 0 ? Vec2(lookahead.row(0).transpose()) : Vec2::Zero());
  while (past_counts_.size() > std::size_t(model_->config().past_bins)) {
    past_counts_.pop_front();
    past_velocities_.pop_front();
  }
  ++bin_;
  return counts;
}

CountMatrix generate_closed_loop(const EncoderModel& model, const VelocityMatrix& velocity_trace, std::uint64_t seed,
                                 double temperature) {
  if (velocity_trace.rows() < 1) throw Error("generate_closed_loop: empty velocity trace");
  if (!velocity_trace.allFinite()) throw Error("generate_closed_loop: non-finite velocities");
  SpikeGenerator generator(model, seed, temperature);
  const Eigen::Index total = velocity_trace.rows();
  const Eigen::Index f = model.config().lookahead_bins;
  CountMatrix out(total, kNeurons);
  for (Eigen::Index t = 0; t < total; ++t) {
    const auto counts = generator.step(velocity_trace.middleRows(t, std::min(f, total - t)));
    for (int n = 0; n < kNeurons; ++n) out(t, n) = counts[std::size_t(n)];
  }
  return out;
}

double uniform_baseline_loss(int neurons, int classes) { return double(neurons) * std::log(double(classes)); }

namespace {

struct SampleRef {
  const data::BinnedTrial* trial;
  int bin;
};

void fill_batch(const EncoderModel& model, std::span<const SampleRef> refs, nn::Matrix<Scalar>& tokens,
                std::vector<int>& targets) {
  const auto& cfg = model.config();
  const Eigen::Index seq = cfg.sequence_length();
  tokens.resize(Eigen::Index(refs.size()) * seq, kTokenFeatures);
  targets.resize(refs.size() * std::size_t(kNeurons));
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& r = refs[i];
    auto block = tokens.middleRows(Eigen::Index(i) * seq, seq);
    fill_trial_tokens(r.trial->counts, r.trial->velocities, r.bin, cfg.past_bins, cfg.lookahead_bins, block);
    model.standardize_in_place(block);
    for (int n = 0; n < kNeurons; ++n) {
      targets[i * std::size_t(kNeurons) + std::size_t(n)] = count_to_class(r.trial->counts(r.bin, n));
    }
  }
}

double mean_summed_loss(const EncoderModel& model, const std::vector<SampleRef>& refs, int batch_size) {
  nn::Matrix<Scalar> tokens;
  std::vector<int> targets;
  double total = 0.0;
  for (std::size_t start = 0; start < refs.size(); start += std::size_t(batch_size)) {
    const std::size_t n = std::min(std::size_t(batch_size), refs.size() - start);
    fill_batch(model, std::span(refs).subspan(start, n), tokens, targets);
    const auto loss = nn::softmax_cross_entropy<Scalar>(model.network.forward(tokens), targets);
    total += loss.loss * double(kNeurons) * double(n);
  }
  return total / double(refs.size());
}

std::vector<SampleRef> pick_bins(const std::vector<const data::BinnedTrial*>& trials, int per_trial, Rng& rng) {
  std::vector<SampleRef> refs;
  std::vector<int> bins;
  for (const auto* trial : trials) {
    bins.resize(std::size_t(trial->bins()));
    std::iota(bins.begin(), bins.end(), 0);
    if (per_trial > 0 && per_trial < trial->bins()) {
      // Partial Fisher-Yates: the first per_trial entries are a uniform draw without replacement.
      for (int i = 0; i < per_trial; ++i) {
        std::uniform_int_distribution<int> pick(i, trial->bins() - 1);
        std::swap(bins[std::size_t(i)], bins[std::size_t(pick(rng))]);
      }
      bins.resize(std::size_t(per_trial));
      std::sort(bins.begin(), bins.end());
    }
    for (int t : bins) refs.push_back({trial, t});
  }
  return refs;
}

}  // namespace

EncoderTrainResult train_encoder(const data::Dataset& dataset, const EncoderConfig& config,
                                 const EpochCallback& on_epoch) {
  const nn::DenormalGuard guard;
  config.validate();
  const auto train_trials = dataset.split(data::Split::train);
  const auto val_trials = dataset.split(data::Split::validation);
  if (train_trials.empty() || dataset.total_bins() == 0) throw Error("train_encoder: empty train split");
  if (val_trials.empty()) throw Error("train_encoder: empty validation split");

  Rng rng(config.seed);
  EncoderModel model(config);
  model.init(rng);

  // Velocity standardization and the population mean rate from the train split.
  {
    Vec2 sum = Vec2::Zero();
    Vec2 sum_sq = Vec2::Zero();
    double count_sum = 0.0;
    double bins = 0.0;
    for (const auto* trial : train_trials) {
      for (int t = 0; t < trial->bins(); ++t) {
        const Vec2 v = trial->velocities.row(t).transpose();
        sum += v;
        sum_sq += v.cwiseProduct(v);
        count_sum += double(trial->counts.row(t).sum());
        bins += 1.0;
      }
    }
    if (bins == 0.0) throw Error("train_encoder: empty train split");
    for (int c = 0; c < 2; ++c) {
      const double mean = sum[c] / bins;
      const double sd = std::sqrt(std::max(0.0, sum_sq[c] / bins - mean * mean));
      model.velocity_mean[c] = mean;
      model.velocity_scale[c] = sd > 1e-6 ? sd : 1.0;
    }
    model.training_mean_count = count_sum / (bins * kNeurons);
  }

  Rng validation_rng(mix_seed(config.seed, 0x76616cULL));
  const auto val_refs = pick_bins(val_trials, config.validation_bins_per_trial, validation_rng);
  if (val_refs.empty()) throw Error("train_encoder: empty validation split");

  nn::Adam<Scalar> adam(nn::AdamOptions{.lr = config.lr, .weight_decay = config.weight_decay});
  const auto params = model.network.parameters();

  EncoderTrainResult result;
  result.history.initial_validation_loss = mean_summed_loss(model, val_refs, config.batch_size);
  result.model = model;
  double best = std::numeric_limits<double>::infinity();

  nn::Matrix<Scalar> tokens;
  std::vector<int> targets;
  EncoderNetwork<Scalar>::Cache cache;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto refs = pick_bins(train_trials, config.bins_per_trial, rng);
    std::shuffle(refs.begin(), refs.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < refs.size(); start += std::size_t(config.batch_size)) {
      const std::size_t n = std::min(std::size_t(config.batch_size), refs.size() - start);
      fill_batch(model, std::span(refs).subspan(start, n), tokens, targets);
      nn::zero_grads(params);
      const nn::Matrix<Scalar> logits = model.network.forward(tokens, &cache, &rng);
      const auto loss = nn::softmax_cross_entropy<Scalar>(logits, targets);
      model.network.backward(cache, loss.grad);
      adam.step(params);
      total += loss.loss * double(kNeurons) * double(n);
    }
    const double train_loss = total / double(refs.size());
    const double val_loss = mean_summed_loss(model, val_refs, config.batch_size);
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

double evaluate_encoder(const EncoderModel& model, const data::Dataset& dataset, data::Split split) {
  const nn::DenormalGuard guard;
  Rng unused(0);
  const auto refs = pick_bins(dataset.split(split), 0, unused);
  if (refs.empty()) throw Error("evaluate_encoder: split is empty");
  return mean_summed_loss(model, refs, 128);
}

}  // namespace jenkins::encoder
