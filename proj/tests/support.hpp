#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "jenkins/dataset.hpp"
#include "jenkins/decoder.hpp"
#include "jenkins/encoder.hpp"
#include "jenkins/kinematics.hpp"
#include "jenkins/loop.hpp"

namespace jenkins::fixtures {

inline data::Dataset small_dataset(int trials = 80, std::uint64_t seed = 7) {
  data::GenerateOptions g;
  g.trials = trials;
  g.seed = seed;
  return data::generate_dataset(g);
}

inline decoder::DecoderConfig tiny_decoder_config() {
  decoder::DecoderConfig c;
  c.hidden_sizes = {16, 8};
  c.epochs = 2;
  c.batch_size = 32;
  return c;
}

inline encoder::EncoderConfig tiny_encoder_config() {
  encoder::EncoderConfig c;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.ff_dim = 16;
  c.epochs = 1;
  c.batch_size = 16;
  c.bins_per_trial = 2;
  c.validation_bins_per_trial = 2;
  return c;
}

/// Untrained but initialized models; enough for plumbing tests.
inline std::shared_ptr<const decoder::DecoderModel> tiny_decoder(std::uint64_t seed = 1) {
  decoder::DecoderModel m(tiny_decoder_config());
  Rng rng(seed);
  m.init(rng);
  m.feature_mean = nn::RowVector<float>::Constant(m.config().input_dim(), 0.4f);
  m.feature_scale = nn::RowVector<float>::Constant(m.config().input_dim(), 0.6f);
  m.target_scale = Vec2(50.0, 50.0);
  return std::make_shared<const decoder::DecoderModel>(std::move(m));
}

inline std::shared_ptr<const encoder::EncoderModel> tiny_encoder(std::uint64_t seed = 2) {
  encoder::EncoderModel m(tiny_encoder_config());
  Rng rng(seed);
  m.init(rng);
  m.velocity_scale = Vec2(100.0, 100.0);
  m.training_mean_count = 0.3;
  return std::make_shared<const encoder::EncoderModel>(std::move(m));
}

inline loop::LoopConfig tiny_loop_config(std::uint64_t seed = 3) {
  loop::LoopConfig c;
  c.decoder = tiny_decoder();
  c.encoder = tiny_encoder();
  c.chain = std::make_shared<const kinematics::KinematicChain>(kinematics::KinematicChain::koch_follower());
  c.arm = loop::ArmSettings::from_chain(*c.chain);
  c.seed = seed;
  return c;
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("jenkins-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace jenkins::fixtures
