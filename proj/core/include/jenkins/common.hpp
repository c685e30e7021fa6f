#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace jenkins {

inline constexpr int kNeurons = 192;
inline constexpr int kBinMs = 20;
inline constexpr double kBinSeconds = 0.020;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

/// Per-bin spike counts, one row per bin and one column per neuron.
using CountMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Per-bin (vx, vy) in mm/s.
using VelocityMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
/// Per-bin (x, y) in mm.
using PositionMatrix = VelocityMatrix;

using Rng = std::mt19937_64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// splitmix64 finalizer; used to derive independent per-item seeds from one run seed.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace jenkins
