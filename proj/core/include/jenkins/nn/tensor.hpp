#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include "jenkins/common.hpp"

namespace jenkins::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// A trainable tensor and its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix<T>::Zero(rows, cols)), grad(Matrix<T>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Flushes denormals to zero while in scope.
class DenormalGuard {
 public:
#if defined(__SSE__)
  DenormalGuard() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~DenormalGuard() { _mm_setcsr(saved_); }
#else
  DenormalGuard() = default;
#endif
  DenormalGuard(const DenormalGuard&) = delete;
  DenormalGuard& operator=(const DenormalGuard&) = delete;

 private:
#if defined(__SSE__)
  unsigned saved_;
#endif
};

template <typename T>
using ParameterList = std::vector<Parameter<T>*>;

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
void require_shape(const Eigen::MatrixBase<Derived>& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + shape_string(rows, cols) + ", got " +
                     shape_string(m.rows(), m.cols()));
  }
}

/// Checked mode for NaN/Inf detection.
template <typename Derived>
void check_finite(const Eigen::MatrixBase<Derived>& m, const std::string& what) {
  if (!m.allFinite()) throw Error(what + ": non-finite value");
}

/// He (Kaiming) normal init for layers followed by ReLU.
template <typename T>
void init_he(Matrix<T>& w, Rng& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / double(w.cols())));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(normal(rng));
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for linear projections.
template <typename T>
void init_scaled_uniform(Matrix<T>& w, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(w.cols()));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(uniform(rng));
}

template <typename T>
void init_normal(Matrix<T>& w, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(normal(rng));
}

}  // namespace jenkins::nn
