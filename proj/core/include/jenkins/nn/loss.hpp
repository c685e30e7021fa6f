#pragma once

#include <span>

#include "jenkins/nn/tensor.hpp"

namespace jenkins::nn {

template <typename T>
struct LossResult {
  double loss = 0.0;
  Matrix<T> grad;
};

/// Numerically stable row-wise softmax.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits) {
  Matrix<T> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double max = double(logits.row(r).maxCoeff());
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double e = std::exp(double(logits(r, c)) - max);
      out(r, c) = T(e);
      sum += e;
    }
    out.row(r) /= T(sum);
  }
  return out;
}

/// Mean over rows of -log softmax(logits)[target]; gradient (softmax - onehot) / rows.
template <typename T>
LossResult<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(logits.rows()) + " rows");
  }
  const Eigen::Index k = logits.cols();
  LossResult<T> result;
  result.grad.resize(logits.rows(), k);
  const double inv_rows = logits.rows() > 0 ? 1.0 / double(logits.rows()) : 0.0;
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int target = targets[std::size_t(r)];
    if (target < 0 || target >= k) {
      throw Error("softmax_cross_entropy: class " + std::to_string(target) + " outside [0, " + std::to_string(k) + ")");
    }
    const double max = double(logits.row(r).maxCoeff());
    double sum = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) sum += std::exp(double(logits(r, c)) - max);
    const double log_sum = std::log(sum) + max;
    total += log_sum - double(logits(r, target));
    for (Eigen::Index c = 0; c < k; ++c) {
      const double p = std::exp(double(logits(r, c)) - log_sum);
      result.grad(r, c) = T((p - (c == target ? 1.0 : 0.0)) * inv_rows);
    }
  }
  result.loss = total * inv_rows;
  return result;
}

/// Mean squared error over all entries.
template <typename T>
LossResult<T> mse_loss(const Matrix<T>& pred, const Matrix<T>& target) {
  require_shape(target, pred.rows(), pred.cols(), "mse_loss: target");
  LossResult<T> result;
  const double n = double(pred.size());
  if (n == 0) {
    result.grad = Matrix<T>::Zero(pred.rows(), pred.cols());
    return result;
  }
  double total = 0.0;
  result.grad.resize(pred.rows(), pred.cols());
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double diff = double(pred.data()[i]) - double(target.data()[i]);
    total += diff * diff;
    result.grad.data()[i] = T(2.0 * diff / n);
  }
  result.loss = total / n;
  return result;
}

}  // namespace jenkins::nn
