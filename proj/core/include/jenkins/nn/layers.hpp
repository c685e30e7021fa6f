#pragma once

#include "jenkins/nn/tensor.hpp"

namespace jenkins::nn {

enum class Activation { identity, relu };

/// y = act(x W^T + b) over a batch of row vectors.
template <typename T>
struct DenseLayer {
  Parameter<T> weight;  // out x in
  Parameter<T> bias;    // 1 x out
  Activation activation = Activation::identity;

  DenseLayer() = default;
  DenseLayer(const std::string& name, Eigen::Index in, Eigen::Index out, Activation act)
      : weight(name + ".weight", out, in), bias(name + ".bias", 1, out), activation(act) {}

  Eigen::Index in_features() const { return weight.value.cols(); }
  Eigen::Index out_features() const { return weight.value.rows(); }

  /// He init for ReLU layers, scaled-uniform otherwise; zero bias.
  void init(Rng& rng) {
    if (activation == Activation::relu) {
      init_he(weight.value, rng);
    } else {
      init_scaled_uniform(weight.value, rng);
    }
    bias.value.setZero();
  }

  ParameterList<T> parameters() { return {&weight, &bias}; }
};

template <typename T>
struct DenseCache {
  Matrix<T> input;
  Matrix<T> output;  // post-activation; its sign pattern is the ReLU mask
};

template <typename T>
Matrix<T> dense_forward(const DenseLayer<T>& layer, const Matrix<T>& x, DenseCache<T>* cache = nullptr) {
  if (x.cols() != layer.in_features()) {
    throw ShapeError("dense_forward(" + layer.weight.name + "): input has " + std::to_string(x.cols()) +
                     " columns, layer expects " + std::to_string(layer.in_features()));
  }
  Matrix<T> y(x.rows(), layer.out_features());
  y.noalias() = x * layer.weight.value.transpose();
  y.rowwise() += layer.bias.value.row(0);
  if (layer.activation == Activation::relu) y = y.cwiseMax(T(0));
  if (cache != nullptr) {
    cache->input = x;
    cache->output = y;
  }
  return y;
}

/// Accumulates parameter gradients; returns dL/dx unless `need_input_grad` is false.
template <typename T>
Matrix<T> dense_backward(DenseLayer<T>& layer, const DenseCache<T>& cache, const Matrix<T>& dy,
                         bool need_input_grad = true) {
  require_shape(dy, cache.output.rows(), cache.output.cols(), "dense_backward: upstream gradient");
  Matrix<T> dz = dy;
  if (layer.activation == Activation::relu) {
    dz = (cache.output.array() > T(0)).select(dy, T(0));
  }
  layer.weight.grad.noalias() += dz.transpose() * cache.input;
  layer.bias.grad.row(0) += dz.colwise().sum();
  if (!need_input_grad) return {};
  Matrix<T> dx(dz.rows(), layer.in_features());
  dx.noalias() = dz * layer.weight.value;
  return dx;
}

/// Row-wise layer normalization with learned gain and shift.
template <typename T>
struct LayerNorm {
  Parameter<T> gain;   // 1 x d
  Parameter<T> shift;  // 1 x d
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(const std::string& name, Eigen::Index d) : gain(name + ".gain", 1, d), shift(name + ".shift", 1, d) {
    gain.value.setOnes();
  }

  ParameterList<T> parameters() { return {&gain, &shift}; }
};

template <typename T>
struct LayerNormCache {
  Matrix<T> normalized;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
};

template <typename T>
Matrix<T> layer_norm_forward(const LayerNorm<T>& ln, const Matrix<T>& x, LayerNormCache<T>* cache = nullptr) {
  const Eigen::Index d = ln.gain.value.cols();
  if (x.cols() != d) throw ShapeError("layer_norm_forward(" + ln.gain.name + "): width mismatch");
  Matrix<T> xhat(x.rows(), d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) mean += double(x(r, c));
    mean /= double(d);
    double var = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) {
      const double diff = double(x(r, c)) - mean;
      var += diff * diff;
    }
    var /= double(d);
    const double is = 1.0 / std::sqrt(var + ln.eps);
    inv_std(r) = T(is);
    for (Eigen::Index c = 0; c < d; ++c) xhat(r, c) = T((double(x(r, c)) - mean) * is);
  }
  Matrix<T> y = (xhat.array().rowwise() * ln.gain.value.row(0).array()).matrix();
  y.rowwise() += ln.shift.value.row(0);
  if (cache != nullptr) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(LayerNorm<T>& ln, const LayerNormCache<T>& cache, const Matrix<T>& dy) {
  require_shape(dy, cache.normalized.rows(), cache.normalized.cols(), "layer_norm_backward");
  const Eigen::Index d = dy.cols();
  ln.gain.grad.row(0) += (dy.array() * cache.normalized.array()).matrix().colwise().sum();
  ln.shift.grad.row(0) += dy.colwise().sum();
  Matrix<T> dxhat = (dy.array().rowwise() * ln.gain.value.row(0).array()).matrix();
  Matrix<T> dx(dy.rows(), d);
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    double sum = 0.0;
    double dot = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) {
      sum += double(dxhat(r, c));
      dot += double(dxhat(r, c)) * double(cache.normalized(r, c));
    }
    const double is = double(cache.inv_std(r));
    for (Eigen::Index c = 0; c < d; ++c) {
      dx(r, c) = T(is * (double(dxhat(r, c)) - sum / double(d) - double(cache.normalized(r, c)) * dot / double(d)));
    }
  }
  return dx;
}

/// Inverted dropout. Returns the (already scaled) keep mask so callers can
/// route gradients through it; in inference mode the mask is empty and
/// `x` is untouched.
template <typename T>
Matrix<T> dropout(Matrix<T>& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return {};
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale = T(1.0 / (1.0 - rate));
  Matrix<T> mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : T(0);
  x.array() *= mask.array();
  return mask;
}

template <typename T>
void dropout_backward(Matrix<T>& dy, const Matrix<T>& mask) {
  if (mask.size() == 0) return;
  dy.array() *= mask.array();
}

}  // namespace jenkins::nn
