#pragma once

#include "jenkins/nn/tensor.hpp"

namespace jenkins::nn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled; skipped entirely when zero
};

/// Bias-corrected Adam. Moment buffers are bound to parameters by position,
/// so the same ordered list must be passed to every step.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  const AdamOptions& options() const { return options_; }
  long steps() const { return step_; }

  void step(const ParameterList<T>& params) {
    if (first_moment_.empty()) {
      for (const auto* p : params) {
        first_moment_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
        second_moment_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (params.size() != first_moment_.size()) throw ShapeError("Adam: parameter list changed between steps");
    ++step_;
    const double correction1 = 1.0 - std::pow(options_.beta1, double(step_));
    const double correction2 = 1.0 - std::pow(options_.beta2, double(step_));
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<T>& p = *params[i];
      require_shape(p.grad, p.value.rows(), p.value.cols(), "Adam: gradient");
      Matrix<T>& m = first_moment_[i];
      Matrix<T>& v = second_moment_[i];
      require_shape(m, p.value.rows(), p.value.cols(), "Adam: moment buffer");
      T* value = p.value.data();
      const T* grad = p.grad.data();
      T* mp = m.data();
      T* vp = v.data();
      for (Eigen::Index j = 0; j < p.value.size(); ++j) {
        const double g = double(grad[j]);
        const double mj = b1 * double(mp[j]) + (1.0 - b1) * g;
        const double vj = b2 * double(vp[j]) + (1.0 - b2) * g * g;
        mp[j] = T(mj);
        vp[j] = T(vj);
        double update = (mj / correction1) / (std::sqrt(vj / correction2) + options_.eps);
        if (options_.weight_decay > 0.0) update += options_.weight_decay * double(value[j]);
        value[j] = T(double(value[j]) - options_.lr * update);
      }
    }
  }

 private:
  AdamOptions options_;
  long step_ = 0;
  std::vector<Matrix<T>> first_moment_;
  std::vector<Matrix<T>> second_moment_;
};

template <typename T>
void zero_grads(const ParameterList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace jenkins::nn
