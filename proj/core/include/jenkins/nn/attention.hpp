#pragma once

#include <limits>

#include "jenkins/nn/layers.hpp"

namespace jenkins::nn {

struct AttentionConfig {
  Eigen::Index d_model = 64;
  Eigen::Index heads = 4;
  Eigen::Index ff_dim = 128;
  Eigen::Index max_len = 90;
  bool causal = true;
  double dropout = 0.0;
};

/// Pre-norm transformer block:
///   h = x + Attn(LN1(x));  y = h + FF(LN2(h)),  FF = W2 relu(W1 .)
/// Inputs are batches of sequences stacked row-wise: (batch * seq_len) x d_model.
template <typename T>
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(const std::string& name, const AttentionConfig& config)
      : ln_attn(name + ".ln_attn", config.d_model),
        ln_ff(name + ".ln_ff", config.d_model),
        query(name + ".query", config.d_model, config.d_model, Activation::identity),
        key(name + ".key", config.d_model, config.d_model, Activation::identity),
        value(name + ".value", config.d_model, config.d_model, Activation::identity),
        out(name + ".out", config.d_model, config.d_model, Activation::identity),
        ff_in(name + ".ff_in", config.d_model, config.ff_dim, Activation::relu),
        ff_out(name + ".ff_out", config.ff_dim, config.d_model, Activation::identity),
        config_(config) {
    if (config.heads <= 0 || config.d_model % config.heads != 0) {
      throw ShapeError("AttentionBlock: heads (" + std::to_string(config.heads) + ") must divide d_model (" +
                       std::to_string(config.d_model) + ")");
    }
  }

  const AttentionConfig& config() const { return config_; }
  bool causal() const { return config_.causal; }
  Eigen::Index head_dim() const { return config_.d_model / config_.heads; }

  void init(Rng& rng) {
    for (DenseLayer<T>* layer : {&query, &key, &value, &out, &ff_in, &ff_out}) layer->init(rng);
  }

  ParameterList<T> parameters() {
    ParameterList<T> list;
    for (auto* p : ln_attn.parameters()) list.push_back(p);
    for (DenseLayer<T>* layer : {&query, &key, &value, &out}) {
      for (auto* p : layer->parameters()) list.push_back(p);
    }
    for (auto* p : ln_ff.parameters()) list.push_back(p);
    for (DenseLayer<T>* layer : {&ff_in, &ff_out}) {
      for (auto* p : layer->parameters()) list.push_back(p);
    }
    return list;
  }

  LayerNorm<T> ln_attn;
  LayerNorm<T> ln_ff;
  DenseLayer<T> query;
  DenseLayer<T> key;
  DenseLayer<T> value;
  DenseLayer<T> out;
  DenseLayer<T> ff_in;
  DenseLayer<T> ff_out;

 private:
  AttentionConfig config_;
};

template <typename T>
struct AttentionCache {
  Eigen::Index seq_len = 0;
  LayerNormCache<T> ln_attn;
  LayerNormCache<T> ln_ff;
  DenseCache<T> query, key, value, out, ff_in, ff_out;
  std::vector<Matrix<T>> probs;  // one S x S matrix per (sequence, head)
  Matrix<T> attn_mask;
  Matrix<T> ff_mask;
};

/// `dropout_rng == nullptr` selects inference mode.
template <typename T>
Matrix<T> attention_forward(const AttentionBlock<T>& block, const Matrix<T>& x, Eigen::Index seq_len,
                            AttentionCache<T>* cache = nullptr, Rng* dropout_rng = nullptr) {
  const auto& cfg = block.config();
  if (seq_len <= 0 || seq_len > cfg.max_len) {
    throw ShapeError("attention_forward: sequence length " + std::to_string(seq_len) + " exceeds maximum " +
                     std::to_string(cfg.max_len));
  }
  if (x.cols() != cfg.d_model || x.rows() % seq_len != 0) {
    throw ShapeError("attention_forward: input " + shape_string(x.rows(), x.cols()) +
                     " is not a stack of sequences of length " + std::to_string(seq_len) + " and width " +
                     std::to_string(cfg.d_model));
  }
  const Eigen::Index batch = x.rows() / seq_len;
  const Eigen::Index hd = block.head_dim();
  const T scale = T(1.0 / std::sqrt(double(hd)));
  const bool training = dropout_rng != nullptr;

  AttentionCache<T> local;
  AttentionCache<T>& c = cache != nullptr ? *cache : local;
  c.seq_len = seq_len;
  c.probs.assign(std::size_t(batch * cfg.heads), Matrix<T>());

  const Matrix<T> a = layer_norm_forward(block.ln_attn, x, &c.ln_attn);
  const Matrix<T> q = dense_forward(block.query, a, &c.query);
  const Matrix<T> k = dense_forward(block.key, a, &c.key);
  const Matrix<T> v = dense_forward(block.value, a, &c.value);

  Matrix<T> ctx(x.rows(), cfg.d_model);
  Matrix<T> scores(seq_len, seq_len);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index h = 0; h < cfg.heads; ++h) {
      const auto qh = q.block(b * seq_len, h * hd, seq_len, hd);
      const auto kh = k.block(b * seq_len, h * hd, seq_len, hd);
      const auto vh = v.block(b * seq_len, h * hd, seq_len, hd);
      scores.noalias() = (qh * kh.transpose()) * scale;
      if (block.causal()) {
        for (Eigen::Index i = 0; i < seq_len; ++i) {
          for (Eigen::Index j = i + 1; j < seq_len; ++j) scores(i, j) = -std::numeric_limits<T>::infinity();
        }
      }
      for (Eigen::Index i = 0; i < seq_len; ++i) {
        const T max = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - max).exp().matrix();
        scores.row(i) /= scores.row(i).sum();
      }
      ctx.block(b * seq_len, h * hd, seq_len, hd).noalias() = scores * vh;
      if (training || cache != nullptr) c.probs[std::size_t(b * cfg.heads + h)] = scores;
    }
  }

  Matrix<T> o = dense_forward(block.out, ctx, &c.out);
  c.attn_mask = training ? dropout(o, cfg.dropout, *dropout_rng, true) : Matrix<T>();
  Matrix<T> hidden = x + o;

  const Matrix<T> f = layer_norm_forward(block.ln_ff, hidden, &c.ln_ff);
  const Matrix<T> inner = dense_forward(block.ff_in, f, &c.ff_in);
  Matrix<T> g = dense_forward(block.ff_out, inner, &c.ff_out);
  c.ff_mask = training ? dropout(g, cfg.dropout, *dropout_rng, true) : Matrix<T>();
  hidden += g;
  return hidden;
}

/// Accumulates parameter gradients and returns dL/dx.
template <typename T>
Matrix<T> attention_backward(AttentionBlock<T>& block, const AttentionCache<T>& c, const Matrix<T>& dy) {
  const auto& cfg = block.config();
  const Eigen::Index seq_len = c.seq_len;
  const Eigen::Index batch = dy.rows() / seq_len;
  const Eigen::Index hd = block.head_dim();
  const T scale = T(1.0 / std::sqrt(double(hd)));
  require_shape(dy, c.ln_attn.normalized.rows(), cfg.d_model, "attention_backward: upstream gradient");

  // Feed-forward branch.
  Matrix<T> dg = dy;
  dropout_backward(dg, c.ff_mask);
  const Matrix<T> dinner = dense_backward(block.ff_out, c.ff_out, dg);
  const Matrix<T> df = dense_backward(block.ff_in, c.ff_in, dinner);
  Matrix<T> dhidden = dy + layer_norm_backward(block.ln_ff, c.ln_ff, df);

  // Attention branch.
  Matrix<T> do_ = dhidden;
  dropout_backward(do_, c.attn_mask);
  const Matrix<T> dctx = dense_backward(block.out, c.out, do_);

  const Matrix<T>& q = c.query.output;
  const Matrix<T>& k = c.key.output;
  const Matrix<T>& v = c.value.output;
  Matrix<T> dq(dy.rows(), cfg.d_model);
  Matrix<T> dk(dy.rows(), cfg.d_model);
  Matrix<T> dv(dy.rows(), cfg.d_model);
  Matrix<T> dp(seq_len, seq_len);
  Matrix<T> ds(seq_len, seq_len);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index h = 0; h < cfg.heads; ++h) {
      const Matrix<T>& p = c.probs[std::size_t(b * cfg.heads + h)];
      const auto qh = q.block(b * seq_len, h * hd, seq_len, hd);
      const auto kh = k.block(b * seq_len, h * hd, seq_len, hd);
      const auto vh = v.block(b * seq_len, h * hd, seq_len, hd);
      const auto dch = dctx.block(b * seq_len, h * hd, seq_len, hd);
      dp.noalias() = dch * vh.transpose();
      dv.block(b * seq_len, h * hd, seq_len, hd).noalias() = p.transpose() * dch;
      for (Eigen::Index i = 0; i < seq_len; ++i) {
        const T dot = (dp.row(i).array() * p.row(i).array()).sum();
        ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
      }
      ds *= scale;
      dq.block(b * seq_len, h * hd, seq_len, hd).noalias() = ds * kh;
      dk.block(b * seq_len, h * hd, seq_len, hd).noalias() = ds.transpose() * qh;
    }
  }

  Matrix<T> da = dense_backward(block.query, c.query, dq);
  da += dense_backward(block.key, c.key, dk);
  da += dense_backward(block.value, c.value, dv);
  return dhidden + layer_norm_backward(block.ln_attn, c.ln_attn, da);
}

}  // namespace jenkins::nn
