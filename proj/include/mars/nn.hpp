#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mars/tensor.hpp"

namespace mars {

template <typename S>
using NamedParams = std::vector<std::pair<std::string, Tensor<S>>>;

template <typename S>
void collect_param(NamedParams<S>& out, const std::string& name, const Tensor<S>& p) {
  out.emplace_back(name, p);
}

template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(Index in, Index out, Rng& rng, double weight_std = -1.0)
      : weight_(Tensor<S>::randn({in, out}, rng, weight_std < 0.0 ? 1.0 / std::sqrt(double(in)) : weight_std,
                                 true)),
        bias_(Tensor<S>::zeros({out}, true)) {}

  Tensor<S> operator()(const Tensor<S>& x) const { return add_rowwise(matmul(x, weight_), bias_); }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    collect_param(out, prefix + ".weight", weight_);
    collect_param(out, prefix + ".bias", bias_);
  }

  Index in_features() const { return weight_.rows(); }
  Index out_features() const { return weight_.cols(); }
  const Tensor<S>& weight() const { return weight_; }
  const Tensor<S>& bias() const { return bias_; }

 private:
  Tensor<S> weight_, bias_;
};

template <typename S>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(Index dim)
      : gamma_(Tensor<S>::full({dim}, S(1), true)), beta_(Tensor<S>::zeros({dim}, true)) {}

  Tensor<S> operator()(const Tensor<S>& x) const {
    return add_rowwise(mul_rowwise(layer_norm_rows(x), gamma_), beta_);
  }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    collect_param(out, prefix + ".gamma", gamma_);
    collect_param(out, prefix + ".beta", beta_);
  }

 private:
  Tensor<S> gamma_, beta_;
};

/// Layer norm whose scale and shift are affine functions of a conditioning
/// vector. Zero-initialized so modulation starts as the identity
/// (gamma = 1, beta = 0) regardless of cond.
template <typename S>
class AdaLayerNorm {
 public:
  AdaLayerNorm() = default;
  AdaLayerNorm(Index dim, Index cond_dim)
      : to_gamma_(Tensor<S>::zeros({cond_dim, dim}, true)),
        gamma_bias_(Tensor<S>::zeros({dim}, true)),
        to_beta_(Tensor<S>::zeros({cond_dim, dim}, true)),
        beta_bias_(Tensor<S>::zeros({dim}, true)) {}

  /// x: [L x dim], cond: conditioning vector of width cond_dim.
  Tensor<S> operator()(const Tensor<S>& x, const Tensor<S>& cond) const {
    require_row_vector(cond, to_gamma_.rows(), "ada_layer_norm");
    Tensor<S> cond_row = reshape(cond, {Index(1), to_gamma_.rows()});
    Tensor<S> gamma = add_scalar(add_rowwise(matmul(cond_row, to_gamma_), gamma_bias_), S(1));
    Tensor<S> beta = add_rowwise(matmul(cond_row, to_beta_), beta_bias_);
    return add_rowwise(mul_rowwise(layer_norm_rows(x), gamma), beta);
  }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    collect_param(out, prefix + ".to_gamma", to_gamma_);
    collect_param(out, prefix + ".gamma_bias", gamma_bias_);
    collect_param(out, prefix + ".to_beta", to_beta_);
    collect_param(out, prefix + ".beta_bias", beta_bias_);
  }

 private:
  Tensor<S> to_gamma_, gamma_bias_, to_beta_, beta_bias_;
};

template <typename S>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(Index dim, Index heads, Rng& rng) : heads_(heads) {
    if (dim % heads != 0) throw ConfigError("MultiHeadAttention: dim not divisible by heads");
    wq_ = Linear<S>(dim, dim, rng);
    wk_ = Linear<S>(dim, dim, rng);
    wv_ = Linear<S>(dim, dim, rng);
    wo_ = Linear<S>(dim, dim, rng);
  }

  Tensor<S> operator()(const Tensor<S>& q_in, const Tensor<S>& kv_in, const BoolMask* mask = nullptr) const {
    auto kv = project_kv(kv_in);
    return attend(q_in, kv.first, kv.second, mask);
  }

  /// Projected keys/values, cacheable across incremental decoding steps.
  std::pair<Tensor<S>, Tensor<S>> project_kv(const Tensor<S>& kv_in) const {
    return {wk_(kv_in), wv_(kv_in)};
  }

  /// Attention of projected queries against already-projected keys/values.
  Tensor<S> attend(const Tensor<S>& q_in, const Tensor<S>& k, const Tensor<S>& v,
                   const BoolMask* mask = nullptr) const {
    Tensor<S> q = wq_(q_in);
    const Index dh = q.cols() / heads_;
    std::vector<Tensor<S>> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads_));
    for (Index h = 0; h < heads_; ++h) {
      head_outs.push_back(scaled_dot_attention(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh),
                                               slice_cols(v, h * dh, dh), mask));
    }
    return wo_(concat_cols(head_outs));
  }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    wq_.collect(prefix + ".wq", out);
    wk_.collect(prefix + ".wk", out);
    wv_.collect(prefix + ".wv", out);
    wo_.collect(prefix + ".wo", out);
  }

  Index heads() const { return heads_; }

 private:
  Index heads_ = 0;
  Linear<S> wq_, wk_, wv_, wo_;
};

template <typename S>
class Mlp {
 public:
  Mlp() = default;
  Mlp(Index dim, Index hidden, Rng& rng) : fc1_(dim, hidden, rng), fc2_(hidden, dim, rng) {}

  Tensor<S> operator()(const Tensor<S>& x) const { return fc2_(gelu(fc1_(x))); }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    fc1_.collect(prefix + ".fc1", out);
    fc2_.collect(prefix + ".fc2", out);
  }

 private:
  Linear<S> fc1_, fc2_;
};

/// Pre-norm transformer block: x += attn(LN(x)); x += mlp(LN(x)).
template <typename S>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(Index dim, Index heads, Index mlp_hidden, Rng& rng)
      : norm1_(dim), attn_(dim, heads, rng), norm2_(dim), mlp_(dim, mlp_hidden, rng) {}

  Tensor<S> operator()(const Tensor<S>& x, const BoolMask* mask = nullptr) const {
    Tensor<S> normed = norm1_(x);
    Tensor<S> h = add(x, attn_(normed, normed, mask));
    return add(h, mlp_(norm2_(h)));
  }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    norm1_.collect(prefix + ".norm1", out);
    attn_.collect(prefix + ".attn", out);
    norm2_.collect(prefix + ".norm2", out);
    mlp_.collect(prefix + ".mlp", out);
  }

  const MultiHeadAttention<S>& attention() const { return attn_; }

 private:
  LayerNorm<S> norm1_;
  MultiHeadAttention<S> attn_;
  LayerNorm<S> norm2_;
  Mlp<S> mlp_;
};

/// Pre-norm cross-attention block: latents attend to a context set.
template <typename S>
class CrossAttentionBlock {
 public:
  CrossAttentionBlock() = default;
  CrossAttentionBlock(Index dim, Index heads, Index mlp_hidden, Rng& rng)
      : norm_q_(dim), norm_kv_(dim), attn_(dim, heads, rng), norm2_(dim), mlp_(dim, mlp_hidden, rng) {}

  Tensor<S> operator()(const Tensor<S>& x, const Tensor<S>& context, const BoolMask* mask = nullptr) const {
    Tensor<S> h = add(x, attn_(norm_q_(x), norm_kv_(context), mask));
    return add(h, mlp_(norm2_(h)));
  }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    norm_q_.collect(prefix + ".norm_q", out);
    norm_kv_.collect(prefix + ".norm_kv", out);
    attn_.collect(prefix + ".attn", out);
    norm2_.collect(prefix + ".norm2", out);
    mlp_.collect(prefix + ".mlp", out);
  }

 private:
  LayerNorm<S> norm_q_, norm_kv_;
  MultiHeadAttention<S> attn_;
  LayerNorm<S> norm2_;
  Mlp<S> mlp_;
};

}  // namespace mars
