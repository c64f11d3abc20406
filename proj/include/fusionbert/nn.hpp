#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fusionbert/autodiff.hpp"
#include "fusionbert/params.hpp"

namespace fusionbert::nn {

using ad::Tape;
using ad::Var;

inline constexpr double kLayerNormEps = 1e-5;

struct AttentionConfig {
  std::size_t model_dim = 64;
  std::size_t heads = 4;

  std::size_t head_dim() const { return model_dim / heads; }
  void validate() const {
    if (model_dim == 0 || heads == 0 || model_dim % heads != 0)
      throw DataError("attention config: model_dim " + std::to_string(model_dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
};

enum class Activation { Gelu, Identity };

// y = x W (+ b). W is [in, out].
template <typename T>
struct Linear {
  ParamTensor<T>* weight = nullptr;
  ParamTensor<T>* bias = nullptr;

  static Linear create(ParamStore<T>& store, const std::string& name, std::size_t in,
                       std::size_t out, bool with_bias = true) {
    Linear l;
    l.weight = &store.add_uniform(name + ".W", in, out);
    if (with_bias) l.bias = &store.add_filled(name + ".b", {out}, T(0));
    return l;
  }

  std::size_t in_dim() const { return weight->value.dims()[0]; }
  std::size_t out_dim() const { return weight->value.dims()[1]; }

  Var operator()(Tape<T>& t, Var x) const {
    Var y = ad::matmul(t, x, t.param(*weight));
    if (bias) y = ad::add_row(t, y, t.param(*bias));
    return y;
  }
};

template <typename T>
struct LayerNorm {
  ParamTensor<T>* gamma = nullptr;
  ParamTensor<T>* beta = nullptr;
  T eps = T(kLayerNormEps);

  static LayerNorm create(ParamStore<T>& store, const std::string& name, std::size_t d) {
    return {&store.add_filled(name + ".gamma", {d}, T(1)),
            &store.add_filled(name + ".beta", {d}, T(0)), T(kLayerNormEps)};
  }

  Var operator()(Tape<T>& t, Var x) const {
    return ad::layer_norm(t, x, t.param(*gamma), t.param(*beta), eps);
  }
};

// Multi-head scaled dot-product attention. Q/K/V are bias-free projections;
// a key bias would be invisible to the softmax.
template <typename T>
struct MultiHeadAttention {
  AttentionConfig cfg;
  Linear<T> q, k, v, out;

  static MultiHeadAttention create(ParamStore<T>& store, const std::string& name,
                                   AttentionConfig cfg) {
    cfg.validate();
    const auto d = cfg.model_dim;
    return {cfg, Linear<T>::create(store, name + ".Wq", d, d, false),
            Linear<T>::create(store, name + ".Wk", d, d, false),
            Linear<T>::create(store, name + ".Wv", d, d, false),
            Linear<T>::create(store, name + ".Wo", d, d)};
  }

  // queries [m, d], keys_values [n, d] -> [m, d]. When `weights` is non-null
  // the per-head attention matrices ([m, n] each) are appended to it.
  Var operator()(Tape<T>& t, Var queries, Var keys_values, std::vector<Var>* weights = nullptr) const {
    const auto d = cfg.model_dim;
    if (t.value(queries).cols() != d || t.value(keys_values).cols() != d)
      throw DataError("attention: input width does not match model_dim " + std::to_string(d));
    const Var Q = q(t, queries);
    const Var K = k(t, keys_values);
    const Var V = v(t, keys_values);
    const auto hd = cfg.head_dim();
    const T inv_sqrt = T(1) / std::sqrt(T(hd));
    std::vector<Var> heads;
    heads.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      Var qh = cfg.heads == 1 ? Q : ad::slice_cols(t, Q, h * hd, hd);
      Var kh = cfg.heads == 1 ? K : ad::slice_cols(t, K, h * hd, hd);
      Var vh = cfg.heads == 1 ? V : ad::slice_cols(t, V, h * hd, hd);
      Var scores = ad::scale(t, ad::matmul_bt(t, qh, kh), inv_sqrt);
      Var attn = ad::softmax_rows(t, scores);
      if (weights) weights->push_back(attn);
      heads.push_back(ad::matmul(t, attn, vh));
    }
    Var cat = cfg.heads == 1 ? heads[0] : ad::concat_cols(t, heads);
    return out(t, cat);
  }
};

// linear(d -> d*expansion) -> activation -> linear(-> d)
template <typename T>
struct FeedForward {
  Linear<T> up, down;
  Activation act = Activation::Gelu;

  static FeedForward create(ParamStore<T>& store, const std::string& name, std::size_t d,
                            std::size_t expansion, Activation act = Activation::Gelu) {
    if (expansion < 1) throw DataError("feed_forward: expansion must be >= 1");
    return {Linear<T>::create(store, name + ".up", d, d * expansion),
            Linear<T>::create(store, name + ".down", d * expansion, d), act};
  }

  Var operator()(Tape<T>& t, Var x) const {
    Var h = up(t, x);
    if (act == Activation::Gelu) h = ad::gelu(t, h);
    return down(t, h);
  }
};

// Convenience evaluation of the softmax op outside a training graph.
template <typename T>
Tensor<T> softmax(const Tensor<T>& v) {
  if (v.size() < 1) throw DataError("softmax: empty input");
  Tape<T> t;
  return t.value(ad::softmax_rows(t, t.constant(v)));
}

}  // namespace fusionbert::nn
