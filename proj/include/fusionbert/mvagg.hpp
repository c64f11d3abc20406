#pragma once

// Two-stage multi-view aggregation.
//
// Stage 1 refines the V view features with post-LN self-attention blocks
// (no positional encoding, so it is permutation-equivariant over views).
// Stage 2 pools them with a single cross-attention query: the mean of the
// refined views. Because the query is a mean and softmax renormalizes over
// keys, appending an exact copy of a view leaves the pooled output unchanged.

#include <string>
#include <vector>

#include "fusionbert/nn.hpp"

namespace fusionbert::mvagg {

using ad::Tape;
using ad::Var;

inline constexpr const char* kPrefix = "mvagg.";

struct AggregatorConfig {
  std::size_t feature_dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_expansion = 4;
  bool use_ffn = true;

  static AggregatorConfig desk() { return {}; }
  static AggregatorConfig paper_shape() { return {1280, 6, 8, 4, true}; }

  void validate() const {
    if (!feature_dim || !heads || feature_dim % heads)
      throw DataError("aggregator config: feature_dim must be divisible by heads");
    if (use_ffn && !ffn_expansion) throw DataError("aggregator config: ffn_expansion must be >= 1");
  }
};

// V x C per-object view features.
template <typename T>
struct MultiViewFeatures {
  Tensor<T> X;

  explicit MultiViewFeatures(Tensor<T> x) : X(std::move(x)) {
    if (X.rank() != 2) throw DataError("view features: expected V x C matrix");
    X.require_finite("view features");
  }
  std::size_t views() const { return X.rows(); }
  std::size_t dim() const { return X.cols(); }
};

template <typename T>
struct FusedViewEmbedding {
  std::vector<T> f_mvimg;
  std::vector<T> beta;  // head-averaged pooling weights, length V
};

struct FusedVars {
  Var f_mvimg;                   // [1, C], unit norm
  std::vector<Var> head_weights;  // per head [1, V]
};

template <typename T>
struct SelfAttentionBlock {
  nn::MultiHeadAttention<T> attn;
  nn::LayerNorm<T> ln_attn;
  nn::FeedForward<T> ffn;
  nn::LayerNorm<T> ln_ffn;
  bool use_ffn = true;

  // y = LN(x + Attn(x)); z = LN(y + FFN(y))
  Var operator()(Tape<T>& t, Var x) const {
    Var y = ln_attn(t, ad::add(t, x, attn(t, x, x)));
    if (!use_ffn) return y;
    return ln_ffn(t, ad::add(t, y, ffn(t, y)));
  }
};

template <typename T>
class Aggregator {
 public:
  static Aggregator create(ParamStore<T>& store, const AggregatorConfig& cfg) {
    cfg.validate();
    const std::string p = kPrefix;
    const nn::AttentionConfig acfg{cfg.feature_dim, cfg.heads};
    Aggregator a;
    a.cfg_ = cfg;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string b = p + "selfattn." + std::to_string(l);
      SelfAttentionBlock<T> blk{nn::MultiHeadAttention<T>::create(store, b + ".attn", acfg),
                                nn::LayerNorm<T>::create(store, b + ".ln_attn", cfg.feature_dim),
                                {},
                                {},
                                cfg.use_ffn};
      if (cfg.use_ffn) {
        blk.ffn = nn::FeedForward<T>::create(store, b + ".ffn", cfg.feature_dim, cfg.ffn_expansion);
        blk.ln_ffn = nn::LayerNorm<T>::create(store, b + ".ln_ffn", cfg.feature_dim);
      }
      a.blocks_.push_back(blk);
    }
    a.ln_in_ = nn::LayerNorm<T>::create(store, p + "pool.ln_in", cfg.feature_dim);
    a.pool_ = nn::MultiHeadAttention<T>::create(store, p + "pool.attn", acfg);
    a.ln_out_ = nn::LayerNorm<T>::create(store, p + "pool.ln_out", cfg.feature_dim);
    return a;
  }

  const AggregatorConfig& config() const { return cfg_; }

  Var self_attend_views(Tape<T>& t, Var X) const {
    check_width(t, X);
    for (const auto& b : blocks_) X = b(t, X);
    return X;
  }

  // Mean-consensus query over refined views -> LN -> cross-attention -> LN -> L2.
  FusedVars consensus_pool(Tape<T>& t, Var refined) const {
    check_width(t, refined);
    FusedVars out;
    Var q = ln_in_(t, ad::mean_rows(t, refined));
    Var kv = ln_in_(t, refined);
    Var pooled = pool_(t, q, kv, &out.head_weights);
    out.f_mvimg = ad::l2_normalize_rows(t, ln_out_(t, pooled));
    return out;
  }

  FusedVars aggregate(Tape<T>& t, Var X) const { return consensus_pool(t, self_attend_views(t, X)); }

  FusedViewEmbedding<T> aggregate(const MultiViewFeatures<T>& views) const {
    Tape<T> t;
    auto fv = aggregate(t, t.constant(views.X));
    FusedViewEmbedding<T> out;
    out.f_mvimg = t.value(fv.f_mvimg).data();
    out.beta = head_average(t, fv.head_weights);
    return out;
  }

  static std::vector<T> head_average(const Tape<T>& t, const std::vector<Var>& heads) {
    std::vector<T> beta(t.value(heads.at(0)).size(), T(0));
    for (auto h : heads)
      for (std::size_t i = 0; i < beta.size(); ++i) beta[i] += t.value(h)[i];
    for (auto& b : beta) b /= static_cast<T>(heads.size());
    return beta;
  }

 private:
  void check_width(const Tape<T>& t, Var X) const {
    if (t.value(X).cols() != cfg_.feature_dim)
      throw DataError("aggregator: view feature width " + std::to_string(t.value(X).cols()) +
                      " does not match C=" + std::to_string(cfg_.feature_dim));
  }

  AggregatorConfig cfg_;
  std::vector<SelfAttentionBlock<T>> blocks_;
  nn::LayerNorm<T> ln_in_;
  nn::MultiHeadAttention<T> pool_;
  nn::LayerNorm<T> ln_out_;
};

// Ablation baseline: normalized row mean.
template <typename T>
std::vector<T> mean_pool_baseline(const Tensor<T>& X) {
  if (X.rank() != 2) throw DataError("mean_pool_baseline: expected V x C matrix");
  std::vector<double> m(X.cols(), 0.0);
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t j = 0; j < X.cols(); ++j) m[j] += X.at(i, j);
  double n = 0;
  for (auto& v : m) {
    v /= static_cast<double>(X.rows());
    n += v * v;
  }
  n = std::sqrt(n);
  if (!(n > 1e-12)) throw NumericError("mean_pool_baseline: degenerate mean (views cancel)");
  std::vector<T> out(m.size());
  for (std::size_t j = 0; j < m.size(); ++j) out[j] = static_cast<T>(m[j] / n);
  return out;
}

}  // namespace fusionbert::mvagg
