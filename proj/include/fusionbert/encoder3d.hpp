#pragma once

// Normal-aware point-cloud encoder: Mini-PointNet patch tokens plus a
// positional MLP on patch centers, a CLS-prefixed pre-LN transformer, a
// shared projection into the joint space, and two alignment adapter heads
// (image / text) that split the joint embedding into visual and semantic
// subspaces.

#include <string>
#include <tuple>
#include <vector>

#include "fusionbert/geometry.hpp"
#include "fusionbert/nn.hpp"

namespace fusionbert::encoder3d {

using ad::Tape;
using ad::Var;
using geometry::PatchSet;
using geometry::PointCloud;

inline constexpr const char* kPrefix = "enc3d.";

struct Encoder3DConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t hidden = 64;
  std::size_t mlp_expansion = 3;
  std::size_t patches = 32;
  std::size_t patch_size = 16;
  std::size_t joint_dim = 64;
  std::size_t pointnet_hidden = 128;
  bool adapters = true;
  // Ablation switch: zero the normal channels of every input point.
  bool use_normals = true;

  static Encoder3DConfig desk() { return {}; }
  static Encoder3DConfig paper_shape() {
    Encoder3DConfig c;
    c.layers = 12;
    c.heads = 8;
    c.hidden = 512;
    c.patches = 512;
    c.patch_size = 32;
    c.joint_dim = 1280;
    return c;
  }

  void validate() const {
    if (!layers || !heads || !hidden || !mlp_expansion || !patches || !patch_size || !joint_dim ||
        !pointnet_hidden)
      throw DataError("encoder3d config: all sizes must be positive");
    if (hidden % heads) throw DataError("encoder3d config: hidden not divisible by heads");
  }
};

template <typename T>
struct PreLNBlock {
  nn::LayerNorm<T> ln_attn;
  nn::MultiHeadAttention<T> attn;
  nn::LayerNorm<T> ln_ffn;
  nn::FeedForward<T> ffn;

  Var operator()(Tape<T>& t, Var x) const {
    Var a = ln_attn(t, x);
    x = ad::add(t, x, attn(t, a, a));
    return ad::add(t, x, ffn(t, ln_ffn(t, x)));
  }
};

// linear(hidden -> hidden) -> GELU -> linear(hidden -> d), plus the shared
// projection as a residual bypass.
template <typename T>
struct AlignmentAdapter {
  nn::Linear<T> inner, outer;
};

template <typename T>
struct ShapeEmbedding {
  std::vector<T> f3d;
  std::vector<T> f3d_img;  // empty when adapters are disabled
  std::vector<T> f3d_txt;
};

// Tape handles for one encoded cloud; each embedding is a [1, d] row.
struct EncodedVars {
  Var cls_hidden;
  Var f3d;
  Var f3d_img;
  Var f3d_txt;
};

// Replaces every color with the textureless gray; positions/normals untouched.
inline PointCloud fill_textureless(PointCloud pc) {
  for (auto& p : pc.points) p[3] = p[4] = p[5] = geometry::kTexturelessGray;
  return pc;
}

// normalize -> FPS(P) -> kNN(N'). Deterministic in the cloud alone.
inline PatchSet prepare_patches(const PointCloud& pc, const Encoder3DConfig& cfg) {
  cfg.validate();
  if (pc.size() < cfg.patches)
    throw DataError("encode: cloud has " + std::to_string(pc.size()) + " points, fewer than P=" +
                    std::to_string(cfg.patches));
  const auto norm = geometry::normalize_cloud(pc);
  return geometry::knn_group(norm, geometry::farthest_point_sample(norm, cfg.patches), cfg.patch_size);
}

template <typename T>
class Encoder3D {
 public:
  static Encoder3D create(ParamStore<T>& store, const Encoder3DConfig& cfg) {
    cfg.validate();
    const std::string p = kPrefix;
    Encoder3D e;
    e.cfg_ = cfg;
    e.pn1_ = nn::Linear<T>::create(store, p + "pointnet.l1", 9, cfg.pointnet_hidden);
    e.pn2_ = nn::Linear<T>::create(store, p + "pointnet.l2", cfg.pointnet_hidden, cfg.hidden);
    e.pos1_ = nn::Linear<T>::create(store, p + "pos.l1", 3, cfg.hidden);
    e.pos2_ = nn::Linear<T>::create(store, p + "pos.l2", cfg.hidden, cfg.hidden);
    Tensor<T> cls({1, cfg.hidden});
    for (auto& v : cls.data()) v = static_cast<T>(0.02 * store.rng().normal());
    e.cls_ = &store.add(p + "cls", std::move(cls));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string b = p + "block." + std::to_string(l);
      e.blocks_.push_back({nn::LayerNorm<T>::create(store, b + ".ln_attn", cfg.hidden),
                           nn::MultiHeadAttention<T>::create(store, b + ".attn", {cfg.hidden, cfg.heads}),
                           nn::LayerNorm<T>::create(store, b + ".ln_ffn", cfg.hidden),
                           nn::FeedForward<T>::create(store, b + ".ffn", cfg.hidden, cfg.mlp_expansion)});
    }
    e.ln_final_ = nn::LayerNorm<T>::create(store, p + "ln_final", cfg.hidden);
    e.proj_ = nn::Linear<T>::create(store, p + "proj", cfg.hidden, cfg.joint_dim);
    if (cfg.adapters) {
      e.iaa_ = {nn::Linear<T>::create(store, p + "iaa.inner", cfg.hidden, cfg.hidden),
                nn::Linear<T>::create(store, p + "iaa.outer", cfg.hidden, cfg.joint_dim)};
      e.taa_ = {nn::Linear<T>::create(store, p + "taa.inner", cfg.hidden, cfg.hidden),
                nn::Linear<T>::create(store, p + "taa.outer", cfg.hidden, cfg.joint_dim)};
    }
    return e;
  }

  const Encoder3DConfig& config() const { return cfg_; }

  // Patch rows [N', 9] -> token [1, hidden]: shared MLP then max over rows.
  Var mini_pointnet(Tape<T>& t, const Tensor<T>& patch_rows) const {
    if (patch_rows.rank() != 2 || patch_rows.cols() != 9)
      throw DataError("mini_pointnet: expected N' x 9 rows, got " + dims_str(patch_rows.dims()));
    return group_tokens(t, patch_rows, patch_rows.rows());
  }

  // Transformer trunk up to the final layer norm; returns the CLS row.
  Var encode_hidden(Tape<T>& t, const PatchSet& ps) const {
    const std::size_t P = ps.count(), K = ps.patch_size;
    if (P == 0 || ps.rows.size() != P * K) throw DataError("encode: malformed patch set");
    Tensor<T> rows({P * K, 9});
    for (std::size_t i = 0; i < P * K; ++i)
      for (std::size_t j = 0; j < 9; ++j)
        rows.at(i, j) = (!cfg_.use_normals && j >= 6) ? T(0) : static_cast<T>(ps.rows[i][j]);
    Tensor<T> centers({P, 3});
    for (std::size_t i = 0; i < P; ++i)
      for (std::size_t j = 0; j < 3; ++j) centers.at(i, j) = static_cast<T>(ps.center_positions[i][j]);

    Var tokens = group_tokens(t, rows, K);
    Var pos = pos2_(t, ad::gelu(t, pos1_(t, t.constant(std::move(centers)))));
    Var x = ad::concat_rows(t, {t.param(*cls_), ad::add(t, tokens, pos)});
    for (const auto& b : blocks_) x = b(t, x);
    x = ln_final_(t, x);
    return ad::select_rows(t, x, {0});
  }

  // (f3d_img, f3d_txt), each L2-normalized [1, d].
  std::pair<Var, Var> apply_adapters(Tape<T>& t, Var cls_hidden) const {
    if (!cfg_.adapters) throw DataError("apply_adapters: adapters are disabled in config");
    Var shared = proj_(t, cls_hidden);
    auto head = [&](const AlignmentAdapter<T>& a) {
      Var inner = a.outer(t, ad::gelu(t, a.inner(t, cls_hidden)));
      return ad::l2_normalize_rows(t, ad::add(t, inner, shared));
    };
    return {head(iaa_), head(taa_)};
  }

  EncodedVars forward(Tape<T>& t, const PatchSet& ps) const {
    EncodedVars out;
    out.cls_hidden = encode_hidden(t, ps);
    out.f3d = ad::l2_normalize_rows(t, proj_(t, out.cls_hidden));
    if (cfg_.adapters) std::tie(out.f3d_img, out.f3d_txt) = apply_adapters(t, out.cls_hidden);
    return out;
  }

  EncodedVars forward(Tape<T>& t, const PointCloud& pc) const {
    return forward(t, prepare_patches(pc, cfg_));
  }

  // Embedding of the visual subspace: the image adapter head when present.
  static Var visual(const EncodedVars& v) { return v.f3d_img.valid() ? v.f3d_img : v.f3d; }

  ShapeEmbedding<T> encode(const PatchSet& ps) const {
    Tape<T> t;
    auto v = forward(t, ps);
    ShapeEmbedding<T> e;
    e.f3d = t.value(v.f3d).data();
    if (cfg_.adapters) {
      e.f3d_img = t.value(v.f3d_img).data();
      e.f3d_txt = t.value(v.f3d_txt).data();
    }
    return e;
  }

  ShapeEmbedding<T> encode_cloud(const PointCloud& pc) const { return encode(prepare_patches(pc, cfg_)); }

  const AlignmentAdapter<T>& image_adapter() const { return iaa_; }
  const AlignmentAdapter<T>& text_adapter() const { return taa_; }

 private:
  // [G*K, 9] -> [G, hidden]
  Var group_tokens(Tape<T>& t, const Tensor<T>& rows, std::size_t group) const {
    Var h = pn2_(t, ad::gelu(t, pn1_(t, t.constant(rows))));
    return ad::group_max(t, h, group);
  }

  Encoder3DConfig cfg_;
  nn::Linear<T> pn1_, pn2_, pos1_, pos2_;
  ParamTensor<T>* cls_ = nullptr;
  std::vector<PreLNBlock<T>> blocks_;
  nn::LayerNorm<T> ln_final_;
  nn::Linear<T> proj_;
  AlignmentAdapter<T> iaa_, taa_;
};

}  // namespace fusionbert::encoder3d
