#pragma once

// The full trainable system: 3D encoder, view aggregator and one learnable
// log-temperature per training stage, all in one parameter store. Checkpoints
// carry two non-trainable metadata tensors (stage tag and config hash) so the
// FBCK container stays a plain list of named tensors.

#include <cmath>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>

#include "fusionbert/checkpoint.hpp"
#include "fusionbert/encoder3d.hpp"
#include "fusionbert/mvagg.hpp"

namespace fusionbert {

inline constexpr const char* kMetaStage = "meta.stage";
inline constexpr const char* kMetaConfigHash = "meta.config_hash";

inline std::string log_tau_name(int stage) { return "stage" + std::to_string(stage) + ".log_tau"; }

struct ModelConfig {
  encoder3d::Encoder3DConfig encoder;
  mvagg::AggregatorConfig aggregator;

  static ModelConfig desk() { return {}; }
  static ModelConfig paper_shape() {
    return {encoder3d::Encoder3DConfig::paper_shape(), mvagg::AggregatorConfig::paper_shape()};
  }

  void validate() const {
    encoder.validate();
    aggregator.validate();
    if (encoder.joint_dim != aggregator.feature_dim)
      throw DataError("model config: encoder joint_dim " + std::to_string(encoder.joint_dim) +
                      " must equal aggregator feature_dim " + std::to_string(aggregator.feature_dim));
  }

  std::string describe() const {
    const auto& e = encoder;
    const auto& a = aggregator;
    std::ostringstream s;
    s << "enc:" << e.layers << '/' << e.heads << '/' << e.hidden << '/' << e.mlp_expansion << '/'
      << e.patches << '/' << e.patch_size << '/' << e.joint_dim << '/' << e.pointnet_hidden << '/'
      << e.adapters << '/' << e.use_normals << " agg:" << a.feature_dim << '/' << a.layers << '/'
      << a.heads << '/' << a.ffn_expansion << '/' << a.use_ffn;
    return s.str();
  }

  std::uint64_t hash() const { return fnv1a(describe()); }
};

template <typename T>
class FusionModel {
 public:
  static std::unique_ptr<FusionModel> create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::unique_ptr<FusionModel> m(new FusionModel(cfg, seed));
    m->encoder_ = encoder3d::Encoder3D<T>::create(m->store_, cfg.encoder);
    m->aggregator_ = mvagg::Aggregator<T>::create(m->store_, cfg.aggregator);
    for (int s : {1, 2})
      m->store_.add(log_tau_name(s), Tensor<T>({1}, static_cast<T>(std::log(0.07))));
    m->store_.add(kMetaStage, Tensor<T>({1}, T(0)), false);
    m->store_.add(kMetaConfigHash, encode_hash(cfg.hash()), false);
    return m;
  }

  // Rebuilds the architecture from cfg and restores every value from a
  // checkpoint, which must have been produced with the same config.
  static std::unique_ptr<FusionModel> load(const ModelConfig& cfg, const std::filesystem::path& path) {
    auto ck = load_checkpoint<T>(path);
    auto m = create(cfg, 0);
    if (!ck.contains(kMetaConfigHash) || !ck.contains(kMetaStage))
      throw DataError("checkpoint " + path.string() + ": missing metadata");
    if (decode_hash(ck.get(kMetaConfigHash).value) != cfg.hash())
      throw DataError("checkpoint " + path.string() + ": model config does not match (" + cfg.describe() + ")");
    restore_values(m->store_, ck);
    return m;
  }

  void save(const std::filesystem::path& path) const { save_checkpoint(path, store_); }

  int stage() const { return static_cast<int>(store_.get(kMetaStage).value[0]); }
  void set_stage(int s) { store_.get(kMetaStage).value[0] = static_cast<T>(s); }

  ParamTensor<T>& log_tau(int stage) { return store_.get(log_tau_name(stage)); }
  double tau(int stage) const { return std::exp(double(store_.get(log_tau_name(stage)).value[0])); }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const encoder3d::Encoder3D<T>& encoder() const { return encoder_; }
  const mvagg::Aggregator<T>& aggregator() const { return aggregator_; }

 private:
  FusionModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {}

  // Four 16-bit limbs, exactly representable in f32.
  static Tensor<T> encode_hash(std::uint64_t h) {
    Tensor<T> t({4});
    for (int i = 0; i < 4; ++i) t[i] = static_cast<T>((h >> (16 * i)) & 0xffff);
    return t;
  }
  static std::uint64_t decode_hash(const Tensor<T>& t) {
    if (t.size() != 4) throw DataError("checkpoint: malformed config hash");
    std::uint64_t h = 0;
    for (int i = 0; i < 4; ++i) h |= static_cast<std::uint64_t>(t[i]) << (16 * i);
    return h;
  }

  ModelConfig cfg_;
  ParamStore<T> store_;
  encoder3d::Encoder3D<T> encoder_;
  mvagg::Aggregator<T> aggregator_;
};

}  // namespace fusionbert
