#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <unordered_map>

#include "fusionbert/rng.hpp"
#include "fusionbert/tensor.hpp"

namespace fusionbert {

template <typename T>
struct ParamTensor {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

// Named parameters in insertion order. Element addresses are stable for the
// lifetime of the store, so tapes may hold pointers into it.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_seed_(seed), rng_(seed) {}

  ParamStore(const ParamStore& o)
      : params_(o.params_), index_(o.index_), rng_seed_(o.rng_seed_), rng_(o.rng_) {}
  ParamStore& operator=(const ParamStore& o) {
    params_ = o.params_;
    index_ = o.index_;
    rng_seed_ = o.rng_seed_;
    rng_ = o.rng_;
    return *this;
  }

  ParamTensor<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
    if (index_.count(name)) throw DataError("param store: duplicate name " + name);
    Tensor<T> grad(value.dims());
    params_.push_back({name, std::move(value), std::move(grad), trainable});
    index_.emplace(name, params_.size() - 1);
    return params_.back();
  }

  // Weight [in, out] ~ U(-1/sqrt(in), 1/sqrt(in)).
  ParamTensor<T>& add_uniform(const std::string& name, std::size_t in, std::size_t out) {
    Tensor<T> w({in, out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : w.data()) v = static_cast<T>(rng_.uniform(-bound, bound));
    return add(name, std::move(w));
  }

  ParamTensor<T>& add_filled(const std::string& name, Dims dims, T fill) {
    return add(name, Tensor<T>(std::move(dims), fill));
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  ParamTensor<T>& get(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw DataError("param store: no parameter " + std::string(name));
    return params_[it->second];
  }
  const ParamTensor<T>& get(std::string_view name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

  // Sets the trainable flag on every parameter whose name starts with prefix.
  void set_trainable(std::string_view prefix, bool flag) {
    for (auto& p : params_)
      if (p.name.starts_with(prefix)) p.trainable = flag;
  }

  // FNV-1a over names, dims and raw value bytes of parameters matching prefix.
  std::uint64_t checksum(std::string_view prefix = "") const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params_) {
      if (!p.name.starts_with(prefix)) continue;
      h = fnv1a(p.name, h);
      for (auto d : p.value.dims()) {
        const std::uint64_t d64 = d;
        h = fnv1a(&d64, sizeof d64, h);
      }
      h = fnv1a(p.value.data().data(), p.value.size() * sizeof(T), h);
    }
    return h;
  }

  std::uint64_t rng_seed() const { return rng_seed_; }
  Rng& rng() { return rng_; }

 private:
  std::deque<ParamTensor<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t rng_seed_;
  Rng rng_;
};

// Copies values of every parameter present in both stores (by name).
template <typename To, typename From>
void copy_values(ParamStore<To>& dst, const ParamStore<From>& src) {
  for (auto& p : dst) {
    if (!src.contains(p.name)) continue;
    const auto& s = src.get(p.name).value;
    if (s.dims() != p.value.dims()) throw DataError("copy_values: dims mismatch for " + p.name);
    std::copy(s.data().begin(), s.data().end(), p.value.data().begin());
  }
}

}  // namespace fusionbert
