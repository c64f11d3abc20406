#pragma once

// Two-stage contrastive alignment.
//
// Stage 1 trains the 3D encoder (with both adapter heads) against one
// single-view image feature per object, plus a text feature when available.
// Stage 2 freezes everything under "enc3d." and trains the view aggregator
// against the frozen visual-head embeddings.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fusionbert/adam.hpp"
#include "fusionbert/model.hpp"

namespace fusionbert::training {

using ad::Tape;
using ad::Var;

struct TripletSample {
  std::string object_id;
  mvagg::MultiViewFeatures<float> view_features;
  std::optional<std::vector<float>> text_feature;
  geometry::PointCloud point_cloud;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  double lr = 1e-3;
  double tau_init = 0.07;
  double tau_min = 0.01;
  double tau_max = 1.0;
  std::uint64_t seed = 0;
  int stage = 1;
  // Stage 2 draws between 1 and max_views views per object per epoch.
  std::size_t max_views = 12;

  void validate() const {
    if (batch_size < 2) throw DataError("train config: batch size must be >= 2");
    if (!epochs) throw DataError("train config: epochs must be >= 1");
    if (!(lr > 0)) throw DataError("train config: lr must be positive");
    if (!(tau_min > 0) || !(tau_max >= tau_min))
      throw DataError("train config: temperature bounds must satisfy 0 < min <= max");
    if (!(tau_init >= tau_min && tau_init <= tau_max))
      throw DataError("train config: initial temperature outside bounds");
    if (stage != 1 && stage != 2) throw DataError("train config: stage must be 1 or 2");
    if (!max_views) throw DataError("train config: max_views must be >= 1");
  }
};

struct LogRow {
  std::size_t step;
  int stage;
  double loss;
  double tau;
};

struct TrainReport {
  std::vector<LogRow> log;
  std::uint64_t frozen_checksum_before = 0;
  std::uint64_t frozen_checksum_after = 0;
};

namespace detail {

template <typename T>
void require_unit_rows(const Tensor<T>& x, const char* what) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double n = 0;
    for (auto v : x.row(i)) n += double(v) * v;
    if (std::abs(std::sqrt(n) - 1.0) > 1e-4)
      throw DataError(std::string(what) + ": row " + std::to_string(i) + " is not unit-norm");
  }
}

}  // namespace detail

// mean_i -log softmax_j(<a_i, t_j> / tau)[i] with tau = exp(log_tau).
template <typename T>
Var info_nce(Tape<T>& t, Var anchors, Var targets, Var log_tau) {
  const auto& A = t.value(anchors);
  const auto& B = t.value(targets);
  if (A.rank() != 2 || A.dims() != B.dims())
    throw DataError("info_nce: anchors " + dims_str(A.dims()) + " and targets " + dims_str(B.dims()) +
                    " must be matching B x d matrices");
  if (A.rows() < 2) throw DataError("info_nce: batch size must be >= 2");
  detail::require_unit_rows(A, "info_nce anchors");
  detail::require_unit_rows(B, "info_nce targets");
  Var inv_tau = ad::exp(t, ad::scale(t, log_tau, T(-1)));
  return ad::cross_entropy_diag(t, ad::scale_by(t, ad::matmul_bt(t, anchors, targets), inv_tau));
}

template <typename T>
T info_nce(const Tensor<T>& anchors, const Tensor<T>& targets, double tau) {
  if (!(tau > 0)) throw DataError("info_nce: temperature must be positive");
  Tape<T> t;
  Var lt = t.constant(Tensor<T>({1}, static_cast<T>(std::log(tau))));
  return t.value(info_nce(t, t.constant(anchors), t.constant(targets), lt))[0];
}

// Per-sample stage-1 inputs on a tape. `texts[i]` is null when sample i has
// no text feature.
template <typename T>
struct Stage1Batch {
  Var images;      // [B, C] single-view image features
  Var shape_img;   // [B, d] image-adapter embeddings
  Var shape_txt;   // [B, d] text-adapter embeddings
  std::vector<const std::vector<float>*> texts;
};

// Image terms in both directions plus text terms over the samples that carry
// text, weighted by their share of the batch. Text terms need at least two
// such samples to have a negative.
template <typename T>
Var symmetric_loss_stage1(Tape<T>& t, const Stage1Batch<T>& b, Var log_tau) {
  const std::size_t B = t.value(b.images).rows();
  if (B < 2) throw DataError("stage-1 loss: batch size must be >= 2");
  if (b.texts.size() != B) throw DataError("stage-1 loss: text list does not match batch");
  std::vector<Var> terms{info_nce(t, b.images, b.shape_img, log_tau), info_nce(t, b.shape_img, b.images, log_tau)};
  std::vector<T> w{T(0.5), T(0.5)};

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < B; ++i)
    if (b.texts[i]) rows.push_back(i);
  if (rows.size() >= 2) {
    const std::size_t d = t.value(b.shape_txt).cols();
    Tensor<T> txt({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& f = *b.texts[rows[r]];
      if (f.size() != d) throw DataError("stage-1 loss: text feature width does not match d");
      for (std::size_t j = 0; j < d; ++j) txt.at(r, j) = static_cast<T>(f[j]);
    }
    Var tv = t.constant(std::move(txt));
    Var sv = ad::select_rows(t, b.shape_txt, rows);
    terms.push_back(info_nce(t, tv, sv, log_tau));
    terms.push_back(info_nce(t, sv, tv, log_tau));
    const T share = T(0.5) * static_cast<T>(rows.size()) / static_cast<T>(B);
    w.push_back(share);
    w.push_back(share);
  }
  return ad::weighted_sum(t, terms, std::move(w));
}

// fused: [B, C] aggregated view embeddings; shapes: [B, d] frozen 3D embeddings.
template <typename T>
Var symmetric_loss_stage2(Tape<T>& t, Var fused, Var shapes, Var log_tau) {
  return ad::weighted_sum(t, {info_nce(t, fused, shapes, log_tau), info_nce(t, shapes, fused, log_tau)},
                          {T(0.5), T(0.5)});
}

// Image-adapter (visual subspace) embedding of one cloud.
template <typename T>
std::vector<T> visual_embedding(const encoder3d::Encoder3D<T>& enc, const geometry::PatchSet& ps) {
  auto e = enc.encode(ps);
  return e.f3d_img.empty() ? e.f3d : e.f3d_img;
}

template <typename T, typename S>
Tensor<T> take_rows(const Tensor<S>& X, const std::vector<std::size_t>& rows) {
  Tensor<T> out({rows.size(), X.cols()});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t j = 0; j < X.cols(); ++j) out.at(r, j) = static_cast<T>(X.at(rows[r], j));
  return out;
}

namespace detail {

inline void check_dataset(const std::vector<TripletSample>& data, const TrainConfig& cfg, std::size_t C) {
  if (data.empty()) throw DataError("train: empty dataset");
  if (cfg.batch_size > data.size())
    throw DataError("train: batch size " + std::to_string(cfg.batch_size) + " exceeds dataset size " +
                    std::to_string(data.size()));
  for (const auto& s : data)
    if (s.view_features.dim() != C)
      throw DataError("train: view features of " + s.object_id + " have width " +
                      std::to_string(s.view_features.dim()) + ", expected " + std::to_string(C));
}

template <typename T>
void clamp_log_tau(ParamTensor<T>& p, const TrainConfig& cfg) {
  const double lo = std::log(cfg.tau_min), hi = std::log(cfg.tau_max);
  T v = static_cast<T>(std::clamp(double(p.value[0]), lo, hi));
  // Rounding to T may step just outside the bounds.
  while (std::exp(double(v)) < cfg.tau_min) v = std::nextafter(v, T(1e9));
  while (std::exp(double(v)) > cfg.tau_max) v = std::nextafter(v, T(-1e9));
  p.value[0] = v;
}

inline void log_step(TrainReport& rep, std::ostream* log, std::size_t step, int stage, double loss, double tau) {
  rep.log.push_back({step, stage, loss, tau});
  if (log) *log << step << ',' << stage << ',' << loss << ',' << tau << '\n';
}

inline std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  return order;
}

}  // namespace detail

template <typename T>
TrainReport train_stage1(FusionModel<T>& model, const std::vector<TripletSample>& data,
                         const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (cfg.stage != 1) throw DataError("train_stage1: config stage is " + std::to_string(cfg.stage));
  detail::check_dataset(data, cfg, model.config().aggregator.feature_dim);
  auto& store = model.store();
  const auto& enc = model.encoder();
  store.set_trainable("", false);
  store.set_trainable(encoder3d::kPrefix, true);
  auto& log_tau = model.log_tau(1);
  log_tau.trainable = true;
  log_tau.value[0] = static_cast<T>(std::log(cfg.tau_init));

  std::vector<geometry::PatchSet> patches;
  for (const auto& s : data) patches.push_back(encoder3d::prepare_patches(s.point_cloud, enc.config()));

  TrainReport rep;
  rep.frozen_checksum_before = store.checksum(mvagg::kPrefix);
  Rng rng(derive_seed(cfg.seed, "train.stage1"));
  AdamState<T> adam;
  adam.lr = cfg.lr;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::epoch_order(data.size(), rng);
    std::vector<std::size_t> view(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) view[i] = rng.index(data[i].view_features.views());
    for (std::size_t start = 0; start + cfg.batch_size <= order.size(); start += cfg.batch_size) {
      Tape<T> t;
      std::vector<Var> img, txt;
      Stage1Batch<T> b;
      Tensor<T> images({cfg.batch_size, model.config().aggregator.feature_dim});
      for (std::size_t k = 0; k < cfg.batch_size; ++k) {
        const std::size_t i = order[start + k];
        auto v = enc.forward(t, patches[i]);
        img.push_back(encoder3d::Encoder3D<T>::visual(v));
        txt.push_back(v.f3d_txt.valid() ? v.f3d_txt : v.f3d);
        const auto& X = data[i].view_features.X;
        for (std::size_t j = 0; j < X.cols(); ++j) images.at(k, j) = static_cast<T>(X.at(view[i], j));
        b.texts.push_back(data[i].text_feature ? &*data[i].text_feature : nullptr);
      }
      b.images = t.constant(std::move(images));
      b.shape_img = ad::concat_rows(t, img);
      b.shape_txt = ad::concat_rows(t, txt);
      Var loss = symmetric_loss_stage1(t, b, t.param(log_tau));
      store.zero_grad();
      t.backward(loss);
      adam_step(store, adam);
      detail::clamp_log_tau(log_tau, cfg);
      detail::log_step(rep, log, ++step, 1, t.value(loss)[0], model.tau(1));
    }
  }
  rep.frozen_checksum_after = store.checksum(mvagg::kPrefix);
  model.set_stage(1);
  return rep;
}

template <typename T>
TrainReport train_stage2(FusionModel<T>& model, const std::vector<TripletSample>& data,
                         const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (cfg.stage != 2) throw DataError("train_stage2: config stage is " + std::to_string(cfg.stage));
  if (model.stage() != 1)
    throw DataError("train_stage2: stage mismatch, checkpoint is stage " + std::to_string(model.stage()) +
                    " but a stage-1 checkpoint is required");
  detail::check_dataset(data, cfg, model.config().aggregator.feature_dim);
  auto& store = model.store();
  store.set_trainable("", false);
  store.set_trainable(mvagg::kPrefix, true);
  auto& log_tau = model.log_tau(2);
  log_tau.trainable = true;
  log_tau.value[0] = static_cast<T>(std::log(cfg.tau_init));

  TrainReport rep;
  rep.frozen_checksum_before = store.checksum(encoder3d::kPrefix);
  const std::size_t d = model.config().encoder.joint_dim;
  // The encoder is frozen, so its embeddings are computed once.
  Tensor<T> shapes({data.size(), d});
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto e = visual_embedding(model.encoder(),
                                    encoder3d::prepare_patches(data[i].point_cloud, model.config().encoder));
    std::copy(e.begin(), e.end(), shapes.row(i).begin());
  }

  Rng rng(derive_seed(cfg.seed, "train.stage2"));
  AdamState<T> adam;
  adam.lr = cfg.lr;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::epoch_order(data.size(), rng);
    std::vector<std::vector<std::size_t>> views(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t V = data[i].view_features.views();
      views[i] = detail::epoch_order(V, rng);
      views[i].resize(1 + rng.index(std::min(V, cfg.max_views)));
    }
    for (std::size_t start = 0; start + cfg.batch_size <= order.size(); start += cfg.batch_size) {
      Tape<T> t;
      std::vector<Var> fused;
      std::vector<std::size_t> rows;
      for (std::size_t k = 0; k < cfg.batch_size; ++k) {
        const std::size_t i = order[start + k];
        rows.push_back(i);
        fused.push_back(model.aggregator()
                            .aggregate(t, t.constant(take_rows<T>(data[i].view_features.X, views[i])))
                            .f_mvimg);
      }
      Var shape_rows = t.constant(take_rows<T>(shapes, rows));
      Var loss = symmetric_loss_stage2(t, ad::concat_rows(t, fused), shape_rows, t.param(log_tau));
      store.zero_grad();
      t.backward(loss);
      adam_step(store, adam);
      detail::clamp_log_tau(log_tau, cfg);
      detail::log_step(rep, log, ++step, 2, t.value(loss)[0], model.tau(2));
    }
  }
  rep.frozen_checksum_after = store.checksum(encoder3d::kPrefix);
  if (rep.frozen_checksum_after != rep.frozen_checksum_before)
    throw DataError("train_stage2: frozen 3D encoder parameters changed");
  model.set_stage(2);
  return rep;
}

}  // namespace fusionbert::training
