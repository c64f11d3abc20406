#pragma once

// Embedding, indexing and Recall@K evaluation over a loaded dataset.

#include <algorithm>
#include <string>
#include <vector>

#include "fusionbert/model.hpp"
#include "fusionbert/retrieval.hpp"
#include "fusionbert/training.hpp"

namespace fusionbert::pipeline {

enum class Pooling { Aggregator, Mean };

struct EvalRow {
  std::size_t views;
  std::size_t k;
  double recall;
};

inline std::vector<retrieval::Record> embed_shapes(const FusionModel<float>& model,
                                                   const std::vector<training::TripletSample>& samples) {
  std::vector<retrieval::Record> out;
  for (const auto& s : samples)
    out.push_back({s.object_id, training::visual_embedding(
                                    model.encoder(), encoder3d::prepare_patches(s.point_cloud, model.config().encoder))});
  return out;
}

// The first V entries of a permutation seeded by (seed, object id).
inline std::vector<std::size_t> query_views(const std::string& id, std::size_t available, std::size_t V,
                                            std::uint64_t seed) {
  if (V < 1 || V > available)
    throw DataError("eval: object " + id + " has " + std::to_string(available) + " views, cannot use " +
                    std::to_string(V));
  std::vector<std::size_t> order(available);
  for (std::size_t i = 0; i < available; ++i) order[i] = i;
  Rng rng(derive_seed(seed, id + "/query"));
  rng.shuffle(order);
  order.resize(V);
  return order;
}

inline std::vector<float> fuse_views(const FusionModel<float>& model, const Tensor<float>& views, Pooling pooling) {
  if (pooling == Pooling::Mean) return mvagg::mean_pool_baseline(views);
  return model.aggregator().aggregate(mvagg::MultiViewFeatures<float>(views)).f_mvimg;
}

inline std::vector<EvalRow> evaluate(const FusionModel<float>& model, const std::vector<training::TripletSample>& samples,
                                     const retrieval::RetrievalIndex& index, const std::vector<std::size_t>& view_counts,
                                     const std::vector<std::size_t>& ks, std::uint64_t seed,
                                     Pooling pooling = Pooling::Aggregator) {
  if (ks.empty() || view_counts.empty()) throw DataError("eval: empty view or K list");
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  std::vector<EvalRow> rows;
  for (auto V : view_counts) {
    std::vector<std::pair<std::string, retrieval::QueryResult>> results;
    for (const auto& s : samples) {
      const auto sel = query_views(s.object_id, s.view_features.views(), V, seed);
      const auto q = fuse_views(model, training::take_rows<float>(s.view_features.X, sel), pooling);
      results.emplace_back(s.object_id, retrieval::query_topk(index, q, kmax));
    }
    for (auto k : ks) rows.push_back({V, k, retrieval::recall_at_k(results, k).recall});
  }
  return rows;
}

inline double recall_of(const std::vector<EvalRow>& rows, std::size_t V, std::size_t k) {
  for (const auto& r : rows)
    if (r.views == V && r.k == k) return r.recall;
  throw DataError("eval: no row for views=" + std::to_string(V) + " K=" + std::to_string(k));
}

}  // namespace fusionbert::pipeline
