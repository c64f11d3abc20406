#pragma once

// Quick in-binary oracle and property checks. Each check prints one line.

#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "fusionbert/oracle/brute_force.hpp"
#include "fusionbert/oracle/gradcheck.hpp"
#include "fusionbert/pipeline.hpp"

namespace fusionbert::selftest {

inline geometry::PointCloud random_cloud(Rng& rng, std::size_t n) {
  geometry::PointCloud pc;
  for (std::size_t i = 0; i < n; ++i) {
    geometry::Point p{};
    for (int k = 0; k < 3; ++k) p[k] = static_cast<float>(rng.uniform(-1, 1));
    for (int k = 3; k < 6; ++k) p[k] = static_cast<float>(rng.uniform());
    p[8] = 1;
    pc.points.push_back(p);
  }
  return pc;
}

inline bool check_fps(Rng& rng) {
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng.index(63), p = 1 + rng.index(std::min<std::size_t>(n, 16));
    const auto pc = random_cloud(rng, n);
    if (geometry::farthest_point_sample(pc, p) != oracle::fps_bruteforce(pc, p)) return false;
  }
  return true;
}

inline bool check_knn(Rng& rng) {
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng.index(63), k = 1 + rng.index(n);
    const auto pc = random_cloud(rng, n);
    const auto ps = geometry::knn_group(pc, {0}, k);
    if (ps.members != oracle::knn_bruteforce(pc, 0, k)) return false;
  }
  return true;
}

inline bool check_topk(Rng& rng) {
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 1 + rng.index(200), d = 1 + rng.index(8);
    std::vector<retrieval::Record> recs;
    std::vector<std::vector<float>> raw;
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<float> e(d);
      for (auto& x : e) x = static_cast<float>(rng.index(5)) - 2.0f;
      e[0] += 0.5f;
      recs.push_back({"r" + std::to_string(r), e});
    }
    const auto idx = retrieval::build_index(recs);
    for (const auto& r : idx.records()) raw.push_back(r.embedding);
    std::vector<float> q(d);
    for (auto& x : q) x = static_cast<float>(rng.uniform(-1, 1));
    const std::size_t k = 1 + rng.index(n);
    const auto got = retrieval::query_topk(idx, q, k);
    const auto want = oracle::topk_bruteforce(raw, q, k);
    for (std::size_t j = 0; j < k; ++j)
      if (got[j].id != idx.records()[want[j]].id) return false;
  }
  return true;
}

inline bool check_info_nce(Rng& rng) {
  for (int i = 0; i < 50; ++i) {
    const std::size_t b = 2 + rng.index(7), d = 1 + rng.index(16);
    auto unit_rows = [&] {
      std::vector<std::vector<double>> rows(b, std::vector<double>(d));
      for (auto& r : rows) {
        double n = 0;
        for (auto& x : r) {
          x = rng.normal();
          n += x * x;
        }
        for (auto& x : r) x /= std::sqrt(n);
      }
      return rows;
    };
    const auto a = unit_rows(), t = unit_rows();
    const double tau = rng.uniform(0.05, 1.0);
    Tensor<double> A({b, d}), T({b, d});
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t c = 0; c < d; ++c) A.at(r, c) = a[r][c], T.at(r, c) = t[r][c];
    if (std::abs(training::info_nce(A, T, tau) - oracle::info_nce_enumerate(a, t, tau)) > 1e-10) return false;
  }
  return true;
}

inline bool check_aggregator_invariance(Rng& rng) {
  ParamStore<float> store(rng.next_u64());
  auto agg = mvagg::Aggregator<float>::create(store, mvagg::AggregatorConfig::desk());
  for (int i = 0; i < 20; ++i) {
    const std::size_t v = 1 + rng.index(6);
    Tensor<float> x({v, 64});
    for (auto& e : x.data()) e = static_cast<float>(rng.normal());
    std::vector<std::size_t> order(v);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::size_t> dup(order);
    dup.insert(dup.end(), order.begin(), order.end());
    const auto base = agg.aggregate(mvagg::MultiViewFeatures<float>(x));
    for (const auto& rows : {order, dup}) {
      const auto o = agg.aggregate(mvagg::MultiViewFeatures<float>(training::take_rows<float>(x, rows)));
      for (std::size_t j = 0; j < 64; ++j)
        if (std::abs(o.f_mvimg[j] - base.f_mvimg[j]) > 1e-6) return false;
    }
    double s = 0;
    for (auto b : base.beta) {
      if (b < 0) return false;
      s += b;
    }
    if (std::abs(s - 1) > 1e-5) return false;
  }
  return true;
}

inline bool check_gradients(Rng& rng) {
  mvagg::AggregatorConfig cfg{16, 1, 2, 2, true};
  ParamStore<double> store(rng.next_u64());
  auto agg = mvagg::Aggregator<double>::create(store, cfg);
  Tensor<double> x({4, 16});
  for (auto& e : x.data()) e = rng.normal();
  Tensor<double> w({1, 16});
  for (auto& e : w.data()) e = rng.uniform(-1, 1);
  auto res = oracle::check_gradients(
      store,
      [&](ad::Tape<double>& t) {
        return ad::sum(t, ad::matmul_bt(t, agg.aggregate(t, t.constant(x)).f_mvimg, t.constant(w)));
      },
      "", 3, 2);
  return res.ok(1e-4);
}

// Returns the number of failed checks.
inline int run(std::uint64_t seed, std::ostream& out) {
  Rng rng(derive_seed(seed, "selftest"));
  const std::vector<std::pair<std::string, std::function<bool(Rng&)>>> checks{
      {"fps_matches_bruteforce", check_fps},
      {"knn_matches_full_sort", check_knn},
      {"topk_matches_full_sort", check_topk},
      {"info_nce_matches_enumeration", check_info_nce},
      {"aggregator_permutation_duplication_simplex", check_aggregator_invariance},
      {"aggregator_finite_difference_gradients", check_gradients},
  };
  int failed = 0;
  for (const auto& [name, fn] : checks) {
    bool ok = false;
    try {
      ok = fn(rng);
    } catch (const std::exception& e) {
      out << name << ": exception: " << e.what() << '\n';
    }
    out << (ok ? "PASS " : "FAIL ") << name << '\n';
    failed += !ok;
  }
  return failed;
}

}  // namespace fusionbert::selftest
