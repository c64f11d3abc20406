#pragma once

// Deliberately naive reference implementations used only by tests and
// `selftest`. None of them share code with the production paths they check.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "fusionbert/geometry.hpp"

namespace fusionbert::oracle {

inline double dist_sq(const geometry::Point& a, const geometry::Point& b) {
  double s = 0;
  for (int k = 0; k < 3; ++k) s += (double(a[k]) - double(b[k])) * (double(a[k]) - double(b[k]));
  return s;
}

// O(N^2 P) greedy: recompute every candidate's distance to the whole
// selected set at each step.
inline std::vector<std::size_t> fps_bruteforce(const geometry::PointCloud& pc, std::size_t count,
                                               std::size_t start = 0) {
  std::vector<std::size_t> sel{start};
  while (sel.size() < count) {
    std::size_t best = pc.size();
    double best_d = -1;
    for (std::size_t i = 0; i < pc.size(); ++i) {
      double md = std::numeric_limits<double>::infinity();
      for (auto s : sel) md = std::min(md, dist_sq(pc.points[i], pc.points[s]));
      if (md > best_d) {
        best_d = md;
        best = i;
      }
    }
    sel.push_back(best);
  }
  return sel;
}

// Full sort of all points by (distance, index).
inline std::vector<std::size_t> knn_bruteforce(const geometry::PointCloud& pc, std::size_t center,
                                               std::size_t k) {
  std::vector<std::size_t> idx(pc.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double da = dist_sq(pc.points[a], pc.points[center]);
    const double db = dist_sq(pc.points[b], pc.points[center]);
    return da != db ? da < db : a < b;
  });
  idx.resize(k);
  return idx;
}

// Cosine ranking by full sort; ties by record order.
inline std::vector<std::size_t> topk_bruteforce(const std::vector<std::vector<float>>& records,
                                                const std::vector<float>& q, std::size_t k) {
  auto cosine = [&](const std::vector<float>& r) {
    double d = 0, nr = 0, nq = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      d += double(r[i]) * q[i];
      nr += double(r[i]) * r[i];
      nq += double(q[i]) * q[i];
    }
    return d / std::sqrt(nr * nq);
  };
  std::vector<std::pair<double, std::size_t>> s;
  for (std::size_t i = 0; i < records.size(); ++i) s.push_back({cosine(records[i]), i});
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(s[i].second);
  return out;
}

// mean_i -log( exp(<a_i,t_i>/tau) / sum_j exp(<a_i,t_j>/tau) ), by explicit
// enumeration of the denominator. Rows are assumed unit-norm.
inline double info_nce_enumerate(const std::vector<std::vector<double>>& a,
                                 const std::vector<std::vector<double>>& t, double tau) {
  const std::size_t b = a.size();
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    double denom = 0, pos = 0;
    for (std::size_t j = 0; j < b; ++j) {
      double sim = 0;
      for (std::size_t k = 0; k < a[i].size(); ++k) sim += a[i][k] * t[j][k];
      const double e = std::exp(sim / tau);
      denom += e;
      if (i == j) pos = e;
    }
    total += -std::log(pos / denom);
  }
  return total / static_cast<double>(b);
}

}  // namespace fusionbert::oracle
