#pragma once

// Exact cosine Top-K over an ID-keyed embedding table, Recall@K, and the
// FBIX index container.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fusionbert/binary_io.hpp"
#include "fusionbert/error.hpp"

namespace fusionbert::retrieval {

inline constexpr std::uint32_t kIndexVersion = 1;

struct Record {
  std::string id;
  std::vector<float> embedding;
};

struct Hit {
  std::string id;
  double score;
};

using QueryResult = std::vector<Hit>;

struct RecallReport {
  std::size_t k = 0;
  double recall = 0;
  std::size_t queries = 0;
};

class RetrievalIndex {
 public:
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }

  friend RetrievalIndex build_index(std::vector<Record> entries);
  friend RetrievalIndex decode_index(const std::vector<unsigned char>& bytes, const std::string& what);

 private:
  std::size_t dim_ = 0;
  std::vector<Record> records_;
};

namespace detail {

inline double norm(const std::vector<float>& v) {
  double s = 0;
  for (auto x : v) s += double(x) * x;
  return std::sqrt(s);
}

}  // namespace detail

// Validates and L2-normalizes every entry; insertion order is kept.
inline RetrievalIndex build_index(std::vector<Record> entries) {
  if (entries.empty()) throw DataError("empty index");
  RetrievalIndex idx;
  idx.dim_ = entries.front().embedding.size();
  if (!idx.dim_) throw DataError("build_index: zero-dimensional embedding");
  std::unordered_set<std::string> seen;
  for (auto& e : entries) {
    if (!seen.insert(e.id).second) throw DataError("build_index: duplicate id " + e.id);
    if (e.embedding.size() != idx.dim_)
      throw DataError("build_index: " + e.id + " has dim " + std::to_string(e.embedding.size()) +
                      ", expected " + std::to_string(idx.dim_));
    const double n = detail::norm(e.embedding);
    if (!std::isfinite(n)) throw NumericError("build_index: non-finite embedding for " + e.id);
    if (!(n > 0)) throw DataError("build_index: zero vector for " + e.id);
    for (auto& x : e.embedding) x = static_cast<float>(x / n);
  }
  idx.records_ = std::move(entries);
  return idx;
}

// Exact ranking by cosine; equal scores keep insertion order.
inline QueryResult query_topk(const RetrievalIndex& index, const std::vector<float>& q, std::size_t k) {
  if (q.size() != index.dim())
    throw DataError("query: dim " + std::to_string(q.size()) + " does not match index dim " +
                    std::to_string(index.dim()));
  if (k < 1 || k > index.size())
    throw DataError("query: K=" + std::to_string(k) + " outside [1, " + std::to_string(index.size()) + "]");
  const double qn = detail::norm(q);
  if (!std::isfinite(qn)) throw NumericError("query: non-finite query vector");
  if (!(qn > 0)) throw DataError("query: zero query vector");
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& e = index.records()[i].embedding;
    double dot = 0;
    for (std::size_t j = 0; j < q.size(); ++j) dot += double(e[j]) * q[j];
    scored.push_back({dot / qn, i});
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  QueryResult out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({index.records()[scored[i].second].id, scored[i].first});
  return out;
}

// Fraction of queries whose true id is within the first k hits.
inline RecallReport recall_at_k(const std::vector<std::pair<std::string, QueryResult>>& results, std::size_t k) {
  if (k < 1) throw DataError("recall: K must be >= 1");
  RecallReport r{k, 0.0, results.size()};
  if (results.empty()) return r;
  std::size_t hits = 0;
  for (const auto& [truth, res] : results) {
    if (res.size() < k)
      throw DataError("recall: K=" + std::to_string(k) + " exceeds result length " + std::to_string(res.size()));
    for (std::size_t i = 0; i < k; ++i)
      if (res[i].id == truth) {
        ++hits;
        break;
      }
  }
  r.recall = static_cast<double>(hits) / static_cast<double>(results.size());
  return r;
}

inline std::vector<unsigned char> encode_index(const RetrievalIndex& index) {
  io::ByteWriter w;
  w.magic("FBIX");
  w.put<std::uint32_t>(kIndexVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.dim()));
  w.put<std::uint64_t>(index.size());
  for (const auto& r : index.records()) {
    w.put_string(r.id);
    w.put_array(r.embedding.data(), r.embedding.size());
  }
  w.seal();
  return w.bytes();
}

inline RetrievalIndex decode_index(const std::vector<unsigned char>& bytes, const std::string& what = "FBIX") {
  io::ByteReader r(bytes, what);
  r.verify_seal();
  r.expect_magic("FBIX");
  const auto version = r.get<std::uint32_t>();
  if (version != kIndexVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
  const auto dim = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (!dim || !count) throw DataError(what + ": empty index");
  RetrievalIndex idx;
  idx.dim_ = dim;
  std::unordered_set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    Record rec{r.get_string(), std::vector<float>(dim)};
    r.get_array(rec.embedding.data(), dim);
    if (!seen.insert(rec.id).second) throw DataError(what + ": duplicate id " + rec.id);
    const double n = detail::norm(rec.embedding);
    if (!std::isfinite(n)) throw NumericError(what + ": non-finite embedding for " + rec.id);
    if (std::abs(n - 1.0) > 1e-5) throw DataError(what + ": embedding for " + rec.id + " is not unit-norm");
    idx.records_.push_back(std::move(rec));
  }
  r.expect_end();
  return idx;
}

inline void save_index(const std::filesystem::path& p, const RetrievalIndex& index) {
  io::write_file(p, encode_index(index));
}

inline RetrievalIndex load_index(const std::filesystem::path& p) {
  return decode_index(io::read_file(p), p.string());
}

}  // namespace fusionbert::retrieval
