#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fusionbert/oracle/brute_force.hpp"
#include "fusionbert/retrieval.hpp"

using namespace fusionbert;
using namespace fusionbert::retrieval;

namespace {

std::vector<Record> random_records(Rng& rng, std::size_t n, std::size_t d, bool ties = false) {
  std::vector<Record> recs;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> e(d);
    for (auto& x : e) x = ties ? static_cast<float>(rng.index(3)) - 1.0f : static_cast<float>(rng.normal());
    e[0] += 0.25f;
    recs.push_back({"id" + std::to_string(i), e});
  }
  return recs;
}

std::vector<float> random_query(Rng& rng, std::size_t d) {
  std::vector<float> q(d);
  for (auto& x : q) x = static_cast<float>(rng.uniform(-1, 1));
  q[0] += 0.01f;
  return q;
}

}  // namespace

TEST(Retrieval, TwoDimensionalExample) {
  const auto idx = build_index({{"a", {1, 0}}, {"b", {0, 1}}, {"c", {1, 1}}});
  const auto res = query_topk(idx, {1, 0.1f}, 3);
  ASSERT_EQ(res.size(), 3u);
  EXPECT_EQ(res[0].id, "a");
  EXPECT_EQ(res[1].id, "c");
  EXPECT_EQ(res[2].id, "b");
  EXPECT_NEAR(res[0].score, 1 / std::sqrt(1.01), 1e-6);
  EXPECT_NEAR(res[1].score, 1.1 / std::sqrt(2 * 1.01), 1e-6);
}

TEST(Retrieval, IndexStoresUnitVectors) {
  const auto idx = build_index({{"a", {3, 4}}, {"b", {0, -2}}});
  EXPECT_FLOAT_EQ(idx.records()[0].embedding[0], 0.6f);
  EXPECT_FLOAT_EQ(idx.records()[0].embedding[1], 0.8f);
  EXPECT_FLOAT_EQ(idx.records()[1].embedding[1], -1.0f);
}

TEST(Retrieval, TiesBreakByInsertionOrder) {
  const auto idx = build_index({{"z", {1, 0}}, {"y", {2, 0}}, {"x", {0, 1}}});
  const auto res = query_topk(idx, {1, 0}, 2);
  EXPECT_EQ(res[0].id, "z");
  EXPECT_EQ(res[1].id, "y");
}

TEST(Retrieval, MatchesFullSortOracle) {
  Rng rng(41);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 1 + rng.index(1000), d = 1 + rng.index(16);
    const auto idx = build_index(random_records(rng, n, d, trial % 2 == 0));
    std::vector<std::vector<float>> stored;
    for (const auto& r : idx.records()) stored.push_back(r.embedding);
    const auto q = random_query(rng, d);
    const std::size_t k = 1 + rng.index(std::min<std::size_t>(n, 20));
    const auto got = query_topk(idx, q, k);
    const auto want = oracle::topk_bruteforce(stored, q, k);
    ASSERT_EQ(got.size(), k);
    for (std::size_t i = 0; i < k; ++i) ASSERT_EQ(got[i].id, idx.records()[want[i]].id) << "trial " << trial;
    for (std::size_t i = 1; i < k; ++i) ASSERT_GE(got[i - 1].score, got[i].score);
  }
}

TEST(Retrieval, QueryScaleInvariant) {
  Rng rng(42);
  const auto idx = build_index(random_records(rng, 50, 8));
  auto q = random_query(rng, 8);
  const auto base = query_topk(idx, q, 10);
  for (float s : {0.001f, 3.0f, 1000.0f}) {
    auto qs = q;
    for (auto& x : qs) x *= s;
    const auto res = query_topk(idx, qs, 10);
    for (std::size_t i = 0; i < 10; ++i) {
      EXPECT_EQ(res[i].id, base[i].id);
      EXPECT_NEAR(res[i].score, base[i].score, 1e-6);
    }
  }
}

TEST(Retrieval, SelfQueryRanksFirst) {
  Rng rng(43);
  const auto recs = random_records(rng, 100, 16);
  const auto idx = build_index(recs);
  for (const auto& r : recs) {
    const auto res = query_topk(idx, r.embedding, 1);
    EXPECT_EQ(res[0].id, r.id);
    EXPECT_NEAR(res[0].score, 1.0, 1e-6);
  }
}

TEST(Retrieval, BuildAndQueryErrors) {
  EXPECT_THROW(build_index({}), DataError);
  EXPECT_THROW(build_index({{"a", {1, 0}}, {"a", {0, 1}}}), DataError);
  EXPECT_THROW(build_index({{"a", {1, 0}}, {"b", {0, 1, 0}}}), DataError);
  EXPECT_THROW(build_index({{"a", {0, 0}}}), DataError);
  EXPECT_THROW(build_index({{"a", {NAN, 1}}}), NumericError);
  const auto idx = build_index({{"a", {1, 0}}, {"b", {0, 1}}});
  EXPECT_THROW(query_topk(idx, {1, 0}, 0), DataError);
  EXPECT_THROW(query_topk(idx, {1, 0}, 3), DataError);
  EXPECT_THROW(query_topk(idx, {1, 0, 0}, 1), DataError);
  EXPECT_THROW(query_topk(idx, {0, 0}, 1), DataError);
  EXPECT_THROW(query_topk(idx, {INFINITY, 0}, 1), NumericError);
}

TEST(Recall, WorkedExample) {
  std::vector<std::pair<std::string, QueryResult>> rs{
      {"a", {{"a", 0.9}, {"b", 0.5}, {"c", 0.1}}},
      {"b", {{"a", 0.9}, {"b", 0.5}, {"c", 0.1}}},
      {"c", {{"a", 0.9}, {"b", 0.5}, {"c", 0.1}}},
      {"d", {{"a", 0.9}, {"b", 0.5}, {"c", 0.1}}},
  };
  EXPECT_DOUBLE_EQ(recall_at_k(rs, 1).recall, 0.25);
  EXPECT_DOUBLE_EQ(recall_at_k(rs, 2).recall, 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k(rs, 3).recall, 0.75);
  EXPECT_EQ(recall_at_k(rs, 3).queries, 4u);
  EXPECT_THROW(recall_at_k(rs, 0), DataError);
  EXPECT_THROW(recall_at_k(rs, 4), DataError);
  EXPECT_DOUBLE_EQ(recall_at_k({}, 1).recall, 0.0);
}

TEST(Recall, MonotoneInK) {
  Rng rng(44);
  const auto recs = random_records(rng, 40, 6);
  const auto idx = build_index(recs);
  std::vector<std::pair<std::string, QueryResult>> rs;
  for (const auto& r : recs) {
    auto q = r.embedding;
    for (auto& x : q) x += static_cast<float>(rng.normal() * 0.8);
    rs.push_back({r.id, query_topk(idx, q, 40)});
  }
  double prev = 0;
  for (std::size_t k = 1; k <= 40; ++k) {
    const double r = recall_at_k(rs, k).recall;
    EXPECT_GE(r, prev);
    prev = r;
  }
  EXPECT_DOUBLE_EQ(prev, 1.0);
}

TEST(IndexFile, RoundTripIsExact) {
  Rng rng(45);
  const auto idx = build_index(random_records(rng, 37, 9));
  const auto bytes = encode_index(idx);
  const auto back = decode_index(bytes);
  ASSERT_EQ(back.size(), idx.size());
  EXPECT_EQ(back.dim(), idx.dim());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    EXPECT_EQ(back.records()[i].id, idx.records()[i].id);
    EXPECT_EQ(back.records()[i].embedding, idx.records()[i].embedding);
  }
  EXPECT_EQ(encode_index(back), bytes);

  const auto path = std::filesystem::temp_directory_path() / "fusionbert_test_index.fbix";
  save_index(path, idx);
  EXPECT_EQ(encode_index(load_index(path)), bytes);
  std::filesystem::remove(path);
}

TEST(IndexFile, RejectsCorruption) {
  const auto bytes = encode_index(build_index({{"a", {1, 0}}, {"b", {0, 1}}}));
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x40;
    EXPECT_THROW(decode_index(bad), Error) << "byte " << i;
  }
  for (std::size_t n : {0u, 3u, 10u}) {
    std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(decode_index(cut), Error);
  }
  auto cut = bytes;
  cut.pop_back();
  EXPECT_THROW(decode_index(cut), Error);
  EXPECT_THROW(load_index("/nonexistent/dir/index.fbix"), Error);
}
