#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fusionbert/adam.hpp"
#include "fusionbert/checkpoint.hpp"
#include "fusionbert/nn.hpp"
#include "fusionbert/oracle/gradcheck.hpp"

using namespace fusionbert;
using ad::Tape;
using ad::Var;

namespace {

Tensor<double> T1(std::initializer_list<double> v) { return Tensor<double>::vector(v); }

void expect_near_all(const Tensor<double>& a, std::vector<double> b, double tol = 1e-12) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace

TEST(Linear, IdentityAndHandProduct) {
  ParamStore<double> store(1);
  auto lin = nn::Linear<double>::create(store, "l", 2, 2, false);
  lin.weight->value = Tensor<double>::matrix(2, 2, {1, 0, 0, 1});
  Tape<double> t;
  expect_near_all(t.value(lin(t, t.constant(T1({1, 0})))), {1, 0});

  lin.weight->value = Tensor<double>::matrix(2, 2, {1, 1, 1, -1});
  Tape<double> t2;
  expect_near_all(t2.value(lin(t2, t2.constant(T1({1, 2})))), {3, -1});
}

TEST(Linear, ZeroInputPassesBias) {
  ParamStore<double> store(3);
  auto lin = nn::Linear<double>::create(store, "l", 2, 2);
  lin.bias->value = T1({0.5, 0.5});
  Tape<double> t;
  expect_near_all(t.value(lin(t, t.constant(T1({0, 0})))), {0.5, 0.5});
}

TEST(Linear, DimensionMismatchThrows) {
  ParamStore<double> store(3);
  auto lin = nn::Linear<double>::create(store, "l", 3, 2);
  Tape<double> t;
  EXPECT_THROW(lin(t, t.constant(T1({1, 2}))), DataError);
}

TEST(Linear, NonFiniteOutputIsNumericError) {
  ParamStore<double> store(3);
  auto lin = nn::Linear<double>::create(store, "l", 2, 2);
  lin.weight->value[0] = std::numeric_limits<double>::infinity();
  Tape<double> t;
  EXPECT_THROW(lin(t, t.constant(T1({1, -1}))), NumericError);
}

TEST(LinearInit, UniformWithinFanInBound) {
  ParamStore<double> store(11);
  auto lin = nn::Linear<double>::create(store, "l", 16, 8);
  for (auto v : lin.weight->value.data()) EXPECT_LE(std::abs(v), 0.25);
  for (auto v : lin.bias->value.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, HandExamples) {
  ParamStore<double> store;
  auto ln = nn::LayerNorm<double>::create(store, "ln", 3);
  Tape<double> t;
  expect_near_all(t.value(ln(t, t.constant(T1({1, 1, 1})))), {0, 0, 0});

  auto ln2 = nn::LayerNorm<double>::create(store, "ln2", 2);
  ln2.eps = 0;
  expect_near_all(t.value(ln2(t, t.constant(T1({1, -1})))), {1, -1});

  ln2.gamma->value = T1({2, 2});
  ln2.beta->value = T1({1, 1});
  Tape<double> t2;
  expect_near_all(t2.value(ln2(t2, t2.constant(T1({0, 2})))), {-1, 3});
}

TEST(LayerNorm, RejectsWidthOneAndZeroVarianceWithoutEps) {
  Tape<double> t;
  Var g = t.constant(T1({1})), b = t.constant(T1({0}));
  EXPECT_THROW(ad::layer_norm(t, t.constant(T1({3})), g, b, 0.0), DataError);
  Var g2 = t.constant(T1({1, 1})), b2 = t.constant(T1({0, 0}));
  EXPECT_THROW(ad::layer_norm(t, t.constant(T1({2, 2})), g2, b2, 0.0), NumericError);
}

TEST(Softmax, Examples) {
  expect_near_all(nn::softmax(T1({0, 0, 0})), {1.0 / 3, 1.0 / 3, 1.0 / 3});
  expect_near_all(nn::softmax(T1({1, 2, 3})), {0.09003057, 0.24472847, 0.66524096}, 5e-9);
  expect_near_all(nn::softmax(T1({-4.2})), {1.0});
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(12);
    std::vector<double> v(n), w(n);
    const double c = rng.uniform(-50, 50);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = rng.uniform(-20, 20);
      w[i] = v[i] + c;
    }
    auto a = nn::softmax(Tensor<double>::vector(v));
    auto b = nn::softmax(Tensor<double>::vector(w));
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_GT(a[i], 0.0);
      EXPECT_NEAR(a[i], b[i], 1e-6);
      s += a[i];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Attention, SingleKeyReturnsProjectedValue) {
  ParamStore<double> store(5);
  auto mha = nn::MultiHeadAttention<double>::create(store, "a", {4, 2});
  Tensor<double> kv({1, 4}, {0.3, -0.2, 0.9, 0.1});
  // Oracle: out-projection of the value projection of the single row.
  Tape<double> ref;
  auto expected = ref.value(mha.out(ref, mha.v(ref, ref.constant(kv))));
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<double> q({3, 4});
    for (auto& x : q.data()) x = rng.uniform(-2, 2);
    Tape<double> t;
    const auto& y = t.value(mha(t, t.constant(q), t.constant(kv)));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y.at(i, j), expected[j], 1e-12);
  }
}

TEST(Attention, IdenticalKeyRowsGiveIdenticalOutputsForEqualQueries) {
  ParamStore<double> store(6);
  auto mha = nn::MultiHeadAttention<double>::create(store, "a", {4, 2});
  Tensor<double> kv({3, 4}, {1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4});
  Tensor<double> q({2, 4}, {0.5, 0.1, -1, 2, 0.5, 0.1, -1, 2});
  Tape<double> t;
  const auto& y = t.value(mha(t, t.constant(q), t.constant(kv)));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y.at(0, j), y.at(1, j));
}

TEST(Attention, SingleHeadIdentityProjectionsMatchScalarOracle) {
  ParamStore<double> store(7);
  auto mha = nn::MultiHeadAttention<double>::create(store, "a", {2, 1});
  for (auto* l : {&mha.q, &mha.k, &mha.v, &mha.out}) {
    l->weight->value = Tensor<double>::matrix(2, 2, {1, 0, 0, 1});
    if (l->bias) l->bias->value.fill(0);
  }
  const double Q[2][2] = {{1, 0}, {0.5, -1}};
  const double X[2][2] = {{2, 1}, {-1, 3}};
  Tape<double> t;
  const auto& y = t.value(mha(t, t.constant(Tensor<double>::matrix(2, 2, {1, 0, 0.5, -1})),
                              t.constant(Tensor<double>::matrix(2, 2, {2, 1, -1, 3}))));
  for (int i = 0; i < 2; ++i) {
    double s[2];
    for (int j = 0; j < 2; ++j) s[j] = (Q[i][0] * X[j][0] + Q[i][1] * X[j][1]) / std::sqrt(2.0);
    const double e0 = std::exp(s[0]), e1 = std::exp(s[1]);
    const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(y.at(i, c), w0 * X[0][c] + w1 * X[1][c], 1e-12);
  }
}

TEST(Attention, RejectsBadConfigAndWidth) {
  ParamStore<double> store;
  EXPECT_THROW(nn::MultiHeadAttention<double>::create(store, "a", {6, 4}), DataError);
  auto mha = nn::MultiHeadAttention<double>::create(store, "b", {4, 2});
  Tape<double> t;
  EXPECT_THROW(mha(t, t.constant(Tensor<double>({1, 3})), t.constant(Tensor<double>({2, 4}))),
               DataError);
}

TEST(FeedForward, ZeroWeightsGiveBias) {
  ParamStore<double> store(2);
  auto ff = nn::FeedForward<double>::create(store, "f", 3, 2);
  ff.up.weight->value.fill(0);
  ff.down.weight->value.fill(0);
  ff.down.bias->value = T1({0.1, -0.2, 0.3});
  Tape<double> t;
  expect_near_all(t.value(ff(t, t.constant(T1({5, 6, 7})))), {0.1, -0.2, 0.3});
}

TEST(FeedForward, ScalarGeluOracle) {
  ParamStore<double> store(2);
  auto ff = nn::FeedForward<double>::create(store, "f", 1, 1);
  ff.up.weight->value.fill(1);
  ff.down.weight->value.fill(1);
  Tape<double> t;
  // GELU(1) = Phi(1) = 0.5 * (1 + erf(1/sqrt(2)))
  expect_near_all(t.value(ff(t, t.constant(T1({1.0})))), {0.8413447460685429});
  Tape<double> t2;
  expect_near_all(t2.value(ff(t2, t2.constant(T1({-2.0})))), {-2.0 * 0.022750131948179195});
}

TEST(FeedForward, IdentityActivationIsLinear) {
  ParamStore<double> store(4);
  auto ff = nn::FeedForward<double>::create(store, "f", 3, 3, nn::Activation::Identity);
  Tape<double> t;
  const auto y1 = t.value(ff(t, t.constant(T1({0.2, -0.7, 1.1}))));
  const auto y2 = t.value(ff(t, t.constant(T1({0.4, -1.4, 2.2}))));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y2[i], 2 * y1[i], 1e-12);
}

TEST(Backward, SumOfLinearGivesColumnBroadcastOfInput) {
  ParamStore<double> store(8);
  auto lin = nn::Linear<double>::create(store, "l", 3, 2, false);
  auto& unused = store.add_uniform("unused", 2, 2);
  Tape<double> t;
  t.param(unused);
  const Tensor<double> x({2, 3}, {1, 2, 3, -1, 0.5, 4});
  t.backward(ad::sum(t, lin(t, t.constant(x))));
  // dL/dW[p, j] = sum_i x[i, p]
  const double colsum[3] = {0, 2.5, 7};
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(lin.weight->grad.at(p, j), colsum[p]);
  for (auto g : unused.grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, AccumulatesAcrossCallsAndRequiresForward) {
  ParamStore<double> store(8);
  auto lin = nn::Linear<double>::create(store, "l", 2, 1, false);
  Tape<double> t;
  Var loss = ad::sum(t, lin(t, t.constant(T1({1, 2}))));
  t.backward(loss);
  t.backward(loss);
  EXPECT_DOUBLE_EQ(lin.weight->grad[0], 2.0);
  EXPECT_DOUBLE_EQ(lin.weight->grad[1], 4.0);

  Tape<double> empty;
  EXPECT_THROW(empty.backward(Var{}), DataError);
}

TEST(Backward, TransformerBlockMatchesFiniteDifferences) {
  ParamStore<double> store(21);
  auto ln1 = nn::LayerNorm<double>::create(store, "ln1", 8);
  auto mha = nn::MultiHeadAttention<double>::create(store, "attn", {8, 2});
  auto ln2 = nn::LayerNorm<double>::create(store, "ln2", 8);
  auto ff = nn::FeedForward<double>::create(store, "ff", 8, 3);
  for (auto& p : store)
    if (p.name.find("gamma") != std::string::npos || p.name.find(".b") != std::string::npos)
      for (auto& v : p.value.data()) v += store.rng().uniform(-0.3, 0.3);
  Tensor<double> x({5, 8});
  Rng rng(3);
  for (auto& v : x.data()) v = rng.uniform(-1, 1);
  Tensor<double> target({5, 8});
  for (auto& v : target.data()) v = rng.uniform(-1, 1);

  auto loss_fn = [&](Tape<double>& t) {
    Var h = t.constant(x);
    Var a = ln1(t, h);
    h = ad::add(t, h, mha(t, a, a));
    h = ad::add(t, h, ff(t, ln2(t, h)));
    Var n = ad::l2_normalize_rows(t, h);
    Var s = ad::softmax_rows(t, ad::matmul_bt(t, n, t.constant(target)));
    Var cat = ad::concat_rows(t, {ad::mean_rows(t, s), ad::group_max(t, s, 5)});
    return ad::sum(t, ad::exp(t, ad::scale(t, ad::transpose(t, cat), 0.7)));
  };
  auto res = oracle::check_gradients(store, loss_fn, "", 4, 4);
  EXPECT_EQ(res.params_checked, store.size());
  EXPECT_LE(res.worst_rel_err, 1e-4) << res.worst_param << "[" << res.worst_index
                                      << "] analytic " << res.analytic << " numeric " << res.numeric;
}

TEST(Backward, CrossEntropyAndScaleByMatchFiniteDifferences) {
  ParamStore<double> store(5);
  auto& a = store.add_uniform("a", 4, 3);
  auto& b = store.add_uniform("b", 4, 3);
  auto& s = store.add("s", T1({0.4}));
  auto loss_fn = [&](Tape<double>& t) {
    Var na = ad::l2_normalize_rows(t, t.param(a));
    Var nb = ad::l2_normalize_rows(t, t.param(b));
    Var logits = ad::scale_by(t, ad::matmul_bt(t, na, nb), ad::exp(t, t.param(s)));
    Var l1 = ad::cross_entropy_diag(t, logits);
    Var l2 = ad::cross_entropy_diag(t, ad::transpose(t, logits));
    Var sel = ad::sum(t, ad::select_rows(t, ad::slice_cols(t, na, 1, 2), {3, 0, 3}));
    Var cat = ad::concat_cols(t, {l1, l2, sel});
    return ad::weighted_sum(t, {l1, l2, ad::sum(t, cat)}, {0.5, 0.25, 0.1});
  };
  auto res = oracle::check_gradients(store, loss_fn, "", 12, 0);
  EXPECT_LE(res.worst_rel_err, 1e-4) << res.worst_param;
}

TEST(Adam, ZeroGradLeavesParameterUnchanged) {
  ParamStore<double> store;
  auto& p = store.add("p", T1({1.5, -2.0}));
  AdamState<double> st;
  adam_step(store, st);
  EXPECT_EQ(p.value[0], 1.5);
  EXPECT_EQ(p.value[1], -2.0);
}

TEST(Adam, FirstStepHandOracle) {
  ParamStore<double> store;
  auto& p = store.add("p", T1({1.0}));
  p.grad[0] = 1.0;
  AdamState<double> st;
  st.lr = 0.01;
  adam_step(store, st);
  // m_hat = 1, v_hat = 1 -> theta -= lr / (1 + eps)
  EXPECT_DOUBLE_EQ(p.value[0], 1.0 - 0.01 / (1.0 + 1e-8));
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FrozenParameterUntouched) {
  ParamStore<double> store;
  auto& p = store.add("p", T1({3.0}), false);
  p.grad[0] = 10.0;
  AdamState<double> st;
  adam_step(store, st);
  EXPECT_EQ(p.value[0], 3.0);
  EXPECT_TRUE(st.moments.empty());
}

TEST(Adam, MalformedGradientRejected) {
  ParamStore<double> store;
  auto& p = store.add("p", T1({3.0, 1.0}));
  p.grad = Tensor<double>({1});
  AdamState<double> st;
  EXPECT_THROW(adam_step(store, st), DataError);
}

namespace {

std::uint64_t train_tiny(std::uint64_t seed, int steps) {
  ParamStore<float> store(seed);
  auto lin = nn::Linear<float>::create(store, "l", 4, 3);
  auto ln = nn::LayerNorm<float>::create(store, "ln", 3);
  AdamState<float> st;
  Rng rng(seed + 1);
  for (int k = 0; k < steps; ++k) {
    Tensor<float> x({2, 4});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
    store.zero_grad();
    Tape<float> t;
    t.backward(ad::sum(t, ad::gelu(t, ln(t, lin(t, t.constant(x))))));
    adam_step(store, st);
  }
  return store.checksum();
}

}  // namespace

TEST(ParamStore, SameSeedSameChecksumAfterSteps) {
  EXPECT_EQ(train_tiny(5, 10), train_tiny(5, 10));
  EXPECT_NE(train_tiny(5, 10), train_tiny(6, 10));
  ParamStore<float> s;
  s.add("x", Tensor<float>({1}));
  EXPECT_THROW(s.add("x", Tensor<float>({1})), DataError);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  ParamStore<float> store(3);
  nn::Linear<float>::create(store, "enc.l0", 5, 4);
  nn::LayerNorm<float>::create(store, "enc.ln", 4);
  auto bytes = encode_checkpoint(store);
  auto loaded = decode_checkpoint<float>(bytes);
  EXPECT_EQ(encode_checkpoint(loaded), bytes);
  EXPECT_EQ(loaded.checksum(), store.checksum());
  ASSERT_EQ(loaded.size(), store.size());
}

TEST(Checkpoint, LayoutAndCorruptionDetection) {
  ParamStore<double> store;
  store.add("w", Tensor<double>({2}, {1.0, 2.0}));
  auto bytes = encode_checkpoint(store);
  // magic + version + count + (len + "w") + dtype + rank + dim + 2 f64 + checksum
  EXPECT_EQ(bytes.size(), 4u + 4 + 8 + (4 + 1) + 1 + 1 + 8 + 16 + 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FBCK");
  EXPECT_EQ(bytes[4 + 4 + 8 + 5], 1);  // dtype f64

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint<double>(bad), DataError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint<double>(truncated), DataError);
  auto flipped = bytes;
  flipped[30] ^= 0x40;
  EXPECT_THROW(decode_checkpoint<double>(flipped), DataError);
}
