#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "catdet/attention/attention.hpp"
#include "catdet/common/errors.hpp"
#include "catdet/numerics/ops.hpp"
#include "gradcheck.hpp"

using namespace catdet;
using namespace catdet::attn;
using num::Tensor;
using catdet::testing::grad_check;
using catdet::testing::probe;
using catdet::testing::random_tensor;

namespace {

Tensor eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor::from({n, n}, std::move(v));
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  num::NoGradGuard g;
  return num::gather_rows(x, perm);
}

// Element-by-element softmax(QK^T/sqrt(d))V with no shared code.
std::vector<double> naive_sdpa(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1), dv = v.dim(1);
  std::vector<double> out(nq * dv, 0.0);
  for (std::size_t i = 0; i < nq; ++i) {
    std::vector<double> s(nk);
    for (std::size_t j = 0; j < nk; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q.at({i, c}) * k.at({j, c});
      s[j] = dot / std::sqrt(double(d));
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (auto& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < nk; ++j) {
      for (std::size_t c = 0; c < dv; ++c) out[i * dv + c] += s[j] / z * v.at({j, c});
    }
  }
  return out;
}

}  // namespace

TEST_CASE("single key returns its value") {
  std::mt19937_64 rng(3);
  auto q = random_tensor(rng, {4, 3}, -2, 2, false);
  auto k = Tensor::matrix({{0.3, -1.0, 2.0}});
  auto v = Tensor::matrix({{5.0, -6.0}});
  auto r = scaled_dot_product_attention(q, k, v);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r.output.at({i, 0}) == 5.0);
    CHECK(r.output.at({i, 1}) == -6.0);
  }
}

TEST_CASE("identical keys average the values") {
  std::mt19937_64 rng(4);
  auto q = random_tensor(rng, {2, 3}, -1, 1, false);
  auto k = Tensor::matrix({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}});
  auto v = random_tensor(rng, {3, 2}, -1, 1, false);
  auto r = scaled_dot_product_attention(q, k, v);
  for (std::size_t c = 0; c < 2; ++c) {
    const double m = (v.at({0, c}) + v.at({1, c}) + v.at({2, c})) / 3.0;
    CHECK(std::abs(r.output.at({0, c}) - m) <= 1e-12);
    CHECK(std::abs(r.output.at({1, c}) - m) <= 1e-12);
  }
}

TEST_CASE("two-key hand evaluation") {
  auto q = Tensor::matrix({{1, 0}});
  auto kv = Tensor::matrix({{1, 0}, {0, 1}});
  auto r = scaled_dot_product_attention(q, kv, kv);
  const double e = std::exp(1.0 / std::sqrt(2.0));
  const double sigma = e / (e + 1.0);
  CHECK(std::abs(r.weights.at({0, 0}) - sigma) <= 1e-12);
  CHECK(std::abs(r.weights.at({0, 1}) - (1 - sigma)) <= 1e-12);
  CHECK(std::abs(r.output.at({0, 0}) - sigma) <= 1e-12);
  CHECK(std::abs(r.output.at({0, 1}) - (1 - sigma)) <= 1e-12);
}

TEST_CASE("sdpa matches naive reference and weights are row-stochastic") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    const std::size_t nq = dim(rng), nk = dim(rng), d = dim(rng), dv = dim(rng);
    auto q = random_tensor(rng, {nq, d}, -3, 3, false);
    auto k = random_tensor(rng, {nk, d}, -3, 3, false);
    auto v = random_tensor(rng, {nk, dv}, -3, 3, false);
    auto r = scaled_dot_product_attention(q, k, v);
    auto ref = naive_sdpa(q, k, v);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(r.output.data()[i] - ref[i]) <= 1e-10);
    for (std::size_t i = 0; i < nq; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < nk; ++j) s += r.weights.at({i, j});
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("sdpa contract errors") {
  auto q = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(scaled_dot_product_attention(q, Tensor{}, Tensor{}), ContractError);
  CHECK_THROWS_AS(scaled_dot_product_attention(q, Tensor::zeros({2, 4}), Tensor::zeros({2, 4})),
                  DimensionError);
  CHECK_THROWS_AS(scaled_dot_product_attention(q, Tensor::zeros({2, 3}), Tensor::zeros({3, 4})),
                  DimensionError);
}

TEST_CASE("single identity head reduces to sdpa") {
  num::Initializer init(1);
  auto p = MultiHeadParams::init(init, 4, 1);
  p.w_q[0] = eye(4);
  p.w_k[0] = eye(4);
  p.w_v[0] = eye(4);
  p.w_o = eye(4);
  std::mt19937_64 rng(6);
  auto q = random_tensor(rng, {3, 4}, -1, 1, false);
  auto k = random_tensor(rng, {5, 4}, -1, 1, false);
  auto v = random_tensor(rng, {5, 4}, -1, 1, false);
  auto a = multi_head_attention(q, k, v, p);
  auto b = scaled_dot_product_attention(q, k, v).output;
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) <= 1e-10);
}

TEST_CASE("head dimension and validation") {
  num::Initializer init(2);
  auto p = MultiHeadParams::init(init, 256, 8);
  CHECK(p.d_head() == 32);
  CHECK(p.w_q.size() == 8);
  CHECK(p.w_q[0].shape() == num::Shape{256, 32});
  CHECK(p.w_o.shape() == num::Shape{256, 256});
  CHECK_FALSE(p.has_bias());
  CHECK_THROWS_AS(MultiHeadParams::init(init, 10, 3), ConfigError);
  auto small = MultiHeadParams::init(init, 8, 2);
  CHECK_THROWS_AS(multi_head_attention(Tensor::zeros({2, 6}), Tensor::zeros({2, 8}),
                                       Tensor::zeros({2, 8}), small),
                  DimensionError);
}

TEST_CASE("mha is invariant to joint key/value permutation") {
  num::Initializer init(3);
  auto p = MultiHeadParams::init(init, 8, 2);
  std::mt19937_64 rng(7);
  auto q = random_tensor(rng, {4, 8}, -1, 1, false);
  auto k = random_tensor(rng, {6, 8}, -1, 1, false);
  auto v = random_tensor(rng, {6, 8}, -1, 1, false);
  auto base = multi_head_attention(q, k, v, p);
  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 20; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    auto out = multi_head_attention(q, permute_rows(k, perm), permute_rows(v, perm), p);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out.data()[i] - base.data()[i]) <= 1e-9);
  }
}

TEST_CASE("mha is equivariant to query permutation") {
  num::Initializer init(4);
  auto p = MultiHeadParams::init(init, 8, 4);
  std::mt19937_64 rng(8);
  auto q = random_tensor(rng, {5, 8}, -1, 1, false);
  auto kv = random_tensor(rng, {3, 8}, -1, 1, false);
  auto base = multi_head_attention(q, kv, kv, p);
  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  auto out = multi_head_attention(permute_rows(q, perm), kv, kv, p);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(out.at({i, c}) - base.at({perm[i], c})) <= 1e-12);
  }
}

TEST_CASE("projection biases are optional") {
  num::Initializer init(5);
  auto p = MultiHeadParams::init(init, 8, 2, true);
  CHECK(p.has_bias());
  num::ParamRegistry reg;
  p.register_into(reg, "mha.");
  CHECK(reg.count_params() == 4 * 64 + 3 * 8 + 8);
  auto plain = MultiHeadParams::init(init, 8, 2);
  num::ParamRegistry reg2;
  plain.register_into(reg2, "mha.");
  CHECK(reg2.count_params() == 4 * 64);
}

TEST_CASE("ffn identity, dead hidden layer and composition") {
  num::Initializer init(6);
  // W1 = [I | 0], W2 = [I ; 0] with zero biases passes nonnegative x through.
  auto p = FfnParams::init(init, 3, 6);
  std::vector<double> w1(18, 0.0), w2(18, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    w1[i * 6 + i] = 1.0;
    w2[i * 3 + i] = 1.0;
  }
  p.w1 = Tensor::from({3, 6}, w1);
  p.w2 = Tensor::from({6, 3}, w2);
  p.b1 = Tensor::zeros({6});
  p.b2 = Tensor::zeros({3});
  auto x = Tensor::matrix({{0.5, 0.0, 2.0}, {1.0, 3.0, 0.25}});
  auto y = ffn(x, p);
  for (std::size_t i = 0; i < 6; ++i) CHECK(y.data()[i] == x.data()[i]);

  p.b1 = Tensor::full({6}, -100.0);
  p.b2 = Tensor::vector({7.0, -1.0, 0.5});
  y = ffn(x, p);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(y.at({r, 0}) == 7.0);
    CHECK(y.at({r, 1}) == -1.0);
    CHECK(y.at({r, 2}) == 0.5);
  }

  std::mt19937_64 rng(9);
  auto q = FfnParams::init(init, 4, 16);
  auto xr = random_tensor(rng, {5, 4}, -1, 1, false);
  auto got = ffn(xr, q);
  for (std::size_t n = 0; n < 5; ++n) {
    for (std::size_t o = 0; o < 4; ++o) {
      double acc = q.b2.data()[o];
      for (std::size_t hdn = 0; hdn < 16; ++hdn) {
        double pre = q.b1.data()[hdn];
        for (std::size_t i = 0; i < 4; ++i) pre += xr.at({n, i}) * q.w1.at({i, hdn});
        acc += std::max(0.0, pre) * q.w2.at({hdn, o});
      }
      CHECK(std::abs(got.at({n, o}) - acc) <= 1e-12);
    }
  }
}

TEST_CASE("gradients of sdpa, mha and ffn match finite differences") {
  std::mt19937_64 rng(10);
  {
    auto q = random_tensor(rng, {3, 4});
    auto k = random_tensor(rng, {5, 4});
    auto v = random_tensor(rng, {5, 2});
    auto res = grad_check(
        [](const std::vector<Tensor>& in) {
          return probe(scaled_dot_product_attention(in[0], in[1], in[2]).output, 1);
        },
        {q, k, v});
    INFO(res.worst);
    CHECK(res.max_rel_err <= 1e-4);
  }
  {
    num::Initializer init(11);
    auto p = MultiHeadParams::init(init, 6, 3);
    auto q = random_tensor(rng, {4, 6});
    auto kv = random_tensor(rng, {3, 6});
    std::vector<Tensor> inputs{q, kv, p.w_q[1], p.w_k[0], p.w_v[2], p.w_o};
    for (auto& t : inputs) t.set_requires_grad(true);
    auto res = grad_check(
        [&](const std::vector<Tensor>& in) {
          auto pp = p;
          pp.w_q[1] = in[2];
          pp.w_k[0] = in[3];
          pp.w_v[2] = in[4];
          pp.w_o = in[5];
          return probe(multi_head_attention(in[0], in[1], in[1], pp), 2);
        },
        inputs);
    INFO(res.worst);
    CHECK(res.max_rel_err <= 1e-4);
  }
  {
    num::Initializer init(12);
    auto p = FfnParams::init(init, 4, 8);
    auto x = catdet::testing::random_away_from_zero(rng, {3, 4});
    std::vector<Tensor> inputs{x, p.w1, p.b1, p.w2, p.b2};
    for (auto& t : inputs) t.set_requires_grad(true);
    auto res = grad_check(
        [](const std::vector<Tensor>& in) {
          return probe(ffn(in[0], FfnParams{in[1], in[2], in[3], in[4]}), 3);
        },
        inputs);
    INFO(res.worst);
    CHECK(res.max_rel_err <= 1e-4);
  }
}
