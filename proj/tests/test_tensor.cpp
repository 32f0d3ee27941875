#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "dta/ops.hpp"
#include "dta/rng.hpp"
#include "dta/tensor.hpp"
#include "gradcheck.hpp"

using namespace dta;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0, bool grad = true) {
  Tensor t = Tensor::zeros(shape, grad);
  for (Eigen::Index i = 0; i < t.size(); ++i)
    t.values()[i] = uniform(rng, lo, hi);
  return t;
}

// Uniform values whose magnitude stays off the relu kink.
Tensor random_tensor_off_kink(Shape shape, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(shape, true);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    double v = uniform(rng, 0.05, 1.0);
    t.values()[i] = (rng() & 1) ? v : -v;
  }
  return t;
}

// Direct windowed-sum oracle for conv1d, independent of the im2col path.
std::vector<double> conv_oracle(const std::vector<double>& x, Eigen::Index l,
                                Eigen::Index c_in,
                                const std::vector<double>& k, Eigen::Index w,
                                Eigen::Index c_out,
                                const std::vector<double>& bias, bool same) {
  const Eigen::Index pad = same ? (w - 1) / 2 : 0;
  const Eigen::Index l_out = same ? l : l - w + 1;
  std::vector<double> y(l_out * c_out, 0.0);
  for (Eigen::Index o = 0; o < l_out; ++o)
    for (Eigen::Index co = 0; co < c_out; ++co) {
      double acc = bias[co];
      for (Eigen::Index ww = 0; ww < w; ++ww)
        for (Eigen::Index ci = 0; ci < c_in; ++ci) {
          const Eigen::Index src = o + ww - pad;
          if (src < 0 || src >= l) continue;
          acc += x[src * c_in + ci] * k[(ww * c_in + ci) * c_out + co];
        }
      y[o * c_out + co] = acc;
    }
  return y;
}

// Scatter-add oracle for the transposed convolution.
std::vector<double> deconv_oracle(const std::vector<double>& x, Eigen::Index l,
                                  Eigen::Index c_in,
                                  const std::vector<double>& k, Eigen::Index w,
                                  Eigen::Index c_out,
                                  const std::vector<double>& bias,
                                  Eigen::Index stride) {
  const Eigen::Index l_out = (l - 1) * stride + w;
  std::vector<double> y(l_out * c_out, 0.0);
  for (Eigen::Index o = 0; o < l_out; ++o)
    for (Eigen::Index co = 0; co < c_out; ++co) y[o * c_out + co] = bias[co];
  for (Eigen::Index i = 0; i < l; ++i)
    for (Eigen::Index ww = 0; ww < w; ++ww)
      for (Eigen::Index co = 0; co < c_out; ++co)
        for (Eigen::Index ci = 0; ci < c_in; ++ci)
          y[(i * stride + ww) * c_out + co] +=
              x[i * c_in + ci] * k[(ww * c_out + co) * c_in + ci];
  return y;
}

}  // namespace

TEST_CASE("tensor basics and invariants") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 6);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}).item(),
                  ContractError);
}

TEST_CASE("conv1d matches the windowed-sum oracle and spec cases") {
  // [1,2,3] * [1,1] valid -> [3,5]
  auto oracle = conv_oracle({1, 2, 3}, 3, 1, {1, 1}, 2, 1, {0}, false);
  CHECK(oracle == std::vector<double>{3, 5});
  Tensor x = Tensor::from({3, 1}, {1, 2, 3});
  Tensor k = Tensor::from({2, 1, 1}, {1, 1});
  Tensor b = Tensor::zeros({1});
  Tensor y = conv1d(x, k, b, Padding::kValid);
  REQUIRE(y.shape() == Shape{2, 1});
  CHECK(y.at(0) == 3);
  CHECK(y.at(1) == 5);

  // Zero kernels -> constant bias output.
  Tensor kz = Tensor::zeros({3, 2, 4});
  Tensor xb = Tensor::from({5, 2}, std::vector<double>(10, 1.5));
  Tensor bb = Tensor::from({4}, {1, -2, 3, 4.5});
  Tensor yb = conv1d(xb, kz, bb, Padding::kSame);
  for (Eigen::Index r = 0; r < yb.dim(0); ++r)
    for (Eigen::Index c = 0; c < yb.dim(1); ++c)
      CHECK(yb.at(r, c) == bb.at(c));

  // Width-1 identity kernel.
  Tensor x1 = Tensor::from({1, 1}, {5});
  Tensor k1 = Tensor::from({1, 1, 1}, {1});
  CHECK(conv1d(x1, k1, Tensor::zeros({1}), Padding::kValid).item() == 5);

  // Random cases against the oracle, both paddings.
  std::mt19937_64 rng(7);
  for (int it = 0; it < 50; ++it) {
    const Eigen::Index l = 1 + rng() % 8, ci = 1 + rng() % 4,
                       co = 1 + rng() % 4;
    const Eigen::Index w = 1 + rng() % l;
    std::vector<double> xv(l * ci), kv(w * ci * co), bv(co);
    for (auto& v : xv) v = uniform(rng, -1, 1);
    for (auto& v : kv) v = uniform(rng, -1, 1);
    for (auto& v : bv) v = uniform(rng, -1, 1);
    for (bool same : {false, true}) {
      Tensor yo = conv1d(Tensor::from({l, ci}, xv),
                         Tensor::from({w, ci, co}, kv), Tensor::from({co}, bv),
                         same ? Padding::kSame : Padding::kValid);
      auto ref = conv_oracle(xv, l, ci, kv, w, co, bv, same);
      REQUIRE(yo.size() == (Eigen::Index)ref.size());
      for (Eigen::Index i = 0; i < yo.size(); ++i)
        CHECK(yo.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }

  // Same padding puts the extra zero on the right for even widths:
  // W=2 pads nothing on the left, one zero on the right.
  Tensor xe = Tensor::from({3, 1}, {1, 2, 3});
  Tensor ke = Tensor::from({2, 1, 1}, {1, 1});
  Tensor ye = conv1d(xe, ke, Tensor::zeros({1}), Padding::kSame);
  CHECK(ye.at(0) == 3);  // 1+2
  CHECK(ye.at(1) == 5);  // 2+3
  CHECK(ye.at(2) == 3);  // 3+pad(0)

  CHECK_THROWS_AS(conv1d(Tensor::zeros({4, 3}), Tensor::zeros({2, 2, 5}),
                         Tensor::zeros({5}), Padding::kValid),
                  ShapeError);
  CHECK_THROWS_AS(conv1d(Tensor::zeros({2, 1}), Tensor::zeros({3, 1, 1}),
                         Tensor::zeros({1}), Padding::kValid),
                  ShapeError);
}

TEST_CASE("conv1d_transposed matches the scatter-add oracle and spec cases") {
  // Single position scatter: [1] * kernel [2,3] -> [2,3]
  Tensor y1 = conv1d_transposed(Tensor::from({1, 1}, {1}),
                                Tensor::from({2, 1, 1}, {2, 3}),
                                Tensor::zeros({1}), 1);
  REQUIRE(y1.shape() == Shape{2, 1});
  CHECK(y1.at(0) == 2);
  CHECK(y1.at(1) == 3);

  // Overlap adds: [1,1] * [1,1] -> [1,2,1]
  auto ref = deconv_oracle({1, 1}, 2, 1, {1, 1}, 2, 1, {0}, 1);
  CHECK(ref == std::vector<double>{1, 2, 1});
  Tensor y2 = conv1d_transposed(Tensor::from({2, 1}, {1, 1}),
                                Tensor::from({2, 1, 1}, {1, 1}),
                                Tensor::zeros({1}), 1);
  REQUIRE(y2.shape() == Shape{3, 1});
  CHECK(y2.at(0) == 1);
  CHECK(y2.at(1) == 2);
  CHECK(y2.at(2) == 1);

  // Zero input -> bias everywhere.
  Tensor y3 = conv1d_transposed(Tensor::zeros({3, 2}),
                                Tensor::constant({2, 4, 2}, 0.7),
                                Tensor::from({4}, {1, 2, 3, 4}), 2);
  REQUIRE(y3.shape() == Shape{6, 4});
  for (Eigen::Index r = 0; r < 6; ++r)
    for (Eigen::Index c = 0; c < 4; ++c) CHECK(y3.at(r, c) == c + 1);

  std::mt19937_64 rng(11);
  for (int it = 0; it < 50; ++it) {
    const Eigen::Index l = 1 + rng() % 6, ci = 1 + rng() % 3,
                       co = 1 + rng() % 3, w = 1 + rng() % 4,
                       stride = 1 + rng() % 3;
    std::vector<double> xv(l * ci), kv(w * co * ci), bv(co);
    for (auto& v : xv) v = uniform(rng, -1, 1);
    for (auto& v : kv) v = uniform(rng, -1, 1);
    for (auto& v : bv) v = uniform(rng, -1, 1);
    Tensor y = conv1d_transposed(Tensor::from({l, ci}, xv),
                                 Tensor::from({w, co, ci}, kv),
                                 Tensor::from({co}, bv), stride);
    auto want = deconv_oracle(xv, l, ci, kv, w, co, bv, stride);
    REQUIRE(y.size() == (Eigen::Index)want.size());
    for (Eigen::Index i = 0; i < y.size(); ++i)
      CHECK(y.values()[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(conv1d_transposed(Tensor::zeros({2, 3}),
                                    Tensor::zeros({2, 4, 2}),
                                    Tensor::zeros({4}), 1),
                  ShapeError);
  CHECK_THROWS_AS(conv1d_transposed(Tensor::zeros({2, 3}),
                                    Tensor::zeros({2, 4, 3}),
                                    Tensor::zeros({4}), 0),
                  ParameterError);
}

TEST_CASE("conv1d_transposed is the exact adjoint of conv1d") {
  // <conv(x,k), y> == <x, conv_t(y, k viewed as [W x C_in x C_out])>
  std::mt19937_64 rng(23);
  for (int it = 0; it < 100; ++it) {
    const Eigen::Index l = 2 + rng() % 7, ci = 1 + rng() % 3,
                       co = 1 + rng() % 3;
    const Eigen::Index w = 1 + rng() % l;
    Tensor x = random_tensor({l, ci}, rng, -1, 1, false);
    Tensor k = random_tensor({w, ci, co}, rng, -1, 1, false);
    Tensor zero_co = Tensor::zeros({co});
    Tensor zero_ci = Tensor::zeros({ci});
    Tensor cx = conv1d(x, k, zero_co, Padding::kValid);
    Tensor y = random_tensor({cx.dim(0), co}, rng, -1, 1, false);
    // Same flat data, roles of the trailing axes exchanged.
    Tensor kt = Tensor::from_array({w, ci, co}, k.values());
    Tensor xt = conv1d_transposed(y, kt, zero_ci, 1);
    const double lhs = (cx.values() * y.values()).sum();
    const double rhs = (x.values() * xt.values()).sum();
    CHECK(std::abs(lhs - rhs) < 1e-8);
  }
}

TEST_CASE("topk_per_channel equals a full-sort oracle with the tie rule") {
  Tensor x = Tensor::from({3, 1}, {3, 1, 2});
  TopK r = topk_per_channel(x, 2);
  CHECK(r.values.at(0, 0) == 3);
  CHECK(r.values.at(1, 0) == 2);
  CHECK(r.indices(0, 0) == 0);
  CHECK(r.indices(1, 0) == 2);

  // k == L gives the column sorted non-increasing.
  TopK full = topk_per_channel(x, 3);
  CHECK(full.values.at(0, 0) == 3);
  CHECK(full.values.at(1, 0) == 2);
  CHECK(full.values.at(2, 0) == 1);

  // Tie -> lower index wins.
  TopK tie = topk_per_channel(Tensor::from({3, 1}, {5, 5, 1}), 2);
  CHECK(tie.values.at(0, 0) == 5);
  CHECK(tie.values.at(1, 0) == 5);
  CHECK(tie.indices(0, 0) == 0);
  CHECK(tie.indices(1, 0) == 1);

  CHECK_THROWS_AS(topk_per_channel(x, 4), ParameterError);

  // Property: 1000 random maps against an independent full sort.
  std::mt19937_64 rng(31);
  for (int it = 0; it < 1000; ++it) {
    const Eigen::Index l = 1 + rng() % 12, c = 1 + rng() % 6;
    const Eigen::Index k = 1 + rng() % l;
    Tensor m = Tensor::zeros({l, c});
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      // Coarse grid makes ties frequent on purpose.
      m.values()[i] = static_cast<double>(static_cast<int>(rng() % 7)) - 3.0;
    }
    TopK got = topk_per_channel(m, k);
    for (Eigen::Index col = 0; col < c; ++col) {
      std::vector<int> order(l);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return m.at(a, col) > m.at(b, col);
      });
      for (Eigen::Index i = 0; i < k; ++i) {
        CHECK(got.values.at(i, col) == m.at(order[i], col));
        CHECK(got.indices(i, col) == order[i]);
      }
    }
  }
}

TEST_CASE("softmax_rows: spec cases and invariants") {
  Tensor a = softmax_rows(Tensor::from({1, 2}, {0, 0}));
  CHECK(a.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

  Tensor b = softmax_rows(Tensor::from({1, 2}, {std::log(1.0), std::log(3.0)}));
  CHECK(b.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(b.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

  std::mt19937_64 rng(37);
  for (int it = 0; it < 200; ++it) {
    const Eigen::Index r = 1 + rng() % 5, c = 1 + rng() % 8;
    Tensor x = random_tensor({r, c}, rng, -30, 30, false);
    Tensor y = softmax_rows(x);
    for (Eigen::Index i = 0; i < r; ++i) {
      double sum = 0;
      for (Eigen::Index j = 0; j < c; ++j) {
        CHECK(y.at(i, j) >= 0.0);
        sum += y.at(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
    // Shift invariance: adding a constant to a row changes nothing.
    const double shift = uniform(rng, -5, 5);
    Tensor xs = Tensor::from_array(x.shape(), Array(x.values() + shift));
    Tensor ys = softmax_rows(xs);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      CHECK(std::abs(y.values()[i] - ys.values()[i]) < 1e-9);
  }
}

TEST_CASE("layer_norm: spec cases") {
  Tensor gain = Tensor::constant({4}, 1.0);
  Tensor shift = Tensor::zeros({4});

  // Constant row -> all zeros through the eps guard.
  Tensor c = layer_norm(Tensor::constant({4}, 3.25), gain, shift, 1e-5);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(c.at(i) == 0.0);

  // [-1, 1] is a unit-variance fixed point as eps -> 0.
  Tensor g2 = Tensor::constant({2}, 1.0);
  Tensor s2 = Tensor::zeros({2});
  Tensor f = layer_norm(Tensor::from({2}, {-1, 1}), g2, s2, 1e-12);
  CHECK(f.at(0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(f.at(1) == doctest::Approx(1.0).epsilon(1e-9));

  // Zero gain broadcasts the shift.
  Tensor sh = Tensor::from({3}, {7, -2, 0.5});
  Tensor z = layer_norm(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}),
                        Tensor::zeros({3}), sh, 1e-5);
  for (Eigen::Index r = 0; r < 2; ++r)
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(z.at(r, i) == sh.at(i));

  // Mean 0 / variance 1 before gain and shift, within 1e-5 for D > 1.
  std::mt19937_64 rng(41);
  Tensor x = random_tensor({3, 6}, rng, -4, 4, false);
  Tensor g6 = Tensor::constant({6}, 1.0);
  Tensor y = layer_norm(x, g6, Tensor::zeros({6}), 1e-12);
  for (Eigen::Index r = 0; r < 3; ++r) {
    double mu = 0, var = 0;
    for (Eigen::Index i = 0; i < 6; ++i) mu += y.at(r, i);
    mu /= 6;
    for (Eigen::Index i = 0; i < 6; ++i)
      var += (y.at(r, i) - mu) * (y.at(r, i) - mu);
    var /= 6;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("backward: contract and the two quadratic spec cases") {
  // loss = sum(x) -> grad all ones
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tape tape;
  {
    Recording rec(tape);
    Tensor loss = sum_all(x);
    tape.backward(loss);
  }
  for (Eigen::Index i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == 1.0);

  // loss = sum(x*x) at [1,-2] -> [2,-4]
  Tensor q = Tensor::vector({1, -2}, true);
  Tape t2;
  {
    Recording rec(t2);
    Tensor loss = sum_all(mul(q, q));
    CHECK(loss.item() == 5.0);
    t2.backward(loss);
  }
  CHECK(q.grad()[0] == 2.0);
  CHECK(q.grad()[1] == -4.0);

  // Second backward without a fresh forward pass is rejected.
  Tensor dummy = Tensor::scalar(0.0);
  CHECK_THROWS_AS(t2.backward(dummy), ContractError);

  // Non-scalar loss is rejected.
  Tape t3;
  {
    Recording rec(t3);
    Tensor y = add(q, q);
    CHECK_THROWS_AS(t3.backward(y), ContractError);
  }

  // Empty record is rejected.
  Tape t4;
  CHECK_THROWS_AS(t4.backward(Tensor::scalar(1.0)), ContractError);

  // Gradients accumulate across multiple uses of the same tensor.
  Tensor u = Tensor::vector({3.0}, true);
  Tape t5;
  {
    Recording rec(t5);
    Tensor loss = sum_all(add(u, u));
    t5.backward(loss);
  }
  CHECK(u.grad()[0] == 2.0);
}

TEST_CASE("finite-difference checks for every differentiable op") {
  std::mt19937_64 rng(53);
  const double tol = 1e-4;

  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::Index r = 1 + rng() % 8, c = 1 + rng() % 8,
                       k2 = 1 + rng() % 8;

    // Elementwise family.
    {
      Tensor a = random_tensor({r, c}, rng);
      Tensor b = random_tensor({r, c}, rng);
      CHECK(dta::test::finite_diff_check(
                [&] { return sum_all(mul(add(a, b), sub(a, b))); }, {a, b}) <
            tol);
      CHECK(dta::test::finite_diff_check(
                [&] { return mean_all(scale(mul(a, b), 1.7)); }, {a, b}) < tol);
      CHECK(dta::test::finite_diff_check(
                [&] { return sum_all(sigmoid(a)); }, {a}) < tol);
      CHECK(dta::test::finite_diff_check(
                [&] { return sum_all(dta::exp(scale(a, 0.3))); }, {a}) < tol);
    }
    {
      Tensor a = random_tensor_off_kink({r, c}, rng);
      CHECK(dta::test::finite_diff_check([&] { return sum_all(relu(a)); },
                                         {a}) < tol);
    }

    // Linear algebra.
    {
      Tensor a = random_tensor({r, k2}, rng);
      Tensor b = random_tensor({k2, c}, rng);
      CHECK(dta::test::finite_diff_check(
                [&] { return sum_all(matmul(a, b)); }, {a, b}) < tol);
      CHECK(dta::test::finite_diff_check(
                [&] { return sum_all(transpose(a)); }, {a}) < tol);
      Tensor w = random_tensor({k2, c}, rng);
      Tensor bias = random_tensor({c}, rng);
      Tensor x2 = random_tensor({r, k2}, rng);
      Tensor x1 = random_tensor({k2}, rng);
      CHECK(dta::test::finite_diff_check(
                [&] { return sum_all(dense(x2, w, bias)); }, {x2, w, bias}) <
            tol);
      CHECK(dta::test::finite_diff_check(
                [&] { return sum_all(dense(x1, w, bias)); }, {x1, w, bias}) <
            tol);
    }

    // Structure ops.
    {
      Tensor a = random_tensor({r, c}, rng);
      Tensor b = random_tensor({r, c}, rng);
      CHECK(dta::test::finite_diff_check(
                [&] { return sum_all(reshape(a, {c, r})); }, {a}) < tol);
      CHECK(dta::test::finite_diff_check(
                [&] {
                  return sum_all(mul(concat({a, b}, 0), concat({b, a}, 0)));
                },
                {a, b}) < tol);
      CHECK(dta::test::finite_diff_check(
                [&] {
                  return sum_all(mul(concat({a, b}, 1), concat({b, a}, 1)));
                },
                {a, b}) < tol);
      Tensor v = random_tensor({c}, rng);
      CHECK(dta::test::finite_diff_check(
                [&] { return sum_all(mul(row_broadcast(v, r), a)); }, {v, a}) <
            tol);
      CHECK(dta::test::finite_diff_check(
                [&] { return sum_all(mul(mean(a, 0), mean(b, 0))); }, {a, b}) <
            tol);
      CHECK(dta::test::finite_diff_check(
                [&] { return sum_all(mul(mean(a, 1), mean(b, 1))); }, {a, b}) <
            tol);
      Tensor v1 = random_tensor({c}, rng);
      Tensor v2 = random_tensor({r}, rng);
      CHECK(dta::test::finite_diff_check(
                [&] { return sum_all(mul(concat({v1, v2}, 0),
                                         concat({v1, v2}, 0))); },
                {v1, v2}) < tol);
    }

    // Sequence ops.
    {
      const Eigen::Index l = 2 + rng() % 6, ci = 1 + rng() % 3,
                         co = 1 + rng() % 3, w = 1 + rng() % l;
      Tensor x = random_tensor({l, ci}, rng);
      Tensor k = random_tensor({w, ci, co}, rng);
      Tensor bias = random_tensor({co}, rng);
      for (auto pad : {Padding::kValid, Padding::kSame}) {
        CHECK(dta::test::finite_diff_check(
                  [&] {
                    Tensor y = conv1d(x, k, bias, pad);
                    return sum_all(mul(y, y));
                  },
                  {x, k, bias}) < tol);
      }
      Tensor kt = random_tensor({w, co, ci}, rng);
      Tensor biast = random_tensor({co}, rng);
      const Eigen::Index stride = 1 + rng() % 2;
      CHECK(dta::test::finite_diff_check(
                [&] {
                  Tensor y = conv1d_transposed(x, kt, biast, stride);
                  return sum_all(mul(y, y));
                },
                {x, kt, biast}) < tol);
    }
    {
      Tensor x = random_tensor({r, c}, rng, -5, 5);
      CHECK(dta::test::finite_diff_check(
                [&] {
                  Tensor y = softmax_rows(x);
                  return sum_all(mul(y, y));
                },
                {x}) < tol);
    }
    {
      const Eigen::Index d = 2 + rng() % 6;
      Tensor x = random_tensor({r, d}, rng, -2, 2);
      Tensor g = random_tensor({d}, rng, 0.5, 1.5);
      Tensor s = random_tensor({d}, rng);
      CHECK(dta::test::finite_diff_check(
                [&] {
                  Tensor y = layer_norm(x, g, s, 1e-5);
                  return sum_all(mul(y, y));
                },
                {x, g, s}) < tol);
    }
  }

  // Top-k gradient: checked away from ties via a spread-out grid.
  {
    Tensor x = Tensor::from({5, 2}, {0.9, -0.4, 0.1, 0.6, -0.7, 0.2, 0.5, -0.9,
                                     0.3, -0.1},
                            true);
    CHECK(dta::test::finite_diff_check(
              [&] {
                TopK t = topk_per_channel(x, 3);
                return sum_all(mul(t.values, t.values));
              },
              {x}) < tol);
  }

  // Embedding lookup: gradient flows to looked-up rows only, never to the
  // padding row.
  {
    Tensor table = random_tensor({5, 3}, rng);
    std::vector<int> tokens{1, 3, 3, 4};
    CHECK(dta::test::finite_diff_check(
              [&] {
                Tensor e = embedding_lookup(table, tokens, 0);
                return sum_all(mul(e, e));
              },
              {table}) < tol);

    Tensor table2 = random_tensor({5, 3}, rng);
    Tape tape;
    {
      Recording rec(tape);
      Tensor e = embedding_lookup(table2, {0, 2, 0}, 0);
      tape.backward(sum_all(e));
    }
    for (Eigen::Index j = 0; j < 3; ++j) {
      CHECK(table2.grad()[j] == 0.0);           // padding row untouched
      CHECK(table2.grad()[2 * 3 + j] == 1.0);   // looked-up row
    }
  }

  // Dropout: deterministic under a replayed stream, identity in eval mode.
  {
    Tensor a = random_tensor({4, 4}, rng);
    CHECK(dta::test::finite_diff_check(
              [&] {
                std::mt19937_64 fixed(99);
                Tensor y = dropout(a, 0.5, true, fixed);
                return sum_all(mul(y, y));
              },
              {a}) < tol);
    std::mt19937_64 g(1);
    Tensor same = dropout(a, 0.5, false, g);
    CHECK(same.node_ptr() == a.node_ptr());
    CHECK_THROWS_AS(dropout(a, 1.0, true, g), ParameterError);
  }
}

TEST_CASE("embedding lookup validates tokens") {
  Tensor table = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(embedding_lookup(table, {1, 4}, 0), ParameterError);
  CHECK_THROWS_AS(embedding_lookup(table, {-1}, 0), ParameterError);
}
