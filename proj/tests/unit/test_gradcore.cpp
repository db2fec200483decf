#include <cmath>
#include <vector>

#include "doctest.h"
#include "eclab/eval/gradcheck_suite.hpp"
#include "eclab/gradcore/gradcheck.hpp"
#include "eclab/gradcore/kernels.hpp"
#include "eclab/gradcore/ops.hpp"
#include "eclab/rng.hpp"

using namespace eclab;

namespace {

template <typename T>
std::vector<T> randn(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return v;
}

}  // namespace

TEST_SUITE("gradcore") {

TEST_CASE("tensor rejects zero dimensions and mismatched data") {
  CHECK_THROWS_AS(Tensor<float>(Shape{0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor<float> t({2, 3});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(Tensor<float>({4}).rows() == 1);
}

TEST_CASE("2x2 matmul matches hand arithmetic") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto b = tape.constant(Tensor<double>({2, 2}, {5, 6, 7, 8}));
  const auto c = ops::matmul(a, b).value();
  CHECK(c[0] == 19.0);
  CHECK(c[1] == 22.0);
  CHECK(c[2] == 43.0);
  CHECK(c[3] == 50.0);
}

TEST_CASE("matmul rejects inner dimension mismatch") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({2, 3}));
  auto b = tape.constant(Tensor<double>({2, 3}));
  CHECK_THROWS_AS(ops::matmul(a, b), ShapeError);
}

TEST_CASE("layer norm of a 3-vector") {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 3}, {1, 2, 3}));
  auto g = tape.constant(Tensor<double>({3}, 1.0));
  auto b = tape.constant(Tensor<double>({3}, 0.0));
  const auto y = ops::layer_norm(x, g, b).value();
  // (x - 2) / sqrt(2/3 + 1e-5)
  CHECK(y[0] == doctest::Approx(-1.2247356859083902).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(0.0));
  CHECK(y[2] == doctest::Approx(1.2247356859083902).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and survive large inputs") {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({2, 3}, {1000, 1001, 1002, -5, 0, 5}));
  const auto y = ops::softmax(x).value();
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(std::isfinite(y(r, c)));
      s += y(r, c);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("gelu at 1 uses the tanh approximation") {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1}, {1.0}));
  CHECK(ops::gelu(x).value()[0] == doctest::Approx(0.8411919906082768).epsilon(1e-14));
}

TEST_CASE("l2_normalize of the zero vector stays finite") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1, 3}, 0.0), true);
  auto y = ops::l2_normalize(x);
  for (double v : y.value().data()) CHECK(v == 0.0);
  tape.backward(ops::sum(y));
  for (double v : tape.grad(x)) CHECK(std::isfinite(v));
}

TEST_CASE("backward runs once per tape") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, 1.0), true);
  auto l = ops::sum(ops::mul(x, x));
  tape.backward(l);
  CHECK(tape.grad(x)[0] == 2.0);
  CHECK_THROWS_AS(tape.backward(l), std::logic_error);
}

TEST_CASE("backward needs a scalar") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, 1.0), true);
  CHECK_THROWS_AS(tape.backward(ops::scale(x, 2.0)), ShapeError);
}

TEST_CASE("unreached leaves get zero gradients") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, 1.0), true);
  auto y = tape.leaf(Tensor<double>({2}, 1.0), true);
  tape.backward(ops::sum(x));
  CHECK(tape.grad(y) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("self attention never mixes sequences") {
  // Changing sequence 1 must leave sequence 0 untouched.
  Tape<double> tape;
  auto base = randn<double>(6 * 4, 3);
  auto q = tape.constant(Tensor<double>({6, 4}, base));
  auto out1 = ops::self_attention(q, q, q, 3, 2).value();
  auto changed = base;
  for (std::size_t i = 12; i < 24; ++i) changed[i] += 1.0;
  auto q2 = tape.constant(Tensor<double>({6, 4}, changed));
  auto out2 = ops::self_attention(q2, q2, q2, 3, 2).value();
  for (std::size_t i = 0; i < 12; ++i) CHECK(out1[i] == out2[i]);
}

TEST_CASE("finite_diff_check rejects non-scalar outputs") {
  const MultiScalarFn f = [](Tape<double>&, const std::vector<Var<double>>& v) { return v[0]; };
  CHECK_THROWS_AS(finite_diff_check(f, {Tensor<double>({3}, 1.0)}), ShapeError);
}

TEST_CASE("finite_diff_check flags a wrong gradient") {
  // x * x recorded with a deliberately wrong backward rule.
  const MultiScalarFn f = [](Tape<double>& tape, const std::vector<Var<double>>& v) {
    auto x = v[0];
    auto sq = tape.record(Tensor<double>::scalar(x.value()[0] * x.value()[0]), {x},
                          [x](Tape<double>& t, std::size_t self) {
                            if (auto dx = t.sink(x); !dx.empty()) dx[0] += t.upstream(self)[0] * 3.0 * x.value()[0];
                          });
    return sq;
  };
  const auto r = finite_diff_check(f, {Tensor<double>({1}, {0.7})});
  CHECK(r.max_rel_error > 0.1);
}

TEST_CASE("every primitive and objective passes the finite-difference check") {
  for (const auto& e : run_gradcheck_suite(5, 1)) {
    INFO(e.name << " seed " << e.seed << " err " << e.result.max_rel_error);
    CHECK(e.passed());
  }
}

TEST_CASE_TEMPLATE("serial and parallel kernels agree bitwise", T, float, double) {
  const std::size_t m = 67, k = 45, n = 39;
  const auto a = randn<T>(m * k, 1), b = randn<T>(k * n, 2), bt = randn<T>(n * k, 3), at = randn<T>(k * m, 4);
  std::vector<T> cs(m * n, T(1)), cp(m * n, T(1));
  kernels::serial::matmul_nn<T>(a, b, cs, m, k, n, true);
  kernels::parallel::matmul_nn<T>(a, b, cp, m, k, n, true);
  CHECK(cs == cp);
  kernels::serial::matmul_nt<T>(a, bt, cs, m, k, n, false);
  kernels::parallel::matmul_nt<T>(a, bt, cp, m, k, n, false);
  CHECK(cs == cp);
  kernels::serial::matmul_tn<T>(at, b, cs, m, k, n, false);
  kernels::parallel::matmul_tn<T>(at, b, cp, m, k, n, false);
  CHECK(cs == cp);

  const std::size_t rows = 300, cols = 129;
  const auto x = randn<T>(rows * cols, 5), dy = randn<T>(rows * cols, 6);
  const auto gain = randn<T>(cols, 7), bias = randn<T>(cols, 8);
  std::vector<T> ys(rows * cols), yp(rows * cols), xs(rows * cols), xp(rows * cols), rs(rows), rp(rows);
  kernels::serial::gelu_forward<T>(x, ys);
  kernels::parallel::gelu_forward<T>(x, yp);
  CHECK(ys == yp);
  kernels::serial::gelu_backward<T>(x, dy, ys);
  kernels::parallel::gelu_backward<T>(x, dy, yp);
  CHECK(ys == yp);
  kernels::serial::layer_norm_forward<T>(x, gain, bias, ys, xs, rs, rows, cols, T(1e-5));
  kernels::parallel::layer_norm_forward<T>(x, gain, bias, yp, xp, rp, rows, cols, T(1e-5));
  CHECK(ys == yp);
  CHECK(xs == xp);
  CHECK(rs == rp);
  kernels::serial::softmax_rows<T>(x, ys, rows, cols);
  kernels::parallel::softmax_rows<T>(x, yp, rows, cols);
  CHECK(ys == yp);
}

TEST_CASE("matmul of the tape matches the serial reference") {
  const auto av = randn<float>(20 * 30, 11), bv = randn<float>(30 * 10, 12);
  Tape<float> tape;
  const auto c = ops::matmul(tape.constant(Tensor<float>({20, 30}, av)), tape.constant(Tensor<float>({30, 10}, bv)));
  std::vector<float> ref(200);
  kernels::serial::matmul_nn<float>(av, bv, ref, 20, 30, 10, false);
  CHECK(std::vector<float>(c.value().data().begin(), c.value().data().end()) == ref);
}

TEST_CASE("matmul with identity and zero matrices") {
  Tape<double> tape;
  const auto xv = randn<double>(3 * 4, 21);
  auto x = tape.constant(Tensor<double>({3, 4}, xv));
  Tensor<double> eye({4, 4}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  const auto y = ops::matmul(x, tape.constant(eye)).value();
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == xv);
  const auto z = ops::matmul(x, tape.constant(Tensor<double>({4, 2}, 0.0))).value();
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("layer norm of a constant row is zero before gain and bias") {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({2, 4}, 3.5));
  auto g = tape.constant(Tensor<double>({4}, 1.0));
  auto b = tape.constant(Tensor<double>({4}, 0.0));
  for (double v : ops::layer_norm(x, g, b).value().data()) CHECK(v == 0.0);
}

TEST_CASE("softmax of a uniform row and under row shifts") {
  Tape<double> tape;
  const auto u = ops::softmax(tape.constant(Tensor<double>({1, 5}, 2.0))).value();
  for (double v : u.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
  auto xv = randn<double>(3 * 6, 22);
  const auto a = ops::softmax(tape.constant(Tensor<double>({3, 6}, xv))).value();
  for (std::size_t i = 0; i < 6; ++i) xv[i] += 40.0;
  const auto b = ops::softmax(tape.constant(Tensor<double>({3, 6}, xv))).value();
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("gelu at zero") {
  Tape<double> tape;
  CHECK(ops::gelu(tape.constant(Tensor<double>({1}, {0.0}))).value()[0] == 0.0);
}

TEST_CASE("cosine similarity matrix geometry") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({3, 5}, randn<double>(15, 23)));
  const auto s = ops::cosine_similarity_matrix(a, a).value();
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(s(i, i) == doctest::Approx(1.0).epsilon(1e-14));
    for (std::size_t j = 0; j < 3; ++j) CHECK(s(i, j) == doctest::Approx(s(j, i)).epsilon(1e-14));
  }
  auto e = tape.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  CHECK(ops::cosine_similarity_matrix(e, e).value()(0, 1) == 0.0);
  auto big = tape.constant(Tensor<double>({16, 7}, randn<double>(16 * 7, 24)));
  for (double v : ops::cosine_similarity_matrix(big, big).value().data()) {
    CHECK(v >= -1.0 - 1e-6);
    CHECK(v <= 1.0 + 1e-6);
  }
  CHECK_THROWS_AS(ops::cosine_similarity_matrix(a, e), ShapeError);
}

TEST_CASE("l2_normalize gives unit rows") {
  Tape<double> tape;
  const auto y = ops::l2_normalize(tape.constant(Tensor<double>({4, 6}, randn<double>(24, 25)))).value();
  for (std::size_t r = 0; r < 4; ++r) {
    double n = 0;
    for (std::size_t c = 0; c < 6; ++c) n += y(r, c) * y(r, c);
    CHECK(n == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("gradient of a sum is all ones") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2, 3}, randn<double>(6, 26)), true);
  tape.backward(ops::sum(x));
  CHECK(tape.grad(x) == std::vector<double>(6, 1.0));
}

TEST_CASE("a tensor used twice accumulates both contributions") {
  // f(x) = sum(x * x + 3 x), so df/dx = 2 x + 3.
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({3}, {0.5, -1.0, 2.0}), true);
  tape.backward(ops::sum(ops::add(ops::mul(x, x), ops::scale(x, 3.0))));
  CHECK(tape.grad(x) == std::vector<double>{4.0, 1.0, 7.0});
}

TEST_CASE("finite differences are exact for a quadratic") {
  const MultiScalarFn f = [](Tape<double>&, const std::vector<Var<double>>& v) {
    return ops::sum(ops::mul(v[0], v[0]));
  };
  const auto r = finite_diff_check(f, {Tensor<double>({2, 3}, randn<double>(6, 27))}, 1e-5);
  CHECK(r.max_rel_error < 1e-8);
}

}  // TEST_SUITE
