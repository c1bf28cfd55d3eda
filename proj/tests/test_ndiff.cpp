#include <cmath>

#include "doctest.h"
#include "stark/gradcheck.hpp"
#include "stark/ndiff.hpp"
#include "stark/rng.hpp"

using namespace stark;
using nd::Array;
using nd::Shape;
using nd::Tape;
using nd::Var;

namespace {

Array arr(Shape s, std::vector<double> v) { return Array(std::move(s), std::move(v)); }

bool near(double a, double b, double tol = 1e-12) { return std::fabs(a - b) <= tol; }

}  // namespace

TEST_CASE("matmul forward: identity and zero cases") {
  Var a = nd::constant(arr({2, 2}, {1, 0, 0, 1}));
  Var b = nd::constant(arr({2, 2}, {3, 4, 5, 6}));
  Var c = nd::matmul(a, b);
  CHECK(c.v.data->size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(c.v[i] == b.v[i]);

  Var a2 = nd::constant(arr({1, 2}, {1, 2}));
  Var b2 = nd::constant(arr({2, 1}, {0, 0}));
  Var c2 = nd::matmul(a2, b2);
  CHECK(c2.v[0] == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Var a = nd::constant(arr({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var b = nd::constant(arr({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_WITH_AS(nd::matmul(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
}

TEST_CASE("matmul gradient of sum w.r.t. a is b-transpose rule") {
  // grad of sum(matmul(a,b)) at a=[[1,2]], b=[[3],[4]] -> [[3,4]]
  Tape t;
  Var a = t.leaf(arr({1, 2}, {1, 2}));
  Var b = t.leaf(arr({2, 1}, {3, 4}));
  Var s = nd::sum_all(nd::matmul(a, b));
  t.backward(s);
  Array ga = t.grad(a.node, a.shape());
  CHECK(near(ga[0], 3));
  CHECK(near(ga[1], 4));
  // same value via central finite differences
  auto res = gradcheck::check("m", {a.v.clone(), b.v.clone()}, [](Tape&, std::vector<Var>& v) {
    return nd::sum_all(nd::matmul(v[0], v[1]));
  });
  CHECK(res.pass);
}

TEST_CASE("softmax_axis: uniform and stability cases") {
  Var x = nd::constant(arr({3}, {0, 0, 0}));
  Var y = nd::softmax_axis(x, 0);
  for (int i = 0; i < 3; ++i) CHECK(near(y.v[i], 1.0 / 3.0));

  Var big = nd::constant(arr({2}, {1000, 0}));
  Var yb = nd::softmax_axis(big, 0);
  CHECK(yb.v.all_finite());
  CHECK(yb.v[0] == doctest::Approx(1.0));
  CHECK(yb.v[1] == doctest::Approx(0.0));
  CHECK_THROWS_AS(nd::softmax_axis(x, 1), std::invalid_argument);
}

TEST_CASE("softmax_axis sums to 1 along axis for random finite input") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    Array x({4, 5});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-50, 50);
    int axis = rep % 2;
    Var y = nd::softmax_axis(nd::constant(x), axis);
    int pre = axis == 0 ? 1 : 4, n = axis == 0 ? 4 : 5, post = axis == 0 ? 5 : 1;
    for (int p = 0; p < pre * post; ++p) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += y.v[(p / post * n + i) * post + p % post];
      CHECK(std::fabs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("leaky_relu definition and gradient") {
  Var x = nd::constant(arr({2}, {2, -2}));
  Var y = nd::leaky_relu(x, 0.1);
  CHECK(near(y.v[0], 2));
  CHECK(near(y.v[1], -0.2));
  Var z = nd::leaky_relu(nd::constant(arr({1}, {0})), 0.1);
  CHECK(z.v[0] == 0.0);

  Tape t;
  Var p = t.leaf(arr({2}, {3, -3}));
  Var s = nd::sum_all(nd::leaky_relu(p, 0.1));
  t.backward(s);
  Array g = t.grad(p.node, p.shape());
  CHECK(near(g[0], 1.0));
  CHECK(near(g[1], 0.1));
}

TEST_CASE("elementwise broadcasting examples") {
  Var a = nd::constant(arr({3}, {1, 2, 3}));
  Var b = nd::constant(arr({1}, {2}));
  Var y = nd::mul(a, b);
  CHECK(near(y.v[0], 2));
  CHECK(near(y.v[1], 4));
  CHECK(near(y.v[2], 6));

  Var c = nd::sub(nd::constant(arr({2}, {1, 2})), nd::constant(arr({2}, {1, 2})));
  CHECK(near(c.v[0], 0));
  CHECK(near(c.v[1], 0));

  CHECK_THROWS_AS(nd::add(nd::constant(arr({2}, {1, 2})), nd::constant(arr({3}, {1, 2, 3}))),
                  std::invalid_argument);
}

TEST_CASE("broadcast gradient of sum(a*b) reduces over stretched axes") {
  // a shape [2,1], b shape [2,3]: grad(a) is row-sums of b
  Tape t;
  Var a = t.leaf(arr({2, 1}, {1, 2}));
  Var b = t.leaf(arr({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var s = nd::sum_all(nd::mul(a, b));
  t.backward(s);
  Array ga = t.grad(a.node, a.shape());
  CHECK(near(ga[0], 6));
  CHECK(near(ga[1], 15));
  auto res = gradcheck::check("bcast", {a.v.clone(), b.v.clone()}, [](Tape&, std::vector<Var>& v) {
    return nd::sum_all(nd::mul(v[0], v[1]));
  });
  CHECK(res.pass);
}

TEST_CASE("reduce: mean, max, and the max tie rule") {
  Var x = nd::constant(arr({2, 2}, {1, 3, 3, 5}));
  Var m = nd::reduce(x, 0, nd::ReduceOp::mean);
  CHECK(near(m.v[0], 2));
  CHECK(near(m.v[1], 4));

  Var x2 = nd::constant(arr({2, 2}, {1, 3, 3, 2}));
  Var mx = nd::reduce(x2, 0, nd::ReduceOp::max);
  CHECK(near(mx.v[0], 3));
  CHECK(near(mx.v[1], 3));

  // gradient of max routes 1.0 to the first maximal element on ties
  Tape t;
  Var p = t.leaf(arr({2}, {2, 2}));
  Var s = nd::reduce(p, 0, nd::ReduceOp::max);
  t.backward(s);
  Array g = t.grad(p.node, p.shape());
  CHECK(near(g[0], 1));
  CHECK(near(g[1], 0));

  CHECK_THROWS_AS(nd::reduce(x, 2, nd::ReduceOp::sum), std::invalid_argument);
}

TEST_CASE("backward: analytic cases") {
  // f = sum(x^2), x=[1,2] -> grad [2,4]
  Tape t;
  Var x = t.leaf(arr({2}, {1, 2}));
  Var f = nd::sum_all(nd::mul(x, x));
  t.backward(f);
  Array g = t.grad(x.node, x.shape());
  CHECK(near(g[0], 2));
  CHECK(near(g[1], 4));

  // unreached parameters get zero
  Tape t2;
  Var unused = t2.leaf(arr({3}, {1, 2, 3}));
  Var y = t2.leaf(arr({2}, {1, 2}));
  Var f2 = nd::sum_all(nd::mul(y, y));
  t2.backward(f2);
  Array gu = t2.grad(unused.node, unused.shape());
  for (int i = 0; i < 3; ++i) CHECK(gu[i] == 0.0);

  // non-scalar root rejected
  Tape t3;
  Var z = t3.leaf(arr({2}, {1, 2}));
  Var nz = nd::mul(z, z);
  CHECK_THROWS_AS(t3.backward(nz), std::invalid_argument);
}

TEST_CASE("forward values independent of tape presence") {
  Rng rng(3);
  Array a({3, 4}), b({4, 2});
  for (int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-2, 2);
  for (int64_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-2, 2);

  Var c1 = nd::matmul(nd::constant(a), nd::constant(b));
  Var s1 = nd::softmax_axis(c1, 1);

  Tape t;
  Var c2 = nd::matmul(t.leaf(a), t.leaf(b));
  Var s2 = nd::softmax_axis(c2, 1);

  REQUIRE(s1.size() == s2.size());
  for (int64_t i = 0; i < s1.size(); ++i) CHECK(s1.v[i] == s2.v[i]);  // bit-identical
}

TEST_CASE("backward on the same tape twice yields identical gradients") {
  Tape t;
  Var x = t.leaf(arr({3}, {0.3, -0.2, 1.7}));
  Var f = nd::sum_all(nd::mul(nd::softmax_axis(x, 0), x));
  t.backward(f);
  Array g1 = t.grad(x.node, x.shape());
  t.backward(f);
  Array g2 = t.grad(x.node, x.shape());
  for (int i = 0; i < 3; ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("patchify windows and center-alignment law") {
  // T=1, k=1: patches equal input with a singleton window axis
  Var x1 = nd::constant(arr({2, 1, 2}, {1, 2, 3, 4}));
  Var p1 = nd::patchify(x1, 1);
  CHECK(p1.shape() == Shape{2, 1, 1, 2});
  for (int i = 0; i < 4; ++i) CHECK(p1.v[i] == x1.v[i]);

  // T=3, k=3 zero padding at the edges
  Var x = nd::constant(arr({1, 3, 1}, {10, 20, 30}));
  Var p = nd::patchify(x, 3);
  CHECK(p.shape() == Shape{1, 3, 3, 1});
  // window at t=0: [pad, x0, x1]
  CHECK(p.v[0] == 0.0);
  CHECK(p.v[1] == 10.0);
  CHECK(p.v[2] == 20.0);
  // window at t=1: [x0, x1, x2]
  CHECK(p.v[3] == 10.0);
  CHECK(p.v[4] == 20.0);
  CHECK(p.v[5] == 30.0);
  // window at t=2: [x1, x2, pad]
  CHECK(p.v[6] == 20.0);
  CHECK(p.v[7] == 30.0);
  CHECK(p.v[8] == 0.0);

  CHECK_THROWS_AS(nd::patchify(x, 2), std::invalid_argument);

  // center slice equals input for random tensors
  Rng rng(11);
  Array r({2, 5, 3});
  for (int64_t i = 0; i < r.size(); ++i) r[i] = rng.uniform(-1, 1);
  Var pr = nd::patchify(nd::constant(r), 5);
  Var center = nd::slice(pr, 2, 2, 1);
  for (int64_t i = 0; i < r.size(); ++i) CHECK(center.v[i] == r[i]);
}

TEST_CASE("maxpool_time2 ceil semantics") {
  Var x = nd::constant(arr({1, 5}, {1, 4, 2, 2, 9}));
  Var y = nd::maxpool_time2(x);
  CHECK(y.shape() == Shape{1, 3});
  CHECK(y.v[0] == 4);
  CHECK(y.v[1] == 2);
  CHECK(y.v[2] == 9);

  // tie routes to the lower index
  Tape t;
  Var p = t.leaf(arr({1, 2}, {7, 7}));
  Var s = nd::sum_all(nd::maxpool_time2(p));
  t.backward(s);
  Array g = t.grad(p.node, p.shape());
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);
}

TEST_CASE("log_softmax matches log of softmax on benign input") {
  Rng rng(5);
  Array x({3, 4});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-3, 3);
  Var ls = nd::log_softmax_axis(nd::constant(x), 1);
  Var sm = nd::softmax_axis(nd::constant(x), 1);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(std::fabs(ls.v[i] - std::log(sm.v[i])) < 1e-12);
}

TEST_CASE("mixing tapes is rejected") {
  Tape t1, t2;
  Var a = t1.leaf(arr({2}, {1, 2}));
  Var b = t2.leaf(arr({2}, {3, 4}));
  CHECK_THROWS_AS(nd::add(a, b), std::invalid_argument);
}

TEST_CASE("finite-difference suites for every primitive pass on 5 seeds") {
  for (const auto& suite : {"matmul", "elementwise", "reduce", "softmax", "unary", "layout"}) {
    auto results = gradcheck::run(suite, 20260822, 5);
    for (const auto& r : results) {
      INFO(r.name, " max_err=", r.max_err, " ", r.detail);
      CHECK(r.pass);
    }
  }
}

TEST_CASE("forward ops keep finite values on finite inputs") {
  Rng rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    Array x({3, 4, 2});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-100, 100);
    Var v = nd::constant(x);
    CHECK(nd::softmax_axis(v, 1).v.all_finite());
    CHECK(nd::reduce(v, 2, nd::ReduceOp::mean).v.all_finite());
    CHECK(nd::leaky_relu(v).v.all_finite());
    CHECK(nd::logaddexp(v, v).v.all_finite());
    CHECK(nd::patchify(v, 3).v.all_finite());
  }
}
