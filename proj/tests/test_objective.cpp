#include <cmath>
#include <vector>

#include "doctest.h"
#include "stark/objective.hpp"
#include "stark/rng.hpp"

using namespace stark;
using nd::Array;
using nd::Var;

namespace {

// Log-probability rows from random logits, computed numerically.
Array random_log_prob_rows(int T, int V1, Rng& rng, double spread = 2.0) {
  Array lp({T, V1});
  for (int t = 0; t < T; ++t) {
    double mx = -1e300;
    std::vector<double> logits(static_cast<size_t>(V1));
    for (int v = 0; v < V1; ++v) {
      logits[static_cast<size_t>(v)] = rng.uniform(-spread, spread);
      mx = std::max(mx, logits[static_cast<size_t>(v)]);
    }
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    const double logz = mx + std::log(z);
    for (int v = 0; v < V1; ++v)
      lp[static_cast<int64_t>(t) * V1 + v] = logits[static_cast<size_t>(v)] - logz;
  }
  return lp;
}

// Collapse a frame-label path: merge repeats, then drop blanks.
std::vector<int> collapse(const std::vector<int>& path) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != 0) out.push_back(s);
    prev = s;
  }
  return out;
}

// Exhaustive-path CTC reference: sums the probability of every frame
// labeling that collapses to `targets`.
double ctc_by_enumeration(const Array& log_probs, const std::vector<int>& targets) {
  const int T = log_probs.shape[0], V1 = log_probs.shape[1];
  double total = 0;
  std::vector<int> path(static_cast<size_t>(T), 0);
  int64_t count = 1;
  for (int t = 0; t < T; ++t) count *= V1;
  for (int64_t code = 0; code < count; ++code) {
    int64_t c = code;
    double logp = 0;
    for (int t = 0; t < T; ++t) {
      path[static_cast<size_t>(t)] = static_cast<int>(c % V1);
      c /= V1;
      logp += log_probs[static_cast<int64_t>(t) * V1 + path[static_cast<size_t>(t)]];
    }
    if (collapse(path) == targets) total += std::exp(logp);
  }
  return -std::log(total);
}

Array log_of(std::vector<double> probs, int T, int V1) {
  Array lp({T, V1});
  for (int64_t i = 0; i < lp.size(); ++i) lp[i] = std::log(probs[static_cast<size_t>(i)]);
  return lp;
}

}  // namespace

TEST_CASE("ctc: one-frame and two-frame closed forms") {
  // Single frame, single label with probability 0.4.
  Array lp1 = log_of({0.6, 0.4}, 1, 2);
  Var loss1 = ctc_loss(nd::constant(lp1), {1});
  CHECK(loss1.v[0] == doctest::Approx(-std::log(0.4)).epsilon(1e-12));

  // Empty target over two frames: both frames must be blank.
  Array lp2 = log_of({0.3, 0.7, 0.8, 0.2}, 2, 2);
  Var loss2 = ctc_loss(nd::constant(lp2), {});
  CHECK(loss2.v[0] == doctest::Approx(-std::log(0.3 * 0.8)).epsilon(1e-12));

  // Two frames, uniform over {blank, 1}, target [1]: paths (b,1),(1,b),(1,1).
  Array lp3 = log_of({0.5, 0.5, 0.5, 0.5}, 2, 2);
  Var loss3 = ctc_loss(nd::constant(lp3), {1});
  CHECK(loss3.v[0] == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("ctc: exhaustive path enumeration oracle") {
  for (int it = 0; it < 120; ++it) {
    Rng rng = derived_rng({41, static_cast<uint64_t>(it)});
    const int T = 1 + rng.uniform_int(0, 5);        // 1..6
    const int V = 1 + rng.uniform_int(0, 2);        // 1..3
    const int Lmax = std::min(3, T);
    const int L = rng.uniform_int(0, Lmax);
    std::vector<int> targets(static_cast<size_t>(L));
    for (int& g : targets) g = 1 + rng.uniform_int(0, V - 1);
    int repeats = 0;
    for (size_t i = 1; i < targets.size(); ++i)
      if (targets[i] == targets[i - 1]) ++repeats;
    Array lp = random_log_prob_rows(T, V + 1, rng);
    if (L + repeats > T) {
      CHECK_THROWS_AS(ctc_loss(nd::constant(lp), targets), InfeasibleTarget);
      continue;
    }
    Var loss = ctc_loss(nd::constant(lp), targets);
    const double expect = ctc_by_enumeration(lp, targets);
    CHECK(loss.v[0] == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("ctc: invariant under vocabulary relabeling") {
  Rng rng(43);
  const int T = 5, V = 3;
  Array lp = random_log_prob_rows(T, V + 1, rng);
  std::vector<int> targets = {2, 1, 3};
  const double base = ctc_loss(nd::constant(lp), targets).v[0];

  // Permute labels 1..V (blank stays put) in both rows and targets.
  const std::vector<int> perm = {0, 3, 1, 2};  // label v -> perm[v]
  Array lp2({T, V + 1});
  for (int t = 0; t < T; ++t)
    for (int v = 0; v <= V; ++v)
      lp2[static_cast<int64_t>(t) * (V + 1) + perm[static_cast<size_t>(v)]] =
          lp[static_cast<int64_t>(t) * (V + 1) + v];
  std::vector<int> targets2;
  for (int g : targets) targets2.push_back(perm[static_cast<size_t>(g)]);
  const double relabeled = ctc_loss(nd::constant(lp2), targets2).v[0];
  CHECK(std::abs(base - relabeled) < 1e-12);
}

TEST_CASE("ctc: argument validation") {
  Array lp = log_of({0.5, 0.5, 0.5, 0.5}, 2, 2);
  // Needs 3 frames for [1,1] (blank between repeats).
  CHECK_THROWS_AS(ctc_loss(nd::constant(lp), {1, 1}), InfeasibleTarget);
  // Label outside vocabulary.
  CHECK_THROWS_AS(ctc_loss(nd::constant(lp), {2}), std::invalid_argument);
  CHECK_THROWS_AS(ctc_loss(nd::constant(lp), {0}), std::invalid_argument);
  // Rows that are not distributions.
  Array bad = log_of({0.5, 0.9, 0.5, 0.5}, 2, 2);
  CHECK_THROWS_AS(ctc_loss(nd::constant(bad), {1}), std::invalid_argument);
}

TEST_CASE("ctc: gradient matches finite differences") {
  Rng rng(47);
  const int T = 4, V1 = 3;
  Array logits({T, V1});
  for (int64_t i = 0; i < logits.size(); ++i) logits[i] = rng.uniform(-1, 1);
  const std::vector<int> targets = {1, 2};

  auto eval = [&](const Array& in) {
    nd::Tape tape;
    Var x = tape.leaf(in);
    Var lp = nd::log_softmax_axis(x, 1);
    return ctc_loss(lp, targets);
  };

  nd::Tape tape;
  Var x = tape.leaf(logits);
  Var loss = ctc_loss(nd::log_softmax_axis(x, 1), targets);
  tape.backward(loss);
  Array g = tape.grad(x.node, x.shape());

  const double h = 1e-6;
  for (int64_t i = 0; i < logits.size(); ++i) {
    Array up = logits.clone(), dn = logits.clone();
    up[i] += h;
    dn[i] -= h;
    const double fd = (eval(up).v[0] - eval(dn).v[0]) / (2 * h);
    CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("kl distillation: identical streams vanish") {
  Rng rng(53);
  Array lp = random_log_prob_rows(6, 4, rng);
  std::vector<Var> streams = {nd::constant(lp), nd::constant(lp.clone()),
                              nd::constant(lp.clone())};
  for (bool dir : {true, false}) {
    Var kl = kl_distillation(streams, 8.0, dir);
    CHECK(std::abs(kl.v[0]) < 1e-12);
  }
}

TEST_CASE("kl distillation: matches a direct computation") {
  Rng rng(59);
  const int T = 3, V1 = 4;
  const double tau = 2.0;
  Array a = random_log_prob_rows(T, V1, rng);
  Array b = random_log_prob_rows(T, V1, rng);
  std::vector<Var> streams = {nd::constant(a), nd::constant(b)};

  // Plain-loop reference for both directions.
  auto soften = [&](const Array& lp) {
    Array out({T, V1});
    for (int t = 0; t < T; ++t) {
      double mx = -1e300;
      for (int v = 0; v < V1; ++v) mx = std::max(mx, lp[static_cast<int64_t>(t) * V1 + v] / tau);
      double z = 0;
      for (int v = 0; v < V1; ++v) z += std::exp(lp[static_cast<int64_t>(t) * V1 + v] / tau - mx);
      for (int v = 0; v < V1; ++v)
        out[static_cast<int64_t>(t) * V1 + v] =
            lp[static_cast<int64_t>(t) * V1 + v] / tau - mx - std::log(z);
    }
    return out;
  };
  Array sa = soften(a), sb = soften(b);
  for (bool dir : {true, false}) {
    double expect = 0;
    for (int t = 0; t < T; ++t) {
      double term_a = 0, term_b = 0;
      for (int v = 0; v < V1; ++v) {
        const int64_t i = static_cast<int64_t>(t) * V1 + v;
        const double teacher = 0.5 * (std::exp(sa[i]) + std::exp(sb[i]));
        if (dir) {
          term_a += teacher * (std::log(teacher) - sa[i]);
          term_b += teacher * (std::log(teacher) - sb[i]);
        } else {
          term_a += std::exp(sa[i]) * (sa[i] - std::log(teacher));
          term_b += std::exp(sb[i]) * (sb[i] - std::log(teacher));
        }
      }
      expect += term_a + term_b;
    }
    expect = expect / T * tau * tau;
    Var kl = kl_distillation(streams, tau, dir);
    CHECK(kl.v[0] == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("kl distillation: non-negative, zero only at agreement") {
  for (int it = 0; it < 30; ++it) {
    Rng rng = derived_rng({61, static_cast<uint64_t>(it)});
    const int T = 1 + rng.uniform_int(0, 4);
    const int V1 = 2 + rng.uniform_int(0, 3);
    std::vector<Var> streams;
    for (int s = 0; s < 2 + rng.uniform_int(0, 2); ++s)
      streams.push_back(nd::constant(random_log_prob_rows(T, V1, rng)));
    const double tau = 1.0 + rng.uniform(0, 7);
    for (bool dir : {true, false}) {
      Var kl = kl_distillation(streams, tau, dir);
      CHECK(kl.v[0] >= -1e-12);
      CHECK(kl.v[0] > 1e-8);  // random streams essentially never agree
    }
  }
}

TEST_CASE("kl distillation: teacher receives no gradient") {
  Rng rng(67);
  const int T = 3, V1 = 3;
  Array la({T, V1}), lb({T, V1});
  for (int64_t i = 0; i < la.size(); ++i) la[i] = rng.uniform(-1, 1);
  for (int64_t i = 0; i < lb.size(); ++i) lb[i] = rng.uniform(-1, 1);

  nd::Tape tape;
  Var a = tape.leaf(la);
  Var b = tape.leaf(lb);
  Var kl = kl_distillation({nd::log_softmax_axis(a, 1), nd::log_softmax_axis(b, 1)}, 4.0);
  tape.backward(kl);
  Array ga = tape.grad(a.node, a.shape());

  // Finite differences see the full dependency (the teacher moves with the
  // logits); the tape must only report the student-side gradient. Verify the
  // detachment by recomputing the student term against a frozen teacher.
  const double h = 1e-6;
  for (int64_t i = 0; i < la.size(); ++i) {
    // Frozen-teacher eval: recompute KL where the teacher uses base logits.
    auto frozen = [&](const Array& xa) {
      nd::Tape t2;
      Var sa = nd::log_softmax_axis(t2.leaf(xa), 1);
      Var sb = nd::log_softmax_axis(nd::constant(lb), 1);
      // teacher from the *base* la, not xa
      Var ta = nd::log_softmax_axis(nd::constant(la), 1);
      // soften all at tau
      const double tau = 4.0;
      Array soft_t({T, V1});
      {
        Var sta = nd::log_softmax_axis(nd::affine(ta, 1.0 / tau, 0.0), 1);
        Var stb = nd::log_softmax_axis(nd::affine(sb, 1.0 / tau, 0.0), 1);
        for (int64_t k = 0; k < soft_t.size(); ++k)
          soft_t[k] = 0.5 * (std::exp(sta.v[k]) + std::exp(stb.v[k]));
      }
      Var ssa = nd::log_softmax_axis(nd::affine(sa, 1.0 / tau, 0.0), 1);
      Var ssb = nd::log_softmax_axis(nd::affine(sb, 1.0 / tau, 0.0), 1);
      double total = 0;
      for (int t = 0; t < T; ++t)
        for (int v = 0; v < V1; ++v) {
          const int64_t k = static_cast<int64_t>(t) * V1 + v;
          total += soft_t[k] * (std::log(soft_t[k]) - ssa.v[k]);
          total += soft_t[k] * (std::log(soft_t[k]) - ssb.v[k]);
        }
      return total / T * tau * tau;
    };
    Array up = la.clone(), dn = la.clone();
    up[i] += h;
    dn[i] -= h;
    const double fd_frozen = (frozen(up) - frozen(dn)) / (2 * h);
    CHECK(ga[i] == doctest::Approx(fd_frozen).epsilon(1e-4));
  }
}

TEST_CASE("kl distillation: needs at least two streams") {
  Rng rng(71);
  std::vector<Var> one = {nd::constant(random_log_prob_rows(3, 3, rng))};
  CHECK_THROWS_AS(kl_distillation(one, 8.0), std::invalid_argument);
  CHECK_THROWS_AS(kl_distillation({}, 8.0), std::invalid_argument);
}

TEST_CASE("total loss: lambda zero reduces to summed ctc") {
  Rng rng(73);
  const int T = 5, V = 3;
  std::vector<Var> logits;
  nd::Tape tape;
  for (int s = 0; s < 4; ++s) {
    Array a({T, V + 1});
    for (int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-1, 1);
    logits.push_back(tape.leaf(a));
  }
  const std::vector<int> targets = {1, 3};
  LossBreakdown lb = total_loss(logits, targets, 0.0, 8.0);
  REQUIRE(lb.ctc.size() == 4);
  REQUIRE(lb.distillation.size() == 4);
  double sum = 0;
  for (int s = 0; s < 4; ++s) {
    const double solo =
        ctc_loss(nd::log_softmax_axis(nd::constant(logits[static_cast<size_t>(s)].v), 1),
                 targets).v[0];
    CHECK(lb.ctc[static_cast<size_t>(s)] == doctest::Approx(solo).epsilon(1e-12));
    CHECK(lb.distillation[static_cast<size_t>(s)] == 0.0);
    sum += solo;
  }
  CHECK(lb.total_value == doctest::Approx(sum).epsilon(1e-12));
  CHECK(lb.total.v[0] == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("total loss: distillation term wiring and stream-count rules") {
  Rng rng(79);
  const int T = 4, V = 2;
  std::vector<Var> logits;
  for (int s = 0; s < 2; ++s) {
    Array a({T, V + 1});
    for (int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-1, 1);
    logits.push_back(nd::constant(a));
  }
  const std::vector<int> targets = {2};
  const double lambda = 0.7, tau = 3.0;
  LossBreakdown lb = total_loss(logits, targets, lambda, tau);

  std::vector<Var> lps;
  double ctc_sum = 0;
  for (const Var& l : logits) {
    Var lp = nd::log_softmax_axis(nd::constant(l.v), 1);
    ctc_sum += ctc_loss(lp, targets).v[0];
    lps.push_back(lp);
  }
  const double kl = kl_distillation(lps, tau).v[0];
  CHECK(lb.total_value == doctest::Approx(ctc_sum + lambda * kl).epsilon(1e-10));
  double dsum = 0;
  for (double d : lb.distillation) dsum += d;
  CHECK(dsum == doctest::Approx(kl).epsilon(1e-10));

  CHECK_THROWS_AS(total_loss({logits[0]}, targets, 1.0, tau), std::invalid_argument);
  CHECK_NOTHROW(total_loss({logits[0]}, targets, 0.0, tau));
  CHECK_THROWS_AS(total_loss({}, targets, 0.0, tau), std::invalid_argument);
  CHECK_THROWS_AS(total_loss(logits, targets, -0.5, tau), std::invalid_argument);
}

TEST_CASE("total loss: gradient matches finite differences") {
  Rng rng(83);
  const int T = 3, V = 2;
  std::vector<Array> base;
  for (int s = 0; s < 2; ++s) {
    Array a({T, V + 1});
    for (int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-1, 1);
    base.push_back(a);
  }
  const std::vector<int> targets = {1};
  const double lambda = 1.0, tau = 2.0;

  // The distillation teacher is detached, so the reference derivative must
  // hold the teacher at the base point rather than let fd move it.
  auto log_softmax_rows = [&](const Array& logits) {
    Array lp({T, V + 1});
    for (int t = 0; t < T; ++t) {
      double mx = -1e300;
      for (int v = 0; v <= V; ++v)
        mx = std::max(mx, logits[static_cast<int64_t>(t) * (V + 1) + v]);
      double z = 0;
      for (int v = 0; v <= V; ++v)
        z += std::exp(logits[static_cast<int64_t>(t) * (V + 1) + v] - mx);
      for (int v = 0; v <= V; ++v)
        lp[static_cast<int64_t>(t) * (V + 1) + v] =
            logits[static_cast<int64_t>(t) * (V + 1) + v] - mx - std::log(z);
    }
    return lp;
  };
  auto soften = [&](const Array& lp) {
    Array scaled = lp.clone();
    for (int64_t i = 0; i < scaled.size(); ++i) scaled[i] /= tau;
    return log_softmax_rows(scaled);
  };
  Array teacher({T, V + 1});
  {
    std::vector<Array> soft;
    for (const Array& a : base) soft.push_back(soften(log_softmax_rows(a)));
    for (int64_t i = 0; i < teacher.size(); ++i)
      teacher[i] = 0.5 * (std::exp(soft[0][i]) + std::exp(soft[1][i]));
  }
  auto eval_frozen = [&](const std::vector<Array>& in) {
    double total = 0;
    for (const Array& a : in) {
      Array lp = log_softmax_rows(a);
      total += ctc_loss(nd::constant(lp), targets).v[0];
      Array soft = soften(lp);
      double kl = 0;
      for (int64_t i = 0; i < soft.size(); ++i)
        kl += teacher[i] * (std::log(teacher[i]) - soft[i]);
      total += lambda * kl / T * tau * tau;
    }
    return total;
  };

  nd::Tape tape;
  std::vector<Var> ls;
  for (const Array& a : base) ls.push_back(tape.leaf(a));
  LossBreakdown lb = total_loss(ls, targets, lambda, tau);
  tape.backward(lb.total);

  const double h = 1e-6;
  for (size_t s = 0; s < base.size(); ++s) {
    Array g = tape.grad(ls[s].node, ls[s].shape());
    for (int64_t i = 0; i < base[s].size(); ++i) {
      std::vector<Array> up = {base[0].clone(), base[1].clone()};
      std::vector<Array> dn = {base[0].clone(), base[1].clone()};
      up[s][i] += h;
      dn[s][i] -= h;
      const double fd = (eval_frozen(up) - eval_frozen(dn)) / (2 * h);
      CHECK(g[i] == doctest::Approx(fd).epsilon(2e-5));
    }
  }
}
