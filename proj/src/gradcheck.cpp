#include "stark/gradcheck.hpp"

#include <cmath>
#include <map>

#include "stark/decoder.hpp"
#include "stark/encoder.hpp"
#include "stark/model.hpp"
#include "stark/objective.hpp"
#include "stark/rng.hpp"

namespace stark::gradcheck {

using nd::Array;
using nd::Shape;
using nd::Tape;
using nd::Var;

namespace {

bool entry_ok(double fd, double tg, double tol, double floor, double& err_out) {
  double diff = std::fabs(fd - tg);
  if (diff < floor) {
    err_out = diff;
    return true;
  }
  double rel = diff / std::max(std::fabs(fd), std::fabs(tg));
  err_out = rel;
  return rel < tol;
}

double eval_scalar(const std::vector<Array>& inputs, const BuildFn& build) {
  Tape t;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Array& a : inputs) vars.push_back(t.leaf(a));
  Var root = build(t, vars);
  if (root.size() != 1) throw std::invalid_argument("gradcheck build function must return a scalar");
  return root.v[0];
}

}  // namespace

CheckResult check(const std::string& name, std::vector<Array> inputs, const BuildFn& build,
                  double h, double tol, double floor) {
  CheckResult res;
  res.name = name;
  res.pass = true;

  // tape gradients
  std::vector<Array> tape_grads;
  {
    Tape t;
    std::vector<Var> vars;
    for (const Array& a : inputs) vars.push_back(t.leaf(a));
    Var root = build(t, vars);
    if (root.size() != 1) throw std::invalid_argument("gradcheck build function must return a scalar");
    t.backward(root);
    for (const Var& v : vars) tape_grads.push_back(root.tape->grad(v.node, v.shape()));
  }

  for (size_t ai = 0; ai < inputs.size(); ++ai) {
    Array& a = inputs[ai];
    for (int64_t i = 0; i < a.size(); ++i) {
      double keep = a[i];
      a[i] = keep + h;
      double lp = eval_scalar(inputs, build);
      a[i] = keep - h;
      double lm = eval_scalar(inputs, build);
      a[i] = keep;
      double fd = (lp - lm) / (2.0 * h);
      double err = 0.0;
      bool ok = entry_ok(fd, tape_grads[ai][i], tol, floor, err);
      res.max_err = std::max(res.max_err, err);
      res.checked++;
      if (!ok && res.pass) {
        res.pass = false;
        res.detail = "input " + std::to_string(ai) + " entry " + std::to_string(i) + ": fd=" +
                     std::to_string(fd) + " tape=" + std::to_string(tape_grads[ai][i]);
      }
    }
  }
  return res;
}

// --- random input helpers ----------------------------------------------------

namespace {

Array rand_array(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Array a(std::move(s));
  for (int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

// Entries pairwise separated along every lane so max/pool argmax choices
// survive the finite-difference step.
Array rand_separated(Rng& rng, Shape s, double gap = 1e-2) {
  Array a(std::move(s));
  std::vector<double> levels(static_cast<size_t>(a.size()));
  for (size_t i = 0; i < levels.size(); ++i)
    levels[i] = static_cast<double>(i) * gap * 2.0 - static_cast<double>(a.size()) * gap;
  rng.shuffle(levels);
  for (int64_t i = 0; i < a.size(); ++i) a[i] = levels[static_cast<size_t>(i)] + rng.uniform(-gap * 0.2, gap * 0.2);
  return a;
}

using SuiteFn = std::vector<CheckResult> (*)(uint64_t seed);

std::vector<CheckResult> suite_matmul(uint64_t seed) {
  Rng rng(seed);
  auto f = [](Tape&, std::vector<Var>& v) { return nd::sum_all(nd::mul(nd::matmul(v[0], v[1]), v[2])); };
  return {check("matmul", {rand_array(rng, {3, 4}), rand_array(rng, {4, 2}), rand_array(rng, {3, 2})}, f)};
}

std::vector<CheckResult> suite_elementwise(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  auto weighted = [](nd::EwOp op) {
    return [op](Tape&, std::vector<Var>& v) { return nd::sum_all(nd::mul(nd::elementwise(v[0], v[1], op), v[2])); };
  };
  out.push_back(check("elementwise.add", {rand_array(rng, {2, 3}), rand_array(rng, {2, 3}), rand_array(rng, {2, 3})},
                      weighted(nd::EwOp::add)));
  out.push_back(check("elementwise.sub.broadcast",
                      {rand_array(rng, {2, 1, 3}), rand_array(rng, {4, 3}), rand_array(rng, {2, 4, 3})},
                      weighted(nd::EwOp::sub)));
  out.push_back(check("elementwise.mul.broadcast",
                      {rand_array(rng, {2, 1}), rand_array(rng, {2, 3}), rand_array(rng, {2, 3})},
                      weighted(nd::EwOp::mul)));
  out.push_back(check("elementwise.div",
                      {rand_array(rng, {3, 2}), rand_array(rng, {3, 2}, 0.5, 1.5), rand_array(rng, {3, 2})},
                      weighted(nd::EwOp::div)));
  out.push_back(check("elementwise.logaddexp",
                      {rand_array(rng, {2, 3}, -3, 3), rand_array(rng, {3}, -3, 3), rand_array(rng, {2, 3})},
                      weighted(nd::EwOp::logaddexp)));
  return out;
}

std::vector<CheckResult> suite_reduce(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  auto f = [](nd::ReduceOp op, int axis) {
    return [op, axis](Tape&, std::vector<Var>& v) { return nd::sum_all(nd::mul(nd::reduce(v[0], axis, op), v[1])); };
  };
  out.push_back(check("reduce.sum", {rand_array(rng, {2, 3, 4}), rand_array(rng, {2, 4})}, f(nd::ReduceOp::sum, 1)));
  out.push_back(check("reduce.mean", {rand_array(rng, {2, 3, 4}), rand_array(rng, {3, 4})}, f(nd::ReduceOp::mean, 0)));
  out.push_back(
      check("reduce.max", {rand_separated(rng, {2, 3, 4}), rand_array(rng, {2, 3})}, f(nd::ReduceOp::max, 2)));
  return out;
}

std::vector<CheckResult> suite_softmax(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  auto f = [](int axis) {
    return [axis](Tape&, std::vector<Var>& v) { return nd::sum_all(nd::mul(nd::softmax_axis(v[0], axis), v[1])); };
  };
  out.push_back(check("softmax_axis.ax1", {rand_array(rng, {2, 3}, -2, 2), rand_array(rng, {2, 3})}, f(1)));
  out.push_back(check("softmax_axis.ax0", {rand_array(rng, {3, 2, 2}, -2, 2), rand_array(rng, {3, 2, 2})}, f(0)));
  auto g = [](int axis) {
    return [axis](Tape&, std::vector<Var>& v) { return nd::sum_all(nd::mul(nd::log_softmax_axis(v[0], axis), v[1])); };
  };
  out.push_back(check("log_softmax_axis", {rand_array(rng, {3, 4}, -2, 2), rand_array(rng, {3, 4})}, g(1)));
  return out;
}

std::vector<CheckResult> suite_unary(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  auto weighted = [](Var (*op)(const Var&)) {
    return [op](Tape&, std::vector<Var>& v) { return nd::sum_all(nd::mul(op(v[0]), v[1])); };
  };
  out.push_back(check("leaky_relu", {rand_separated(rng, {3, 3}), rand_array(rng, {3, 3})},
                      [](Tape&, std::vector<Var>& v) { return nd::sum_all(nd::mul(nd::leaky_relu(v[0], 0.1), v[1])); }));
  out.push_back(check("exp", {rand_array(rng, {2, 3}, -1, 1), rand_array(rng, {2, 3})}, weighted(&nd::exp)));
  out.push_back(check("log", {rand_array(rng, {2, 3}, 0.2, 2.0), rand_array(rng, {2, 3})}, weighted(&nd::log)));
  out.push_back(check("sqrt", {rand_array(rng, {2, 3}, 0.2, 2.0), rand_array(rng, {2, 3})}, weighted(&nd::sqrt)));
  out.push_back(check("rsqrt", {rand_array(rng, {2, 3}, 0.2, 2.0), rand_array(rng, {2, 3})}, weighted(&nd::rsqrt)));
  out.push_back(check("affine", {rand_array(rng, {2, 3}), rand_array(rng, {2, 3})},
                      [](Tape&, std::vector<Var>& v) { return nd::sum_all(nd::mul(nd::affine(v[0], 1.7, -0.3), v[1])); }));
  return out;
}

std::vector<CheckResult> suite_layout(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  out.push_back(check("reshape", {rand_array(rng, {2, 6}), rand_array(rng, {3, 4})},
                      [](Tape&, std::vector<Var>& v) { return nd::sum_all(nd::mul(nd::reshape(v[0], {3, 4}), v[1])); }));
  out.push_back(check("transpose", {rand_array(rng, {2, 3, 4}), rand_array(rng, {4, 2, 3})},
                      [](Tape&, std::vector<Var>& v) {
                        return nd::sum_all(nd::mul(nd::transpose(v[0], {2, 0, 1}), v[1]));
                      }));
  out.push_back(check("slice", {rand_array(rng, {3, 5}), rand_array(rng, {3, 2})},
                      [](Tape&, std::vector<Var>& v) { return nd::sum_all(nd::mul(nd::slice(v[0], 1, 1, 2), v[1])); }));
  out.push_back(check("concat", {rand_array(rng, {2, 2}), rand_array(rng, {2, 3}), rand_array(rng, {2, 5})},
                      [](Tape&, std::vector<Var>& v) {
                        return nd::sum_all(nd::mul(nd::concat({v[0], v[1]}, 1), v[2]));
                      }));
  out.push_back(check("patchify", {rand_array(rng, {2, 4, 3}), rand_array(rng, {2, 4, 3, 3})},
                      [](Tape&, std::vector<Var>& v) { return nd::sum_all(nd::mul(nd::patchify(v[0], 3), v[1])); }));
  out.push_back(check("maxpool_time2", {rand_separated(rng, {3, 5}), rand_array(rng, {3, 3})},
                      [](Tape&, std::vector<Var>& v) { return nd::sum_all(nd::mul(nd::maxpool_time2(v[0]), v[1])); }));
  return out;
}

// --- model-level suites --------------------------------------------------------

// Consumes vars in declaration order to rebuild an AttentionParams.
AttentionParams module_params_from(std::vector<Var>& v, size_t& c, int kernel) {
  AttentionParams p;
  p.kernel = kernel;
  p.w_qk = v[c++]; p.b_qk = v[c++];
  p.alpha = v[c++]; p.beta = v[c++];
  p.gamma = v[c++]; p.delta = v[c++];
  p.w_out = v[c++]; p.b_out = v[c++];
  p.w_res1 = v[c++]; p.b_res1 = v[c++];
  p.w_res2 = v[c++]; p.b_res2 = v[c++];
  p.w_ffn1 = v[c++]; p.b_ffn1 = v[c++];
  p.w_ffn2 = v[c++]; p.b_ffn2 = v[c++];
  return p;
}

std::vector<Array> module_param_arrays(Rng& rng, int c_in, int c_out, int S, int Cp,
                                       int P, int e) {
  std::vector<Array> a;
  a.push_back(rand_array(rng, {c_in, 2 * S * Cp}, -0.5, 0.5));
  a.push_back(rand_array(rng, {2 * S * Cp}, -0.2, 0.2));
  a.push_back(rand_array(rng, {S, P}, 0.6, 1.4));   // alpha
  a.push_back(rand_array(rng, {S, P}, -0.2, 0.2));  // beta
  a.push_back(rand_array(rng, {S, P}, 0.6, 1.4));   // gamma
  a.push_back(rand_array(rng, {S, P}, -0.2, 0.2));  // delta
  a.push_back(rand_array(rng, {S * c_in, c_out}, -0.5, 0.5));
  a.push_back(rand_array(rng, {c_out}, -0.2, 0.2));
  a.push_back(rand_array(rng, {c_in, c_out}, -0.5, 0.5));
  a.push_back(rand_array(rng, {c_out}, -0.2, 0.2));
  a.push_back(rand_array(rng, {c_in, c_out}, -0.5, 0.5));
  a.push_back(rand_array(rng, {c_out}, -0.2, 0.2));
  a.push_back(rand_array(rng, {c_out, e * c_out}, -0.5, 0.5));
  a.push_back(rand_array(rng, {e * c_out}, -0.2, 0.2));
  a.push_back(rand_array(rng, {e * c_out, c_out}, -0.5, 0.5));
  a.push_back(rand_array(rng, {c_out}, -0.2, 0.2));
  return a;
}

std::vector<CheckResult> suite_attention(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  const int S = 2, Cp = 2, T = 3, k = 3, P = 2;
  out.push_back(check(
      "temporal_attention",
      {rand_array(rng, {S, Cp, T, P}), rand_array(rng, {S, Cp, T, k, P}),
       rand_array(rng, {S, P}, 0.6, 1.4), rand_array(rng, {S, P}, -0.2, 0.2),
       rand_array(rng, {S, T, k, P})},
      [](Tape&, std::vector<Var>& v) {
        return nd::sum_all(nd::mul(temporal_attention(v[0], v[1], v[2], v[3]), v[4]));
      }));
  out.push_back(check(
      "spatial_attention",
      {rand_array(rng, {S, Cp, T, P}), rand_array(rng, {S, Cp, T, P}),
       rand_array(rng, {S, P}, 0.6, 1.4), rand_array(rng, {S, P}, -0.2, 0.2),
       rand_array(rng, {S, P, P})},
      [](Tape&, std::vector<Var>& v) {
        return nd::sum_all(nd::mul(spatial_attention(v[0], v[1], v[2], v[3]), v[4]));
      }));
  const int C = 2;
  out.push_back(check(
      "aggregate",
      {rand_array(rng, {S, T, k, P}), rand_array(rng, {S, P, P}), rand_array(rng, {C, T, P}),
       rand_array(rng, {C, T, k, P}), rand_array(rng, {S * C, T, P})},
      [](Tape&, std::vector<Var>& v) {
        return nd::sum_all(nd::mul(aggregate(v[0], v[1], v[2], v[3]), v[4]));
      }));
  return out;
}

std::vector<CheckResult> suite_stem(uint64_t seed) {
  Rng rng(seed);
  const int C0 = 4, T = 5, P = 3;
  return {check("input_stem",
                {rand_array(rng, {3, T, P}, -0.9, 0.9), rand_array(rng, {3, C0}, -0.5, 0.5),
                 rand_array(rng, {C0}, -0.2, 0.2), rand_array(rng, {C0, T, P})},
                [](Tape&, std::vector<Var>& v) {
                  StemParams stem{v[1], v[2]};
                  return nd::sum_all(nd::mul(input_stem(v[0], stem), v[3]));
                })};
}

std::vector<CheckResult> suite_module(uint64_t seed) {
  Rng rng(seed);
  // The worked tiny configuration: C=4, S=1, C'=2, k=3, T=4, P=3.
  const int C = 4, S = 1, Cp = 2, k = 3, T = 4, P = 3, e = 2;
  std::vector<Array> inputs = {rand_array(rng, {C, T, P}, -0.9, 0.9)};
  for (Array& a : module_param_arrays(rng, C, C, S, Cp, P, e)) inputs.push_back(std::move(a));
  return {check("stark_module", std::move(inputs),
                [k](Tape&, std::vector<Var>& v) {
                  size_t c = 1;
                  AttentionParams p = module_params_from(v, c, k);
                  return nd::mean_all(stark_module(v[0], p, 0.1));
                })};
}

std::vector<CheckResult> suite_encoder(uint64_t seed) {
  Rng rng(seed);
  const int C0 = 2, C1 = 3, S = 1, Cp = 2, k = 3, T = 5, P = 2, e = 2;
  std::vector<Array> inputs = {rand_array(rng, {3, T, P}, -0.9, 0.9),
                               rand_array(rng, {3, C0}, -0.5, 0.5),
                               rand_array(rng, {C0}, -0.2, 0.2)};
  for (Array& a : module_param_arrays(rng, C0, C1, S, Cp, P, e)) inputs.push_back(std::move(a));
  return {check("encoder_forward", std::move(inputs),
                [k](Tape&, std::vector<Var>& v) {
                  StreamEncoderParams enc;
                  enc.stem.w = v[1];
                  enc.stem.b = v[2];
                  size_t c = 3;
                  enc.modules.push_back(module_params_from(v, c, k));
                  return nd::mean_all(encoder_forward(v[0], enc, 0.1));
                })};
}

std::vector<Array> head_param_arrays(Rng& rng, int W, int hidden, int ffn, int v1) {
  std::vector<Array> a;
  a.push_back(rand_array(rng, {W, hidden}, -0.5, 0.5));
  a.push_back(rand_array(rng, {hidden}, -0.2, 0.2));
  a.push_back(rand_array(rng, {hidden}, 0.6, 1.4));   // norm scale
  a.push_back(rand_array(rng, {hidden}, -0.2, 0.2));  // norm shift
  a.push_back(rand_array(rng, {hidden, ffn}, -0.5, 0.5));
  a.push_back(rand_array(rng, {ffn}, -0.2, 0.2));
  a.push_back(rand_array(rng, {ffn, hidden}, -0.5, 0.5));
  a.push_back(rand_array(rng, {hidden}, -0.2, 0.2));
  a.push_back(rand_array(rng, {hidden, v1}, -0.5, 0.5));
  a.push_back(rand_array(rng, {v1}, -0.2, 0.2));
  return a;
}

HeadParams head_params_from(std::vector<Var>& v, size_t& c) {
  HeadParams p;
  p.w_in = v[c++]; p.b_in = v[c++];
  p.norm_scale = v[c++]; p.norm_shift = v[c++];
  p.w_ffn1 = v[c++]; p.b_ffn1 = v[c++];
  p.w_ffn2 = v[c++]; p.b_ffn2 = v[c++];
  p.w_cls = v[c++]; p.b_cls = v[c++];
  return p;
}

std::vector<CheckResult> suite_head(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  const int T = 4, W = 3, hidden = 4, ffn = 6, v1 = 3;
  // Eval mode: running statistics are frozen state.
  auto mu = std::make_shared<Array>(rand_array(rng, {hidden}, -0.3, 0.3));
  auto var = std::make_shared<Array>(rand_array(rng, {hidden}, 0.5, 1.5));
  {
    std::vector<Array> inputs = {rand_array(rng, {T, W})};
    for (Array& a : head_param_arrays(rng, W, hidden, ffn, v1)) inputs.push_back(std::move(a));
    inputs.push_back(rand_array(rng, {T, v1}));
    out.push_back(check("head_forward.eval", std::move(inputs),
                        [mu, var](Tape&, std::vector<Var>& v) {
                          size_t c = 1;
                          HeadParams p = head_params_from(v, c);
                          p.running_mean = mu.get();
                          p.running_var = var.get();
                          return nd::sum_all(
                              nd::mul(head_forward(v[0], p, false, 0.1), v[c]));
                        }));
  }
  {
    std::vector<Array> inputs = {rand_array(rng, {T, W})};
    for (Array& a : head_param_arrays(rng, W, hidden, ffn, v1)) inputs.push_back(std::move(a));
    inputs.push_back(rand_array(rng, {T, v1}));
    out.push_back(check("head_forward.train", std::move(inputs),
                        [](Tape&, std::vector<Var>& v) {
                          size_t c = 1;
                          HeadParams p = head_params_from(v, c);
                          return nd::sum_all(
                              nd::mul(head_forward(v[0], p, true, 0.1), v[c]));
                        }));
  }
  return out;
}

std::vector<CheckResult> suite_ctc(uint64_t seed) {
  Rng rng(seed);
  const int T = 4, V1 = 3;
  return {check("ctc_loss",
                {rand_array(rng, {T, V1}, -1.5, 1.5)},
                [](Tape&, std::vector<Var>& v) {
                  return ctc_loss(nd::log_softmax_axis(v[0], 1), {1, 2});
                })};
}

// --- frozen-teacher distillation helpers --------------------------------------
//
// The distillation teacher is detached by design: the tape reports the
// gradient with the teacher held constant, while naive central differences
// re-derive the teacher at every perturbed point and so measure a different
// function. The distillation suites therefore check two facts that together
// pin the objective:
//   1. finite differences of the objective *with the teacher frozen at the
//      base point* match that frozen function's tape gradient, and
//   2. at the base point the production objective (which recomputes and then
//      detaches the teacher) agrees with the frozen composition in both value
//      and tape gradient.

Var softened_log_probs(const Var& logits, double tau) {
  return nd::log_softmax_axis(nd::affine(nd::log_softmax_axis(logits, 1), 1.0 / tau, 0.0), 1);
}

// Per-frame mean of the temperature-softened stream distributions, evaluated
// numerically at the given logits (same accumulation order as the objective).
Array teacher_probs(const std::vector<Array>& logits, double tau) {
  const int n = static_cast<int>(logits.size());
  Array teacher(logits[0].shape);
  for (const Array& a : logits) {
    Var s = softened_log_probs(nd::constant(a), tau);
    for (int64_t i = 0; i < teacher.size(); ++i) teacher[i] += std::exp(s.v[i]) / n;
  }
  return teacher;
}

Var frozen_distillation(const std::vector<Var>& stream_logits, const Array& teacher, double tau,
                        bool teacher_to_student) {
  Array teacher_log(teacher.shape);
  for (int64_t i = 0; i < teacher.size(); ++i) teacher_log[i] = std::log(teacher[i]);
  Var tp = nd::constant(teacher);
  Var tlog = nd::constant(teacher_log);
  Var total;
  for (size_t i = 0; i < stream_logits.size(); ++i) {
    Var s = softened_log_probs(stream_logits[i], tau);
    Var weighted = teacher_to_student ? nd::mul(tp, nd::sub(tlog, s))
                                      : nd::mul(nd::exp(s), nd::sub(s, tlog));
    Var term = nd::affine(
        nd::reduce(nd::reduce(weighted, 1, nd::ReduceOp::sum), 0, nd::ReduceOp::mean), tau * tau,
        0.0);
    total = i == 0 ? term : nd::add(total, term);
  }
  return total;
}

Var frozen_total(const std::vector<Var>& stream_logits, const std::vector<int>& targets,
                 const Array& teacher, double lambda, double tau) {
  Var total;
  for (size_t i = 0; i < stream_logits.size(); ++i) {
    Var c = ctc_loss(nd::log_softmax_axis(stream_logits[i], 1), targets);
    total = i == 0 ? c : nd::add(total, c);
  }
  return nd::add(total, nd::affine(frozen_distillation(stream_logits, teacher, tau, true), lambda,
                                   0.0));
}

// Evaluates two scalar builds at the same inputs and requires agreement of
// value and tape gradient; used to tie the production objective to the frozen
// composition the finite-difference check exercises.
CheckResult agree(const std::string& name, const std::vector<Array>& inputs, const BuildFn& a,
                  const BuildFn& b, double tol = 1e-12) {
  CheckResult res;
  res.name = name;
  res.pass = true;
  auto run = [&](const BuildFn& f, double& val, std::vector<Array>& grads) {
    Tape t;
    std::vector<Var> vars;
    for (const Array& arr : inputs) vars.push_back(t.leaf(arr));
    Var root = f(t, vars);
    if (root.size() != 1)
      throw std::invalid_argument("gradcheck build function must return a scalar");
    val = root.v[0];
    t.backward(root);
    for (const Var& v : vars) grads.push_back(t.grad(v.node, v.shape()));
  };
  double va = 0.0, vb = 0.0;
  std::vector<Array> ga, gb;
  run(a, va, ga);
  run(b, vb, gb);
  auto note = [&](const std::string& what, double x, double y) {
    double diff = std::fabs(x - y);
    res.max_err = std::max(res.max_err, diff);
    res.checked++;
    if (diff > tol && res.pass) {
      res.pass = false;
      res.detail = what + ": " + std::to_string(x) + " vs " + std::to_string(y);
    }
  };
  note("value", va, vb);
  for (size_t i = 0; i < ga.size(); ++i)
    for (int64_t j = 0; j < ga[i].size(); ++j)
      note("grad input " + std::to_string(i) + " entry " + std::to_string(j), ga[i][j], gb[i][j]);
  return res;
}

std::vector<CheckResult> suite_kl(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  const int T = 3, V1 = 4;
  const double tau = 2.0;
  for (bool dir : {true, false}) {
    std::vector<Array> inputs = {rand_array(rng, {T, V1}, -1.5, 1.5),
                                 rand_array(rng, {T, V1}, -1.5, 1.5)};
    auto teacher = std::make_shared<Array>(teacher_probs(inputs, tau));
    const std::string tag = dir ? "kl.teacher_to_student" : "kl.student_to_teacher";
    BuildFn frozen = [teacher, tau, dir](Tape&, std::vector<Var>& v) {
      return frozen_distillation({v[0], v[1]}, *teacher, tau, dir);
    };
    BuildFn production = [tau, dir](Tape&, std::vector<Var>& v) {
      std::vector<Var> lps = {nd::log_softmax_axis(v[0], 1), nd::log_softmax_axis(v[1], 1)};
      return kl_distillation(lps, tau, dir);
    };
    out.push_back(check(tag, inputs, frozen));
    out.push_back(agree(tag + ".detached", inputs, production, frozen));
  }
  return out;
}

std::vector<CheckResult> suite_total(uint64_t seed) {
  Rng rng(seed);
  const int T = 3, V1 = 3;
  const double lambda = 0.7, tau = 2.0;
  const std::vector<int> targets = {2};
  std::vector<Array> inputs;
  for (int s = 0; s < 4; ++s) inputs.push_back(rand_array(rng, {T, V1}, -1.2, 1.2));
  auto teacher = std::make_shared<Array>(teacher_probs(inputs, tau));
  BuildFn frozen = [teacher, targets, lambda, tau](Tape&, std::vector<Var>& v) {
    return frozen_total(v, targets, *teacher, lambda, tau);
  };
  BuildFn production = [targets, lambda, tau](Tape&, std::vector<Var>& v) {
    return total_loss({v[0], v[1], v[2], v[3]}, targets, lambda, tau).total;
  };
  return {check("total_loss", inputs, frozen),
          agree("total_loss.detached", inputs, production, frozen)};
}

std::vector<CheckResult> suite_e2e(uint64_t seed) {
  StreamLayout layout;
  layout.name = "tiny4";
  layout.points = 4;
  layout.body = {0};
  layout.left = {1};
  layout.right = {2};
  layout.face = {3};
  ModelConfig mc;
  mc.stem_channels = 2;
  mc.module_channels = {2};
  mc.heads = 1;
  mc.head_dim = 1;
  mc.kernel = 3;
  mc.decoder_hidden = 4;
  mc.decoder_ffn = 4;
  mc.layout = "tiny4";
  auto model = std::make_shared<StarkModel>(mc, layout, 1);
  model->init_params(seed);

  const double lambda = 1.0, tau = 2.0;
  const std::vector<int> targets = {1};
  Rng rng(mix_u64(seed, 0x99));
  auto frames = std::make_shared<Array>(rand_array(rng, {6, 4, 3}, -0.9, 0.9));
  std::vector<Array> inputs;
  for (const ParamSlot& slot : model->slots())
    if (slot.trainable) inputs.push_back(slot.value.clone());

  // Teacher distribution captured at the base parameters.
  std::vector<Array> base_logits;
  {
    Tape t;
    BoundModel bm = model->bind(t);
    for (const Var& s : model->forward(bm, *frames, /*training=*/true))
      base_logits.push_back(s.v.clone());
  }
  auto teacher = std::make_shared<Array>(teacher_probs(base_logits, tau));

  BuildFn frozen = [model, frames, teacher, targets, lambda, tau](Tape&, std::vector<Var>& v) {
    BoundModel bm = model->assemble(v);
    std::array<Var, 4> lg = model->forward(bm, *frames, /*training=*/true);
    return frozen_total({lg.begin(), lg.end()}, targets, *teacher, lambda, tau);
  };
  BuildFn production = [model, frames, targets, lambda, tau](Tape&, std::vector<Var>& v) {
    BoundModel bm = model->assemble(v);
    std::array<Var, 4> lg = model->forward(bm, *frames, /*training=*/true);
    return total_loss({lg.begin(), lg.end()}, targets, lambda, tau).total;
  };
  return {check("model_total_loss", inputs, frozen),
          agree("model_total_loss.detached", inputs, production, frozen)};
}

std::map<std::string, SuiteFn>& registry() {
  static std::map<std::string, SuiteFn> reg = {
      {"matmul", suite_matmul},   {"elementwise", suite_elementwise}, {"reduce", suite_reduce},
      {"softmax", suite_softmax}, {"unary", suite_unary},             {"layout", suite_layout},
      {"attention", suite_attention}, {"stem", suite_stem},           {"module", suite_module},
      {"encoder", suite_encoder},     {"head", suite_head},           {"ctc", suite_ctc},
      {"kl", suite_kl},               {"total", suite_total},         {"e2e", suite_e2e},
  };
  return reg;
}

}  // namespace

std::vector<std::string> suite_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : registry()) names.push_back(k);
  return names;
}

std::vector<CheckResult> run(const std::string& name, uint64_t base_seed, int n_seeds) {
  std::vector<CheckResult> all;
  auto run_one = [&](const std::string& suite, SuiteFn fn) {
    for (int s = 0; s < n_seeds; ++s) {
      uint64_t seed = mix_u64(base_seed, static_cast<uint64_t>(s) + 1);
      for (CheckResult& r : fn(seed)) {
        r.name = suite + "/" + r.name + "#s" + std::to_string(s);
        all.push_back(std::move(r));
      }
    }
  };
  if (name == "all") {
    for (const auto& [k, fn] : registry()) run_one(k, fn);
  } else {
    auto it = registry().find(name);
    if (it == registry().end()) throw std::invalid_argument("unknown gradcheck suite: " + name);
    run_one(it->first, it->second);
  }
  return all;
}

}  // namespace stark::gradcheck
