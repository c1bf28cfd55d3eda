#include "stark/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace stark {

using nd::Var;

namespace {

constexpr double kLogZero = -1e30;  // additive -inf that stays finite

void check_log_probs(const Var& log_probs, const char* what) {
  if (log_probs.v.rank() != 2)
    throw std::invalid_argument(std::string(what) + ": log_probs must be [T', V+1], got " +
                                nd::shape_str(log_probs.shape()));
  const int T = log_probs.shape()[0], V1 = log_probs.shape()[1];
  for (int t = 0; t < T; ++t) {
    double sum = 0;
    for (int v = 0; v < V1; ++v) sum += std::exp(log_probs.v[static_cast<int64_t>(t) * V1 + v]);
    if (std::abs(sum - 1.0) > 1e-6)
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(t) +
                                  " exponentiates to " + std::to_string(sum) +
                                  ", not a distribution");
  }
}

// Per-stream softened KL terms against the detached per-frame ensemble;
// shared by kl_distillation and total_loss so the breakdown and the
// training objective are the same computation.
std::vector<Var> kl_terms(const std::vector<Var>& stream_log_probs, double tau,
                          bool teacher_to_student) {
  if (stream_log_probs.size() < 2)
    throw std::invalid_argument("distillation: needs at least 2 streams, got " +
                                std::to_string(stream_log_probs.size()));
  const nd::Shape shape = stream_log_probs[0].shape();
  for (const Var& s : stream_log_probs)
    if (s.shape() != shape)
      throw std::invalid_argument("distillation: stream shapes disagree (" +
                                  nd::shape_str(shape) + " vs " + nd::shape_str(s.shape()) +
                                  ")");
  const int T = shape[0], V1 = shape[1];
  const int n = static_cast<int>(stream_log_probs.size());

  std::vector<Var> soft;  // log softmax(logp / tau) per stream
  soft.reserve(stream_log_probs.size());
  for (const Var& s : stream_log_probs)
    soft.push_back(nd::log_softmax_axis(nd::affine(s, 1.0 / tau, 0.0), 1));

  // The teacher is the mean of the softened distributions, detached:
  // gradients must not pull the ensemble toward a weak stream.
  nd::Array teacher({T, V1});
  for (const Var& s : soft)
    for (int64_t i = 0; i < teacher.size(); ++i)
      teacher[i] += std::exp(s.v[i]) / n;
  nd::Array teacher_log({T, V1});
  for (int64_t i = 0; i < teacher.size(); ++i) teacher_log[i] = std::log(teacher[i]);
  Var tp = nd::constant(teacher);
  Var tlog = nd::constant(teacher_log);

  std::vector<Var> terms;
  terms.reserve(soft.size());
  for (const Var& s : soft) {
    Var weighted;
    if (teacher_to_student) {
      weighted = nd::mul(tp, nd::sub(tlog, s));  // KL(teacher || student)
    } else {
      weighted = nd::mul(nd::exp(s), nd::sub(s, tlog));  // KL(student || teacher)
    }
    Var per_frame = nd::reduce(weighted, 1, nd::ReduceOp::sum);  // [T]
    terms.push_back(nd::affine(nd::reduce(per_frame, 0, nd::ReduceOp::mean), tau * tau, 0.0));
  }
  return terms;
}

}  // namespace

Var ctc_loss(const Var& log_probs, const std::vector<int>& targets) {
  check_log_probs(log_probs, "ctc");
  const int T = log_probs.shape()[0], V1 = log_probs.shape()[1];
  const int L = static_cast<int>(targets.size());
  for (int id : targets)
    if (id < 1 || id >= V1)
      throw std::invalid_argument("ctc: target ID " + std::to_string(id) +
                                  " outside [1, " + std::to_string(V1 - 1) + "]");
  int repeats = 0;
  for (int i = 1; i < L; ++i)
    if (targets[static_cast<size_t>(i)] == targets[static_cast<size_t>(i - 1)]) ++repeats;
  if (L + repeats > T)
    throw InfeasibleTarget("ctc: target needs at least " + std::to_string(L + repeats) +
                           " frames (length " + std::to_string(L) + " + " +
                           std::to_string(repeats) + " adjacent repeats), only " +
                           std::to_string(T) + " available");

  // Extended label sequence: blank, j1, blank, j2, ..., blank.
  const int E = 2 * L + 1;
  std::vector<int> labels(static_cast<size_t>(E), 0);
  for (int i = 0; i < L; ++i) labels[static_cast<size_t>(2 * i + 1)] = targets[static_cast<size_t>(i)];

  // Emission gather as a one-hot matmul: (row @ G)[e] = log p_t(labels[e]).
  nd::Array gather({V1, E});
  for (int e = 0; e < E; ++e) gather[static_cast<int64_t>(labels[static_cast<size_t>(e)]) * E + e] = 1.0;
  Var G = nd::constant(gather);

  // States 0 (leading blank) and 1 (first label) can start a path.
  nd::Array init({1, E});
  for (int e = 0; e < E; ++e) init[e] = e <= 1 ? 0.0 : kLogZero;

  // A skip (e-2 -> e) is legal only onto a label state that differs from
  // the label two back; everything else gets the additive -inf.
  nd::Array skip({1, E});
  for (int e = 0; e < E; ++e) {
    bool allowed = e >= 2 && e % 2 == 1 &&
                   labels[static_cast<size_t>(e)] != labels[static_cast<size_t>(e - 2)];
    skip[e] = allowed ? 0.0 : kLogZero;
  }
  Var skip_mask = nd::constant(skip);
  Var pad1 = nd::constant(nd::Array::full({1, 1}, kLogZero));
  Var pad2 = nd::constant(nd::Array::full({1, 2}, kLogZero));

  Var alpha;
  for (int t = 0; t < T; ++t) {
    Var emit = nd::matmul(nd::slice(log_probs, 0, t, 1), G);  // [1, E]
    if (t == 0) {
      alpha = nd::add(emit, nd::constant(init));
      continue;
    }
    Var pred = alpha;
    if (E > 1) {
      Var s1 = nd::concat({pad1, nd::slice(alpha, 1, 0, E - 1)}, 1);
      pred = nd::logaddexp(alpha, s1);
    }
    if (E > 2) {
      Var s2 = nd::concat({pad2, nd::slice(alpha, 1, 0, E - 2)}, 1);
      pred = nd::logaddexp(pred, nd::add(s2, skip_mask));
    }
    alpha = nd::add(emit, pred);
  }

  Var total = nd::slice(alpha, 1, E - 1, 1);  // final blank state
  if (L > 0) total = nd::logaddexp(total, nd::slice(alpha, 1, E - 2, 1));
  return nd::affine(nd::reshape(total, {}), -1.0, 0.0);
}

Var kl_distillation(const std::vector<Var>& stream_log_probs, double tau,
                    bool teacher_to_student) {
  if (!(tau > 0)) throw std::invalid_argument("distillation: tau must be positive");
  for (const Var& s : stream_log_probs) check_log_probs(s, "distillation");
  std::vector<Var> terms = kl_terms(stream_log_probs, tau, teacher_to_student);
  Var total = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) total = nd::add(total, terms[i]);
  return total;
}

LossBreakdown total_loss(const std::vector<Var>& stream_logits,
                         const std::vector<int>& targets, double lambda, double tau,
                         bool teacher_to_student) {
  if (stream_logits.empty()) throw std::invalid_argument("loss: no streams");
  if (stream_logits.size() < 2 && lambda != 0.0)
    throw std::invalid_argument(
        "loss: distillation (lambda != 0) needs at least 2 streams; got 1");
  if (lambda < 0) throw std::invalid_argument("loss: lambda must be >= 0");

  std::vector<Var> log_probs;
  log_probs.reserve(stream_logits.size());
  for (const Var& s : stream_logits) {
    if (s.v.rank() != 2)
      throw std::invalid_argument("loss: stream logits must be [T', V+1], got " +
                                  nd::shape_str(s.shape()));
    log_probs.push_back(nd::log_softmax_axis(s, 1));
  }

  LossBreakdown out;
  Var total;
  for (size_t i = 0; i < log_probs.size(); ++i) {
    Var c = ctc_loss(log_probs[i], targets);
    out.ctc.push_back(c.v[0]);
    total = i == 0 ? c : nd::add(total, c);
  }
  if (lambda != 0.0) {
    std::vector<Var> terms = kl_terms(log_probs, tau, teacher_to_student);
    Var kl = terms[0];
    out.distillation.push_back(terms[0].v[0]);
    for (size_t i = 1; i < terms.size(); ++i) {
      kl = nd::add(kl, terms[i]);
      out.distillation.push_back(terms[i].v[0]);
    }
    total = nd::add(total, nd::affine(kl, lambda, 0.0));
  } else {
    out.distillation.assign(stream_logits.size(), 0.0);
  }
  out.total = total;
  out.total_value = total.v[0];
  return out;
}

}  // namespace stark
