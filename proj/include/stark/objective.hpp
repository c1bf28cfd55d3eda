#pragma once

#include <string>
#include <vector>

#include "stark/ndiff.hpp"

// Training objective: per-stream CTC plus KL cross-distillation of each
// stream toward the detached per-frame ensemble, weighted by lambda.

namespace stark {

// Raised when a target cannot be aligned: CTC needs at least
// L + (number of adjacent equal labels) frames.
struct InfeasibleTarget : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Negative log-probability of all blank-interleaved alignments of
// `targets` under per-frame log-distributions [T', V+1] (rows of
// exp(log_probs) must sum to 1). Blank ID is 0; targets use IDs >= 1.
// Differentiable through the tape.
nd::Var ctc_loss(const nd::Var& log_probs, const std::vector<int>& targets);

// Mean over frames of sum over streams of KL(teacher || student) * tau^2,
// where both sides are temperature-softened and the teacher — the
// per-frame mean of the streams' softened distributions — is a constant
// (no gradient flows into it). teacher_to_student=false swaps the
// direction to KL(student || teacher).
nd::Var kl_distillation(const std::vector<nd::Var>& stream_log_probs, double tau,
                        bool teacher_to_student = true);

struct LossBreakdown {
  std::vector<double> ctc;           // one value per stream
  std::vector<double> distillation;  // per-stream KL contribution
  double total_value = 0;
  nd::Var total;  // differentiable
};

// Log-softmaxes each stream's logits [T', V+1], sums the per-stream CTC
// losses, and adds lambda times the distillation term. Requires >= 2
// streams whenever lambda != 0 (the ensemble teacher needs company);
// lambda = 0 permits single-stream debugging.
LossBreakdown total_loss(const std::vector<nd::Var>& stream_logits,
                         const std::vector<int>& targets, double lambda, double tau,
                         bool teacher_to_student = true);

}  // namespace stark
