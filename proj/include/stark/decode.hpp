#pragma once

#include <string>
#include <vector>

#include "stark/ndiff.hpp"

// CTC decoding (greedy and prefix beam search), ensemble inference, and
// word error rate. Pure numeric functions over [T', V+1] log-prob arrays.

namespace stark {

struct Hypothesis {
  std::vector<int> glosses;  // no blanks, no alignment info
  double log_score = 0;      // total log-mass of the labeling (beam) or path (greedy)
};

// Per-frame argmax (ties toward the lowest ID), collapse adjacent
// repeats, drop blanks.
Hypothesis greedy_decode(const nd::Array& log_probs);

// CTC prefix beam search: prefixes carry separate blank-ending and
// non-blank-ending log-masses, merged by log-sum-exp; the top `width`
// prefixes by total mass survive each frame. Deterministic: ties break
// toward the shorter, lexicographically smaller prefix.
Hypothesis beam_decode(const nd::Array& log_probs, int width);

// Per-frame mean of the streams' softmax distributions, re-logged.
// Inputs are raw logits [T', V+1]; output rows exponentiate to 1.
nd::Array ensemble_probs(const std::vector<nd::Array>& stream_logits);

// Levenshtein distance with unit substitution/insertion/deletion costs.
int edit_distance(const std::vector<int>& a, const std::vector<int>& b);

// Sample-level WER = edits / |reference|; reference must be non-empty.
double wer(const std::vector<int>& reference, const std::vector<int>& hypothesis);

// Corpus WER = total edits / total reference tokens.
double corpus_wer(const std::vector<std::pair<std::vector<int>, std::vector<int>>>&
                      ref_hyp_pairs);

}  // namespace stark
