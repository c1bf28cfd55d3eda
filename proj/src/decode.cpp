#include "stark/decode.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace stark {
namespace {

constexpr double kLogZero = -1e30;

double lse(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero) return a;
  return a + std::log1p(std::exp(b - a));
}

void check_log_probs(const nd::Array& log_probs, const char* what) {
  if (log_probs.rank() != 2 || log_probs.shape[0] < 1 || log_probs.shape[1] < 2)
    throw std::invalid_argument(std::string(what) +
                                ": log_probs must be [T'>=1, V+1>=2], got " +
                                nd::shape_str(log_probs.shape));
}

}  // namespace

Hypothesis greedy_decode(const nd::Array& log_probs) {
  check_log_probs(log_probs, "greedy");
  const int T = log_probs.shape[0], V1 = log_probs.shape[1];
  Hypothesis hyp;
  int prev = -1;
  for (int t = 0; t < T; ++t) {
    int best = 0;
    for (int v = 1; v < V1; ++v)
      if (log_probs[static_cast<int64_t>(t) * V1 + v] >
          log_probs[static_cast<int64_t>(t) * V1 + best])
        best = v;
    hyp.log_score += log_probs[static_cast<int64_t>(t) * V1 + best];
    if (best != 0 && best != prev) hyp.glosses.push_back(best);
    prev = best;
  }
  return hyp;
}

Hypothesis beam_decode(const nd::Array& log_probs, int width) {
  check_log_probs(log_probs, "beam");
  if (width < 1) throw std::invalid_argument("beam: width must be >= 1");
  const int T = log_probs.shape[0], V1 = log_probs.shape[1];

  // Per prefix: log-mass of paths ending in blank / in the last symbol.
  struct Mass {
    double blank = kLogZero;
    double label = kLogZero;
    double total() const { return lse(blank, label); }
  };
  // std::map keys iterate in lexicographic order, which makes the
  // pruning tie-break (shorter/smaller prefix wins at equal mass) and
  // the final argmax deterministic.
  using Beams = std::map<std::vector<int>, Mass>;
  Beams beams;
  beams[{}] = Mass{0.0, kLogZero};  // empty prefix, all-blank so far

  for (int t = 0; t < T; ++t) {
    const double* row = log_probs.ptr() + static_cast<int64_t>(t) * V1;
    Beams next;
    for (const auto& [prefix, mass] : beams) {
      const double total = mass.total();
      // Emit blank: prefix unchanged, mass moves to the blank bucket.
      {
        Mass& m = next[prefix];
        m.blank = lse(m.blank, total + row[0]);
      }
      for (int v = 1; v < V1; ++v) {
        const double pv = row[v];
        if (!prefix.empty() && prefix.back() == v) {
          // Repeating the last symbol extends the same prefix only from
          // paths that end in that symbol...
          Mass& same = next[prefix];
          same.label = lse(same.label, mass.label + pv);
          // ...while paths ending in blank start a new occurrence.
          std::vector<int> grown = prefix;
          grown.push_back(v);
          Mass& m = next[grown];
          m.label = lse(m.label, mass.blank + pv);
        } else {
          std::vector<int> grown = prefix;
          grown.push_back(v);
          Mass& m = next[grown];
          m.label = lse(m.label, total + pv);
        }
      }
    }
    if (static_cast<int>(next.size()) > width) {
      // Keep the top `width` by total mass; map order breaks ties.
      std::vector<std::pair<double, const std::vector<int>*>> ranked;
      ranked.reserve(next.size());
      for (const auto& [prefix, mass] : next) ranked.emplace_back(mass.total(), &prefix);
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      Beams pruned;
      for (int i = 0; i < width; ++i) pruned.emplace(*ranked[static_cast<size_t>(i)].second,
                                                     next[*ranked[static_cast<size_t>(i)].second]);
      next = std::move(pruned);
    }
    beams = std::move(next);
  }

  Hypothesis best;
  best.log_score = -std::numeric_limits<double>::infinity();
  for (const auto& [prefix, mass] : beams) {
    const double total = mass.total();
    if (total > best.log_score) {
      best.log_score = total;
      best.glosses = prefix;
    }
  }
  return best;
}

nd::Array ensemble_probs(const std::vector<nd::Array>& stream_logits) {
  if (stream_logits.empty()) throw std::invalid_argument("ensemble: no streams");
  const nd::Shape shape = stream_logits[0].shape;
  if (shape.size() != 2) throw std::invalid_argument("ensemble: logits must be [T', V+1]");
  for (const nd::Array& s : stream_logits)
    if (s.shape != shape)
      throw std::invalid_argument("ensemble: stream shapes disagree (" + nd::shape_str(shape) +
                                  " vs " + nd::shape_str(s.shape) + ")");
  const int T = shape[0], V1 = shape[1];
  nd::Array mean({T, V1});
  for (const nd::Array& s : stream_logits) {
    for (int t = 0; t < T; ++t) {
      const double* row = s.ptr() + static_cast<int64_t>(t) * V1;
      double hi = row[0];
      for (int v = 1; v < V1; ++v) hi = std::max(hi, row[v]);
      double z = 0;
      for (int v = 0; v < V1; ++v) z += std::exp(row[v] - hi);
      for (int v = 0; v < V1; ++v)
        mean[static_cast<int64_t>(t) * V1 + v] +=
            std::exp(row[v] - hi) / z / static_cast<double>(stream_logits.size());
    }
  }
  nd::Array out({T, V1});
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::log(mean[i]);
  return out;
}

int edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double wer(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  if (reference.empty())
    throw std::invalid_argument("wer: empty reference has no defined rate");
  return static_cast<double>(edit_distance(reference, hypothesis)) /
         static_cast<double>(reference.size());
}

double corpus_wer(const std::vector<std::pair<std::vector<int>, std::vector<int>>>&
                      ref_hyp_pairs) {
  int64_t edits = 0, tokens = 0;
  for (const auto& [ref, hyp] : ref_hyp_pairs) {
    edits += edit_distance(ref, hyp);
    tokens += static_cast<int64_t>(ref.size());
  }
  if (tokens == 0) throw std::invalid_argument("wer: corpus has no reference tokens");
  return static_cast<double>(edits) / static_cast<double>(tokens);
}

}  // namespace stark
