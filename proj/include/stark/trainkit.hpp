#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stark/config.hpp"
#include "stark/dataio.hpp"
#include "stark/model.hpp"

// Optimizer, schedule, and the training/evaluation loops. Batches are
// realized by gradient accumulation over independent per-sample tapes;
// summation and the optimizer step are single-writer, fixed order, so
// results are bit-identical regardless of thread count.

namespace stark {

// Worker count: min(STARK_THREADS, hardware concurrency); at least 1.
int max_threads();

// Runs fn(0..n-1) across up to max_threads() workers. The first exception
// thrown by any worker is rethrown after all workers finish.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

// Bias-corrected Adam update in place. Decoupled weight decay shrinks the
// parameter directly (theta -= lr*wd*theta); the flag in `cfg` switches to
// classic L2-in-gradient instead.
void adam_step(nd::Array& theta, const nd::Array& grad, nd::Array& m, nd::Array& v,
               int64_t step, const TrainConfig& cfg, double lr);

// eta_min + (lr - eta_min)/2 * (1 + cos(pi*epoch/t_max)); epochs beyond
// t_max clamp to eta_min.
double cosine_lr(int epoch, const TrainConfig& cfg);

struct TrainResult {
  std::vector<std::string> log_lines;  // one per completed epoch
  double best_dev_wer = -1;
  double final_dev_wer = -1;
  int64_t steps = 0;
  int epochs_run = 0;   // this invocation (resume runs fewer)
  int skipped_samples = 0;
};

// Full training loop. Fresh runs initialize from cfg.train.seed; when
// out_dir/last.ckpt exists the run resumes from it (same config required).
// Writes out_dir/{last.ckpt,best.ckpt,metrics.log}; `log` (when given)
// receives each metrics line as it is produced.
TrainResult train(const Config& cfg, StarkModel& model,
                  const std::vector<KeypointSample>& train_set,
                  const std::vector<KeypointSample>& dev_set,
                  const GlossVocabulary& vocab, const std::string& out_dir,
                  const std::function<void(const std::string&)>& log = {});

struct EvalResult {
  double wer = 0;
  int beam_width = 0;
  std::vector<std::string> decode_lines;  // "id<TAB>gloss gloss ..."
  std::string report;                     // human-readable summary
};

// Eval-mode preprocessing, four-stream forward, ensemble beam decode.
EvalResult evaluate(const StarkModel& model, const std::vector<KeypointSample>& data,
                    const GlossVocabulary& vocab, int beam_width);

}  // namespace stark
