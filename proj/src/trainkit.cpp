#include "stark/trainkit.hpp"

#include <atomic>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "stark/decode.hpp"
#include "stark/objective.hpp"
#include "stark/prep.hpp"
#include "stark/rng.hpp"

namespace stark {

using nd::Array;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

// One sample's contribution to an accumulation window.
struct SampleResult {
  bool used = false;
  std::string skip_reason;
  std::vector<Array> grads;  // aligned with the model's trainable slots
  std::array<HeadStats, 4> stats;
  std::array<double, 4> ctc{};
  double kl = 0;
  double total = 0;
};

SampleResult run_training_sample(const Config& cfg, const StarkModel& model,
                                 const KeypointSample& sample,
                                 const std::vector<int>& targets, int epoch) {
  SampleResult r;
  Rng rng = derived_rng({cfg.train.seed, static_cast<uint64_t>(epoch), fnv1a(sample.id)});
  KeypointSample prepared = prepare_sample(sample, cfg.augment, /*augment=*/true, rng);

  nd::Tape tape;
  BoundModel bm = model.bind(tape);
  std::array<nd::Var, 4> logits;
  LossBreakdown lb;
  try {
    logits = model.forward(bm, prepared.frames, /*training=*/true, &r.stats);
    lb = total_loss({logits[0], logits[1], logits[2], logits[3]}, targets,
                    cfg.train.lambda, cfg.train.tau, cfg.train.kl_teacher_to_student);
  } catch (const InfeasibleTarget& e) {
    r.skip_reason = e.what();
    return r;
  }
  tape.backward(lb.total);

  const auto& slots = model.slots();
  r.grads.reserve(bm.param_nodes.size());
  size_t node_ix = 0;
  for (const ParamSlot& slot : slots) {
    if (!slot.trainable) continue;
    r.grads.push_back(tape.grad(bm.param_nodes[node_ix], slot.value.shape));
    ++node_ix;
  }
  for (int s = 0; s < 4; ++s) r.ctc[static_cast<size_t>(s)] = lb.ctc[static_cast<size_t>(s)];
  for (double d : lb.distillation) r.kl += d;
  r.total = lb.total_value;
  r.used = true;
  return r;
}

// Eval-mode hypothesis for one sample: ensemble of the four streams.
std::vector<int> decode_sample(const StarkModel& model, const KeypointSample& sample,
                               const AugmentConfig& aug, int beam_width) {
  Rng unused(0);
  KeypointSample prepared = prepare_sample(sample, aug, /*augment=*/false, unused);
  nd::Tape tape;
  BoundModel bm = model.bind(tape);
  std::array<nd::Var, 4> logits = model.forward(bm, prepared.frames, /*training=*/false);
  Array ens = ensemble_probs(
      {logits[0].v, logits[1].v, logits[2].v, logits[3].v});
  Hypothesis hyp = beam_width <= 1 ? greedy_decode(ens) : beam_decode(ens, beam_width);
  return hyp.glosses;
}

double dev_wer(const StarkModel& model, const std::vector<KeypointSample>& dev_set,
               const AugmentConfig& aug) {
  std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs(dev_set.size());
  parallel_for(static_cast<int64_t>(dev_set.size()), [&](int64_t i) {
    const KeypointSample& s = dev_set[static_cast<size_t>(i)];
    pairs[static_cast<size_t>(i)] = {s.glosses,
                                     decode_sample(model, s, aug, /*beam_width=*/1)};
  });
  return corpus_wer(pairs);
}

}  // namespace

int max_threads() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  const char* env = std::getenv("STARK_THREADS");
  if (!env || !*env) return hw;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1)
    fail(std::string("STARK_THREADS must be a positive integer, got \"") + env + "\"");
  return static_cast<int>(std::min<long>(v, hw));
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<int64_t>(max_threads(), n));
  if (workers <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        const int64_t i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    });
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

void adam_step(Array& theta, const Array& grad, Array& m, Array& v, int64_t step,
               const TrainConfig& cfg, double lr) {
  if (theta.shape != grad.shape || theta.shape != m.shape || theta.shape != v.shape)
    fail("adam: parameter, gradient, and moment shapes must agree");
  if (step < 1) fail("adam: step counter starts at 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (int64_t i = 0; i < theta.size(); ++i) {
    double g = grad[i];
    if (!cfg.decoupled_wd) g += cfg.weight_decay * theta[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    if (cfg.decoupled_wd) theta[i] -= lr * cfg.weight_decay * theta[i];
  }
}

double cosine_lr(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) fail("cosine_lr: epoch must be non-negative");
  if (epoch >= cfg.t_max) return cfg.eta_min;
  const double phase = 3.14159265358979323846 * epoch / cfg.t_max;
  return cfg.eta_min + 0.5 * (cfg.lr - cfg.eta_min) * (1.0 + std::cos(phase));
}

TrainResult train(const Config& cfg, StarkModel& model,
                  const std::vector<KeypointSample>& train_set,
                  const std::vector<KeypointSample>& dev_set,
                  const GlossVocabulary& vocab, const std::string& out_dir,
                  const std::function<void(const std::string&)>& log) {
  cfg.validate();
  if (train_set.empty()) fail("train: the training set is empty");
  if (model.vocab_size() != vocab.size())
    fail("train: model was built for " + std::to_string(model.vocab_size()) +
         " glosses, vocabulary has " + std::to_string(vocab.size()));

  std::filesystem::create_directories(out_dir);
  const std::string last_path = out_dir + "/last.ckpt";
  const std::string best_path = out_dir + "/best.ckpt";
  const std::string metrics_path = out_dir + "/metrics.log";

  // Targets are stored as IDs; validate the range before any training work.
  for (const KeypointSample& s : train_set)
    for (int g : s.glosses)
      if (g < 1 || g > vocab.size())
        fail("train: sample " + s.id + " references gloss ID " + std::to_string(g) +
             " outside the vocabulary");

  TrainResult result;
  int start_epoch = 0;
  int64_t step = 0;
  double best = -1;
  if (std::filesystem::exists(last_path)) {
    CheckpointState state = load_checkpoint(last_path, model.fingerprint());
    if (state.seed != cfg.train.seed)
      fail(fmt("train: resume seed mismatch (checkpoint %llu, config %llu)",
               static_cast<unsigned long long>(state.seed),
               static_cast<unsigned long long>(cfg.train.seed)));
    model.restore(state);
    start_epoch = static_cast<int>(state.epoch);
    step = state.step;
    best = state.best_dev_wer;
  } else {
    model.init_params(cfg.train.seed);
  }

  std::ofstream metrics(metrics_path, start_epoch == 0 ? std::ios::trunc : std::ios::app);
  if (!metrics) fail("train: cannot open " + metrics_path);
  auto emit = [&](const std::string& line) {
    metrics << line << '\n';
    metrics.flush();
    if (log) log(line);
    result.log_lines.push_back(line);
  };

  const int batch = cfg.train.batch_size;
  for (int epoch = start_epoch; epoch < cfg.train.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.train);

    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = derived_rng({cfg.train.seed, 0xEull, static_cast<uint64_t>(epoch)});
    shuffle_rng.shuffle(order);

    std::array<double, 4> ctc_sum{};
    double kl_sum = 0, total_sum = 0;
    int used = 0, skipped = 0;

    for (size_t window = 0; window < order.size(); window += static_cast<size_t>(batch)) {
      const size_t end = std::min(order.size(), window + static_cast<size_t>(batch));
      std::vector<SampleResult> results(end - window);
      parallel_for(static_cast<int64_t>(end - window), [&](int64_t i) {
        const size_t ix = order[window + static_cast<size_t>(i)];
        results[static_cast<size_t>(i)] =
            run_training_sample(cfg, model, train_set[ix], train_set[ix].glosses, epoch);
      });

      // Single writer from here on, fixed window order.
      int n_eff = 0;
      for (const SampleResult& r : results)
        if (r.used) ++n_eff;
      std::vector<Array> grad_sum;
      for (size_t i = 0; i < results.size(); ++i) {
        const SampleResult& r = results[i];
        if (!r.used) {
          const KeypointSample& s = train_set[order[window + i]];
          emit(fmt("warn epoch=%d sample=%s skipped: %s", epoch, s.id.c_str(),
                   r.skip_reason.c_str()));
          ++skipped;
          continue;
        }
        if (grad_sum.empty()) {
          for (const Array& g : r.grads) grad_sum.push_back(g.clone());
        } else {
          for (size_t j = 0; j < grad_sum.size(); ++j)
            for (int64_t t = 0; t < grad_sum[j].size(); ++t)
              grad_sum[j][t] += r.grads[j][t];
        }
        model.update_running_stats(r.stats, 0.1);
        for (int s = 0; s < 4; ++s) ctc_sum[static_cast<size_t>(s)] += r.ctc[static_cast<size_t>(s)];
        kl_sum += r.kl;
        total_sum += r.total;
        ++used;
      }
      if (n_eff == 0) continue;
      for (Array& g : grad_sum)
        for (int64_t t = 0; t < g.size(); ++t) g[t] /= n_eff;
      ++step;
      size_t j = 0;
      for (ParamSlot& slot : model.slots()) {
        if (!slot.trainable) continue;
        adam_step(slot.value, grad_sum[j], slot.m, slot.v, step, cfg.train, lr);
        ++j;
      }
    }

    const double wer_now = dev_set.empty() ? -1 : dev_wer(model, dev_set, cfg.augment);
    const double denom = used > 0 ? used : 1;
    emit(fmt("epoch=%d lr=%.17g loss=%.17g ctc_fuse=%.17g ctc_left=%.17g "
             "ctc_right=%.17g ctc_body=%.17g kl=%.17g skipped=%d dev_wer=%.17g",
             epoch, lr, total_sum / denom, ctc_sum[0] / denom, ctc_sum[1] / denom,
             ctc_sum[2] / denom, ctc_sum[3] / denom, kl_sum / denom, skipped, wer_now));
    result.skipped_samples += skipped;

    const bool improved = wer_now >= 0 && (best < 0 || wer_now < best);
    if (improved) best = wer_now;
    CheckpointState state =
        model.to_checkpoint(cfg.text, epoch + 1, step, cfg.train.seed, best);
    save_checkpoint(state, last_path);
    if (improved) save_checkpoint(state, best_path);

    result.final_dev_wer = wer_now;
    ++result.epochs_run;
  }
  result.best_dev_wer = best;
  result.steps = step;
  return result;
}

EvalResult evaluate(const StarkModel& model, const std::vector<KeypointSample>& data,
                    const GlossVocabulary& vocab, int beam_width) {
  if (data.empty()) fail("evaluate: the dataset is empty");
  if (beam_width < 1) fail("evaluate: beam width must be >= 1");
  if (model.vocab_size() != vocab.size())
    fail("evaluate: model was built for " + std::to_string(model.vocab_size()) +
         " glosses, vocabulary has " + std::to_string(vocab.size()));
  AugmentConfig no_aug;  // flags ignored: prepare_sample(augment=false)

  std::vector<std::vector<int>> hyps(data.size());
  parallel_for(static_cast<int64_t>(data.size()), [&](int64_t i) {
    hyps[static_cast<size_t>(i)] =
        decode_sample(model, data[static_cast<size_t>(i)], no_aug, beam_width);
  });

  EvalResult r;
  r.beam_width = beam_width;
  std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
  for (size_t i = 0; i < data.size(); ++i) {
    for (int g : data[i].glosses)
      if (g < 1 || g > vocab.size())
        fail("evaluate: sample " + data[i].id + " references gloss ID " +
             std::to_string(g) + " outside the vocabulary");
    pairs.push_back({data[i].glosses, hyps[i]});
    std::string line = data[i].id + "\t";
    for (size_t j = 0; j < hyps[i].size(); ++j) {
      if (j) line += ' ';
      line += vocab.decode(hyps[i][j]);
    }
    r.decode_lines.push_back(std::move(line));
  }
  r.wer = corpus_wer(pairs);
  r.report = fmt("samples=%zu beam_width=%d wer=%.17g", data.size(), beam_width, r.wer);
  return r;
}

}  // namespace stark
