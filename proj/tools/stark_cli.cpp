// Command-line surface for the keypoint sign-recognition toolkit:
// dataset synthesis, training, evaluation, parameter accounting, and the
// finite-difference gradient checker.

#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stark/config.hpp"
#include "stark/dataio.hpp"
#include "stark/decoder.hpp"
#include "stark/encoder.hpp"
#include "stark/gradcheck.hpp"
#include "stark/layout.hpp"
#include "stark/model.hpp"
#include "stark/trainkit.hpp"

namespace {

using namespace stark;

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// Shared --data convention: a directory holding train.skds, dev.skds, and
// vocab.txt, exactly as `synth --out` writes them.
GlossVocabulary load_dir_vocab(const std::string& data_dir) {
  return load_vocabulary(join_path(data_dir, "vocab.txt"));
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  SynthSpec spec = load_synth_spec(spec_path);
  SynthResult r = synthesize_dataset(spec);
  std::filesystem::create_directories(out_dir);
  save_dataset(r.train, spec.points, "synth", join_path(out_dir, "train.skds"));
  save_dataset(r.dev, spec.points, "synth", join_path(out_dir, "dev.skds"));
  save_vocabulary(r.vocab, join_path(out_dir, "vocab.txt"));
  std::printf("synth: vocab=%d train=%zu dev=%zu points=%d seed=%llu -> %s\n", r.vocab.size(),
              r.train.size(), r.dev.size(), spec.points,
              static_cast<unsigned long long>(spec.seed), out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  Config cfg = load_config(config_path);
  StreamLayout layout = resolve_layout(cfg.model.layout);
  GlossVocabulary vocab = load_dir_vocab(data_dir);
  std::vector<KeypointSample> train_set =
      load_dataset(join_path(data_dir, "train.skds"), layout.points);
  std::vector<KeypointSample> dev_set =
      load_dataset(join_path(data_dir, "dev.skds"), layout.points);

  StarkModel model(cfg.model, layout, vocab.size());
  std::printf("train: vocab=%d train=%zu dev=%zu params=%lld threads=%d\n", vocab.size(),
              train_set.size(), dev_set.size(),
              static_cast<long long>(model.trainable_parameter_count()), max_threads());
  TrainResult r = train(cfg, model, train_set, dev_set, vocab, out_dir,
                        [](const std::string& line) { std::printf("%s\n", line.c_str()); });
  std::printf("done: epochs_run=%d steps=%lld skipped=%d best_dev_wer=%.17g final_dev_wer=%.17g\n",
              r.epochs_run, static_cast<long long>(r.steps), r.skipped_samples, r.best_dev_wer,
              r.final_dev_wer);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, int beam_width,
             const std::string& split, const std::string& decode_out) {
  CheckpointState state = load_checkpoint(ckpt_path);
  Config cfg = parse_config(state.config_text);
  StreamLayout layout = resolve_layout(cfg.model.layout);
  GlossVocabulary vocab = load_dir_vocab(data_dir);

  StarkModel model(cfg.model, layout, vocab.size());
  model.restore(state);

  std::vector<KeypointSample> data =
      load_dataset(join_path(data_dir, split + ".skds"), layout.points);
  EvalResult r = evaluate(model, data, vocab, beam_width);

  if (!decode_out.empty()) {
    std::ofstream out(decode_out);
    if (!out) throw std::runtime_error("eval: cannot write decode file: " + decode_out);
    for (const std::string& line : r.decode_lines) out << line << "\n";
  } else {
    for (const std::string& line : r.decode_lines) std::printf("%s\n", line.c_str());
  }
  std::printf("%s\n", r.report.c_str());
  return 0;
}

int cmd_params(const std::string& config_path, int vocab_size) {
  Config cfg = load_config(config_path);
  StreamLayout layout = resolve_layout(cfg.model.layout);
  std::vector<StreamCount> counts = count_encoder_parameters(cfg.model, layout);

  int64_t encoder_total = 0;
  for (const StreamCount& sc : counts) {
    std::printf("stream %s\n", sc.stream.c_str());
    std::printf("  stem %lld\n", static_cast<long long>(sc.stem));
    for (size_t m = 0; m < sc.modules.size(); ++m)
      std::printf("  module[%zu] %lld\n", m, static_cast<long long>(sc.modules[m]));
    std::printf("  total %lld\n", static_cast<long long>(sc.total()));
    encoder_total += sc.total();
  }
  std::printf("encoder_total %lld\n", static_cast<long long>(encoder_total));

  if (vocab_size > 0) {
    const int d = cfg.model.module_channels.empty() ? cfg.model.stem_channels
                                                    : cfg.model.module_channels.back();
    std::array<int, 4> widths = decoding_stream_widths(d);
    const char* names[4] = {"fuse", "left", "right", "body"};
    int64_t decoder_total = 0;
    for (int h = 0; h < 4; ++h) {
      int64_t n = head_param_count(widths[h], cfg.model.decoder_hidden, cfg.model.decoder_ffn,
                                   vocab_size);
      std::printf("head %s width=%d params=%lld\n", names[h], widths[h],
                  static_cast<long long>(n));
      decoder_total += n;
    }
    std::printf("decoder_total %lld\n", static_cast<long long>(decoder_total));
    std::printf("model_total %lld\n", static_cast<long long>(encoder_total + decoder_total));
  }
  return 0;
}

int cmd_gradcheck(const std::string& op, uint64_t seed) {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<gradcheck::CheckResult> results;
  try {
    results = gradcheck::run(op, seed, 5);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\navailable: all", e.what());
    for (const std::string& n : gradcheck::suite_names()) std::fprintf(stderr, " %s", n.c_str());
    std::fprintf(stderr, "\n");
    return 2;
  }
  int failures = 0;
  for (const auto& r : results) {
    if (!r.pass) {
      ++failures;
      std::printf("FAIL %s max_err=%g %s\n", r.name.c_str(), r.max_err, r.detail.c_str());
    }
  }
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                  t0)
                .count();
  std::printf("gradcheck op=%s seed=%llu: %zu checks, %d failures, %lld ms\n", op.c_str(),
              static_cast<unsigned long long>(seed), results.size(), failures,
              static_cast<long long>(ms));
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keypoint-based continuous sign-language recognition toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, ckpt_path, spec_path;
  std::string split = "dev", decode_out;
  int beam_width = 5;
  int vocab_size = 0;
  std::string op = "all";
  uint64_t seed = 20260822ull;

  CLI::App* train = app.add_subcommand("train", "Train a model on a dataset directory");
  train->add_option("--config", config_path, "key=value config file")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--data", data_dir, "directory with train.skds, dev.skds, vocab.txt")
      ->required()
      ->check(CLI::ExistingDirectory);
  train->add_option("--out", out_dir, "output directory (checkpoints, metrics.log)")->required();

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint (ensemble beam decode)");
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_dir, "directory with <split>.skds and vocab.txt")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--beam-width", beam_width, "beam width (1 = greedy)")->required();
  eval->add_option("--split", split, "dataset split file stem (default dev)");
  eval->add_option("--out", decode_out, "write per-sample hypotheses here instead of stdout");

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth->add_option("--spec", spec_path, "key=value synthesis spec")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--out", out_dir, "output directory")->required();

  CLI::App* params = app.add_subcommand("params", "Print parameter counts for a config");
  params->add_option("--config", config_path, "key=value config file")
      ->required()
      ->check(CLI::ExistingFile);
  params->add_option("--vocab-size", vocab_size,
                     "include decoder head counts for this vocabulary size");

  CLI::App* gc = app.add_subcommand("gradcheck", "Run finite-difference gradient suites");
  gc->add_option("--op", op, "suite name (default: all)");
  gc->add_option("--seed", seed, "base seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train)) return cmd_train(config_path, data_dir, out_dir);
    if (app.got_subcommand(eval)) return cmd_eval(ckpt_path, data_dir, beam_width, split, decode_out);
    if (app.got_subcommand(synth)) return cmd_synth(spec_path, out_dir);
    if (app.got_subcommand(params)) return cmd_params(config_path, vocab_size);
    if (app.got_subcommand(gc)) return cmd_gradcheck(op, seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
