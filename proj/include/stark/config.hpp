#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Flat key=value configuration for the model architecture, training
// hyperparameters, and augmentation. Unknown keys are errors so that a
// typo cannot silently fall back to a default.

namespace stark {

struct ModelConfig {
  int input_channels = 3;   // x, y, confidence
  int stem_channels = 64;
  std::vector<int> module_channels = {64, 96, 128, 256};
  int heads = 6;
  int head_dim = 32;
  int kernel = 5;           // temporal window, odd
  int ffn_expansion = 2;
  double leaky_slope = 0.1;
  int decoder_hidden = 1024;
  int decoder_ffn = 2048;
  std::string layout = "paper79";  // builtin name or path to a layout file

  void validate() const;  // throws std::invalid_argument
};

struct AugmentConfig {
  double speed_min = 0.5;
  double speed_max = 1.5;
  double rotate_deg = 15.0;  // angle drawn from [-rotate_deg, +rotate_deg]
  bool augment_speed = true;
  bool augment_rotate = true;

  void validate() const;
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-3;  // decoupled by default
  bool decoupled_wd = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int t_max = 100;       // cosine schedule period, epochs
  double eta_min = 0.0;
  int batch_size = 8;    // realized via gradient accumulation
  int epochs = 100;
  uint64_t seed = 1;
  double lambda = 1.0;   // distillation weight
  double tau = 8.0;      // distillation temperature
  bool kl_teacher_to_student = true;  // false swaps the KL direction

  void validate() const;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  std::string text;  // original file text, embedded in checkpoints

  void validate() const;
};

// Parses flat key=value lines ('#' starts a comment; blank lines ignored).
// Throws std::invalid_argument on unknown keys or unparsable values.
Config parse_config(const std::string& text);
Config load_config(const std::string& path);

// Serializes the effective configuration back to key=value form
// (canonical key order, full precision). parse(format(c)) == c.
std::string format_config(const Config& c);

}  // namespace stark
