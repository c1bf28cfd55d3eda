#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stark/ndiff.hpp"

// Dataset, vocabulary, and checkpoint file formats, plus a synthetic
// sign-corpus generator for desk-scale experiments. All binary formats
// are little-endian and deterministic functions of their contents.

namespace stark {

// One sign video: per-frame keypoints in pixel space plus the target
// gloss-ID sequence. frames has shape [T, P, 3] = (x, y, confidence).
struct KeypointSample {
  std::string id;
  nd::Array frames;
  std::vector<int> glosses;  // IDs in [1, vocab]; 0 is the CTC blank
  double width = 0, height = 0;

  int frame_count() const { return frames.shape.empty() ? 0 : frames.shape[0]; }
  int point_count() const { return frames.rank() == 3 ? frames.shape[1] : 0; }
};

// Gloss strings with implicit IDs 1..N in file order; 0 is the blank.
class GlossVocabulary {
 public:
  GlossVocabulary() = default;
  explicit GlossVocabulary(std::vector<std::string> glosses);  // validates

  int size() const { return static_cast<int>(glosses_.size()); }
  int encode(const std::string& gloss) const;       // throws on unknown
  const std::string& decode(int id) const;          // throws on 0 or out of range
  const std::vector<std::string>& glosses() const { return glosses_; }

 private:
  std::vector<std::string> glosses_;
};

GlossVocabulary load_vocabulary(const std::string& path);
void save_vocabulary(const GlossVocabulary& vocab, const std::string& path);

// Binary dataset container: "SKDS" magic, version, P, d=3, layout name,
// sample count, then length-prefixed records. Coordinates are stored as
// 32-bit floats; synthesized data is quantized to float at generation
// time so a save/load round trip is bit-exact.
void save_dataset(const std::vector<KeypointSample>& samples, int points,
                  const std::string& layout_name, const std::string& path);
// Returns samples in file order; header dimensions are validated against
// every record. `expect_points` < 0 skips the external dimension check.
std::vector<KeypointSample> load_dataset(const std::string& path,
                                         int expect_points = -1);

// Synthetic corpus: each gloss owns a smooth sinusoidal trajectory
// template; a sample concatenates its glosses' templates with per-sample
// speed jitter (frames per gloss drawn from the configured range) and
// additive coordinate noise. Deterministic given the seed.
struct SynthSpec {
  int vocab_size = 10;
  int train_samples = 200;
  int dev_samples = 40;
  int min_glosses = 2, max_glosses = 4;       // per sample
  int min_frames = 8, max_frames = 12;        // per gloss occurrence
  double noise = 1.0;                         // pixel-space sigma
  uint64_t seed = 1;
  double width = 512, height = 512;
  int points = 79;

  void validate() const;
};

SynthSpec parse_synth_spec(const std::string& text);
SynthSpec load_synth_spec(const std::string& path);

struct SynthResult {
  std::vector<KeypointSample> train, dev;
  GlossVocabulary vocab;
};

SynthResult synthesize_dataset(const SynthSpec& spec);

// Checkpoint: every named array of the training state plus enough
// metadata to resume exactly — embedded config text, architecture
// fingerprint, epoch/step counters, base RNG seed, best dev WER.
struct CheckpointArray {
  enum Kind : uint8_t { param = 0, adam_m = 1, adam_v = 2, buffer = 3 };
  std::string name;
  Kind kind = param;
  nd::Array value;
};

struct CheckpointState {
  uint64_t fingerprint = 0;
  std::string config_text;
  int64_t epoch = 0;   // completed epochs
  int64_t step = 0;    // optimizer steps taken
  uint64_t seed = 0;
  double best_dev_wer = -1.0;  // < 0 means no dev evaluation yet
  std::vector<CheckpointArray> arrays;
};

void save_checkpoint(const CheckpointState& state, const std::string& path);
// Throws on corrupt file; when expect_fingerprint != 0 also on mismatch.
CheckpointState load_checkpoint(const std::string& path,
                                uint64_t expect_fingerprint = 0);

}  // namespace stark
