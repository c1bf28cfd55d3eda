#pragma once

#include <array>
#include <string>
#include <vector>

#include "stark/config.hpp"
#include "stark/dataio.hpp"
#include "stark/decoder.hpp"
#include "stark/encoder.hpp"
#include "stark/layout.hpp"

// The full model as an ordered parameter store. Slot order is fixed at
// construction, so tape node ids, checkpoint layout, and optimizer state
// all agree across runs and across save/load.

namespace stark {

// One stored tensor: a trainable parameter (with its Adam moments) or a
// running-statistics buffer (state, never differentiated).
struct ParamSlot {
  std::string name;
  nd::Array value;
  nd::Array m, v;  // Adam moments; zero-initialized alongside the value
  bool trainable = true;
};

// A single pass's view of the parameters: every trainable slot leafed
// onto one tape, in slot order.
struct BoundModel {
  std::vector<StreamEncoderParams> encoders;  // layout order: body, left, right, face
  std::array<HeadParams, 4> heads;            // decode order: fuse, left, right, body
  std::vector<int> param_nodes;               // tape node per trainable slot
};

class StarkModel {
 public:
  StarkModel(ModelConfig cfg, StreamLayout layout, int vocab_size);

  // Deterministic re-initialization of all slots from `seed`.
  void init_params(uint64_t seed);

  BoundModel bind(nd::Tape& tape) const;

  // Builds the per-pass parameter structs from already-leafed vars, one per
  // trainable slot in slot order. bind() wraps this; gradient checking
  // feeds its own leaves.
  BoundModel assemble(const std::vector<nd::Var>& leaves) const;

  // One prepared sample [T, P, 3] (normalized; augmented when training)
  // through all four encoders and decoding heads. Training mode fills
  // `stats` with this sample's pre-normalization statistics.
  std::array<nd::Var, 4> forward(const BoundModel& bm, const nd::Array& frames,
                                 bool training,
                                 std::array<HeadStats, 4>* stats = nullptr) const;

  // Folds one sample's statistics into the running estimates:
  // running <- (1 - momentum) * running + momentum * sample.
  void update_running_stats(const std::array<HeadStats, 4>& stats, double momentum);

  // Hash of everything that fixes parameter shapes and meaning: the
  // architecture config, the stream layout, and the vocabulary size.
  uint64_t fingerprint() const;

  CheckpointState to_checkpoint(const std::string& config_text, int64_t epoch,
                                int64_t step, uint64_t seed, double best_dev_wer) const;
  void restore(const CheckpointState& state);

  const ModelConfig& config() const { return cfg_; }
  const StreamLayout& layout() const { return layout_; }
  int vocab_size() const { return vocab_size_; }
  int encoder_dim() const;

  std::vector<ParamSlot>& slots() { return slots_; }
  const std::vector<ParamSlot>& slots() const { return slots_; }
  int64_t trainable_parameter_count() const;

 private:
  ModelConfig cfg_;
  StreamLayout layout_;
  int vocab_size_;
  std::vector<ParamSlot> slots_;
  std::array<size_t, 4> running_mean_ix_{}, running_var_ix_{};
};

}  // namespace stark
