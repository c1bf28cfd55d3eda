#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stark/config.hpp"
#include "stark/ndiff.hpp"

// Fuses the four encoder outputs into four decoding streams and maps
// each to per-frame gloss logits. Normalization statistics are computed
// over the time axis of the single sample in flight (the trainer
// accumulates gradients over single-sample passes, so there is no batch
// axis to normalize over); running estimates feed evaluation mode.

namespace stark {

// Channel-axis concatenation of the encoder outputs [T', D] in the fixed
// order: fuse = body|left|right|face, left = left|face, right =
// right|face, body = body.
struct StreamBundle {
  nd::Var fuse, left, right, body;

  const nd::Var& stream(int i) const;  // 0=fuse 1=left 2=right 3=body
  static const char* stream_name(int i);
};

// encoder_outputs order: body, left, right, face.
StreamBundle fuse_streams(const std::array<nd::Var, 4>& encoder_outputs);

// Parameters of one decoding head, bound to a tape per pass. Running
// normalization statistics live outside the tape: they are state, not
// differentiable parameters.
struct HeadParams {
  nd::Var w_in, b_in;            // [W, hidden], [hidden]
  nd::Var norm_scale, norm_shift;  // [hidden]
  nd::Var w_ffn1, b_ffn1;        // [hidden, ffn], [ffn]
  nd::Var w_ffn2, b_ffn2;        // [ffn, hidden], [hidden]
  nd::Var w_cls, b_cls;          // [hidden, V+1], [V+1]
  const nd::Array* running_mean = nullptr;  // [hidden], eval mode input
  const nd::Array* running_var = nullptr;   // [hidden]
};

// Per-channel statistics of the pre-normalization activations, reported
// by training-mode head_forward so the owner can fold them into the
// running estimates (momentum 0.1, single writer, fixed stream order).
struct HeadStats {
  nd::Array mean, var;  // [hidden]; biased variance
};

// [T', W] -> logits [T', V+1]: projection, temporal positional encoding,
// normalization (train: this sample's time-axis statistics; eval: the
// stored running statistics), feed-forward with residual, classifier.
nd::Var head_forward(const nd::Var& input, const HeadParams& p, bool training,
                     double leaky_slope, HeadStats* stats_out = nullptr);

int64_t head_param_count(int width, int hidden, int ffn, int vocab_size);

// Decoding-stream input widths for encoder output width D:
// {fuse, left, right, body} = {4D, 2D, 2D, D}.
std::array<int, 4> decoding_stream_widths(int encoder_dim);

}  // namespace stark
