#pragma once

#include <cstdint>
#include <vector>

#include "stark/config.hpp"
#include "stark/layout.hpp"
#include "stark/ndiff.hpp"

// One encoder stream: a linear stem with sinusoidal temporal positional
// encoding, a stack of spatio-temporal attention modules, keypoint mean
// pooling, and two temporal max pools. Feature layout is [C, T, P]
// throughout; every module sees queries/keys split into S heads of
// head_dim channels and attends (a) over a k-frame window around each
// frame per keypoint and (b) between keypoints globally over time.

namespace stark {

// Per-module parameters, bound to a tape for one forward/backward pass.
struct AttentionParams {
  int kernel = 5;            // temporal window width (odd)
  nd::Var w_qk, b_qk;        // [C_in, 2*S*C'], [2*S*C']
  nd::Var alpha, beta;       // [S, P] affine on temporal attention
  nd::Var gamma, delta;      // [S, P] affine on spatial attention
  nd::Var w_out, b_out;      // [S*C_in, C_out], [C_out]
  nd::Var w_res1, b_res1;    // [C_in, C_out], [C_out]
  nd::Var w_res2, b_res2;    // [C_in, C_out], [C_out]
  nd::Var w_ffn1, b_ffn1;    // [C_out, e*C_out], [e*C_out]
  nd::Var w_ffn2, b_ffn2;    // [e*C_out, C_out], [C_out]
};

struct StemParams {
  nd::Var w, b;  // [3, C0], [C0]
};

struct StreamEncoderParams {
  StemParams stem;
  std::vector<AttentionParams> modules;
};

// Linear map over the channel axis of [C_in, T, P]: out[c',t,p] =
// sum_c w[c,c'] x[c,t,p] + b[c'].
nd::Var linear_channels(const nd::Var& x, const nd::Var& w, const nd::Var& b);

// Standard interleaved sinusoidal encoding over the channel axis,
// returned as [channels, frames]; channels must be even.
nd::Array sinusoidal_pe(int channels, int frames);

// [3, T, P] -> [C0, T, P]: per-point projection plus temporal positional
// encoding shared across keypoints.
nd::Var input_stem(const nd::Var& frames, const StemParams& p);

// Q [S,C',T,P], K_patches [S,C',T,k,P] -> A_t [S,T,k,P]: scaled dot
// scores over the window axis, softmax over that axis, then the
// per-head-per-keypoint affine alpha + beta.
nd::Var temporal_attention(const nd::Var& q, const nd::Var& k_patches,
                           const nd::Var& alpha, const nd::Var& beta);

// Q, K [S,C',T,P] -> A_s [S,P,P]: time-aggregated scores between
// keypoints, softmax over the key axis, then gamma + delta. One map per
// head per sample — A_s is time-independent by construction.
nd::Var spatial_attention(const nd::Var& q, const nd::Var& k,
                          const nd::Var& gamma, const nd::Var& delta);

// Applies attention to the module input: per head, the windowed sum of
// A_t-weighted neighbor features, with the center frame's own
// contribution replaced by its spatially mixed version. Heads are
// concatenated on the channel axis: -> [S*C, T, P].
nd::Var aggregate(const nd::Var& a_t, const nd::Var& a_s, const nd::Var& x,
                  const nd::Var& x_patches);

// Full block: QK projection, both attentions, aggregation, output
// projection, two residual paths, and the feed-forward stage.
// [C_in, T, P] -> [C_out, T, P].
nd::Var stark_module(const nd::Var& x, const AttentionParams& p, double leaky_slope);

// Stem, module stack, keypoint mean pool, two temporal max pools.
// [3, T, P] -> Z [T', D] with T' = ceil(ceil(T/2)/2).
nd::Var encoder_forward(const nd::Var& frames, const StreamEncoderParams& p,
                        double leaky_slope);

// --- parameter accounting -----------------------------------------------

int64_t stem_param_count(int c0);
int64_t module_param_count(int c_in, int c_out, int heads, int head_dim, int points,
                           int ffn_expansion);

struct StreamCount {
  std::string stream;
  int64_t stem = 0;
  std::vector<int64_t> modules;
  int64_t total() const;
};

// Encoder counts per stream under a config/layout; sum of totals is the
// encoder parameter budget.
std::vector<StreamCount> count_encoder_parameters(const ModelConfig& cfg,
                                                  const StreamLayout& layout);

}  // namespace stark
