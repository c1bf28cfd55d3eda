#include "stark/encoder.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stark {

using nd::Var;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void expect_rank(const Var& x, int rank, const char* what) {
  if (x.v.rank() != rank)
    fail(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
         nd::shape_str(x.shape()));
}

}  // namespace

Var linear_channels(const Var& x, const Var& w, const Var& b) {
  expect_rank(x, 3, "linear_channels");
  expect_rank(w, 2, "linear_channels weight");
  const int C = x.shape()[0], T = x.shape()[1], P = x.shape()[2];
  if (w.shape()[0] != C)
    fail("linear_channels: weight expects " + std::to_string(w.shape()[0]) +
         " input channels, feature map has " + std::to_string(C));
  const int C2 = w.shape()[1];
  if (b.shape() != nd::Shape{C2})
    fail("linear_channels: bias shape " + nd::shape_str(b.shape()) + " does not match [" +
         std::to_string(C2) + "]");
  // [C,T,P] -> [T*P, C] rows, multiply, and back.
  Var rows = nd::transpose(nd::reshape(x, {C, T * P}), {1, 0});
  Var y = nd::add(nd::matmul(rows, w), b);
  return nd::reshape(nd::transpose(y, {1, 0}), {C2, T, P});
}

nd::Array sinusoidal_pe(int channels, int frames) {
  if (channels < 2 || channels % 2 != 0)
    fail("positional encoding: channel count must be even and >= 2");
  nd::Array pe({channels, frames});
  for (int i = 0; i < channels / 2; ++i) {
    const double rate = std::pow(10000.0, -2.0 * i / channels);
    for (int t = 0; t < frames; ++t) {
      pe[static_cast<int64_t>(2 * i) * frames + t] = std::sin(t * rate);
      pe[static_cast<int64_t>(2 * i + 1) * frames + t] = std::cos(t * rate);
    }
  }
  return pe;
}

Var input_stem(const Var& frames, const StemParams& p) {
  expect_rank(frames, 3, "input_stem");
  if (frames.shape()[0] != 3)
    fail("input_stem: expected 3 input channels (x, y, confidence), got " +
         std::to_string(frames.shape()[0]));
  Var projected = linear_channels(frames, p.w, p.b);
  const int C0 = projected.shape()[0], T = projected.shape()[1];
  nd::Array pe = sinusoidal_pe(C0, T);
  pe.shape = {C0, T, 1};  // broadcast over keypoints
  return nd::add(projected, nd::constant(pe));
}

Var temporal_attention(const Var& q, const Var& k_patches, const Var& alpha,
                       const Var& beta) {
  expect_rank(q, 4, "temporal_attention Q");
  expect_rank(k_patches, 5, "temporal_attention K_patches");
  const int S = q.shape()[0], Cp = q.shape()[1], T = q.shape()[2], P = q.shape()[3];
  const int k = k_patches.shape()[3];
  if (k_patches.shape() != nd::Shape{S, Cp, T, k, P})
    fail("temporal_attention: K_patches shape " + nd::shape_str(k_patches.shape()) +
         " does not match Q shape " + nd::shape_str(q.shape()));
  if (alpha.shape() != nd::Shape{S, P} || beta.shape() != nd::Shape{S, P})
    fail("temporal_attention: affine parameters must be [S, P]");
  Var q5 = nd::reshape(q, {S, Cp, T, 1, P});
  Var scores = nd::affine(nd::reduce(nd::mul(q5, k_patches), 1, nd::ReduceOp::sum),
                          1.0 / Cp, 0.0);               // [S,T,k,P]
  Var weights = nd::softmax_axis(scores, 2);            // over the window axis
  Var a = nd::reshape(alpha, {S, 1, 1, P});
  Var b = nd::reshape(beta, {S, 1, 1, P});
  return nd::add(nd::mul(weights, a), b);
}

Var spatial_attention(const Var& q, const Var& k, const Var& gamma, const Var& delta) {
  expect_rank(q, 4, "spatial_attention Q");
  if (k.shape() != q.shape())
    fail("spatial_attention: K shape " + nd::shape_str(k.shape()) +
         " does not match Q shape " + nd::shape_str(q.shape()));
  const int S = q.shape()[0], Cp = q.shape()[1], T = q.shape()[2], P = q.shape()[3];
  if (gamma.shape() != nd::Shape{S, P} || delta.shape() != nd::Shape{S, P})
    fail("spatial_attention: affine parameters must be [S, P]");
  // Per head: scores[p, q'] = sum_{c', t} Q[c',t,p] K[c',t,q'] / (C' T).
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(S));
  for (int s = 0; s < S; ++s) {
    Var qs = nd::reshape(nd::slice(q, 0, s, 1), {Cp * T, P});
    Var ks = nd::reshape(nd::slice(k, 0, s, 1), {Cp * T, P});
    Var scores = nd::matmul(nd::transpose(qs, {1, 0}), ks);  // [P, P]
    heads.push_back(nd::reshape(scores, {1, P, P}));
  }
  Var scores = heads.size() == 1 ? heads[0] : nd::concat(heads, 0);
  scores = nd::affine(scores, 1.0 / (static_cast<double>(Cp) * T), 0.0);
  Var weights = nd::softmax_axis(scores, 2);  // over the key-keypoint axis
  Var g = nd::reshape(gamma, {S, P, 1});
  Var d = nd::reshape(delta, {S, P, 1});
  return nd::add(nd::mul(weights, g), d);
}

Var aggregate(const Var& a_t, const Var& a_s, const Var& x, const Var& x_patches) {
  expect_rank(a_t, 4, "aggregate A_t");
  expect_rank(a_s, 3, "aggregate A_s");
  expect_rank(x, 3, "aggregate X");
  expect_rank(x_patches, 4, "aggregate X_patches");
  const int S = a_t.shape()[0], T = a_t.shape()[1], k = a_t.shape()[2], P = a_t.shape()[3];
  const int C = x.shape()[0];
  if (x.shape() != nd::Shape{C, T, P} || x_patches.shape() != nd::Shape{C, T, k, P})
    fail("aggregate: X " + nd::shape_str(x.shape()) + " / X_patches " +
         nd::shape_str(x_patches.shape()) + " inconsistent with A_t " +
         nd::shape_str(a_t.shape()));
  if (a_s.shape() != nd::Shape{S, P, P})
    fail("aggregate: A_s must be [S, P, P], got " + nd::shape_str(a_s.shape()));

  Var x_rows = nd::reshape(x, {C * T, P});
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(S));
  for (int s = 0; s < S; ++s) {
    Var at_s = nd::slice(a_t, 0, s, 1);                      // [1,T,k,P]
    Var windowed = nd::reduce(nd::mul(at_s, x_patches), 2, nd::ReduceOp::sum);  // [C,T,P]
    Var center = nd::reshape(nd::slice(at_s, 2, k / 2, 1), {1, T, P});
    // Spatial mixing over the keypoint axis: (A_s X)[c,t,p] = sum_q A_s[p,q] X[c,t,q].
    Var as_s = nd::reshape(nd::slice(a_s, 0, s, 1), {P, P});
    Var mixed = nd::reshape(nd::matmul(x_rows, nd::transpose(as_s, {1, 0})), {C, T, P});
    // The center frame's own temporal contribution is swapped for its
    // spatially mixed counterpart.
    Var head = nd::add(nd::sub(windowed, nd::mul(center, x)), nd::mul(center, mixed));
    heads.push_back(head);
  }
  return heads.size() == 1 ? heads[0] : nd::concat(heads, 0);
}

Var stark_module(const Var& x, const AttentionParams& p, double leaky_slope) {
  expect_rank(x, 3, "stark_module");
  const int T = x.shape()[1], P = x.shape()[2];
  const int two_sc = p.w_qk.shape()[1];
  const int S = p.alpha.shape()[0];
  if (two_sc % (2 * S) != 0)
    fail("stark_module: W_qk output width " + std::to_string(two_sc) +
         " is not divisible by 2*heads");
  const int Cp = two_sc / (2 * S);

  Var qk = linear_channels(x, p.w_qk, p.b_qk);               // [2SC', T, P]
  Var q = nd::reshape(nd::slice(qk, 0, 0, S * Cp), {S, Cp, T, P});
  Var key = nd::reshape(nd::slice(qk, 0, S * Cp, S * Cp), {S, Cp, T, P});

  const int kernel = p.kernel;
  Var k_patches = nd::patchify(key, kernel);                 // [S,C',T,k,P]
  Var x_patches = nd::patchify(x, kernel);                   // [C,T,k,P]

  Var a_t = temporal_attention(q, k_patches, p.alpha, p.beta);
  Var a_s = spatial_attention(q, key, p.gamma, p.delta);
  Var x_a = aggregate(a_t, a_s, x, x_patches);               // [S*C, T, P]

  Var y = linear_channels(x_a, p.w_out, p.b_out);            // [C_out, T, P]
  y = nd::leaky_relu(nd::add(linear_channels(x, p.w_res1, p.b_res1), y), leaky_slope);
  Var h = nd::leaky_relu(linear_channels(y, p.w_ffn1, p.b_ffn1), leaky_slope);
  Var f = linear_channels(h, p.w_ffn2, p.b_ffn2);
  return nd::leaky_relu(nd::add(linear_channels(x, p.w_res2, p.b_res2), f), leaky_slope);
}

Var encoder_forward(const Var& frames, const StreamEncoderParams& p, double leaky_slope) {
  expect_rank(frames, 3, "encoder");
  if (frames.shape()[2] < 1)
    fail("encoder: stream has no keypoints (empty layout stream cannot be encoded)");
  for (int64_t i = 0; i < frames.size(); ++i)
    if (std::abs(frames.v[i]) > 1.5)
      fail("encoder: input coordinate " + std::to_string(frames.v[i]) +
           " outside [-1.5, 1.5] — frames must be normalized before encoding");
  Var h = input_stem(frames, p.stem);
  for (const AttentionParams& m : p.modules) h = stark_module(h, m, leaky_slope);
  Var pooled = nd::reduce(h, 2, nd::ReduceOp::mean);  // [C, T] over keypoints
  Var z = nd::maxpool_time2(nd::maxpool_time2(pooled));
  return nd::transpose(z, {1, 0});  // [T', C]
}

// --- parameter accounting -------------------------------------------------

int64_t stem_param_count(int c0) { return static_cast<int64_t>(3) * c0 + c0; }

int64_t module_param_count(int c_in, int c_out, int heads, int head_dim, int points,
                           int ffn_expansion) {
  const int64_t sc = static_cast<int64_t>(heads) * head_dim;
  int64_t count = 0;
  count += static_cast<int64_t>(c_in) * 2 * sc + 2 * sc;          // W_qk
  count += static_cast<int64_t>(4) * heads * points;              // alpha/beta/gamma/delta
  count += static_cast<int64_t>(heads) * c_in * c_out + c_out;    // W_out
  count += 2 * (static_cast<int64_t>(c_in) * c_out + c_out);      // W_res1, W_res2
  const int64_t ffn_hidden = static_cast<int64_t>(ffn_expansion) * c_out;
  count += static_cast<int64_t>(c_out) * ffn_hidden + ffn_hidden;  // FFN in
  count += ffn_hidden * c_out + c_out;                             // FFN out
  return count;
}

int64_t StreamCount::total() const {
  return stem + std::accumulate(modules.begin(), modules.end(), int64_t{0});
}

std::vector<StreamCount> count_encoder_parameters(const ModelConfig& cfg,
                                                  const StreamLayout& layout) {
  std::vector<StreamCount> out;
  for (int s = 0; s < 4; ++s) {
    StreamCount sc;
    sc.stream = StreamLayout::stream_name(s);
    sc.stem = stem_param_count(cfg.stem_channels);
    int c_in = cfg.stem_channels;
    for (int c_out : cfg.module_channels) {
      sc.modules.push_back(module_param_count(c_in, c_out, cfg.heads, cfg.head_dim,
                                              layout.stream_points(s), cfg.ffn_expansion));
      c_in = c_out;
    }
    out.push_back(std::move(sc));
  }
  return out;
}

}  // namespace stark
