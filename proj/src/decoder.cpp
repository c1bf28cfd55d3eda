#include "stark/decoder.hpp"

#include <cmath>
#include <stdexcept>

#include "stark/encoder.hpp"

namespace stark {

using nd::Var;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

const Var& StreamBundle::stream(int i) const {
  switch (i) {
    case 0: return fuse;
    case 1: return left;
    case 2: return right;
    case 3: return body;
  }
  throw std::out_of_range("decoder: stream index must be 0..3");
}

const char* StreamBundle::stream_name(int i) {
  static const char* names[4] = {"fuse", "left", "right", "body"};
  if (i < 0 || i > 3) throw std::out_of_range("decoder: stream index must be 0..3");
  return names[i];
}

StreamBundle fuse_streams(const std::array<Var, 4>& enc) {
  const Var& body = enc[0];
  const Var& left = enc[1];
  const Var& right = enc[2];
  const Var& face = enc[3];
  for (int s = 0; s < 4; ++s) {
    if (enc[static_cast<size_t>(s)].v.rank() != 2)
      fail("fuse: encoder outputs must be [T', D]");
    if (enc[static_cast<size_t>(s)].shape()[0] != body.shape()[0])
      fail("fuse: encoder outputs disagree on T' (" +
           std::to_string(body.shape()[0]) + " vs " +
           std::to_string(enc[static_cast<size_t>(s)].shape()[0]) + ")");
  }
  StreamBundle out;
  out.fuse = nd::concat({body, left, right, face}, 1);
  out.left = nd::concat({left, face}, 1);
  out.right = nd::concat({right, face}, 1);
  out.body = body;
  return out;
}

Var head_forward(const Var& input, const HeadParams& p, bool training,
                 double leaky_slope, HeadStats* stats_out) {
  if (input.v.rank() != 2) fail("head: input must be [T', W]");
  const int T = input.shape()[0], W = input.shape()[1];
  if (p.w_in.shape()[0] != W)
    fail("head: input width " + std::to_string(W) + " does not match projection [" +
         nd::shape_str(p.w_in.shape()) + "]");
  const int hidden = p.w_in.shape()[1];
  constexpr double kNormEps = 1e-5;

  Var h = nd::add(nd::matmul(input, p.w_in), p.b_in);  // [T, hidden]
  nd::Array pe = sinusoidal_pe(hidden, T);             // [hidden, T]
  nd::Array pe_t({T, hidden});
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < hidden; ++c)
      pe_t[static_cast<int64_t>(t) * hidden + c] = pe[static_cast<int64_t>(c) * T + t];
  h = nd::add(h, nd::constant(pe_t));

  Var normalized;
  if (training) {
    Var mean = nd::reduce(h, 0, nd::ReduceOp::mean);                    // [hidden]
    Var centered = nd::sub(h, mean);
    Var var = nd::reduce(nd::mul(centered, centered), 0, nd::ReduceOp::mean);
    Var inv_std = nd::rsqrt(nd::affine(var, 1.0, kNormEps));
    normalized = nd::mul(centered, inv_std);
    if (stats_out) {
      stats_out->mean = mean.v.clone();
      stats_out->var = var.v.clone();
    }
  } else {
    if (!p.running_mean || !p.running_var)
      fail("head: eval mode requires running normalization statistics");
    if (p.running_mean->shape != nd::Shape{hidden} ||
        p.running_var->shape != nd::Shape{hidden})
      fail("head: running statistics shape mismatch");
    nd::Array inv_std({hidden});
    for (int c = 0; c < hidden; ++c)
      inv_std[c] = 1.0 / std::sqrt((*p.running_var)[c] + kNormEps);
    normalized = nd::mul(nd::sub(h, nd::constant(*p.running_mean)),
                         nd::constant(inv_std));
  }
  Var scaled = nd::add(nd::mul(normalized, p.norm_scale), p.norm_shift);

  Var f = nd::leaky_relu(nd::add(nd::matmul(scaled, p.w_ffn1), p.b_ffn1), leaky_slope);
  Var ffn = nd::add(nd::matmul(f, p.w_ffn2), p.b_ffn2);
  Var res = nd::add(scaled, ffn);

  return nd::add(nd::matmul(res, p.w_cls), p.b_cls);  // [T, V+1]
}

int64_t head_param_count(int width, int hidden, int ffn, int vocab_size) {
  int64_t count = 0;
  count += static_cast<int64_t>(width) * hidden + hidden;    // projection
  count += 2 * static_cast<int64_t>(hidden);                 // norm scale/shift
  count += static_cast<int64_t>(hidden) * ffn + ffn;         // FFN in
  count += static_cast<int64_t>(ffn) * hidden + hidden;      // FFN out
  count += static_cast<int64_t>(hidden) * (vocab_size + 1) + (vocab_size + 1);
  return count;
}

std::array<int, 4> decoding_stream_widths(int encoder_dim) {
  return {4 * encoder_dim, 2 * encoder_dim, 2 * encoder_dim, encoder_dim};
}

}  // namespace stark
