#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "stark/decoder.hpp"
#include "stark/encoder.hpp"
#include "stark/rng.hpp"

using namespace stark;
using nd::Array;
using nd::Var;

namespace {

Array rand_array(nd::Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Array a(std::move(shape));
  for (int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

HeadParams zero_passthrough_head(nd::Tape& tape, int width, int hidden, int ffn) {
  // hidden == V+1 and an identity classifier, so logits expose the
  // post-normalization activations directly.
  HeadParams p;
  p.w_in = tape.leaf(Array::zeros({width, hidden}));
  p.b_in = tape.leaf(Array::zeros({hidden}));
  p.norm_scale = tape.leaf(Array::full({hidden}, 1.0));
  p.norm_shift = tape.leaf(Array::zeros({hidden}));
  p.w_ffn1 = tape.leaf(Array::zeros({hidden, ffn}));
  p.b_ffn1 = tape.leaf(Array::zeros({ffn}));
  p.w_ffn2 = tape.leaf(Array::zeros({ffn, hidden}));
  p.b_ffn2 = tape.leaf(Array::zeros({hidden}));
  Array eye({hidden, hidden});
  for (int i = 0; i < hidden; ++i) eye[static_cast<int64_t>(i) * hidden + i] = 1.0;
  p.w_cls = tape.leaf(eye);
  p.b_cls = tape.leaf(Array::zeros({hidden}));
  return p;
}

HeadParams random_head(nd::Tape& tape, int width, int hidden, int ffn, int v1, Rng& rng) {
  HeadParams p;
  p.w_in = tape.leaf(rand_array({width, hidden}, rng, -0.3, 0.3));
  p.b_in = tape.leaf(rand_array({hidden}, rng, -0.1, 0.1));
  p.norm_scale = tape.leaf(rand_array({hidden}, rng, 0.8, 1.2));
  p.norm_shift = tape.leaf(rand_array({hidden}, rng, -0.1, 0.1));
  p.w_ffn1 = tape.leaf(rand_array({hidden, ffn}, rng, -0.3, 0.3));
  p.b_ffn1 = tape.leaf(rand_array({ffn}, rng, -0.1, 0.1));
  p.w_ffn2 = tape.leaf(rand_array({ffn, hidden}, rng, -0.3, 0.3));
  p.b_ffn2 = tape.leaf(rand_array({hidden}, rng, -0.1, 0.1));
  p.w_cls = tape.leaf(rand_array({hidden, v1}, rng, -0.3, 0.3));
  p.b_cls = tape.leaf(rand_array({v1}, rng, -0.1, 0.1));
  return p;
}

}  // namespace

TEST_CASE("fuse: widths, content, and order") {
  Rng rng(113);
  const int T = 6, D = 4;
  Array body = rand_array({T, D}, rng), left = rand_array({T, D}, rng);
  Array right = rand_array({T, D}, rng), face = rand_array({T, D}, rng);
  StreamBundle sb = fuse_streams({nd::constant(body), nd::constant(left),
                                  nd::constant(right), nd::constant(face)});

  CHECK(sb.fuse.shape() == nd::Shape{T, 4 * D});
  CHECK(sb.left.shape() == nd::Shape{T, 2 * D});
  CHECK(sb.right.shape() == nd::Shape{T, 2 * D});
  CHECK(sb.body.shape() == nd::Shape{T, D});

  for (int t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d) {
      const int64_t r = static_cast<int64_t>(t) * D + d;
      CHECK(sb.fuse.v[static_cast<int64_t>(t) * 4 * D + d] == body[r]);
      CHECK(sb.fuse.v[static_cast<int64_t>(t) * 4 * D + D + d] == left[r]);
      CHECK(sb.fuse.v[static_cast<int64_t>(t) * 4 * D + 2 * D + d] == right[r]);
      CHECK(sb.fuse.v[static_cast<int64_t>(t) * 4 * D + 3 * D + d] == face[r]);
      CHECK(sb.left.v[static_cast<int64_t>(t) * 2 * D + d] == left[r]);
      CHECK(sb.left.v[static_cast<int64_t>(t) * 2 * D + D + d] == face[r]);
      CHECK(sb.right.v[static_cast<int64_t>(t) * 2 * D + d] == right[r]);
      CHECK(sb.right.v[static_cast<int64_t>(t) * 2 * D + D + d] == face[r]);
      CHECK(sb.body.v[r] == body[r]);
    }

  CHECK(sb.stream(0).v.shape == sb.fuse.v.shape);
  CHECK(std::string(StreamBundle::stream_name(0)) == "fuse");
  CHECK(std::string(StreamBundle::stream_name(3)) == "body");
  CHECK_THROWS_AS(sb.stream(4), std::out_of_range);

  // Frame-count mismatch across encoders is a hard error.
  Array short_face = rand_array({T - 1, D}, rng);
  CHECK_THROWS_AS(fuse_streams({nd::constant(body), nd::constant(left),
                                nd::constant(right), nd::constant(short_face)}),
                  std::invalid_argument);
}

TEST_CASE("fuse: decoding widths for the default encoder") {
  auto w = decoding_stream_widths(256);
  CHECK(w == std::array<int, 4>{1024, 512, 512, 256});
}

TEST_CASE("head: training-mode normalization standardizes over time") {
  Rng rng(127);
  nd::Tape tape;
  const int T = 8, W = 5, hidden = 6;
  HeadParams p = zero_passthrough_head(tape, W, hidden, 4);
  // Nonzero projection so the activations vary with the input.
  p.w_in = tape.leaf(rand_array({W, hidden}, rng, -0.5, 0.5));
  p.b_in = tape.leaf(rand_array({hidden}, rng, -0.2, 0.2));

  Var input = nd::constant(rand_array({T, W}, rng));
  HeadStats stats;
  Var logits = head_forward(input, p, /*training=*/true, 0.1, &stats);
  REQUIRE(logits.shape() == nd::Shape{T, hidden});

  for (int c = 0; c < hidden; ++c) {
    double mean = 0;
    for (int t = 0; t < T; ++t) mean += logits.v[static_cast<int64_t>(t) * hidden + c];
    mean /= T;
    double var = 0;
    for (int t = 0; t < T; ++t) {
      const double d = logits.v[static_cast<int64_t>(t) * hidden + c] - mean;
      var += d * d;
    }
    var /= T;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }

  // Reported statistics describe the pre-normalization activations:
  // projection plus positional encoding, biased variance.
  Array pe = sinusoidal_pe(hidden, T);  // [hidden, T]
  REQUIRE(stats.mean.shape == nd::Shape{hidden});
  REQUIRE(stats.var.shape == nd::Shape{hidden});
  for (int c = 0; c < hidden; ++c) {
    double mean = 0;
    std::vector<double> act(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
      double proj = p.b_in.v[c];
      for (int w = 0; w < W; ++w)
        proj += input.v[static_cast<int64_t>(t) * W + w] * p.w_in.v[static_cast<int64_t>(w) * hidden + c];
      act[static_cast<size_t>(t)] = proj + pe[static_cast<int64_t>(c) * T + t];
      mean += act[static_cast<size_t>(t)];
    }
    mean /= T;
    double var = 0;
    for (int t = 0; t < T; ++t) {
      const double d = act[static_cast<size_t>(t)] - mean;
      var += d * d;
    }
    var /= T;
    CHECK(stats.mean[c] == doctest::Approx(mean).epsilon(1e-10));
    CHECK(stats.var[c] == doctest::Approx(var).epsilon(1e-10));
  }
}

TEST_CASE("head: eval mode uses stored statistics and is deterministic") {
  Rng rng(131);
  nd::Tape tape;
  const int T = 5, W = 4, hidden = 6, ffn = 8, v1 = 3;
  HeadParams p = random_head(tape, W, hidden, ffn, v1, rng);
  Array input = rand_array({T, W}, rng);

  // Without running statistics, eval mode must refuse to run.
  CHECK_THROWS_AS(head_forward(nd::constant(input), p, false, 0.1), std::invalid_argument);

  Array mu = rand_array({hidden}, rng, -0.5, 0.5);
  Array var = rand_array({hidden}, rng, 0.5, 1.5);
  p.running_mean = &mu;
  p.running_var = &var;

  Var a = head_forward(nd::constant(input), p, false, 0.1);
  Var b = head_forward(nd::constant(input.clone()), p, false, 0.1);
  REQUIRE(a.shape() == nd::Shape{T, v1});
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.v[i] == b.v[i]);

  // Training mode normalizes with sample statistics instead, so the two
  // modes agree only if the running stats happen to match the sample.
  HeadStats stats;
  Var train_out = head_forward(nd::constant(input), p, true, 0.1, &stats);
  double diff = 0;
  for (int64_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a.v[i] - train_out.v[i]));
  CHECK(diff > 1e-6);

  Array mu2 = stats.mean.clone(), var2 = stats.var.clone();
  p.running_mean = &mu2;
  p.running_var = &var2;
  Var c = head_forward(nd::constant(input), p, false, 0.1);
  double agree = 0;
  for (int64_t i = 0; i < c.size(); ++i) agree = std::max(agree, std::abs(c.v[i] - train_out.v[i]));
  CHECK(agree < 1e-10);
}

TEST_CASE("head: parameter count formula") {
  const int W = 8, hidden = 6, ffn = 10, V = 4;
  const int64_t expect = W * hidden + hidden  // projection
                         + 2 * hidden          // norm scale and shift
                         + hidden * ffn + ffn  // ffn in
                         + ffn * hidden + hidden  // ffn out
                         + hidden * (V + 1) + (V + 1);  // classifier
  CHECK(head_param_count(W, hidden, ffn, V) == expect);
}

TEST_CASE("head: input validation") {
  Rng rng(137);
  nd::Tape tape;
  HeadParams p = random_head(tape, 4, 6, 8, 3, rng);
  CHECK_THROWS_AS(head_forward(nd::constant(Array::zeros({5, 7})), p, true, 0.1),
                  std::invalid_argument);
  CHECK_THROWS_AS(head_forward(nd::constant(Array::zeros({4})), p, true, 0.1),
                  std::invalid_argument);
}
