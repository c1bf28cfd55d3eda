#include "stark/ndiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stark::nd {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_shape(const Shape& s) {
  // Zero-size dimensions are legal for data plumbing (an empty keypoint
  // stream); differentiable ops reject them at their own argument checks.
  for (int d : s) {
    if (d < 0) fail("invalid dimension in shape " + shape_str(s));
  }
}

int64_t prod(const Shape& s, int from, int to) {
  int64_t n = 1;
  for (int i = from; i < to; ++i) n *= s[i];
  return n;
}

}  // namespace

Array::Array() : data(std::make_shared<std::vector<double>>()) {}

Array::Array(Shape s) : shape(std::move(s)) {
  check_shape(shape);
  data = std::make_shared<std::vector<double>>(static_cast<size_t>(numel(shape)), 0.0);
}

Array::Array(Shape s, std::vector<double> values) : shape(std::move(s)) {
  check_shape(shape);
  if (numel(shape) != static_cast<int64_t>(values.size()))
    fail("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  data = std::make_shared<std::vector<double>>(std::move(values));
}

Array Array::zeros(Shape s) { return Array(std::move(s)); }

Array Array::full(Shape s, double v) {
  Array a(std::move(s));
  std::fill(a.data->begin(), a.data->end(), v);
  return a;
}

Array Array::scalar(double v) { return Array(Shape{}, {v}); }

Array Array::clone() const {
  Array a;
  a.shape = shape;
  a.data = std::make_shared<std::vector<double>>(*data);
  return a;
}

bool Array::all_finite() const {
  for (double v : *data)
    if (!std::isfinite(v)) return false;
  return true;
}

Var constant(Array a) { return Var{std::move(a), nullptr, -1}; }
Var constant(double v) { return Var{Array::scalar(v), nullptr, -1}; }

// --- tape ----------------------------------------------------------------

Var Tape::leaf(const Array& value) {
  int id = record(value.size(), nullptr);
  return Var{value, this, id};
}

int Tape::record(int64_t out_size, BackFn back) {
  nodes_.push_back(Node{out_size, std::move(back), {}});
  return static_cast<int>(nodes_.size()) - 1;
}

double* Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.size), 0.0);
  return n.grad.data();
}

const std::vector<double>* Tape::grad_vec(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  return n.grad.empty() ? nullptr : &n.grad;
}

Array Tape::grad(int id, const Shape& shape) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  if (numel(shape) != n.size) fail("grad shape " + shape_str(shape) + " does not match node size");
  if (n.grad.empty()) return Array::zeros(shape);
  return Array(shape, n.grad);
}

void Tape::backward(const Var& root) {
  if (!root.tracked() || root.tape != this) fail("backward root is not tracked on this tape");
  if (root.size() != 1) fail("backward root must be scalar, got shape " + shape_str(root.shape()));
  for (Node& n : nodes_) n.grad.clear();
  grad_buf(root.node)[0] = 1.0;
  for (int i = root.node; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.grad.empty() && n.back) n.back(n.grad.data(), *this);
  }
}

// --- op plumbing -----------------------------------------------------------

namespace {

Tape* pick_tape(std::initializer_list<const Var*> vars) {
  Tape* t = nullptr;
  for (const Var* v : vars) {
    if (!v->tracked()) continue;
    if (t && t != v->tape) fail("operation mixes variables from two different tapes");
    t = v->tape;
  }
  return t;
}

// Right-aligned broadcast shape, size-1 axes stretch.
Shape broadcast_shape(const Shape& a, const Shape& b) {
  int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  int r = std::max(ra, rb);
  Shape out(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    int da = i < r - ra ? 1 : a[static_cast<size_t>(i - (r - ra))];
    int db = i < r - rb ? 1 : b[static_cast<size_t>(i - (r - rb))];
    if (da != db && da != 1 && db != 1)
      fail("shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    out[static_cast<size_t>(i)] = std::max(da, db);
  }
  return out;
}

// Strides of `s` aligned to broadcast result `out`, 0 on stretched axes.
std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  int r = static_cast<int>(out.size()), rs = static_cast<int>(s.size());
  std::vector<int64_t> st(static_cast<size_t>(r), 0);
  int64_t acc = 1;
  for (int i = rs - 1; i >= 0; --i) {
    int oi = i + (r - rs);
    st[static_cast<size_t>(oi)] = (s[static_cast<size_t>(i)] == 1) ? 0 : acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// Walks every element of `oshape`, maintaining offsets into two
// broadcast operands; f(out_linear, off_a, off_b).
template <class F>
void bcast_walk(const Shape& oshape, const std::vector<int64_t>& sa, const std::vector<int64_t>& sb, F f) {
  int r = static_cast<int>(oshape.size());
  int64_t n = numel(oshape);
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t offa = 0, offb = 0;
  for (int64_t i = 0; i < n; ++i) {
    f(i, offa, offb);
    for (int ax = r - 1; ax >= 0; --ax) {
      idx[static_cast<size_t>(ax)]++;
      offa += sa[static_cast<size_t>(ax)];
      offb += sb[static_cast<size_t>(ax)];
      if (idx[static_cast<size_t>(ax)] < oshape[static_cast<size_t>(ax)]) break;
      idx[static_cast<size_t>(ax)] = 0;
      offa -= sa[static_cast<size_t>(ax)] * oshape[static_cast<size_t>(ax)];
      offb -= sb[static_cast<size_t>(ax)] * oshape[static_cast<size_t>(ax)];
    }
  }
}

double ew_apply(EwOp op, double x, double y) {
  switch (op) {
    case EwOp::add: return x + y;
    case EwOp::sub: return x - y;
    case EwOp::mul: return x * y;
    case EwOp::div: return x / y;
    case EwOp::logaddexp: {
      double m = std::max(x, y);
      return m + std::log(std::exp(x - m) + std::exp(y - m));
    }
  }
  return 0.0;
}

struct AxisSplit {
  int64_t pre, n, post;
};

AxisSplit split_axis(const Shape& s, int axis, const char* opname) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    fail(std::string(opname) + ": axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  return {prod(s, 0, axis), s[static_cast<size_t>(axis)], prod(s, axis + 1, static_cast<int>(s.size()))};
}

}  // namespace

// --- matmul ----------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.v.rank() != 2 || b.v.rank() != 2 || a.shape()[1] != b.shape()[0])
    fail("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Array out(Shape{m, n});
  {
    const double* pa = a.v.ptr();
    const double* pb = b.v.ptr();
    double* pc = out.ptr();
    for (int i = 0; i < m; ++i) {
      double* crow = pc + static_cast<int64_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const double aik = pa[static_cast<int64_t>(i) * k + kk];
        if (aik == 0.0) continue;
        const double* brow = pb + static_cast<int64_t>(kk) * n;
        for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  Tape* tp = pick_tape({&a, &b});
  Var r{out, tp, -1};
  if (tp) {
    Array av = a.v, bv = b.v;
    int na = a.node, nb = b.node;
    r.node = tp->record(out.size(), [av, bv, na, nb, m, k, n](const double* g, Tape& t) {
      if (na >= 0) {
        double* ga = t.grad_buf(na);
        const double* pb = bv.ptr();
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            const double* grow = g + static_cast<int64_t>(i) * n;
            const double* brow = pb + static_cast<int64_t>(kk) * n;
            double acc = 0;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[static_cast<int64_t>(i) * k + kk] += acc;
          }
      }
      if (nb >= 0) {
        double* gb = t.grad_buf(nb);
        const double* pa = av.ptr();
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            const double aik = pa[static_cast<int64_t>(i) * k + kk];
            if (aik == 0.0) continue;
            const double* grow = g + static_cast<int64_t>(i) * n;
            double* gbrow = gb + static_cast<int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
          }
      }
    });
  }
  return r;
}

// --- elementwise -------------------------------------------------------------

Var elementwise(const Var& a, const Var& b, EwOp op) {
  Shape oshape = broadcast_shape(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), oshape);
  auto sb = broadcast_strides(b.shape(), oshape);
  Array out(oshape);
  const double* pa = a.v.ptr();
  const double* pb = b.v.ptr();
  double* po = out.ptr();
  if (a.shape() == b.shape()) {
    int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) po[i] = ew_apply(op, pa[i], pb[i]);
  } else {
    bcast_walk(oshape, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) { po[i] = ew_apply(op, pa[oa], pb[ob]); });
  }
  Tape* tp = pick_tape({&a, &b});
  Var r{out, tp, -1};
  if (tp) {
    Array av = a.v, bv = b.v, ov = out;
    int na = a.node, nb = b.node;
    r.node = tp->record(out.size(), [av, bv, ov, na, nb, op, oshape, sa, sb](const double* g, Tape& t) {
      double* ga = na >= 0 ? t.grad_buf(na) : nullptr;
      double* gb = nb >= 0 ? t.grad_buf(nb) : nullptr;
      const double* pa = av.ptr();
      const double* pb = bv.ptr();
      const double* po = ov.ptr();
      bcast_walk(oshape, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
        switch (op) {
          case EwOp::add:
            if (ga) ga[oa] += g[i];
            if (gb) gb[ob] += g[i];
            break;
          case EwOp::sub:
            if (ga) ga[oa] += g[i];
            if (gb) gb[ob] -= g[i];
            break;
          case EwOp::mul:
            if (ga) ga[oa] += g[i] * pb[ob];
            if (gb) gb[ob] += g[i] * pa[oa];
            break;
          case EwOp::div:
            if (ga) ga[oa] += g[i] / pb[ob];
            if (gb) gb[ob] -= g[i] * pa[oa] / (pb[ob] * pb[ob]);
            break;
          case EwOp::logaddexp:
            if (ga) ga[oa] += g[i] * std::exp(pa[oa] - po[i]);
            if (gb) gb[ob] += g[i] * std::exp(pb[ob] - po[i]);
            break;
        }
      });
    });
  }
  return r;
}

Var add(const Var& a, const Var& b) { return elementwise(a, b, EwOp::add); }
Var sub(const Var& a, const Var& b) { return elementwise(a, b, EwOp::sub); }
Var mul(const Var& a, const Var& b) { return elementwise(a, b, EwOp::mul); }
Var div(const Var& a, const Var& b) { return elementwise(a, b, EwOp::div); }
Var logaddexp(const Var& a, const Var& b) { return elementwise(a, b, EwOp::logaddexp); }

// --- reduce ------------------------------------------------------------------

Var reduce(const Var& x, int axis, ReduceOp op) {
  AxisSplit ax = split_axis(x.shape(), axis, "reduce");
  Shape oshape = x.shape();
  oshape.erase(oshape.begin() + axis);
  Array out(oshape);
  std::vector<int> argmax;
  if (op == ReduceOp::max) argmax.assign(static_cast<size_t>(ax.pre * ax.post), 0);
  const double* px = x.v.ptr();
  double* po = out.ptr();
  for (int64_t p = 0; p < ax.pre; ++p) {
    for (int64_t q = 0; q < ax.post; ++q) {
      const double* lane = px + (p * ax.n) * ax.post + q;
      double acc;
      if (op == ReduceOp::max) {
        acc = lane[0];
        int best = 0;
        for (int64_t i = 1; i < ax.n; ++i) {
          double v = lane[i * ax.post];
          if (v > acc) {
            acc = v;
            best = static_cast<int>(i);
          }
        }
        argmax[static_cast<size_t>(p * ax.post + q)] = best;
      } else {
        acc = 0;
        for (int64_t i = 0; i < ax.n; ++i) acc += lane[i * ax.post];
        if (op == ReduceOp::mean) acc /= static_cast<double>(ax.n);
      }
      po[p * ax.post + q] = acc;
    }
  }
  Tape* tp = pick_tape({&x});
  Var r{out, tp, -1};
  if (tp) {
    int nx = x.node;
    r.node = tp->record(out.size(), [nx, ax, op, argmax](const double* g, Tape& t) {
      double* gx = t.grad_buf(nx);
      for (int64_t p = 0; p < ax.pre; ++p)
        for (int64_t q = 0; q < ax.post; ++q) {
          double gv = g[p * ax.post + q];
          double* lane = gx + (p * ax.n) * ax.post + q;
          switch (op) {
            case ReduceOp::sum:
              for (int64_t i = 0; i < ax.n; ++i) lane[i * ax.post] += gv;
              break;
            case ReduceOp::mean:
              gv /= static_cast<double>(ax.n);
              for (int64_t i = 0; i < ax.n; ++i) lane[i * ax.post] += gv;
              break;
            case ReduceOp::max:
              lane[argmax[static_cast<size_t>(p * ax.post + q)] * ax.post] += gv;
              break;
          }
        }
    });
  }
  return r;
}

// --- softmax -----------------------------------------------------------------

Var softmax_axis(const Var& x, int axis) {
  AxisSplit ax = split_axis(x.shape(), axis, "softmax_axis");
  Array out(x.shape());
  const double* px = x.v.ptr();
  double* po = out.ptr();
  for (int64_t p = 0; p < ax.pre; ++p)
    for (int64_t q = 0; q < ax.post; ++q) {
      const double* lane = px + (p * ax.n) * ax.post + q;
      double* olane = po + (p * ax.n) * ax.post + q;
      double m = lane[0];
      for (int64_t i = 1; i < ax.n; ++i) m = std::max(m, lane[i * ax.post]);
      double s = 0;
      for (int64_t i = 0; i < ax.n; ++i) {
        double e = std::exp(lane[i * ax.post] - m);
        olane[i * ax.post] = e;
        s += e;
      }
      for (int64_t i = 0; i < ax.n; ++i) olane[i * ax.post] /= s;
    }
  Tape* tp = pick_tape({&x});
  Var r{out, tp, -1};
  if (tp) {
    int nx = x.node;
    Array ov = out;
    r.node = tp->record(out.size(), [nx, ax, ov](const double* g, Tape& t) {
      double* gx = t.grad_buf(nx);
      const double* y = ov.ptr();
      for (int64_t p = 0; p < ax.pre; ++p)
        for (int64_t q = 0; q < ax.post; ++q) {
          int64_t base = (p * ax.n) * ax.post + q;
          double dot = 0;
          for (int64_t i = 0; i < ax.n; ++i) dot += g[base + i * ax.post] * y[base + i * ax.post];
          for (int64_t i = 0; i < ax.n; ++i)
            gx[base + i * ax.post] += y[base + i * ax.post] * (g[base + i * ax.post] - dot);
        }
    });
  }
  return r;
}

// --- simple unary ops ----------------------------------------------------------

namespace {

template <class Fwd, class Bwd>
Var unary_op(const Var& x, Fwd fwd, Bwd bwd) {
  Array out(x.shape());
  const double* px = x.v.ptr();
  double* po = out.ptr();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  Tape* tp = pick_tape({&x});
  Var r{out, tp, -1};
  if (tp) {
    int nx = x.node;
    Array xv = x.v, ov = out;
    r.node = tp->record(n, [nx, xv, ov, bwd, n](const double* g, Tape& t) {
      double* gx = t.grad_buf(nx);
      const double* px = xv.ptr();
      const double* py = ov.ptr();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * bwd(px[i], py[i]);
    });
  }
  return r;
}

}  // namespace

Var leaky_relu(const Var& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) fail("leaky_relu: slope must be in (0,1)");
  return unary_op(
      x, [slope](double v) { return v >= 0 ? v : slope * v; },
      [slope](double v, double) { return v >= 0 ? 1.0 : slope; });
}

Var exp(const Var& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  return unary_op(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(const Var& x) {
  return unary_op(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var rsqrt(const Var& x) {
  return unary_op(
      x, [](double v) { return 1.0 / std::sqrt(v); },
      [](double, double y) { return -0.5 * y * y * y; });
}

Var affine(const Var& x, double scale, double shift) {
  return unary_op(
      x, [scale, shift](double v) { return scale * v + shift; },
      [scale](double, double) { return scale; });
}

// --- layout ops -------------------------------------------------------------

Var reshape(const Var& x, Shape s) {
  if (numel(s) != x.size())
    fail("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(s));
  check_shape(s);
  Array out;
  out.shape = std::move(s);
  out.data = x.v.data;  // shared storage, same linear order
  Tape* tp = pick_tape({&x});
  Var r{out, tp, -1};
  if (tp) {
    int nx = x.node;
    int64_t n = x.size();
    r.node = tp->record(n, [nx, n](const double* g, Tape& t) {
      double* gx = t.grad_buf(nx);
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return r;
}

Var transpose(const Var& x, std::vector<int> perm) {
  int r0 = x.v.rank();
  if (static_cast<int>(perm.size()) != r0) fail("transpose: perm rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(r0), false);
  for (int p : perm) {
    if (p < 0 || p >= r0 || seen[static_cast<size_t>(p)]) fail("transpose: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }
  Shape oshape(static_cast<size_t>(r0));
  for (int i = 0; i < r0; ++i) oshape[static_cast<size_t>(i)] = x.shape()[static_cast<size_t>(perm[static_cast<size_t>(i)])];

  // x strides, then arranged in output-axis order
  std::vector<int64_t> xs(static_cast<size_t>(r0), 1);
  for (int i = r0 - 2; i >= 0; --i)
    xs[static_cast<size_t>(i)] = xs[static_cast<size_t>(i + 1)] * x.shape()[static_cast<size_t>(i + 1)];
  std::vector<int64_t> os(static_cast<size_t>(r0));
  for (int i = 0; i < r0; ++i) os[static_cast<size_t>(i)] = xs[static_cast<size_t>(perm[static_cast<size_t>(i)])];

  Array out(oshape);
  const double* px = x.v.ptr();
  double* po = out.ptr();
  std::vector<int64_t> zero(static_cast<size_t>(r0), 0);
  bcast_walk(oshape, os, zero, [&](int64_t i, int64_t offx, int64_t) { po[i] = px[offx]; });

  Tape* tp = pick_tape({&x});
  Var r{out, tp, -1};
  if (tp) {
    int nx = x.node;
    r.node = tp->record(out.size(), [nx, oshape, os, zero](const double* g, Tape& t) {
      double* gx = t.grad_buf(nx);
      bcast_walk(oshape, os, zero, [&](int64_t i, int64_t offx, int64_t) { gx[offx] += g[i]; });
    });
  }
  return r;
}

Var slice(const Var& x, int axis, int start, int len) {
  AxisSplit ax = split_axis(x.shape(), axis, "slice");
  if (start < 0 || len <= 0 || start + len > ax.n)
    fail("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
         ") out of bounds for axis size " + std::to_string(ax.n));
  Shape oshape = x.shape();
  oshape[static_cast<size_t>(axis)] = len;
  Array out(oshape);
  const double* px = x.v.ptr();
  double* po = out.ptr();
  for (int64_t p = 0; p < ax.pre; ++p)
    std::copy_n(px + (p * ax.n + start) * ax.post, static_cast<size_t>(len * ax.post),
                po + p * len * ax.post);
  Tape* tp = pick_tape({&x});
  Var r{out, tp, -1};
  if (tp) {
    int nx = x.node;
    r.node = tp->record(out.size(), [nx, ax, start, len](const double* g, Tape& t) {
      double* gx = t.grad_buf(nx);
      for (int64_t p = 0; p < ax.pre; ++p) {
        const double* gsrc = g + p * len * ax.post;
        double* gdst = gx + (p * ax.n + start) * ax.post;
        for (int64_t i = 0; i < len * ax.post; ++i) gdst[i] += gsrc[i];
      }
    });
  }
  return r;
}

Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) fail("concat: empty input list");
  const Shape& s0 = xs[0].shape();
  AxisSplit ax0 = split_axis(s0, axis, "concat");
  int total = 0;
  for (const Var& x : xs) {
    if (x.v.rank() != static_cast<int>(s0.size())) fail("concat: rank mismatch");
    for (int d = 0; d < x.v.rank(); ++d)
      if (d != axis && x.shape()[static_cast<size_t>(d)] != s0[static_cast<size_t>(d)])
        fail("concat: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(s0));
    total += x.shape()[static_cast<size_t>(axis)];
  }
  Shape oshape = s0;
  oshape[static_cast<size_t>(axis)] = total;
  Array out(oshape);
  double* po = out.ptr();
  std::vector<int> offsets;
  int off = 0;
  for (const Var& x : xs) {
    offsets.push_back(off);
    int n_i = x.shape()[static_cast<size_t>(axis)];
    const double* px = x.v.ptr();
    for (int64_t p = 0; p < ax0.pre; ++p)
      std::copy_n(px + p * n_i * ax0.post, static_cast<size_t>(n_i * ax0.post),
                  po + (p * total + off) * ax0.post);
    off += n_i;
  }
  Tape* tp = nullptr;
  for (const Var& x : xs) {
    if (!x.tracked()) continue;
    if (tp && tp != x.tape) fail("concat mixes variables from two different tapes");
    tp = x.tape;
  }
  Var r{out, tp, -1};
  if (tp) {
    std::vector<int> nodes;
    std::vector<int> sizes;
    for (const Var& x : xs) {
      nodes.push_back(x.node);
      sizes.push_back(x.shape()[static_cast<size_t>(axis)]);
    }
    r.node = tp->record(out.size(), [nodes, sizes, offsets, ax0, total](const double* g, Tape& t) {
      for (size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i] < 0) continue;
        double* gx = t.grad_buf(nodes[i]);
        int n_i = sizes[i];
        for (int64_t p = 0; p < ax0.pre; ++p) {
          const double* gsrc = g + (p * total + offsets[i]) * ax0.post;
          double* gdst = gx + p * n_i * ax0.post;
          for (int64_t j = 0; j < n_i * ax0.post; ++j) gdst[j] += gsrc[j];
        }
      }
    });
  }
  return r;
}

Var patchify(const Var& x, int k) {
  if (k < 1 || k % 2 == 0) fail("patchify: kernel must be odd and positive, got " + std::to_string(k));
  if (x.v.rank() < 2) fail("patchify: input rank must be >= 2, got shape " + shape_str(x.shape()));
  int r0 = x.v.rank();
  int64_t T = x.shape()[static_cast<size_t>(r0 - 2)];
  int64_t P = x.shape()[static_cast<size_t>(r0 - 1)];
  int64_t pre = prod(x.shape(), 0, r0 - 2);
  Shape oshape = x.shape();
  oshape.insert(oshape.end() - 1, k);
  Array out(oshape);
  const int c = k / 2;
  const double* px = x.v.ptr();
  double* po = out.ptr();
  for (int64_t o = 0; o < pre; ++o)
    for (int64_t t = 0; t < T; ++t)
      for (int j = 0; j < k; ++j) {
        int64_t tt = t + j - c;
        double* dst = po + ((o * T + t) * k + j) * P;
        if (tt < 0 || tt >= T) {
          std::fill_n(dst, static_cast<size_t>(P), 0.0);
        } else {
          std::copy_n(px + (o * T + tt) * P, static_cast<size_t>(P), dst);
        }
      }
  Tape* tp = pick_tape({&x});
  Var r{out, tp, -1};
  if (tp) {
    int nx = x.node;
    r.node = tp->record(out.size(), [nx, pre, T, P, k, c](const double* g, Tape& t) {
      double* gx = t.grad_buf(nx);
      for (int64_t o = 0; o < pre; ++o)
        for (int64_t tt0 = 0; tt0 < T; ++tt0)
          for (int j = 0; j < k; ++j) {
            int64_t tt = tt0 + j - c;
            if (tt < 0 || tt >= T) continue;
            const double* gsrc = g + ((o * T + tt0) * k + j) * P;
            double* gdst = gx + (o * T + tt) * P;
            for (int64_t p = 0; p < P; ++p) gdst[p] += gsrc[p];
          }
    });
  }
  return r;
}

Var maxpool_time2(const Var& x) {
  if (x.v.rank() < 1) fail("maxpool_time2: input must have rank >= 1");
  int r0 = x.v.rank();
  int64_t T = x.shape()[static_cast<size_t>(r0 - 1)];
  int64_t pre = prod(x.shape(), 0, r0 - 1);
  int64_t T2 = (T + 1) / 2;
  Shape oshape = x.shape();
  oshape[static_cast<size_t>(r0 - 1)] = static_cast<int>(T2);
  Array out(oshape);
  std::vector<int64_t> argmax(static_cast<size_t>(pre * T2));
  const double* px = x.v.ptr();
  double* po = out.ptr();
  for (int64_t o = 0; o < pre; ++o)
    for (int64_t u = 0; u < T2; ++u) {
      int64_t i0 = 2 * u, i1 = 2 * u + 1;
      double v = px[o * T + i0];
      int64_t best = i0;
      if (i1 < T && px[o * T + i1] > v) {
        v = px[o * T + i1];
        best = i1;
      }
      po[o * T2 + u] = v;
      argmax[static_cast<size_t>(o * T2 + u)] = best;
    }
  Tape* tp = pick_tape({&x});
  Var r{out, tp, -1};
  if (tp) {
    int nx = x.node;
    r.node = tp->record(out.size(), [nx, pre, T, T2, argmax](const double* g, Tape& t) {
      double* gx = t.grad_buf(nx);
      for (int64_t o = 0; o < pre; ++o)
        for (int64_t u = 0; u < T2; ++u)
          gx[o * T + argmax[static_cast<size_t>(o * T2 + u)]] += g[o * T2 + u];
    });
  }
  return r;
}

Var detach(const Var& x) { return Var{x.v, nullptr, -1}; }

// --- composed helpers ---------------------------------------------------------

Var log_softmax_axis(const Var& x, int axis) {
  AxisSplit ax = split_axis(x.shape(), axis, "log_softmax_axis");
  (void)ax;
  Shape keep = x.shape();
  keep[static_cast<size_t>(axis)] = 1;
  Var m = reshape(reduce(x, axis, ReduceOp::max), keep);
  Var z = sub(x, m);
  Var lse = add(m, reshape(log(reduce(exp(z), axis, ReduceOp::sum)), keep));
  return sub(x, lse);
}

Var sum_all(const Var& x) {
  Var flat = reshape(x, Shape{static_cast<int>(x.size())});
  return reduce(flat, 0, ReduceOp::sum);
}

Var mean_all(const Var& x) {
  Var flat = reshape(x, Shape{static_cast<int>(x.size())});
  return reduce(flat, 0, ReduceOp::mean);
}

}  // namespace stark::nd
