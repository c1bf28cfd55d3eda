#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

// Dense double-precision arrays with reverse-mode differentiation on an
// explicit tape. Row-major storage throughout; broadcasting follows the
// numpy right-aligned size-1-stretch convention.

namespace stark::nd {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Shallow-copying dense array: copies share the underlying buffer.
// Ops never mutate their inputs; use clone() before writing to a
// buffer that might be shared.
struct Array {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;

  Array();
  explicit Array(Shape s);
  Array(Shape s, std::vector<double> values);

  static Array zeros(Shape s);
  static Array full(Shape s, double v);
  static Array scalar(double v);

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t size() const { return static_cast<int64_t>(data->size()); }
  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double& operator[](int64_t i) { return (*data)[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return (*data)[static_cast<size_t>(i)]; }

  Array clone() const;
  bool all_finite() const;
};

class Tape;

// A value plus an optional handle into the tape that produced it.
// node < 0 means the value is a constant: no gradient is tracked.
struct Var {
  Array v;
  Tape* tape = nullptr;
  int node = -1;

  bool tracked() const { return tape != nullptr && node >= 0; }
  const Shape& shape() const { return v.shape; }
  int64_t size() const { return v.size(); }
};

Var constant(Array a);
Var constant(double v);

class Tape {
 public:
  using BackFn = std::function<void(const double* gout, Tape& tape)>;

  // Registers a gradient-tracked leaf (a parameter or an input we
  // want gradients for). The leaf aliases `value`'s buffer.
  Var leaf(const Array& value);

  // Used by ops: appends a node whose gradient buffer holds
  // `out_size` doubles once backward touches it.
  int record(int64_t out_size, BackFn back);

  // Reverse sweep from a scalar root. Node order on the tape is
  // topological by construction, so one reverse pass suffices.
  // Gradients from a previous backward() are discarded first.
  void backward(const Var& root);

  // Gradient of the last backward() root w.r.t. node `id`; a zero
  // array of `shape` when the node was never reached.
  Array grad(int id, const Shape& shape) const;

  // Direct view of a node's gradient; nullptr when never reached.
  const std::vector<double>* grad_vec(int id) const;

  // Accumulation buffer for node `id`, allocated and zeroed on first
  // use during a backward sweep.
  double* grad_buf(int id);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    int64_t size = 0;
    BackFn back;
    std::vector<double> grad;  // empty until touched by backward
  };
  std::vector<Node> nodes_;
};

enum class EwOp { add, sub, mul, div, logaddexp };
enum class ReduceOp { sum, mean, max };

// --- primitive operations ---------------------------------------------

Var matmul(const Var& a, const Var& b);  // [m,k] x [k,n] -> [m,n]

Var elementwise(const Var& a, const Var& b, EwOp op);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var logaddexp(const Var& a, const Var& b);

// Removes `axis`. max records argmax per lane for gradient routing;
// ties go to the lowest index.
Var reduce(const Var& x, int axis, ReduceOp op);

Var softmax_axis(const Var& x, int axis);  // max-subtracted, sums to 1 along axis
Var leaky_relu(const Var& x, double slope = 0.01);

Var exp(const Var& x);
Var log(const Var& x);
Var sqrt(const Var& x);
Var rsqrt(const Var& x);
Var affine(const Var& x, double scale, double shift);  // scale*x + shift

Var reshape(const Var& x, Shape s);                // shares storage
Var transpose(const Var& x, std::vector<int> perm);
Var slice(const Var& x, int axis, int start, int len);
Var concat(const std::vector<Var>& xs, int axis);

// Sliding temporal windows over the second-to-last axis, zero-padded:
// [..., T, P] -> [..., T, k, P] with out[.., t, j, p] = x[.., t+j-k/2, p].
// k must be odd; stride is 1 (one window per frame).
Var patchify(const Var& x, int k);

// Max pool along the last axis, kernel 2 stride 2, ceil semantics
// (an odd tail keeps its single element). Ties route to lower index.
Var maxpool_time2(const Var& x);

// Cuts the value loose from the tape (gradient barrier).
Var detach(const Var& x);

// --- composed helpers --------------------------------------------------

Var log_softmax_axis(const Var& x, int axis);
Var sum_all(const Var& x);   // -> rank-0 scalar
Var mean_all(const Var& x);  // -> rank-0 scalar

}  // namespace stark::nd
