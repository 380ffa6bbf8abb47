#pragma once

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <vector>

namespace enes::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A batch of `items` rows of width `cols`, each carrying a value and
// optionally K directional derivatives. Storage is component-major: rows
// [c * items, (c + 1) * items) hold component c, where c = 0 is the value and
// c = 1..K are tangents.
struct DualTensor {
  int items = 0;
  int comps = 1;
  Mat data;

  DualTensor() = default;
  DualTensor(int items_, int comps_, int cols) : items(items_), comps(comps_), data(Mat::Zero(items_ * comps_, cols)) {}
  static DualTensor value_only(Mat value);

  int cols() const { return static_cast<int>(data.cols()); }
  bool dual() const { return comps > 1; }
  auto comp(int c) { return data.middleRows(static_cast<Eigen::Index>(c) * items, items); }
  auto comp(int c) const { return data.middleRows(static_cast<Eigen::Index>(c) * items, items); }
  auto value() { return comp(0); }
  auto value() const { return comp(0); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape;

using ForwardFn = std::function<void(Tape&, DualTensor& out)>;
using BackwardFn = std::function<void(Tape&, const DualTensor& out, const Mat& grad_out)>;

// Records one evaluation as a sequence of tensor-level primitives. Every
// primitive knows how to recompute its output (replay) and how to pull an
// output adjoint back to its inputs, including through tangent rows, which
// yields reverse-over-forward mixed derivatives.
//
// Single-writer; independent tapes may run on different threads.
class Tape {
 public:
  explicit Tape(int tangents) : tangents_(tangents) {}

  int tangents() const { return tangents_; }
  int dual_comps() const { return 1 + tangents_; }

  Var leaf(DualTensor value, bool requires_grad);
  Var param(const Mat& value) { return leaf(DualTensor::value_only(value), true); }
  Var constant(const Mat& value) { return leaf(DualTensor::value_only(value), false); }

  // Replaces a leaf's value; call `replay` to propagate.
  void set_leaf(Var v, DualTensor value);

  Var push(std::initializer_list<Var> inputs, ForwardFn forward, BackwardFn backward);

  const DualTensor& value(Var v) const { return nodes_[v.id].out; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient accumulated for a node, zero-filled if nothing reached it.
  Mat grad(Var v) const;
  // Accumulator for use inside backward closures; allocates on first use.
  Mat& grad_acc(Var v);

  // Seeds d(out)/d(out) = 1 on every entry of a 1x1 value-only output (or
  // the supplied seed) and runs the reverse sweep.
  void backward(Var out);
  void backward(Var out, const Mat& seed);
  void zero_grads();

  // Re-runs every recorded forward closure in order.
  void replay();

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    DualTensor out;
    Mat grad;
    bool has_grad = false;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
  };

  int tangents_;
  std::vector<Node> nodes_;
};

// ---- primitives --------------------------------------------------------------
// Shapes: `items` must agree for elementwise ops. Binary ops accept a
// value-only operand next to a dual one (missing tangents are zero).

// y = x W^T + b; W is (out x in), b is (1 x out) or invalid.
Var affine(Tape& t, Var x, Var w, Var b = {});
// y = alpha a + beta b
Var axpby(Tape& t, Var a, Var b, double alpha, double beta);
inline Var add(Tape& t, Var a, Var b) { return axpby(t, a, b, 1.0, 1.0); }
inline Var sub(Tape& t, Var a, Var b) { return axpby(t, a, b, 1.0, -1.0); }
Var mul(Tape& t, Var a, Var b);
// Division guarded by |b| >= 1e-12.
Var div(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double c);
// Adds c to the value rows only.
Var add_const(Tape& t, Var x, double c);
// Adds a constant (items x cols) matrix to the value rows only.
Var add_const_rows(Tape& t, Var x, const Mat& c);
// y = s x for a 1x1 value-only variable s.
Var mul_scalar(Tape& t, Var x, Var s);

Var gelu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var sin(Tape& t, Var x);
Var cos(Tape& t, Var x);
Var exp(Tape& t, Var x);
// Guarded by x >= 1e-12.
Var sqrt(Tape& t, Var x);
// Guarded by |x| >= 1e-12.
Var reciprocal(Tape& t, Var x);
Var square(Tape& t, Var x);
Var abs(Tape& t, Var x);
Var logcosh(Tape& t, Var x);
// exp(-(alpha x)^2) with one alpha per column; alpha is a (1 x cols) variable.
Var gaussian_adaptive(Tape& t, Var x, Var alpha);

Var concat_cols(Tape& t, Var a, Var b);
// Items [r * n + i] = x[i] for r < reps.
Var tile_items(Tape& t, Var x, int reps);
// Items [i * reps + r] = x[i] for r < reps.
Var repeat_items(Tape& t, Var x, int reps);
// Sums consecutive groups of `segment` items.
Var segment_sum(Tape& t, Var x, int segment);
// Sums `groups` equal-width column blocks: (items x cols) -> (items x groups).
Var group_cols_sum(Tape& t, Var x, int groups);
// Repeats every column `width` times: (items x g) -> (items x g*width).
Var expand_cols(Tape& t, Var x, int width);
// Sums columns: (items x cols) -> (items x 1).
Var row_sum(Tape& t, Var x);
// Broadcasts a single column: (items x 1) -> (items x width).
Var broadcast_cols(Tape& t, Var x, int width);
// Sums all items and columns into a single item of width 1 (per component).
Var sum(Tape& t, Var x);
// Sum of squared tangents over components [first, first + count) into a
// value-only (items x cols) tensor.
Var tangent_sq_norm(Tape& t, Var x, int first, int count);

// Composites.
Var layer_norm(Tape& t, Var x, double eps = 1e-5);
// Softmax over consecutive groups of `segment` items, per column.
Var segment_softmax(Tape& t, Var x, int segment);

}  // namespace enes::ad
