#include "enes/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "enes/error.hpp"

namespace enes::ad {

namespace {

using Arr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require(bool ok, const char* what) {
  if (!ok) throw ContractViolation(what);
}

// Rows of component c of a gradient matrix laid out like `like`.
auto comp_rows(Mat& m, const DualTensor& like, int c) {
  return m.middleRows(static_cast<Eigen::Index>(c) * like.items, like.items);
}
auto comp_rows(const Mat& m, const DualTensor& like, int c) {
  return m.middleRows(static_cast<Eigen::Index>(c) * like.items, like.items);
}

// ---- elementwise rules: value, first and second derivative ------------------

struct GeluRule {
  static constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  static constexpr double kA = 0.044715;
  static void eval(const Arr& x, Arr& f, Arr& d1, Arr* d2) {
    const Arr u = kC * (x + kA * x.cube());
    const Arr th = u.tanh();
    const Arr du = kC * (1.0 + 3.0 * kA * x.square());
    const Arr sech2 = 1.0 - th.square();
    f = 0.5 * x * (1.0 + th);
    d1 = 0.5 * (1.0 + th) + 0.5 * x * sech2 * du;
    if (d2) {
      const Arr ddu = kC * 6.0 * kA * x;
      *d2 = sech2 * (du - x * th * du.square() + 0.5 * x * ddu);
    }
  }
};

struct SigmoidRule {
  static void eval(const Arr& x, Arr& f, Arr& d1, Arr* d2) {
    f = 1.0 / (1.0 + (-x).exp());
    d1 = f * (1.0 - f);
    if (d2) *d2 = d1 * (1.0 - 2.0 * f);
  }
};

struct SinRule {
  static void eval(const Arr& x, Arr& f, Arr& d1, Arr* d2) {
    f = x.sin();
    d1 = x.cos();
    if (d2) *d2 = -f;
  }
};

struct CosRule {
  static void eval(const Arr& x, Arr& f, Arr& d1, Arr* d2) {
    f = x.cos();
    d1 = -x.sin();
    if (d2) *d2 = -f;
  }
};

struct ExpRule {
  static void eval(const Arr& x, Arr& f, Arr& d1, Arr* d2) {
    f = x.exp();
    d1 = f;
    if (d2) *d2 = f;
  }
};

struct SqrtRule {
  static void eval(const Arr& x, Arr& f, Arr& d1, Arr* d2) {
    if ((x < 1e-12).any()) throw NumericDomainError("sqrt argument below 1e-12");
    f = x.sqrt();
    d1 = 0.5 / f;
    if (d2) *d2 = -0.25 / (f * x);
  }
};

struct ReciprocalRule {
  static void eval(const Arr& x, Arr& f, Arr& d1, Arr* d2) {
    if ((x.abs() < 1e-12).any()) throw NumericDomainError("division by a value below 1e-12 in magnitude");
    f = 1.0 / x;
    d1 = -f.square();
    if (d2) *d2 = -2.0 * d1 * f;
  }
};

struct SquareRule {
  static void eval(const Arr& x, Arr& f, Arr& d1, Arr* d2) {
    f = x.square();
    d1 = 2.0 * x;
    if (d2) *d2 = Arr::Constant(x.rows(), x.cols(), 2.0);
  }
};

struct AbsRule {
  static void eval(const Arr& x, Arr& f, Arr& d1, Arr* d2) {
    f = x.abs();
    d1 = x.sign();
    if (d2) *d2 = Arr::Zero(x.rows(), x.cols());
  }
};

struct LogCoshRule {
  static void eval(const Arr& x, Arr& f, Arr& d1, Arr* d2) {
    const Arr ax = x.abs();
    f = ax + (-2.0 * ax).exp().log1p() - std::numbers::ln2;
    d1 = x.tanh();
    if (d2) *d2 = 1.0 - d1.square();
  }
};

template <typename Rule>
Var unary(Tape& t, Var x) {
  return t.push(
      {x},
      [x](Tape& tp, DualTensor& out) {
        const DualTensor& in = tp.value(x);
        out = DualTensor(in.items, in.comps, in.cols());
        const Arr x0 = in.value().array();
        Arr f, d1;
        Rule::eval(x0, f, d1, nullptr);
        out.value() = f.matrix();
        for (int c = 1; c < in.comps; ++c) out.comp(c) = (d1 * in.comp(c).array()).matrix();
      },
      [x](Tape& tp, const DualTensor&, const Mat& g) {
        if (!tp.requires_grad(x)) return;
        const DualTensor& in = tp.value(x);
        const Arr x0 = in.value().array();
        Arr f, d1, d2;
        Rule::eval(x0, f, d1, in.dual() ? &d2 : nullptr);
        Mat& gx = tp.grad_acc(x);
        Arr acc = d1 * comp_rows(g, in, 0).array();
        for (int c = 1; c < in.comps; ++c) {
          const auto gc = comp_rows(g, in, c).array();
          acc += d2 * in.comp(c).array() * gc;
          comp_rows(gx, in, c) += (d1 * gc).matrix();
        }
        comp_rows(gx, in, 0) += acc.matrix();
      });
}

}  // namespace

DualTensor DualTensor::value_only(Mat value) {
  DualTensor d;
  d.items = static_cast<int>(value.rows());
  d.comps = 1;
  d.data = std::move(value);
  return d;
}

// ---- tape --------------------------------------------------------------------

Var Tape::leaf(DualTensor value, bool requires_grad) {
  require(value.comps == 1 || value.comps == dual_comps(), "leaf tensor has a foreign tangent width");
  Node n;
  n.out = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_leaf(Var v, DualTensor value) {
  Node& n = nodes_.at(v.id);
  require(!n.forward, "set_leaf on a computed node");
  require(value.items == n.out.items && value.comps == n.out.comps && value.cols() == n.out.cols(),
          "set_leaf changes the leaf's shape");
  n.out = std::move(value);
}

Var Tape::push(std::initializer_list<Var> inputs, ForwardFn forward, BackwardFn backward) {
  bool rg = false;
  for (Var in : inputs) {
    require(in.valid() && in.id < static_cast<int>(nodes_.size()), "primitive input is not on this tape");
    rg = rg || nodes_[in.id].requires_grad;
  }
  Node n;
  n.requires_grad = rg;
  forward(*this, n.out);
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.has_grad) return n.grad;
  return Mat::Zero(n.out.data.rows(), n.out.data.cols());
}

Mat& Tape::grad_acc(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    n.grad = Mat::Zero(n.out.data.rows(), n.out.data.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var out) {
  const Node& n = nodes_.at(out.id);
  backward(out, Mat::Ones(n.out.data.rows(), n.out.data.cols()));
}

void Tape::backward(Var out, const Mat& seed) {
  Node& root = nodes_.at(out.id);
  require(seed.rows() == root.out.data.rows() && seed.cols() == root.out.data.cols(), "seed shape mismatch");
  grad_acc(out) += seed;
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.requires_grad || !n.backward) continue;
    n.backward(*this, n.out, n.grad);
  }
}

void Tape::zero_grads() {
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
}

void Tape::replay() {
  for (Node& n : nodes_) {
    if (n.forward) n.forward(*this, n.out);
  }
}

// ---- linear primitives ----------------------------------------------------------

Var affine(Tape& t, Var x, Var w, Var b) {
  {
    const DualTensor& xv = t.value(x);
    const DualTensor& wv = t.value(w);
    require(!wv.dual(), "affine weights carry no tangents");
    require(wv.cols() == xv.cols(), "affine weight/input width mismatch");
    if (b.valid()) require(t.value(b).cols() == wv.items && t.value(b).items == 1, "affine bias shape mismatch");
  }
  return t.push(
      {x, w},
      [x, w, b](Tape& tp, DualTensor& out) {
        const DualTensor& xv = tp.value(x);
        const Mat& wm = tp.value(w).data;
        out.items = xv.items;
        out.comps = xv.comps;
        out.data.resize(xv.data.rows(), wm.rows());
        out.data.noalias() = xv.data * wm.transpose();
        if (b.valid()) out.value().rowwise() += tp.value(b).data.row(0);
      },
      [x, w, b](Tape& tp, const DualTensor& out, const Mat& g) {
        const DualTensor& xv = tp.value(x);
        if (tp.requires_grad(x)) tp.grad_acc(x).noalias() += g * tp.value(w).data;
        if (tp.requires_grad(w)) tp.grad_acc(w).noalias() += g.transpose() * xv.data;
        if (b.valid() && tp.requires_grad(b)) tp.grad_acc(b) += comp_rows(g, out, 0).colwise().sum();
      });
}

Var axpby(Tape& t, Var a, Var b, double alpha, double beta) {
  {
    const DualTensor& av = t.value(a);
    const DualTensor& bv = t.value(b);
    require(av.items == bv.items && av.cols() == bv.cols(), "axpby shape mismatch");
  }
  return t.push(
      {a, b},
      [a, b, alpha, beta](Tape& tp, DualTensor& out) {
        const DualTensor& av = tp.value(a);
        const DualTensor& bv = tp.value(b);
        out = DualTensor(av.items, std::max(av.comps, bv.comps), av.cols());
        for (int c = 0; c < av.comps; ++c) out.comp(c) = alpha * av.comp(c);
        for (int c = 0; c < bv.comps; ++c) out.comp(c) += beta * bv.comp(c);
      },
      [a, b, alpha, beta](Tape& tp, const DualTensor& out, const Mat& g) {
        const DualTensor& av = tp.value(a);
        const DualTensor& bv = tp.value(b);
        if (tp.requires_grad(a)) {
          Mat& ga = tp.grad_acc(a);
          for (int c = 0; c < av.comps; ++c) comp_rows(ga, av, c) += alpha * comp_rows(g, out, c);
        }
        if (tp.requires_grad(b)) {
          Mat& gb = tp.grad_acc(b);
          for (int c = 0; c < bv.comps; ++c) comp_rows(gb, bv, c) += beta * comp_rows(g, out, c);
        }
      });
}

Var mul(Tape& t, Var a, Var b) {
  {
    const DualTensor& av = t.value(a);
    const DualTensor& bv = t.value(b);
    require(av.items == bv.items && av.cols() == bv.cols(), "mul shape mismatch");
  }
  return t.push(
      {a, b},
      [a, b](Tape& tp, DualTensor& out) {
        const DualTensor& av = tp.value(a);
        const DualTensor& bv = tp.value(b);
        out = DualTensor(av.items, std::max(av.comps, bv.comps), av.cols());
        const auto a0 = av.value().array();
        const auto b0 = bv.value().array();
        out.value() = (a0 * b0).matrix();
        for (int c = 1; c < av.comps; ++c) out.comp(c) = (av.comp(c).array() * b0).matrix();
        for (int c = 1; c < bv.comps; ++c) out.comp(c) += (a0 * bv.comp(c).array()).matrix();
      },
      [a, b](Tape& tp, const DualTensor& out, const Mat& g) {
        const DualTensor& av = tp.value(a);
        const DualTensor& bv = tp.value(b);
        const auto a0 = av.value().array();
        const auto b0 = bv.value().array();
        if (tp.requires_grad(a)) {
          Mat& ga = tp.grad_acc(a);
          Arr acc = comp_rows(g, out, 0).array() * b0;
          for (int c = 1; c < bv.comps; ++c) acc += comp_rows(g, out, c).array() * bv.comp(c).array();
          comp_rows(ga, av, 0) += acc.matrix();
          for (int c = 1; c < av.comps; ++c) comp_rows(ga, av, c) += (comp_rows(g, out, c).array() * b0).matrix();
        }
        if (tp.requires_grad(b)) {
          Mat& gb = tp.grad_acc(b);
          Arr acc = comp_rows(g, out, 0).array() * a0;
          for (int c = 1; c < av.comps; ++c) acc += comp_rows(g, out, c).array() * av.comp(c).array();
          comp_rows(gb, bv, 0) += acc.matrix();
          for (int c = 1; c < bv.comps; ++c) comp_rows(gb, bv, c) += (comp_rows(g, out, c).array() * a0).matrix();
        }
      });
}

Var div(Tape& t, Var a, Var b) { return mul(t, a, reciprocal(t, b)); }

Var scale(Tape& t, Var x, double c) {
  return t.push(
      {x},
      [x, c](Tape& tp, DualTensor& out) {
        const DualTensor& xv = tp.value(x);
        out.items = xv.items;
        out.comps = xv.comps;
        out.data = c * xv.data;
      },
      [x, c](Tape& tp, const DualTensor&, const Mat& g) {
        if (tp.requires_grad(x)) tp.grad_acc(x) += c * g;
      });
}

Var add_const(Tape& t, Var x, double c) {
  return t.push(
      {x},
      [x, c](Tape& tp, DualTensor& out) {
        out = tp.value(x);
        out.value().array() += c;
      },
      [x](Tape& tp, const DualTensor&, const Mat& g) {
        if (tp.requires_grad(x)) tp.grad_acc(x) += g;
      });
}

Var add_const_rows(Tape& t, Var x, const Mat& c) {
  require(c.rows() == t.value(x).items && c.cols() == t.value(x).cols(), "add_const_rows shape mismatch");
  return t.push(
      {x},
      [x, c](Tape& tp, DualTensor& out) {
        out = tp.value(x);
        out.value() += c;
      },
      [x](Tape& tp, const DualTensor&, const Mat& g) {
        if (tp.requires_grad(x)) tp.grad_acc(x) += g;
      });
}

Var mul_scalar(Tape& t, Var x, Var s) {
  require(t.value(s).data.size() == 1 && !t.value(s).dual(), "mul_scalar expects a 1x1 value-only scale");
  return t.push(
      {x, s},
      [x, s](Tape& tp, DualTensor& out) {
        const DualTensor& xv = tp.value(x);
        out.items = xv.items;
        out.comps = xv.comps;
        out.data = tp.value(s).data(0, 0) * xv.data;
      },
      [x, s](Tape& tp, const DualTensor&, const Mat& g) {
        const double sv = tp.value(s).data(0, 0);
        if (tp.requires_grad(x)) tp.grad_acc(x) += sv * g;
        if (tp.requires_grad(s)) tp.grad_acc(s)(0, 0) += g.cwiseProduct(tp.value(x).data).sum();
      });
}

// ---- elementwise -----------------------------------------------------------------

Var gelu(Tape& t, Var x) { return unary<GeluRule>(t, x); }
Var sigmoid(Tape& t, Var x) { return unary<SigmoidRule>(t, x); }
Var sin(Tape& t, Var x) { return unary<SinRule>(t, x); }
Var cos(Tape& t, Var x) { return unary<CosRule>(t, x); }
Var exp(Tape& t, Var x) { return unary<ExpRule>(t, x); }
Var sqrt(Tape& t, Var x) { return unary<SqrtRule>(t, x); }
Var reciprocal(Tape& t, Var x) { return unary<ReciprocalRule>(t, x); }
Var square(Tape& t, Var x) { return unary<SquareRule>(t, x); }
Var abs(Tape& t, Var x) { return unary<AbsRule>(t, x); }
Var logcosh(Tape& t, Var x) { return unary<LogCoshRule>(t, x); }

Var gaussian_adaptive(Tape& t, Var x, Var alpha) {
  {
    const DualTensor& av = t.value(alpha);
    require(!av.dual() && av.items == 1 && av.cols() == t.value(x).cols(), "gaussian_adaptive alpha shape");
  }
  // y = exp(-u^2), u = alpha x.
  return t.push(
      {x, alpha},
      [x, alpha](Tape& tp, DualTensor& out) {
        const DualTensor& in = tp.value(x);
        const Eigen::Array<double, 1, Eigen::Dynamic> al = tp.value(alpha).data.row(0).array();
        out = DualTensor(in.items, in.comps, in.cols());
        const Arr u = in.value().array().rowwise() * al;
        const Arr y = (-u.square()).exp();
        out.value() = y.matrix();
        if (in.dual()) {
          // dy/dx = alpha * (-2 u y)
          const Arr d1 = (-2.0 * u * y).rowwise() * al;
          for (int c = 1; c < in.comps; ++c) out.comp(c) = (d1 * in.comp(c).array()).matrix();
        }
      },
      [x, alpha](Tape& tp, const DualTensor& out, const Mat& g) {
        const DualTensor& in = tp.value(x);
        const Eigen::Array<double, 1, Eigen::Dynamic> al = tp.value(alpha).data.row(0).array();
        const Arr x0 = in.value().array();
        const Arr u = x0.rowwise() * al;
        const Arr y = (-u.square()).exp();
        const Arr yu = -2.0 * u * y;                    // dy/du
        const Arr yuu = (4.0 * u.square() - 2.0) * y;   // d2y/du2
        const Arr dydx = yu.rowwise() * al;
        const Arr g0 = comp_rows(g, out, 0).array();
        Arr gx0 = g0 * dydx;
        Arr galpha = g0 * yu * x0;  // dy/dalpha = x y_u
        if (in.dual()) {
          const Arr al2 = Arr::Ones(1, in.cols()).rowwise() * (al * al);
          const Arr d2x = yuu.rowwise() * (al * al);  // d2y/dx2
          for (int c = 1; c < in.comps; ++c) {
            const Arr xc = in.comp(c).array();
            const Arr gc = comp_rows(g, out, c).array();
            // y_c = alpha y_u x_c
            gx0 += gc * d2x * xc;
            galpha += gc * (yu + u * yuu) * xc;
            if (tp.requires_grad(x)) comp_rows(tp.grad_acc(x), in, c) += (gc * dydx).matrix();
          }
        }
        if (tp.requires_grad(x)) comp_rows(tp.grad_acc(x), in, 0) += gx0.matrix();
        if (tp.requires_grad(alpha)) tp.grad_acc(alpha).row(0) += galpha.colwise().sum().matrix();
      });
}

// ---- structural ---------------------------------------------------------------------

Var concat_cols(Tape& t, Var a, Var b) {
  require(t.value(a).items == t.value(b).items, "concat_cols item mismatch");
  return t.push(
      {a, b},
      [a, b](Tape& tp, DualTensor& out) {
        const DualTensor& av = tp.value(a);
        const DualTensor& bv = tp.value(b);
        out = DualTensor(av.items, std::max(av.comps, bv.comps), av.cols() + bv.cols());
        for (int c = 0; c < av.comps; ++c) out.comp(c).leftCols(av.cols()) = av.comp(c);
        for (int c = 0; c < bv.comps; ++c) out.comp(c).rightCols(bv.cols()) = bv.comp(c);
      },
      [a, b](Tape& tp, const DualTensor& out, const Mat& g) {
        const DualTensor& av = tp.value(a);
        const DualTensor& bv = tp.value(b);
        if (tp.requires_grad(a)) {
          Mat& ga = tp.grad_acc(a);
          for (int c = 0; c < av.comps; ++c) comp_rows(ga, av, c) += comp_rows(g, out, c).leftCols(av.cols());
        }
        if (tp.requires_grad(b)) {
          Mat& gb = tp.grad_acc(b);
          for (int c = 0; c < bv.comps; ++c) comp_rows(gb, bv, c) += comp_rows(g, out, c).rightCols(bv.cols());
        }
      });
}

Var tile_items(Tape& t, Var x, int reps) {
  require(reps >= 1, "tile_items needs reps >= 1");
  return t.push(
      {x},
      [x, reps](Tape& tp, DualTensor& out) {
        const DualTensor& xv = tp.value(x);
        out = DualTensor(xv.items * reps, xv.comps, xv.cols());
        for (int c = 0; c < xv.comps; ++c) {
          for (int r = 0; r < reps; ++r) out.comp(c).middleRows(r * xv.items, xv.items) = xv.comp(c);
        }
      },
      [x, reps](Tape& tp, const DualTensor& out, const Mat& g) {
        if (!tp.requires_grad(x)) return;
        const DualTensor& xv = tp.value(x);
        Mat& gx = tp.grad_acc(x);
        for (int c = 0; c < xv.comps; ++c) {
          for (int r = 0; r < reps; ++r) comp_rows(gx, xv, c) += comp_rows(g, out, c).middleRows(r * xv.items, xv.items);
        }
      });
}

Var repeat_items(Tape& t, Var x, int reps) {
  require(reps >= 1, "repeat_items needs reps >= 1");
  return t.push(
      {x},
      [x, reps](Tape& tp, DualTensor& out) {
        const DualTensor& xv = tp.value(x);
        out = DualTensor(xv.items * reps, xv.comps, xv.cols());
        for (int c = 0; c < xv.comps; ++c) {
          auto src = xv.comp(c);
          auto dst = out.comp(c);
          for (int i = 0; i < xv.items; ++i) {
            for (int r = 0; r < reps; ++r) dst.row(i * reps + r) = src.row(i);
          }
        }
      },
      [x, reps](Tape& tp, const DualTensor& out, const Mat& g) {
        if (!tp.requires_grad(x)) return;
        const DualTensor& xv = tp.value(x);
        Mat& gx = tp.grad_acc(x);
        for (int c = 0; c < xv.comps; ++c) {
          auto dst = comp_rows(gx, xv, c);
          auto src = comp_rows(g, out, c);
          for (int i = 0; i < xv.items; ++i) dst.row(i) += src.middleRows(i * reps, reps).colwise().sum();
        }
      });
}

Var segment_sum(Tape& t, Var x, int segment) {
  require(segment >= 1 && t.value(x).items % segment == 0, "segment_sum needs items divisible by segment");
  return t.push(
      {x},
      [x, segment](Tape& tp, DualTensor& out) {
        const DualTensor& xv = tp.value(x);
        const int n = xv.items / segment;
        out = DualTensor(n, xv.comps, xv.cols());
        for (int c = 0; c < xv.comps; ++c) {
          auto src = xv.comp(c);
          auto dst = out.comp(c);
          for (int i = 0; i < n; ++i) {
            for (int k = 0; k < segment; ++k) dst.row(i) += src.row(i * segment + k);
          }
        }
      },
      [x, segment](Tape& tp, const DualTensor& out, const Mat& g) {
        if (!tp.requires_grad(x)) return;
        const DualTensor& xv = tp.value(x);
        Mat& gx = tp.grad_acc(x);
        const int n = xv.items / segment;
        for (int c = 0; c < xv.comps; ++c) {
          auto dst = comp_rows(gx, xv, c);
          auto src = comp_rows(g, out, c);
          for (int i = 0; i < n; ++i) {
            for (int k = 0; k < segment; ++k) dst.row(i * segment + k) += src.row(i);
          }
        }
      });
}

Var group_cols_sum(Tape& t, Var x, int groups) {
  require(groups >= 1 && t.value(x).cols() % groups == 0, "group_cols_sum needs cols divisible by groups");
  return t.push(
      {x},
      [x, groups](Tape& tp, DualTensor& out) {
        const DualTensor& xv = tp.value(x);
        const int w = xv.cols() / groups;
        out = DualTensor(xv.items, xv.comps, groups);
        for (int h = 0; h < groups; ++h) out.data.col(h) = xv.data.middleCols(h * w, w).rowwise().sum();
      },
      [x, groups](Tape& tp, const DualTensor&, const Mat& g) {
        if (!tp.requires_grad(x)) return;
        const DualTensor& xv = tp.value(x);
        const int w = xv.cols() / groups;
        Mat& gx = tp.grad_acc(x);
        for (int h = 0; h < groups; ++h) gx.middleCols(h * w, w).colwise() += g.col(h);
      });
}

Var expand_cols(Tape& t, Var x, int width) {
  require(width >= 1, "expand_cols needs width >= 1");
  return t.push(
      {x},
      [x, width](Tape& tp, DualTensor& out) {
        const DualTensor& xv = tp.value(x);
        out = DualTensor(xv.items, xv.comps, xv.cols() * width);
        for (int h = 0; h < xv.cols(); ++h) out.data.middleCols(h * width, width).colwise() = xv.data.col(h);
      },
      [x, width](Tape& tp, const DualTensor&, const Mat& g) {
        if (!tp.requires_grad(x)) return;
        const DualTensor& xv = tp.value(x);
        Mat& gx = tp.grad_acc(x);
        for (int h = 0; h < xv.cols(); ++h) gx.col(h) += g.middleCols(h * width, width).rowwise().sum();
      });
}

Var row_sum(Tape& t, Var x) {
  return t.push(
      {x},
      [x](Tape& tp, DualTensor& out) {
        const DualTensor& xv = tp.value(x);
        out.items = xv.items;
        out.comps = xv.comps;
        out.data = xv.data.rowwise().sum();
      },
      [x](Tape& tp, const DualTensor&, const Mat& g) {
        if (!tp.requires_grad(x)) return;
        tp.grad_acc(x).colwise() += g.col(0);
      });
}

Var broadcast_cols(Tape& t, Var x, int width) {
  require(t.value(x).cols() == 1, "broadcast_cols expects a single column");
  return expand_cols(t, x, width);
}

Var sum(Tape& t, Var x) {
  return t.push(
      {x},
      [x](Tape& tp, DualTensor& out) {
        const DualTensor& xv = tp.value(x);
        out = DualTensor(1, xv.comps, 1);
        for (int c = 0; c < xv.comps; ++c) out.data(c, 0) = xv.comp(c).sum();
      },
      [x](Tape& tp, const DualTensor&, const Mat& g) {
        if (!tp.requires_grad(x)) return;
        const DualTensor& xv = tp.value(x);
        Mat& gx = tp.grad_acc(x);
        for (int c = 0; c < xv.comps; ++c) comp_rows(gx, xv, c).array() += g(c, 0);
      });
}

Var tangent_sq_norm(Tape& t, Var x, int first, int count) {
  require(first >= 1 && count >= 0 && first + count <= t.value(x).comps, "tangent_sq_norm component range");
  return t.push(
      {x},
      [x, first, count](Tape& tp, DualTensor& out) {
        const DualTensor& xv = tp.value(x);
        out = DualTensor(xv.items, 1, xv.cols());
        for (int c = first; c < first + count; ++c) out.value() += xv.comp(c).cwiseAbs2();
      },
      [x, first, count](Tape& tp, const DualTensor& out, const Mat& g) {
        if (!tp.requires_grad(x)) return;
        const DualTensor& xv = tp.value(x);
        Mat& gx = tp.grad_acc(x);
        const auto g0 = comp_rows(g, out, 0).array();
        for (int c = first; c < first + count; ++c) comp_rows(gx, xv, c) += (2.0 * g0 * xv.comp(c).array()).matrix();
      });
}

// ---- composites ---------------------------------------------------------------------

Var layer_norm(Tape& t, Var x, double eps) {
  const int w = t.value(x).cols();
  const Var mean = scale(t, row_sum(t, x), 1.0 / w);
  const Var centered = sub(t, x, broadcast_cols(t, mean, w));
  const Var var = scale(t, row_sum(t, square(t, centered)), 1.0 / w);
  const Var inv_std = reciprocal(t, sqrt(t, add_const(t, var, eps)));
  return mul(t, centered, broadcast_cols(t, inv_std, w));
}

Var segment_softmax(Tape& t, Var x, int segment) {
  const DualTensor& xv = t.value(x);
  require(segment >= 1 && xv.items % segment == 0, "segment_softmax needs items divisible by segment");
  // Subtract the per-segment maximum of the values; softmax is shift
  // invariant so the constant shift leaves all derivatives unchanged.
  Mat shift(xv.items, xv.cols());
  for (int i = 0; i < xv.items / segment; ++i) {
    const Eigen::RowVectorXd m = xv.value().middleRows(i * segment, segment).colwise().maxCoeff();
    for (int k = 0; k < segment; ++k) shift.row(i * segment + k) = -m;
  }
  const Var e = exp(t, add_const_rows(t, x, shift));
  const Var total = segment_sum(t, e, segment);
  return mul(t, e, repeat_items(t, reciprocal(t, total), segment));
}

}  // namespace enes::ad
