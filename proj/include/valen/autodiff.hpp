#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "valen/matrix.hpp"
#include "valen/rng.hpp"
#include "valen/special.hpp"

namespace valen::ad {

using Var = int;

// Reverse-mode accumulation over a small fixed op vocabulary. Nodes are
// appended in topological order; backward walks them in reverse. Gradients
// are only materialized for nodes reachable from a trainable leaf.
class Tape {
 public:
  Var constant(Matrix v) { return push(std::move(v), false); }
  Var leaf(Matrix v) { return push(std::move(v), true); }

  const Matrix& val(Var v) const { return nodes_[v].value; }
  const Matrix& grad(Var v) const { return nodes_[v].grad; }
  double scalar(Var v) const {
    if (nodes_[v].value.size() != 1) throw std::logic_error("scalar: not 1x1");
    return nodes_[v].value.data[0];
  }

  Var matmul(Var a, Var b) {
    Var out = push(valen::matmul(val(a), val(b)), needs(a) || needs(b));
    set_backward(out, [=, this] {
      if (needs(a)) acc(a, matmul_nt_v(g(out), val(b)));
      if (needs(b)) acc(b, matmul_tn_v(val(a), g(out)));
    });
    return out;
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    Var out = push(matmul_nt_v(val(a), val(b)), needs(a) || needs(b));
    set_backward(out, [=, this] {
      if (needs(a)) acc(a, matmul_v(g(out), val(b)));
      if (needs(b)) acc(b, matmul_tn_v(g(out), val(a)));
    });
    return out;
  }

  Var add(Var a, Var b) {
    Var out = push(valen::add(val(a), val(b)), needs(a) || needs(b));
    set_backward(out, [=, this] {
      if (needs(a)) acc(a, g(out));
      if (needs(b)) acc(b, g(out));
    });
    return out;
  }

  Var sub(Var a, Var b) {
    Var out = push(valen::sub(val(a), val(b)), needs(a) || needs(b));
    set_backward(out, [=, this] {
      if (needs(a)) acc(a, g(out));
      if (needs(b)) acc(b, scaled(g(out), -1.0));
    });
    return out;
  }

  Var mul(Var a, Var b) {
    Var out = push(hadamard(val(a), val(b)), needs(a) || needs(b));
    set_backward(out, [=, this] {
      if (needs(a)) acc(a, hadamard(g(out), val(b)));
      if (needs(b)) acc(b, hadamard(g(out), val(a)));
    });
    return out;
  }

  Var scale(Var a, double s) {
    Var out = push(scaled(val(a), s), needs(a));
    set_backward(out, [=, this] {
      if (needs(a)) acc(a, scaled(g(out), s));
    });
    return out;
  }

  Var add_scalar(Var a, double s) {
    Var out = push(map(val(a), [s](double x) { return x + s; }), needs(a));
    set_backward(out, [=, this] {
      if (needs(a)) acc(a, g(out));
    });
    return out;
  }

  // broadcast a 1 x c bias over rows
  Var add_rowvec(Var a, Var b) {
    Var out = push(valen::add_rowvec(val(a), val(b)), needs(a) || needs(b));
    set_backward(out, [=, this] {
      if (needs(a)) acc(a, g(out));
      if (needs(b)) acc(b, col_sums(g(out)));
    });
    return out;
  }

  // y_ij = a_ij - s_i, s is n x 1
  Var sub_colvec(Var a, Var s) {
    Matrix v = val(a);
    for (int i = 0; i < v.rows; ++i)
      for (int j = 0; j < v.cols; ++j) v(i, j) -= val(s)(i, 0);
    Var out = push(std::move(v), needs(a) || needs(s));
    set_backward(out, [=, this] {
      if (needs(a)) acc(a, g(out));
      if (needs(s)) acc(s, scaled(valen::row_sums(g(out)), -1.0));
    });
    return out;
  }

  // y_ij = a_ij / s_i, s is n x 1 (row normalization building block)
  Var div_colvec(Var a, Var s) {
    Matrix v = val(a);
    for (int i = 0; i < v.rows; ++i)
      for (int j = 0; j < v.cols; ++j) v(i, j) /= val(s)(i, 0);
    Var out = push(std::move(v), needs(a) || needs(s));
    set_backward(out, [=, this] {
      const Matrix& go = g(out);
      if (needs(a)) {
        Matrix ga = go;
        for (int i = 0; i < ga.rows; ++i)
          for (int j = 0; j < ga.cols; ++j) ga(i, j) /= val(s)(i, 0);
        acc(a, ga);
      }
      if (needs(s)) {
        Matrix gs(go.rows, 1);
        for (int i = 0; i < go.rows; ++i) {
          double si = val(s)(i, 0);
          double d = 0.0;
          for (int j = 0; j < go.cols; ++j) d += go(i, j) * val(a)(i, j);
          gs(i, 0) = -d / (si * si);
        }
        acc(s, gs);
      }
    });
    return out;
  }

  Var relu(Var a) {
    Var out = push(map(val(a), [](double x) { return x > 0.0 ? x : 0.0; }), needs(a));
    set_backward(out, [=, this] {
      if (!needs(a)) return;
      Matrix ga = g(out);
      for (size_t i = 0; i < ga.size(); ++i)
        if (val(a).data[i] <= 0.0) ga.data[i] = 0.0;
      acc(a, ga);
    });
    return out;
  }

  Var sigmoid(Var a) {
    Var out = push(map(val(a), sigmoid_fn), needs(a));
    set_backward(out, [=, this] {
      if (!needs(a)) return;
      Matrix ga = g(out);
      for (size_t i = 0; i < ga.size(); ++i) {
        double y = val(out).data[i];
        ga.data[i] *= y * (1.0 - y);
      }
      acc(a, ga);
    });
    return out;
  }

  Var softplus(Var a) {
    Var out = push(map(val(a), softplus_fn), needs(a));
    set_backward(out, [=, this] {
      if (!needs(a)) return;
      Matrix ga = g(out);
      for (size_t i = 0; i < ga.size(); ++i) ga.data[i] *= sigmoid_fn(val(a).data[i]);
      acc(a, ga);
    });
    return out;
  }

  Var exp(Var a) {
    Var out = push(map(val(a), [](double x) { return std::exp(x); }), needs(a));
    set_backward(out, [=, this] {
      if (needs(a)) acc(a, hadamard(g(out), val(out)));
    });
    return out;
  }

  Var log(Var a) {
    Var out = push(map(val(a), [](double x) { return std::log(x); }), needs(a));
    set_backward(out, [=, this] {
      if (!needs(a)) return;
      Matrix ga = g(out);
      for (size_t i = 0; i < ga.size(); ++i) ga.data[i] /= val(a).data[i];
      acc(a, ga);
    });
    return out;
  }

  // ln(max(x, floor)); the gradient uses the clamped argument
  Var log_floored(Var a, double floor) {
    Var out =
        push(map(val(a), [floor](double x) { return std::log(std::max(x, floor)); }),
             needs(a));
    set_backward(out, [=, this] {
      if (!needs(a)) return;
      Matrix ga = g(out);
      for (size_t i = 0; i < ga.size(); ++i)
        ga.data[i] /= std::max(val(a).data[i], floor);
      acc(a, ga);
    });
    return out;
  }

  Var lgamma(Var a) {
    Var out = push(map(val(a), [](double x) { return log_gamma(x); }), needs(a));
    set_backward(out, [=, this] {
      if (!needs(a)) return;
      Matrix ga = g(out);
      for (size_t i = 0; i < ga.size(); ++i)
        ga.data[i] *= valen::digamma(val(a).data[i]);
      acc(a, ga);
    });
    return out;
  }

  Var digamma(Var a) {
    Var out = push(map(val(a), [](double x) { return valen::digamma(x); }), needs(a));
    set_backward(out, [=, this] {
      if (!needs(a)) return;
      Matrix ga = g(out);
      for (size_t i = 0; i < ga.size(); ++i)
        ga.data[i] *= trigamma(val(a).data[i]);
      acc(a, ga);
    });
    return out;
  }

  Var log_softmax_rows(Var a) {
    const Matrix& x = val(a);
    Matrix y = x;
    for (int i = 0; i < x.rows; ++i) {
      double mx = x(i, 0);
      for (int j = 1; j < x.cols; ++j) mx = std::max(mx, x(i, j));
      double lse = 0.0;
      for (int j = 0; j < x.cols; ++j) lse += std::exp(x(i, j) - mx);
      lse = mx + std::log(lse);
      for (int j = 0; j < x.cols; ++j) y(i, j) = x(i, j) - lse;
    }
    Var out = push(std::move(y), needs(a));
    set_backward(out, [=, this] {
      if (!needs(a)) return;
      const Matrix& go = g(out);
      Matrix ga = go;
      for (int i = 0; i < ga.rows; ++i) {
        double gsum = 0.0;
        for (int j = 0; j < ga.cols; ++j) gsum += go(i, j);
        for (int j = 0; j < ga.cols; ++j)
          ga(i, j) -= std::exp(val(out)(i, j)) * gsum;
      }
      acc(a, ga);
    });
    return out;
  }

  Var row_sums(Var a) {
    Var out = push(valen::row_sums(val(a)), needs(a));
    set_backward(out, [=, this] {
      if (!needs(a)) return;
      Matrix ga(val(a).rows, val(a).cols);
      for (int i = 0; i < ga.rows; ++i)
        for (int j = 0; j < ga.cols; ++j) ga(i, j) = g(out)(i, 0);
      acc(a, ga);
    });
    return out;
  }

  Var concat_cols(Var a, Var b) {
    const Matrix& x = val(a);
    const Matrix& y = val(b);
    if (x.rows != y.rows) throw std::invalid_argument("concat_cols: row mismatch");
    Matrix v(x.rows, x.cols + y.cols);
    for (int i = 0; i < x.rows; ++i) {
      std::copy(x.row(i), x.row(i) + x.cols, v.row(i));
      std::copy(y.row(i), y.row(i) + y.cols, v.row(i) + x.cols);
    }
    Var out = push(std::move(v), needs(a) || needs(b));
    set_backward(out, [=, this] {
      const Matrix& go = g(out);
      int ac = val(a).cols;
      if (needs(a)) {
        Matrix ga(go.rows, ac);
        for (int i = 0; i < go.rows; ++i)
          std::copy(go.row(i), go.row(i) + ac, ga.row(i));
        acc(a, ga);
      }
      if (needs(b)) {
        Matrix gb(go.rows, go.cols - ac);
        for (int i = 0; i < go.rows; ++i)
          std::copy(go.row(i) + ac, go.row(i) + go.cols, gb.row(i));
        acc(b, gb);
      }
    });
    return out;
  }

  Var select_rows(Var a, std::vector<int> idx) {
    Var out = push(valen::select_rows(val(a), idx), needs(a));
    set_backward(out, [=, this, idx = std::move(idx)] {
      if (!needs(a)) return;
      Matrix ga(val(a).rows, val(a).cols);
      const Matrix& go = g(out);
      for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < ga.cols; ++j)
          ga(idx[i], j) += go(static_cast<int>(i), j);
      acc(a, ga);
    });
    return out;
  }

  Var sum(Var a) {
    Var out = push(Matrix::scalar(valen::sum(val(a))), needs(a));
    set_backward(out, [=, this] {
      if (needs(a)) acc(a, Matrix(val(a).rows, val(a).cols, g(out).data[0]));
    });
    return out;
  }

  // scalar sum(W .* a) with constant weights W
  Var dot_const(Var a, Matrix w) {
    check_same_shape(val(a), w, "dot_const");
    double v = 0.0;
    for (size_t i = 0; i < w.size(); ++i) v += w.data[i] * val(a).data[i];
    Var out = push(Matrix::scalar(v), needs(a));
    set_backward(out, [=, this, w = std::move(w)] {
      if (needs(a)) acc(a, scaled(w, g(out).data[0]));
    });
    return out;
  }

  // scalar ||T - a||_F^2 with constant target T
  Var frob_sq_diff(Matrix target, Var a) {
    check_same_shape(target, val(a), "frob_sq_diff");
    Matrix diff = valen::sub(val(a), target);
    Var out = push(Matrix::scalar(frob_norm_sq(diff)), needs(a));
    set_backward(out, [=, this, diff = std::move(diff)] {
      if (needs(a)) acc(a, scaled(diff, 2.0 * g(out).data[0]));
    });
    return out;
  }

  void backward(Var loss) {
    if (nodes_[loss].value.size() != 1)
      throw std::logic_error("backward: loss must be scalar");
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad = Matrix(n.value.rows, n.value.cols);
    if (!nodes_[loss].needs_grad) return;  // loss independent of any leaf
    nodes_[loss].grad.data[0] = 1.0;
    for (int i = loss; i >= 0; --i)
      if (nodes_[i].backward && nodes_[i].needs_grad) nodes_[i].backward();
  }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

  // hooks for custom ops (the dirichlet sampling node lives in dirichlet.hpp)
  Var push(Matrix v, bool needs_grad) {
    nodes_.push_back(Node{std::move(v), Matrix(), needs_grad, {}});
    return static_cast<Var>(nodes_.size() - 1);
  }
  void set_backward(Var v, std::function<void()> bw) {
    nodes_[v].backward = std::move(bw);
  }
  bool needs(Var v) const { return nodes_[v].needs_grad; }
  const Matrix& g(Var v) const { return nodes_[v].grad; }
  void acc(Var v, const Matrix& m) {
    Matrix& gv = nodes_[v].grad;
    check_same_shape(gv, m, "grad accumulate");
    for (size_t i = 0; i < gv.size(); ++i) gv.data[i] += m.data[i];
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  static double sigmoid_fn(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  }
  static double softplus_fn(double x) {
    return x > 30.0 ? x : std::log1p(std::exp(x));
  }

  static Matrix matmul_v(const Matrix& a, const Matrix& b) { return valen::matmul(a, b); }
  static Matrix matmul_nt_v(const Matrix& a, const Matrix& b) {
    return valen::matmul_nt(a, b);
  }
  static Matrix matmul_tn_v(const Matrix& a, const Matrix& b) {
    return valen::matmul_tn(a, b);
  }

  std::vector<Node> nodes_;
};

}  // namespace valen::ad
