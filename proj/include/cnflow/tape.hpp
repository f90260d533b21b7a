#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace cnflow::ad {

// Reverse-mode autodiff over batch matrices (rows = samples). A Tape holds
// nodes in creation order, which is already topological, so the backward
// sweep is a single reverse pass. Values are Eigen matrices of any shape;
// elementwise ops broadcast nothing implicitly (shapes must match) except
// for the dedicated *_rowvec ops.
//
// The tape is rebuilt per training step; node counts are small (hundreds)
// and values are small dense matrices, so this is cheap relative to the
// matrix work itself.

using Mat = Eigen::MatrixXd;

class Tape;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  // Leaf without gradient (data, masks).
  Var constant(Mat value);
  // Leaf with gradient (parameters bound for one step).
  Var leaf(Mat value);

  const Mat& val(Var v) const { return nodes_[v.id].value; }
  // Gradient of a leaf after backward(); zero matrix if it never received
  // a contribution.
  Mat grad_of(Var v) const;

  // y = x * (W ∘ mask)^T, W is (out x in), x is (batch x in).
  // mask may be null (dense); otherwise same shape as W.
  Var linear_nt(Var x, Var w, const Mat* mask);
  Var add_rowvec(Var x, Var b);  // b is 1 x k
  Var sub_rowvec(Var x, Var b);
  Var mul_rowvec(Var x, Var r);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  // a * x + b elementwise with scalar constants.
  Var affine(Var x, double a, double b);

  Var exp(Var x);
  Var log(Var x);
  Var tanh(Var x);
  Var square(Var x);
  Var sqrt(Var x);
  // sqrt with subgradient 0 at 0 (for norms that are structurally zero).
  Var sqrt0(Var x);
  Var abs(Var x);
  Var elu(Var x);
  // Value is elu'(x); differentiable (backward uses elu''(x)).
  Var elu_prime(Var x);

  Var col(Var x, int j);
  Var block_cols(Var x, int j0, int n);
  Var hcat(const std::vector<Var>& parts);
  // Elementwise multiply each row of x by a constant row vector.
  Var scale_cols(Var x, const Eigen::RowVectorXd& weights);

  Var sum_cols(Var x);  // batch x 1
  Var sum_all(Var x);   // 1 x 1
  Var mean_all(Var x);  // 1 x 1

  // Custom op: caller supplies the forward value and a backward callback
  // receiving (tape, grad_of_output); the callback accumulates into the
  // inputs' grads via tape.accumulate().
  Var custom(Mat value, const std::vector<Var>& inputs,
             std::function<void(Tape&, const Mat&)> backward);

  // Adds g into the gradient of v (no-op if v does not need gradients).
  void accumulate(Var v, const Mat& g);

  // Seeds root (must be 1x1) with gradient 1 and sweeps backwards.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;  // empty until first accumulation
    bool needs_grad = false;
    std::function<void(Tape&, const Mat&)> backward;
  };

  Var push(Mat value, bool needs_grad,
           std::function<void(Tape&, const Mat&)> backward);
  bool any_grad(std::initializer_list<Var> vs) const;

  std::vector<Node> nodes_;
};

}  // namespace cnflow::ad
