#include "cnflow/tape.hpp"

#include <cmath>

#include "cnflow/errors.hpp"

namespace cnflow::ad {

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch (" +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
}

}  // namespace

Var Tape::push(Mat value, bool needs_grad,
               std::function<void(Tape&, const Mat&)> backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

bool Tape::any_grad(std::initializer_list<Var> vs) const {
  for (Var v : vs)
    if (v.valid() && nodes_[v.id].needs_grad) return true;
  return false;
}

Var Tape::constant(Mat value) { return push(std::move(value), false, {}); }

Var Tape::leaf(Mat value) {
  return push(std::move(value), true, [](Tape&, const Mat&) {});
}

Mat Tape::grad_of(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Mat& g) {
  Node& n = nodes_[v.id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  n.grad += g;
}

void Tape::backward(Var root) {
  Node& r = nodes_[root.id];
  if (r.value.rows() != 1 || r.value.cols() != 1)
    throw ShapeError("backward: root must be a 1x1 scalar node");
  accumulate(root, Mat::Ones(1, 1));
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

Var Tape::linear_nt(Var x, Var w, const Mat* mask) {
  const Mat& xv = val(x);
  const Mat& wv = val(w);
  if (xv.cols() != wv.cols())
    throw ShapeError("linear_nt: input width " + std::to_string(xv.cols()) +
                     " != weight fan-in " + std::to_string(wv.cols()));
  Mat weff = mask ? (wv.array() * mask->array()).matrix() : wv;
  Mat y = xv * weff.transpose();
  bool ng = any_grad({x, w});
  Mat mask_copy = mask ? *mask : Mat();
  return push(std::move(y), ng, [x, w, mask_copy](Tape& t, const Mat& g) {
    const Mat& xv = t.val(x);
    const Mat& wv = t.val(w);
    Mat weff = mask_copy.size() ? (wv.array() * mask_copy.array()).matrix()
                                : wv;
    t.accumulate(x, g * weff);
    Mat gw = g.transpose() * xv;
    if (mask_copy.size()) gw = (gw.array() * mask_copy.array()).matrix();
    t.accumulate(w, gw);
  });
}

Var Tape::add_rowvec(Var x, Var b) {
  const Mat& xv = val(x);
  const Mat& bv = val(b);
  if (bv.rows() != 1 || bv.cols() != xv.cols())
    throw ShapeError("add_rowvec: bias must be 1 x input-width");
  Mat y = xv.rowwise() + bv.row(0);
  return push(std::move(y), any_grad({x, b}), [x, b](Tape& t, const Mat& g) {
    t.accumulate(x, g);
    t.accumulate(b, g.colwise().sum());
  });
}

Var Tape::sub_rowvec(Var x, Var b) {
  const Mat& xv = val(x);
  const Mat& bv = val(b);
  if (bv.rows() != 1 || bv.cols() != xv.cols())
    throw ShapeError("sub_rowvec: subtrahend must be 1 x input-width");
  Mat y = xv.rowwise() - bv.row(0);
  return push(std::move(y), any_grad({x, b}), [x, b](Tape& t, const Mat& g) {
    t.accumulate(x, g);
    t.accumulate(b, -g.colwise().sum());
  });
}

Var Tape::mul_rowvec(Var x, Var r) {
  const Mat& xv = val(x);
  const Mat& rv = val(r);
  if (rv.rows() != 1 || rv.cols() != xv.cols())
    throw ShapeError("mul_rowvec: scale must be 1 x input-width");
  Mat y = xv.array().rowwise() * rv.row(0).array();
  return push(std::move(y), any_grad({x, r}), [x, r](Tape& t, const Mat& g) {
    const Mat& xv = t.val(x);
    const Mat& rv = t.val(r);
    t.accumulate(x, (g.array().rowwise() * rv.row(0).array()).matrix());
    t.accumulate(r, (g.array() * xv.array()).colwise().sum().matrix());
  });
}

Var Tape::add(Var a, Var b) {
  check_same_shape(val(a), val(b), "add");
  Mat y = val(a) + val(b);
  return push(std::move(y), any_grad({a, b}), [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(val(a), val(b), "sub");
  Mat y = val(a) - val(b);
  return push(std::move(y), any_grad({a, b}), [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(val(a), val(b), "mul");
  Mat y = val(a).array() * val(b).array();
  return push(std::move(y), any_grad({a, b}), [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, (g.array() * t.val(b).array()).matrix());
    t.accumulate(b, (g.array() * t.val(a).array()).matrix());
  });
}

Var Tape::div(Var a, Var b) {
  check_same_shape(val(a), val(b), "div");
  Mat y = val(a).array() / val(b).array();
  return push(std::move(y), any_grad({a, b}), [a, b](Tape& t, const Mat& g) {
    const auto& bv = t.val(b).array();
    t.accumulate(a, (g.array() / bv).matrix());
    t.accumulate(b, (-g.array() * t.val(a).array() / (bv * bv)).matrix());
  });
}

Var Tape::affine(Var x, double a, double b) {
  Mat y = (val(x).array() * a + b).matrix();
  return push(std::move(y), any_grad({x}), [x, a](Tape& t, const Mat& g) {
    t.accumulate(x, (g.array() * a).matrix());
  });
}

Var Tape::exp(Var x) {
  Mat y = val(x).array().exp().matrix();
  Var out = push(y, any_grad({x}), {});
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [x, out](Tape& t, const Mat& g) {
      t.accumulate(x, (g.array() * t.val(out).array()).matrix());
    };
  }
  return out;
}

Var Tape::log(Var x) {
  Mat y = val(x).array().log().matrix();
  return push(std::move(y), any_grad({x}), [x](Tape& t, const Mat& g) {
    t.accumulate(x, (g.array() / t.val(x).array()).matrix());
  });
}

Var Tape::tanh(Var x) {
  Mat y = val(x).array().tanh().matrix();
  Var out = push(y, any_grad({x}), {});
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [x, out](Tape& t, const Mat& g) {
      const auto& yv = t.val(out).array();
      t.accumulate(x, (g.array() * (1.0 - yv * yv)).matrix());
    };
  }
  return out;
}

Var Tape::square(Var x) {
  Mat y = val(x).array().square().matrix();
  return push(std::move(y), any_grad({x}), [x](Tape& t, const Mat& g) {
    t.accumulate(x, (2.0 * g.array() * t.val(x).array()).matrix());
  });
}

Var Tape::sqrt(Var x) {
  Mat y = val(x).array().sqrt().matrix();
  Var out = push(y, any_grad({x}), {});
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [x, out](Tape& t, const Mat& g) {
      // d sqrt(x) = 1 / (2 sqrt(x)); safe because flow code guards x > 0.
      t.accumulate(x, (g.array() / (2.0 * t.val(out).array())).matrix());
    };
  }
  return out;
}

Var Tape::sqrt0(Var x) {
  Mat y = val(x).array().sqrt().matrix();
  Var out = push(y, any_grad({x}), {});
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].backward = [x, out](Tape& t, const Mat& g) {
      // Zero subgradient where x == 0: a structurally-zero norm stays zero
      // in a neighborhood, so its true derivative is zero there.
      Mat r = t.val(out);
      Mat gx(r.rows(), r.cols());
      for (Eigen::Index i = 0; i < r.size(); ++i)
        gx(i) = r(i) > 0.0 ? g(i) / (2.0 * r(i)) : 0.0;
      t.accumulate(x, gx);
    };
  }
  return out;
}

Var Tape::abs(Var x) {
  Mat y = val(x).array().abs().matrix();
  return push(std::move(y), any_grad({x}), [x](Tape& t, const Mat& g) {
    t.accumulate(x, (g.array() * t.val(x).array().sign()).matrix());
  });
}

Var Tape::elu(Var x) {
  Mat y = val(x).unaryExpr(
      [](double v) { return v > 0.0 ? v : std::expm1(v); });
  return push(std::move(y), any_grad({x}), [x](Tape& t, const Mat& g) {
    Mat d = t.val(x).unaryExpr(
        [](double v) { return v > 0.0 ? 1.0 : std::exp(v); });
    t.accumulate(x, (g.array() * d.array()).matrix());
  });
}

Var Tape::elu_prime(Var x) {
  Mat y = val(x).unaryExpr(
      [](double v) { return v > 0.0 ? 1.0 : std::exp(v); });
  return push(std::move(y), any_grad({x}), [x](Tape& t, const Mat& g) {
    // elu''(x) = exp(x) for x < 0, 0 for x > 0.
    Mat d = t.val(x).unaryExpr(
        [](double v) { return v > 0.0 ? 0.0 : std::exp(v); });
    t.accumulate(x, (g.array() * d.array()).matrix());
  });
}

Var Tape::col(Var x, int j) { return block_cols(x, j, 1); }

Var Tape::block_cols(Var x, int j0, int n) {
  const Mat& xv = val(x);
  if (j0 < 0 || n < 1 || j0 + n > xv.cols())
    throw ShapeError("block_cols: range [" + std::to_string(j0) + ", " +
                     std::to_string(j0 + n) + ") outside width " +
                     std::to_string(xv.cols()));
  Mat y = xv.middleCols(j0, n);
  return push(std::move(y), any_grad({x}), [x, j0, n](Tape& t, const Mat& g) {
    const Mat& xv = t.val(x);
    Mat gx = Mat::Zero(xv.rows(), xv.cols());
    gx.middleCols(j0, n) = g;
    t.accumulate(x, gx);
  });
}

Var Tape::hcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("hcat: no parts");
  Eigen::Index rows = val(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    if (val(p).rows() != rows) throw ShapeError("hcat: row count mismatch");
    cols += val(p).cols();
  }
  Mat y(rows, cols);
  Eigen::Index at = 0;
  bool ng = false;
  for (Var p : parts) {
    y.middleCols(at, val(p).cols()) = val(p);
    at += val(p).cols();
    ng = ng || nodes_[p.id].needs_grad;
  }
  std::vector<Var> parts_copy = parts;
  return push(std::move(y), ng, [parts_copy](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (Var p : parts_copy) {
      Eigen::Index w = t.val(p).cols();
      t.accumulate(p, g.middleCols(at, w));
      at += w;
    }
  });
}

Var Tape::scale_cols(Var x, const Eigen::RowVectorXd& weights) {
  const Mat& xv = val(x);
  if (weights.cols() != xv.cols())
    throw ShapeError("scale_cols: weight width mismatch");
  Mat y = xv.array().rowwise() * weights.array();
  Eigen::RowVectorXd w = weights;
  return push(std::move(y), any_grad({x}), [x, w](Tape& t, const Mat& g) {
    t.accumulate(x, (g.array().rowwise() * w.array()).matrix());
  });
}

Var Tape::sum_cols(Var x) {
  Mat y = val(x).rowwise().sum();
  return push(std::move(y), any_grad({x}), [x](Tape& t, const Mat& g) {
    const Mat& xv = t.val(x);
    t.accumulate(x, g * Mat::Ones(1, xv.cols()));
  });
}

Var Tape::sum_all(Var x) {
  Mat y(1, 1);
  y(0, 0) = val(x).sum();
  return push(std::move(y), any_grad({x}), [x](Tape& t, const Mat& g) {
    const Mat& xv = t.val(x);
    t.accumulate(x, Mat::Constant(xv.rows(), xv.cols(), g(0, 0)));
  });
}

Var Tape::mean_all(Var x) {
  Mat y(1, 1);
  y(0, 0) = val(x).mean();
  return push(std::move(y), any_grad({x}), [x](Tape& t, const Mat& g) {
    const Mat& xv = t.val(x);
    double scale = g(0, 0) / static_cast<double>(xv.size());
    t.accumulate(x, Mat::Constant(xv.rows(), xv.cols(), scale));
  });
}

Var Tape::custom(Mat value, const std::vector<Var>& inputs,
                 std::function<void(Tape&, const Mat&)> backward) {
  bool ng = false;
  for (Var v : inputs) ng = ng || nodes_[v.id].needs_grad;
  return push(std::move(value), ng, std::move(backward));
}

}  // namespace cnflow::ad
