#include "cnflow/masked_mlp.hpp"

#include <cmath>
#include <cstdint>

#include "cnflow/errors.hpp"

namespace cnflow {

namespace {

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

}  // namespace

long MaskedMlp::parameter_count() const {
  long n = 0;
  for (size_t l = 0; l < weights.size(); ++l)
    n += static_cast<long>(weights[l].size() + biases[l].size());
  return n;
}

Eigen::MatrixXd MaskedMlp::forward(const Eigen::MatrixXd& x) const {
  if (x.cols() != in_dim)
    throw ShapeError("MaskedMlp::forward: input width " +
                     std::to_string(x.cols()) + " != " +
                     std::to_string(in_dim));
  Eigen::MatrixXd h = x;
  for (int l = 0; l < num_layers(); ++l) {
    h = (h * (weights[l].array() * masks[l].array()).matrix().transpose())
            .rowwise() +
        biases[l].row(0);
    if (l + 1 < num_layers()) h = h.unaryExpr(&elu);
  }
  return h;
}

Eigen::MatrixXd MaskedMlp::jacobian(const Eigen::RowVectorXd& x) const {
  Eigen::MatrixXd h = x;
  // Chain of (masked weight) x (activation derivative) products.
  Eigen::MatrixXd jac =
      (weights[0].array() * masks[0].array()).matrix();
  for (int l = 0; l < num_layers(); ++l) {
    if (l > 0) {
      jac = (weights[l].array() * masks[l].array()).matrix() * jac;
    }
    if (l + 1 < num_layers()) {
      Eigen::MatrixXd pre =
          (h * (weights[l].array() * masks[l].array()).matrix().transpose())
              .rowwise() +
          biases[l].row(0);
      for (Eigen::Index r = 0; r < jac.rows(); ++r)
        jac.row(r) *= elu_grad(pre(0, r));
      h = pre.unaryExpr(&elu);
    }
  }
  return jac;
}

MaskedMlp make_masked_mlp(const Eigen::MatrixXi& allowed,
                          const std::vector<int>& hidden, int params_per_dim,
                          Rng& rng) {
  const int d = static_cast<int>(allowed.rows());
  if (allowed.rows() != allowed.cols())
    throw ShapeError("make_masked_mlp: allowed-input matrix must be square");
  if (d > 64)
    throw ShapeError("make_masked_mlp: at most 64 dimensions supported");
  if (params_per_dim < 1) throw ShapeError("params_per_dim must be >= 1");
  for (int width : hidden)
    if (width < 1) throw ShapeError("hidden widths must be positive");

  std::vector<std::uint64_t> row_bits(d, 0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (allowed(i, j) != 0) row_bits[i] |= (std::uint64_t{1} << j);

  auto subset = [](std::uint64_t a, std::uint64_t b) {
    return (a & ~b) == 0;  // a contained in b
  };

  MaskedMlp mlp;
  mlp.in_dim = d;
  mlp.out_dim = d * params_per_dim;
  mlp.params_per_dim = params_per_dim;

  // Unit label = index of the output dimension whose allowed set it carries.
  std::vector<std::vector<int>> labels;
  for (int width : hidden) {
    std::vector<int> lab(width);
    for (int u = 0; u < width; ++u) lab[u] = u % d;
    labels.push_back(std::move(lab));
  }

  std::vector<int> widths;
  widths.push_back(d);
  for (int w : hidden) widths.push_back(w);
  widths.push_back(mlp.out_dim);

  const int num_layers = static_cast<int>(widths.size()) - 1;
  for (int l = 0; l < num_layers; ++l) {
    const int fan_in = widths[l];
    const int fan_out = widths[l + 1];
    Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(fan_out, fan_in);
    for (int o = 0; o < fan_out; ++o) {
      std::uint64_t out_set = (l + 1 == num_layers)
                                  ? row_bits[o / params_per_dim]
                                  : row_bits[labels[l][o]];
      for (int i = 0; i < fan_in; ++i) {
        bool connect;
        if (l == 0) {
          connect = (out_set >> i) & 1;  // direct input read
        } else {
          connect = subset(row_bits[labels[l - 1][i]], out_set);
        }
        if (connect) mask(o, i) = 1.0;
      }
    }
    const bool last = (l + 1 == num_layers);
    Eigen::MatrixXd w(fan_out, fan_in);
    if (last) {
      w.setZero();  // identity-friendly start
    } else {
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      for (int r = 0; r < fan_out; ++r)
        for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-a, a);
    }
    mlp.masks.push_back(std::move(mask));
    mlp.weights.push_back(std::move(w));
    mlp.biases.push_back(Eigen::MatrixXd::Zero(1, fan_out));
  }
  return mlp;
}

ad::Var mlp_tape_forward(ad::Tape& tape, const MaskedMlp& mlp, ad::Var x,
                         const std::vector<ad::Var>& w,
                         const std::vector<ad::Var>& b,
                         std::vector<ad::Var>* preacts) {
  ad::Var h = x;
  for (int l = 0; l < mlp.num_layers(); ++l) {
    h = tape.add_rowvec(tape.linear_nt(h, w[l], &mlp.masks[l]), b[l]);
    if (l + 1 < mlp.num_layers()) {
      if (preacts) preacts->push_back(h);
      h = tape.elu(h);
    }
  }
  return h;
}

ad::Var mlp_tape_tangent(ad::Tape& tape, const MaskedMlp& mlp, ad::Var tx,
                         const std::vector<ad::Var>& w,
                         const std::vector<ad::Var>& preacts) {
  ad::Var t = tx;
  for (int l = 0; l < mlp.num_layers(); ++l) {
    t = tape.linear_nt(t, w[l], &mlp.masks[l]);
    if (l + 1 < mlp.num_layers())
      t = tape.mul(t, tape.elu_prime(preacts[l]));
  }
  return t;
}

}  // namespace cnflow
