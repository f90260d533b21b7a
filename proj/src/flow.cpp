#include "cnflow/flow.hpp"

#include <cmath>

#include "cnflow/math.hpp"

namespace cnflow {

std::string to_string(Direction d) {
  return d == Direction::Generative ? "generative" : "abductive";
}
std::string to_string(MaskKind m) {
  return m == MaskKind::Ordering ? "ordering" : "graph";
}
std::string to_string(BaseFamily b) {
  return b == BaseFamily::Normal ? "normal" : "laplace";
}
std::string to_string(TransformerKind t) {
  return t == TransformerKind::Affine ? "affine" : "spline";
}

Direction direction_from_string(const std::string& s) {
  if (s == "generative") return Direction::Generative;
  if (s == "abductive") return Direction::Abductive;
  throw ConfigError("unknown direction '" + s +
                    "' (expected generative|abductive)");
}
MaskKind mask_from_string(const std::string& s) {
  if (s == "ordering") return MaskKind::Ordering;
  if (s == "graph") return MaskKind::Graph;
  throw ConfigError("unknown mask '" + s + "' (expected ordering|graph)");
}
BaseFamily base_from_string(const std::string& s) {
  if (s == "normal") return BaseFamily::Normal;
  if (s == "laplace") return BaseFamily::Laplace;
  throw ConfigError("unknown base '" + s + "' (expected normal|laplace)");
}
TransformerKind transformer_from_string(const std::string& s) {
  if (s == "affine") return TransformerKind::Affine;
  if (s == "spline") return TransformerKind::Spline;
  throw ConfigError("unknown transformer '" + s +
                    "' (expected affine|spline)");
}

// --- FlowLike defaults ------------------------------------------------------

Eigen::MatrixXd FlowLike::sample(int n, std::uint64_t seed) const {
  return inverse(sample_base(n, seed));
}

Eigen::MatrixXd FlowLike::jacobian_x(const Eigen::RowVectorXd& x) const {
  const int d = dim();
  const double h = 1e-5;
  Eigen::MatrixXd jac(d, d);
  for (int j = 0; j < d; ++j) {
    Eigen::MatrixXd pts(2, d);
    pts.row(0) = x;
    pts.row(1) = x;
    pts(0, j) += h;
    pts(1, j) -= h;
    EvalResult r = forward(pts);
    jac.col(j) = (r.u.row(0) - r.u.row(1)).transpose() / (2.0 * h);
  }
  return jac;
}

// --- FlowModel ---------------------------------------------------------------

Eigen::MatrixXd FlowModel::parallel_pass(const Eigen::MatrixXd& z, int l,
                                         Eigen::VectorXd* logd) const {
  const int d = dim();
  const int P = transformer_params_per_dim(design.transformer);
  Eigen::MatrixXd h = layers[l].forward(z);
  Eigen::MatrixXd out(z.rows(), d);
  if (design.transformer == TransformerKind::Affine) {
    for (int i = 0; i < d; ++i) {
      Eigen::ArrayXd s = h.col(2 * i).array();
      Eigen::ArrayXd t = h.col(2 * i + 1).array();
      Eigen::ArrayXd sc = kScaleClamp * (s / kScaleClamp).tanh();
      out.col(i) = (z.col(i).array() * sc.exp() + t).matrix();
      if (logd) *logd += sc.matrix();
    }
  } else {
    // Copy each parameter segment: h is column-major, so row slices are
    // strided and must not be handed out as raw pointers.
    Eigen::RowVectorXd th(P);
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      for (int i = 0; i < d; ++i) {
        th = h.row(r).segment(i * P, P);
        double y, ld;
        spline_forward(z(r, i), th.data(), &y, &ld);
        out(r, i) = y;
        if (logd) (*logd)(r) += ld;
      }
    }
  }
  return out;
}

Eigen::MatrixXd FlowModel::sequential_invert(const Eigen::MatrixXd& y, int l,
                                             Eigen::VectorXd* logd) const {
  const int d = dim();
  const int P = transformer_params_per_dim(design.transformer);
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(y.rows(), y.cols());
  for (int i : graph_.order) {
    // Masked weights zero out not-yet-recovered inputs exactly, so the
    // parameters of dimension i only see its (already recovered) parents.
    Eigen::MatrixXd h = layers[l].forward(z);
    if (design.transformer == TransformerKind::Affine) {
      Eigen::ArrayXd s = h.col(2 * i).array();
      Eigen::ArrayXd t = h.col(2 * i + 1).array();
      Eigen::ArrayXd sc = kScaleClamp * (s / kScaleClamp).tanh();
      z.col(i) = ((y.col(i).array() - t) * (-sc).exp()).matrix();
      if (logd) *logd += sc.matrix();
    } else {
      Eigen::RowVectorXd th(P);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        th = h.row(r).segment(i * P, P);
        double ld;
        z(r, i) = spline_inverse(y(r, i), th.data(), &ld);
        if (logd) (*logd)(r) += ld;
      }
    }
  }
  return z;
}

EvalResult FlowModel::forward(const Eigen::MatrixXd& x) const {
  if (x.cols() != dim())
    throw ShapeError("FlowModel::forward: input has " +
                     std::to_string(x.cols()) + " columns, model has d=" +
                     std::to_string(dim()));
  EvalResult res;
  res.logdet = Eigen::VectorXd::Zero(x.rows());
  Eigen::MatrixXd z = x;
  if (design.direction == Direction::Abductive) {
    for (int l = 0; l < design.layers; ++l)
      z = parallel_pass(z, l, &res.logdet);
  } else {
    // The stack parameterizes u -> x; evaluate x -> u by inverting the
    // layers from the data side back to the base side.
    Eigen::VectorXd fwd_logd = Eigen::VectorXd::Zero(x.rows());
    for (int l = design.layers - 1; l >= 0; --l)
      z = sequential_invert(z, l, &fwd_logd);
    res.logdet = -fwd_logd;
  }
  res.u = std::move(z);
  return res;
}

Eigen::MatrixXd FlowModel::inverse(const Eigen::MatrixXd& u) const {
  if (u.cols() != dim())
    throw ShapeError("FlowModel::inverse: input has " +
                     std::to_string(u.cols()) + " columns, model has d=" +
                     std::to_string(dim()));
  Eigen::MatrixXd z = u;
  if (design.direction == Direction::Abductive) {
    for (int l = design.layers - 1; l >= 0; --l)
      z = sequential_invert(z, l, nullptr);
  } else {
    for (int l = 0; l < design.layers; ++l) z = parallel_pass(z, l, nullptr);
  }
  return z;
}

Eigen::VectorXd FlowModel::base_log_prob(const Eigen::MatrixXd& u) const {
  Eigen::VectorXd lp = Eigen::VectorXd::Zero(u.rows());
  for (int i = 0; i < dim(); ++i) {
    double loc = base_loc(0, i);
    double ls = base_logscale(0, i);
    Eigen::ArrayXd z = (u.col(i).array() - loc) * std::exp(-ls);
    if (design.base == BaseFamily::Normal) {
      lp.array() += -0.5 * z.square() - 0.5 * kLog2Pi - ls;
    } else {
      lp.array() += -z.abs() - std::log(2.0) - ls;
    }
  }
  return lp;
}

Eigen::VectorXd FlowModel::log_prob(const Eigen::MatrixXd& x) const {
  EvalResult r = forward(x);
  return base_log_prob(r.u) + r.logdet;
}

Eigen::MatrixXd FlowModel::sample_base(int n, std::uint64_t seed) const {
  Rng rng(seed);
  const int d = dim();
  Eigen::MatrixXd u(n, d);
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < d; ++i) {
      double e = design.base == BaseFamily::Normal ? rng.normal()
                                                   : rng.laplace();
      u(r, i) = base_loc(0, i) + std::exp(base_logscale(0, i)) * e;
    }
  return u;
}

Eigen::MatrixXd FlowModel::layer_jacobian(const Eigen::RowVectorXd& z,
                                          int l) const {
  const int d = dim();
  const int P = transformer_params_per_dim(design.transformer);
  Eigen::MatrixXd jh = layers[l].jacobian(z);          // (d*P x d)
  Eigen::MatrixXd h = layers[l].forward(z);            // (1 x d*P)
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    if (design.transformer == TransformerKind::Affine) {
      double s = h(0, 2 * i), t = h(0, 2 * i + 1);
      (void)t;
      double sc = affine_clamp(s);
      double es = std::exp(sc);
      // dtau/ds = z * e^sc * clamp'(s); dtau/dt = 1.
      a.row(i) = z(i) * es * affine_clamp_grad(s) * jh.row(2 * i) +
                 jh.row(2 * i + 1);
      a(i, i) += es;
    } else {
      double y, ld;
      double dy[kSplineParamCount + 1], dld[kSplineParamCount + 1];
      Eigen::RowVectorXd th = h.row(0).segment(i * P, P);
      spline_forward_grad(z(i), th.data(), &y, &ld, dy, dld);
      for (int k = 0; k < P; ++k)
        a.row(i) += dy[k + 1] * jh.row(i * P + k);
      a(i, i) += dy[0];
    }
  }
  return a;
}

Eigen::MatrixXd FlowModel::jacobian_x(const Eigen::RowVectorXd& x) const {
  const int d = dim();
  if (design.direction == Direction::Abductive) {
    Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd z = x;
    for (int l = 0; l < design.layers; ++l) {
      jac = layer_jacobian(z.row(0), l) * jac;
      z = parallel_pass(z, l, nullptr);
    }
    return jac;
  }
  // Generative: recover every layer's parameterized input, compose the
  // forward Jacobian there, then invert it triangularly under the causal
  // ordering (preserving exact structural zeros).
  std::vector<Eigen::MatrixXd> inputs(design.layers);
  Eigen::MatrixXd z = x;
  for (int l = design.layers - 1; l >= 0; --l) {
    z = sequential_invert(z, l, nullptr);
    inputs[l] = z;
  }
  Eigen::MatrixXd jf = Eigen::MatrixXd::Identity(d, d);
  for (int l = 0; l < design.layers; ++l)
    jf = layer_jacobian(inputs[l].row(0), l) * jf;

  // Permute to strictly lower-triangular form, invert by substitution.
  const auto& order = graph_.order;
  Eigen::MatrixXd b(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) b(r, c) = jf(order[r], order[c]);
  Eigen::MatrixXd binv = Eigen::MatrixXd::Zero(d, d);
  for (int c = 0; c < d; ++c) {
    binv(c, c) = 1.0 / b(c, c);
    for (int r = c + 1; r < d; ++r) {
      double acc = 0.0;
      for (int k = c; k < r; ++k) acc += b(r, k) * binv(k, c);
      binv(r, c) = -acc / b(r, r);
    }
  }
  Eigen::MatrixXd jac(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) jac(order[r], order[c]) = binv(r, c);
  return jac;
}

std::vector<ParamRef> FlowModel::trainable_params() {
  std::vector<ParamRef> refs;
  for (size_t l = 0; l < layers.size(); ++l) {
    for (int k = 0; k < layers[l].num_layers(); ++k) {
      refs.push_back({"layer" + std::to_string(l) + ".w" + std::to_string(k),
                      &layers[l].weights[k]});
      refs.push_back({"layer" + std::to_string(l) + ".b" + std::to_string(k),
                      &layers[l].biases[k]});
    }
  }
  if (design.learnable_base) {
    refs.push_back({"base.loc", &base_loc});
    refs.push_back({"base.logscale", &base_logscale});
  }
  return refs;
}

long FlowModel::parameter_count() const {
  long n = 0;
  for (const auto& mlp : layers) n += mlp.parameter_count();
  if (design.learnable_base) n += 2L * dim();
  return n;
}

Eigen::MatrixXi conditioner_mask(MaskKind kind, const CausalGraph& graph) {
  const int d = graph.d();
  if (kind == MaskKind::Graph) return graph.adjacency;
  Eigen::MatrixXi allowed = Eigen::MatrixXi::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (graph.position[j] < graph.position[i]) allowed(i, j) = 1;
  return allowed;
}

Eigen::MatrixXd penalty_mask(const CausalGraph& graph) {
  const int d = graph.d();
  Eigen::MatrixXd mask = Eigen::MatrixXd::Ones(d, d);
  for (int i = 0; i < d; ++i) {
    mask(i, i) = 0.0;
    for (int j = 0; j < d; ++j)
      if (graph.adjacency(i, j) != 0) mask(i, j) = 0.0;
  }
  return mask;
}

FlowModel build_flow(const DesignChoice& design, const CausalGraph& graph,
                     std::uint64_t seed) {
  if (design.layers < 1)
    throw ShapeError("build_flow: layers must be >= 1, got " +
                     std::to_string(design.layers));
  FlowModel model;
  model.design = design;
  model.graph_ = graph;
  model.cond_mask = conditioner_mask(design.mask, graph);
  const int P = transformer_params_per_dim(design.transformer);
  for (int l = 0; l < design.layers; ++l) {
    Rng rng(derive_seed(seed, "layer" + std::to_string(l)));
    model.layers.push_back(
        make_masked_mlp(model.cond_mask, design.hidden, P, rng));
  }
  model.base_loc = Eigen::MatrixXd::Zero(1, graph.d());
  model.base_logscale = Eigen::MatrixXd::Zero(1, graph.d());
  if (design.direction == Direction::Generative &&
      design.mask == MaskKind::Graph) {
    int diam = diameter(graph);
    if (design.layers < diam)
      warn(&model.build_warnings, "Expressivity",
           "generative graph-masked flow with " +
               std::to_string(design.layers) + " layer(s) cannot represent "
               "all indirect effects of a graph with diameter " +
               std::to_string(diam));
  }
  return model;
}

// --- OracleFlow --------------------------------------------------------------

EvalResult OracleFlow::forward(const Eigen::MatrixXd& x) const {
  EvalResult res;
  res.u = abduct_true(scm_, x);
  res.logdet = Eigen::VectorXd::Zero(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Eigen::VectorXd row = x.row(r);
    for (int i = 0; i < scm_.d(); ++i)
      res.logdet(r) -= scm_.log_du[i](row, res.u(r, i));
  }
  return res;
}

Eigen::MatrixXd OracleFlow::inverse(const Eigen::MatrixXd& u) const {
  return solve_recursive(scm_, u);
}

Eigen::VectorXd OracleFlow::log_prob(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd lp(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    lp(r) = log_prob_true(scm_, x.row(r).transpose());
  return lp;
}

Eigen::MatrixXd OracleFlow::sample_base(int n, std::uint64_t seed) const {
  return sample_noise(scm_, n, seed);
}

}  // namespace cnflow
