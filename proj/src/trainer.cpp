#include "cnflow/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "cnflow/errors.hpp"
#include "cnflow/math.hpp"
#include "cnflow/rng.hpp"

namespace cnflow {

namespace {

using ad::Tape;
using ad::Var;
using json = nlohmann::json;

// --- value-only losses ------------------------------------------------------

bool finite_all(const Eigen::MatrixXd& m) { return m.allFinite(); }

double masked_fro(const Eigen::MatrixXd& jac, const Eigen::MatrixXd& mask) {
  return std::sqrt((jac.array() * mask.array()).square().sum());
}

// --- tape building -----------------------------------------------------------

// Exact partial derivatives of one spline dimension at every row, captured
// by the custom nodes' backward closures.
struct SplinePartials {
  Eigen::VectorXd dy_dz, dld_dz;
  Eigen::MatrixXd dy_dth, dld_dth;  // n x P
};

// Per-dimension nodes of one layer pass, cached so tangent streams can reuse
// them without re-deriving the transformer algebra.
struct DimCache {
  Var in_col;     // parameterized-direction input column
  Var out_col;    // parameterized-direction output (or recovered input)
  Var ld;         // log tau' in the parameterized direction
  Var esc;        // affine: exp(sc)
  Var expnegsc;   // affine: exp(-sc)
  Var clampg;     // affine: clamp'(s) = 1 - tanh^2(s/5)
  Var theta;      // spline: n x P parameter block
  std::shared_ptr<SplinePartials> sp;
};

struct LayerBuild {
  Var out;       // n x d output of the pass
  Var logd_sum;  // n x 1 parameterized-direction sum of log-derivatives
  std::vector<DimCache> dims;
  std::vector<Var> preacts;                        // parallel pass
  std::vector<std::vector<Var>> preacts_per_dim;   // sequential inversion
};

std::shared_ptr<SplinePartials> spline_partials_at(
    const Eigen::MatrixXd& z, const Eigen::MatrixXd& th) {
  const int n = static_cast<int>(z.rows());
  const int P = kSplineParamCount;
  auto parts = std::make_shared<SplinePartials>();
  parts->dy_dz.resize(n);
  parts->dld_dz.resize(n);
  parts->dy_dth.resize(n, P);
  parts->dld_dth.resize(n, P);
  Eigen::RowVectorXd row(P);
  double dy[kSplineParamCount + 1], dld[kSplineParamCount + 1];
  for (int r = 0; r < n; ++r) {
    row = th.row(r);
    double y, ld;
    spline_forward_grad(z(r, 0), row.data(), &y, &ld, dy, dld);
    parts->dy_dz(r) = dy[0];
    parts->dld_dz(r) = dld[0];
    for (int k = 0; k < P; ++k) {
      parts->dy_dth(r, k) = dy[k + 1];
      parts->dld_dth(r, k) = dld[k + 1];
    }
  }
  return parts;
}

// y = tau(z; theta) and logd nodes for a parallel spline pass.
void spline_value_nodes(Tape& tape, Var z_col, Var theta, DimCache* dc) {
  const Eigen::MatrixXd& z = tape.val(z_col);
  const Eigen::MatrixXd& th = tape.val(theta);
  const int n = static_cast<int>(z.rows());
  Eigen::MatrixXd y(n, 1), ld(n, 1);
  Eigen::RowVectorXd row(kSplineParamCount);
  for (int r = 0; r < n; ++r) {
    row = th.row(r);
    double yy, ll;
    spline_forward(z(r, 0), row.data(), &yy, &ll);
    y(r, 0) = yy;
    ld(r, 0) = ll;
  }
  auto parts = spline_partials_at(z, th);
  dc->sp = parts;
  dc->theta = theta;
  dc->out_col =
      tape.custom(y, {z_col, theta}, [z_col, theta, parts](Tape& t,
                                                           const ad::Mat& g) {
        t.accumulate(z_col, (g.array() * parts->dy_dz.array()).matrix());
        t.accumulate(theta,
                     (parts->dy_dth.array().colwise() * g.col(0).array())
                         .matrix());
      });
  dc->ld =
      tape.custom(ld, {z_col, theta}, [z_col, theta, parts](Tape& t,
                                                            const ad::Mat& g) {
        t.accumulate(z_col, (g.array() * parts->dld_dz.array()).matrix());
        t.accumulate(theta,
                     (parts->dld_dth.array().colwise() * g.col(0).array())
                         .matrix());
      });
}

// z = tau^{-1}(y; theta) and logd (at the recovered z) for a sequential
// spline inversion. Partials come from the forward derivatives at z via the
// inverse-function rule.
void spline_inverse_nodes(Tape& tape, Var y_col, Var theta, DimCache* dc) {
  const Eigen::MatrixXd& y = tape.val(y_col);
  const Eigen::MatrixXd& th = tape.val(theta);
  const int n = static_cast<int>(y.rows());
  Eigen::MatrixXd z(n, 1);
  Eigen::RowVectorXd row(kSplineParamCount);
  for (int r = 0; r < n; ++r) {
    row = th.row(r);
    z(r, 0) = spline_inverse(y(r, 0), row.data(), nullptr);
  }
  auto parts = spline_partials_at(z, th);
  Eigen::MatrixXd ld(n, 1);
  {
    Eigen::RowVectorXd r2(kSplineParamCount);
    for (int r = 0; r < n; ++r) {
      r2 = th.row(r);
      double yy, ll;
      spline_forward(z(r, 0), r2.data(), &yy, &ll);
      ld(r, 0) = ll;
    }
  }
  dc->sp = parts;
  dc->theta = theta;
  // dz/dy = 1/tau'; dz/dtheta_k = -tau_theta_k / tau'.
  Var z_node =
      tape.custom(z, {y_col, theta}, [y_col, theta, parts](Tape& t,
                                                           const ad::Mat& g) {
        Eigen::ArrayXd invd = 1.0 / parts->dy_dz.array();
        t.accumulate(y_col, (g.array() * invd).matrix());
        Eigen::MatrixXd gth =
            (parts->dy_dth.array().colwise() * (-g.col(0).array() * invd))
                .matrix();
        t.accumulate(theta, gth);
      });
  dc->out_col = z_node;
  dc->ld =
      tape.custom(ld, {z_node, theta}, [z_node, theta, parts](Tape& t,
                                                              const ad::Mat& g) {
        t.accumulate(z_node, (g.array() * parts->dld_dz.array()).matrix());
        t.accumulate(theta,
                     (parts->dld_dth.array().colwise() * g.col(0).array())
                         .matrix());
      });
}

// Row-wise weighted sum of a tangent block with constant per-row weights:
// out(r) = sum_k W(r,k) * T(r,k). Gradients flow into T only (the weights'
// own parameter dependence is a dropped curvature term; see ledger).
Var weighted_cols(Tape& tape, Var t_block, const Eigen::MatrixXd& w) {
  const Eigen::MatrixXd& tb = tape.val(t_block);
  Eigen::MatrixXd out = (tb.array() * w.array()).rowwise().sum().matrix();
  return tape.custom(out, {t_block}, [t_block, w](Tape& t, const ad::Mat& g) {
    t.accumulate(t_block, (w.array().colwise() * g.col(0).array()).matrix());
  });
}

Var sum_vars(Tape& tape, const std::vector<Var>& vs) {
  Var acc = vs[0];
  for (size_t i = 1; i < vs.size(); ++i) acc = tape.add(acc, vs[i]);
  return acc;
}

// One parallel (parameterized-direction) layer pass on the tape.
LayerBuild build_parallel_layer(Tape& tape, const FlowModel& model, int l,
                                Var z, const std::vector<Var>& w,
                                const std::vector<Var>& b) {
  const int d = model.dim();
  const int P = transformer_params_per_dim(model.design.transformer);
  LayerBuild lb;
  Var h = mlp_tape_forward(tape, model.layers[l], z, w, b, &lb.preacts);
  std::vector<Var> outs(d), lds(d);
  lb.dims.resize(d);
  for (int i = 0; i < d; ++i) {
    DimCache& dc = lb.dims[i];
    dc.in_col = tape.col(z, i);
    if (model.design.transformer == TransformerKind::Affine) {
      Var s = tape.col(h, 2 * i);
      Var t = tape.col(h, 2 * i + 1);
      Var th = tape.tanh(tape.affine(s, 1.0 / kScaleClamp, 0.0));
      Var sc = tape.affine(th, kScaleClamp, 0.0);
      dc.esc = tape.exp(sc);
      dc.clampg = tape.affine(tape.square(th), -1.0, 1.0);
      dc.out_col = tape.add(tape.mul(dc.in_col, dc.esc), t);
      dc.ld = sc;
    } else {
      Var theta = tape.block_cols(h, i * P, P);
      spline_value_nodes(tape, dc.in_col, theta, &dc);
    }
    outs[i] = dc.out_col;
    lds[i] = dc.ld;
  }
  lb.out = tape.hcat(outs);
  lb.logd_sum = sum_vars(tape, lds);
  return lb;
}

// One sequential layer inversion (y -> z) on the tape; d conditioner passes,
// dimensions recovered in causal order.
LayerBuild build_invert_layer(Tape& tape, const FlowModel& model, int l,
                              Var y, const std::vector<Var>& w,
                              const std::vector<Var>& b) {
  const int d = model.dim();
  const int P = transformer_params_per_dim(model.design.transformer);
  const int n = static_cast<int>(tape.val(y).rows());
  LayerBuild lb;
  lb.dims.resize(d);
  lb.preacts_per_dim.resize(d);
  Var zero_col = tape.constant(Eigen::MatrixXd::Zero(n, 1));
  std::vector<Var> zcols(d);
  std::vector<char> defined(d, 0);
  std::vector<Var> lds(d);
  for (int i : model.graph().order) {
    std::vector<Var> parts(d);
    for (int k = 0; k < d; ++k) parts[k] = defined[k] ? zcols[k] : zero_col;
    Var zpart = tape.hcat(parts);
    Var h = mlp_tape_forward(tape, model.layers[l], zpart, w, b,
                             &lb.preacts_per_dim[i]);
    DimCache& dc = lb.dims[i];
    Var y_i = tape.col(y, i);
    dc.in_col = y_i;
    if (model.design.transformer == TransformerKind::Affine) {
      Var s = tape.col(h, 2 * i);
      Var t = tape.col(h, 2 * i + 1);
      Var th = tape.tanh(tape.affine(s, 1.0 / kScaleClamp, 0.0));
      Var sc = tape.affine(th, kScaleClamp, 0.0);
      dc.expnegsc = tape.exp(tape.affine(sc, -1.0, 0.0));
      dc.clampg = tape.affine(tape.square(th), -1.0, 1.0);
      dc.out_col = tape.mul(tape.sub(y_i, t), dc.expnegsc);
      dc.ld = sc;
    } else {
      Var theta = tape.block_cols(h, i * P, P);
      spline_inverse_nodes(tape, y_i, theta, &dc);
    }
    zcols[i] = dc.out_col;
    defined[i] = 1;
    lds[i] = dc.ld;
  }
  lb.out = tape.hcat(zcols);
  lb.logd_sum = sum_vars(tape, lds);
  return lb;
}

// Tangent of one parallel layer: T_out = dtau/dz * T + dtau/dtheta * Th.
Var tangent_parallel(Tape& tape, const FlowModel& model, int l,
                     const LayerBuild& lb, Var tin,
                     const std::vector<Var>& w) {
  const int d = model.dim();
  const int P = transformer_params_per_dim(model.design.transformer);
  Var th = mlp_tape_tangent(tape, model.layers[l], tin, w, lb.preacts);
  std::vector<Var> cols(d);
  for (int i = 0; i < d; ++i) {
    const DimCache& dc = lb.dims[i];
    Var ti = tape.col(tin, i);
    if (model.design.transformer == TransformerKind::Affine) {
      Var ts = tape.col(th, 2 * i);
      Var tt = tape.col(th, 2 * i + 1);
      Var term1 = tape.mul(ti, dc.esc);
      Var term2 =
          tape.mul(tape.mul(dc.in_col, dc.esc), tape.mul(dc.clampg, ts));
      cols[i] = tape.add(tape.add(term1, term2), tt);
    } else {
      Var thb = tape.block_cols(th, i * P, P);
      Var term1 = tape.mul(ti, tape.exp(dc.ld));  // tau' = e^{logd}
      Var term2 = weighted_cols(tape, thb, dc.sp->dy_dth);
      cols[i] = tape.add(term1, term2);
    }
  }
  return tape.hcat(cols);
}

// Tangent of one sequential inversion: dz = (dy - dtau/dtheta * Th) / tau',
// propagated in causal order so conditioner tangents see recovered inputs.
Var tangent_invert(Tape& tape, const FlowModel& model, int l,
                   const LayerBuild& lb, Var tin,
                   const std::vector<Var>& w) {
  const int d = model.dim();
  const int P = transformer_params_per_dim(model.design.transformer);
  const int n = static_cast<int>(tape.val(tin).rows());
  Var zero_col = tape.constant(Eigen::MatrixXd::Zero(n, 1));
  std::vector<Var> tz(d);
  std::vector<char> defined(d, 0);
  for (int i : model.graph().order) {
    std::vector<Var> parts(d);
    for (int k = 0; k < d; ++k) parts[k] = defined[k] ? tz[k] : zero_col;
    Var tpart = tape.hcat(parts);
    Var th =
        mlp_tape_tangent(tape, model.layers[l], tpart, w, lb.preacts_per_dim[i]);
    const DimCache& dc = lb.dims[i];
    Var ty = tape.col(tin, i);
    if (model.design.transformer == TransformerKind::Affine) {
      Var ts = tape.col(th, 2 * i);
      Var tt = tape.col(th, 2 * i + 1);
      Var term1 = tape.mul(dc.expnegsc, tape.sub(ty, tt));
      Var term2 = tape.mul(tape.mul(dc.out_col, dc.clampg), ts);
      tz[i] = tape.sub(term1, term2);
    } else {
      Var thb = tape.block_cols(th, i * P, P);
      Var theta_term = weighted_cols(tape, thb, dc.sp->dy_dth);
      Var inv_tau = tape.exp(tape.affine(dc.ld, -1.0, 0.0));
      tz[i] = tape.mul(tape.sub(ty, theta_term), inv_tau);
    }
    defined[i] = 1;
  }
  return tape.hcat(tz);
}

Var base_log_prob_rows(Tape& tape, const FlowModel& model, Var u, Var loc,
                       Var logscale) {
  Var x0 = tape.sub_rowvec(u, loc);
  Var sexp = tape.exp(tape.affine(logscale, -1.0, 0.0));  // 1 x d
  Var z = tape.mul_rowvec(x0, sexp);
  Var lp;
  if (model.design.base == BaseFamily::Normal) {
    lp = tape.affine(tape.square(z), -0.5, -0.5 * kLog2Pi);
  } else {
    lp = tape.affine(tape.abs(z), -1.0, -std::log(2.0));
  }
  return tape.sum_cols(tape.sub_rowvec(lp, logscale));
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (learning_rate <= 0.0)
    throw ConfigError("train: learning_rate must be > 0");
  if (plateau_decay <= 0.0 || plateau_decay >= 1.0)
    throw ConfigError("train: plateau_decay must be in (0, 1)");
  if (plateau_patience < 1)
    throw ConfigError("train: plateau_patience must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (lambda < 0.0) throw ConfigError("train: lambda must be >= 0");
}

double loss_mle(const FlowModel& model, const Eigen::MatrixXd& batch) {
  if (batch.rows() == 0) throw ShapeError("loss_mle: empty batch");
  double nll = -model.log_prob(batch).mean();
  if (!std::isfinite(nll))
    throw NonFiniteError("loss_mle: non-finite loss " + std::to_string(nll));
  return nll;
}

double jacobian_penalty(const FlowModel& model, const Eigen::MatrixXd& batch) {
  if (batch.rows() == 0) throw ShapeError("jacobian_penalty: empty batch");
  Eigen::MatrixXd mask = penalty_mask(model.graph());
  double acc = 0.0;
  for (Eigen::Index r = 0; r < batch.rows(); ++r)
    acc += masked_fro(model.jacobian_x(batch.row(r)), mask);
  return acc / static_cast<double>(batch.rows());
}

double loss_regularized(const FlowModel& model, const Eigen::MatrixXd& batch,
                        double lambda) {
  double nll = loss_mle(model, batch);
  double pen = jacobian_penalty(model, batch);
  double total = nll + lambda * pen;
  if (!std::isfinite(total))
    throw NonFiniteError("loss_regularized: non-finite loss");
  return total;
}

LossParts build_loss_tape(Tape& tape, const FlowModel& model,
                          const Eigen::MatrixXd& batch, bool with_penalty,
                          double lambda, std::vector<ad::Var>& leaves) {
  if (batch.cols() != model.dim())
    throw ShapeError("build_loss_tape: batch width mismatch");
  if (batch.rows() == 0) throw ShapeError("build_loss_tape: empty batch");
  const int d = model.dim();
  const int L = model.design.layers;

  // Bind parameter leaves in trainable_params order: per flow layer the MLP
  // weight/bias pairs, then optionally the base parameters.
  std::vector<std::vector<Var>> w(L), b(L);
  for (int l = 0; l < L; ++l) {
    for (int k = 0; k < model.layers[l].num_layers(); ++k) {
      Var wv = tape.leaf(model.layers[l].weights[k]);
      Var bv = tape.leaf(model.layers[l].biases[k]);
      w[l].push_back(wv);
      b[l].push_back(bv);
      leaves.push_back(wv);
      leaves.push_back(bv);
    }
  }
  Var loc, logscale;
  if (model.design.learnable_base) {
    loc = tape.leaf(model.base_loc);
    logscale = tape.leaf(model.base_logscale);
    leaves.push_back(loc);
    leaves.push_back(logscale);
  } else {
    loc = tape.constant(model.base_loc);
    logscale = tape.constant(model.base_logscale);
  }

  Var x = tape.constant(batch);
  std::vector<LayerBuild> builds;
  builds.reserve(L);
  Var u, logdet;
  if (model.design.direction == Direction::Abductive) {
    Var z = x;
    std::vector<Var> lds;
    for (int l = 0; l < L; ++l) {
      builds.push_back(build_parallel_layer(tape, model, l, z, w[l], b[l]));
      z = builds.back().out;
      lds.push_back(builds.back().logd_sum);
    }
    u = z;
    logdet = sum_vars(tape, lds);
  } else {
    Var z = x;
    std::vector<Var> lds;
    builds.resize(L);
    for (int l = L - 1; l >= 0; --l) {
      builds[l] = build_invert_layer(tape, model, l, z, w[l], b[l]);
      z = builds[l].out;
      lds.push_back(builds[l].logd_sum);
    }
    u = z;
    logdet = tape.affine(sum_vars(tape, lds), -1.0, 0.0);
  }

  Var ll = tape.add(base_log_prob_rows(tape, model, u, loc, logscale), logdet);
  Var nll = tape.affine(tape.mean_all(ll), -1.0, 0.0);

  LossParts parts;
  parts.nll = tape.val(nll)(0, 0);
  if (!std::isfinite(parts.nll))
    throw NonFiniteError("build_loss_tape: non-finite NLL " +
                         std::to_string(parts.nll));
  if (!with_penalty) {
    parts.loss = nll;
    return parts;
  }

  // Penalty: mean_r || (du/dx)_r o mask ||_F via tangent streams, one per
  // input dimension.
  const Eigen::MatrixXd mask = penalty_mask(model.graph());
  const int n = static_cast<int>(batch.rows());
  Var fro;  // n x 1 accumulated squared masked tangents
  bool have = false;
  for (int j = 0; j < d; ++j) {
    if (mask.col(j).maxCoeff() == 0.0) continue;
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, d);
    e.col(j).setOnes();
    Var t = tape.constant(e);
    if (model.design.direction == Direction::Abductive) {
      for (int l = 0; l < L; ++l)
        t = tangent_parallel(tape, model, l, builds[l], t, w[l]);
    } else {
      for (int l = L - 1; l >= 0; --l)
        t = tangent_invert(tape, model, l, builds[l], t, w[l]);
    }
    Var wsq = tape.scale_cols(tape.square(t),
                              mask.col(j).transpose());
    Var contrib = tape.sum_cols(wsq);
    fro = have ? tape.add(fro, contrib) : contrib;
    have = true;
  }
  Var penalty;
  if (have) {
    penalty = tape.mean_all(tape.sqrt0(fro));
  } else {
    penalty = tape.constant(Eigen::MatrixXd::Zero(1, 1));
  }
  parts.penalty = tape.val(penalty)(0, 0);
  if (!std::isfinite(parts.penalty))
    throw NonFiniteError("build_loss_tape: non-finite penalty");
  parts.loss = tape.add(nll, tape.affine(penalty, lambda, 0.0));
  return parts;
}

// --- fit ----------------------------------------------------------------------

namespace {

struct AdamState {
  std::vector<Eigen::MatrixXd> m, v;
  long t = 0;
};

std::vector<Eigen::MatrixXd> snapshot(const std::vector<ParamRef>& refs) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back(*r.value);
  return out;
}

void restore(const std::vector<ParamRef>& refs,
             const std::vector<Eigen::MatrixXd>& snap) {
  for (size_t i = 0; i < refs.size(); ++i) *refs[i].value = snap[i];
}

}  // namespace

TrainHistory fit(FlowModel& model, const Eigen::MatrixXd& train,
                 const Eigen::MatrixXd& val, const TrainConfig& config) {
  config.validate();
  if (train.cols() != model.dim())
    throw ShapeError("fit: training data width != model dimension");
  if (val.rows() > 0 && val.cols() != model.dim())
    throw ShapeError("fit: validation data width != model dimension");

  TrainHistory hist;
  if (train.rows() > 0) {
    model.plaus_range.resize(2, model.dim());
    for (int i = 0; i < model.dim(); ++i) {
      model.plaus_range(0, i) = quantile(train.col(i), 0.001);
      model.plaus_range(1, i) = quantile(train.col(i), 0.999);
    }
  }
  if (config.epochs == 0) return hist;
  if (train.rows() == 0) throw ShapeError("fit: empty training set");

  std::vector<ParamRef> refs = model.trainable_params();
  AdamState adam;
  adam.m.reserve(refs.size());
  adam.v.reserve(refs.size());
  for (const auto& r : refs) {
    adam.m.push_back(Eigen::MatrixXd::Zero(r.value->rows(), r.value->cols()));
    adam.v.push_back(Eigen::MatrixXd::Zero(r.value->rows(), r.value->cols()));
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  std::vector<Eigen::MatrixXd> best = snapshot(refs);
  double best_val = std::numeric_limits<double>::infinity();
  double lr = config.learning_rate;
  int stall = 0;
  const int n = static_cast<int>(train.rows());
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));

  try {
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      auto t0 = std::chrono::steady_clock::now();
      std::vector<int> perm = shuffle_rng.permutation(n);
      double nll_acc = 0.0, reg_acc = 0.0;
      int batches = 0;
      for (int start = 0; start < n; start += config.batch_size) {
        const int len = std::min(config.batch_size, n - start);
        Eigen::MatrixXd xb(len, model.dim());
        for (int r = 0; r < len; ++r) xb.row(r) = train.row(perm[start + r]);

        Tape tape;
        std::vector<Var> leaves;
        LossParts parts = build_loss_tape(tape, model, xb,
                                          config.regularizer_on,
                                          config.lambda, leaves);
        tape.backward(parts.loss);
        adam.t += 1;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam.t));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam.t));
        for (size_t k = 0; k < refs.size(); ++k) {
          Eigen::MatrixXd g = tape.grad_of(leaves[k]);
          if (!finite_all(g))
            throw NonFiniteError("fit: non-finite gradient for " +
                                 refs[k].name);
          adam.m[k] = kBeta1 * adam.m[k] + (1.0 - kBeta1) * g;
          adam.v[k] =
              (kBeta2 * adam.v[k].array() + (1.0 - kBeta2) * g.array().square())
                  .matrix();
          Eigen::ArrayXXd mhat = adam.m[k].array() / c1;
          Eigen::ArrayXXd vhat = adam.v[k].array() / c2;
          refs[k].value->array() -= lr * mhat / (vhat.sqrt() + kEps);
          if (!finite_all(*refs[k].value))
            throw NonFiniteError("fit: non-finite parameter " + refs[k].name);
        }
        nll_acc += parts.nll;
        reg_acc += parts.penalty;
        ++batches;
      }
      const double train_nll = nll_acc / batches;
      const double vnll =
          val.rows() > 0 ? -model.log_prob(val).mean() : train_nll;
      if (!std::isfinite(vnll))
        throw NonFiniteError("fit: non-finite validation loss");
      auto t1 = std::chrono::steady_clock::now();
      hist.epoch.push_back(epoch);
      hist.train_nll.push_back(train_nll);
      hist.val_nll.push_back(vnll);
      hist.reg.push_back(reg_acc / batches);
      hist.lr.push_back(lr);
      hist.epoch_us.push_back(
          std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0)
              .count());
      if (vnll < best_val) {
        best_val = vnll;
        best = snapshot(refs);
        stall = 0;
      } else if (++stall >= config.plateau_patience) {
        lr *= config.plateau_decay;
        stall = 0;
      }
    }
  } catch (const NonFiniteError& e) {
    hist.aborted = true;
    hist.abort_reason = e.what();
  }
  restore(refs, best);
  return hist;
}

void TrainHistory::write_csv(const std::string& path,
                             bool include_timing) const {
  std::ostringstream out;
  out << "epoch,train_nll,val_nll,reg,lr";
  if (include_timing) out << ",epoch_us";
  out << "\n";
  out.precision(17);
  for (std::size_t i = 0; i < epoch.size(); ++i) {
    out << epoch[i] << ',' << train_nll[i] << ',' << val_nll[i] << ','
        << reg[i] << ',' << lr[i];
    if (include_timing) out << ',' << epoch_us[i];
    out << "\n";
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw FormatError("cannot write " + tmp);
    f << out.str();
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("cannot rename " + tmp + " to " + path);
}

// --- checkpointing -----------------------------------------------------------

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data(m.size());
  for (Eigen::Index c = 0, k = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r, ++k) data[k] = m(r, c);
  j["data"] = data;
  return j;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") ||
      !j.contains("data"))
    throw FormatError("checkpoint: malformed matrix entry");
  Eigen::Index rows = j["rows"].get<Eigen::Index>();
  Eigen::Index cols = j["cols"].get<Eigen::Index>();
  const auto& data = j["data"];
  if (!data.is_array() ||
      static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw FormatError("checkpoint: matrix data size mismatch");
  Eigen::MatrixXd m(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r, ++k) m(r, c) = data[k].get<double>();
  return m;
}

}  // namespace

void save_checkpoint(const FlowModel& model, const TrainHistory& history,
                     const std::string& path) {
  json j;
  j["format"] = "cnflow-checkpoint";
  j["version"] = 1;
  json design;
  design["direction"] = to_string(model.design.direction);
  design["mask"] = to_string(model.design.mask);
  design["layers"] = model.design.layers;
  design["transformer"] = to_string(model.design.transformer);
  design["base"] = to_string(model.design.base);
  design["learnable_base"] = model.design.learnable_base;
  design["hidden"] = model.design.hidden;
  j["design"] = design;
  std::vector<std::vector<int>> adj(model.dim(),
                                    std::vector<int>(model.dim()));
  for (int r = 0; r < model.dim(); ++r)
    for (int c = 0; c < model.dim(); ++c)
      adj[r][c] = model.graph().adjacency(r, c);
  j["adjacency"] = adj;
  j["base_loc"] = matrix_to_json(model.base_loc);
  j["base_logscale"] = matrix_to_json(model.base_logscale);
  if (model.plaus_range.size() > 0)
    j["plaus_range"] = matrix_to_json(model.plaus_range);
  json params;
  for (size_t l = 0; l < model.layers.size(); ++l)
    for (int k = 0; k < model.layers[l].num_layers(); ++k) {
      params["layer" + std::to_string(l) + ".w" + std::to_string(k)] =
          matrix_to_json(model.layers[l].weights[k]);
      params["layer" + std::to_string(l) + ".b" + std::to_string(k)] =
          matrix_to_json(model.layers[l].biases[k]);
    }
  j["params"] = params;
  json h;
  h["epoch"] = history.epoch;
  h["train_nll"] = history.train_nll;
  h["val_nll"] = history.val_nll;
  h["reg"] = history.reg;
  h["lr"] = history.lr;
  h["epoch_us"] = history.epoch_us;
  h["aborted"] = history.aborted;
  h["abort_reason"] = history.abort_reason;
  j["history"] = h;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw FormatError("cannot write " + tmp);
    f << j.dump(1) << "\n";
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("cannot rename " + tmp + " to " + path);
}

FlowModel load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open checkpoint " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint parse error: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format") || !j["format"].is_string() ||
      j["format"].get<std::string>() != "cnflow-checkpoint")
    throw FormatError("not a checkpoint file: " + path);
  if (!j.contains("version") || !j["version"].is_number_integer())
    throw VersionError("checkpoint missing integer version field");
  if (j["version"].get<int>() != 1)
    throw VersionError("unsupported checkpoint version " +
                       j["version"].dump());
  try {
    DesignChoice design;
    const json& dj = j.at("design");
    design.direction = direction_from_string(dj.at("direction"));
    design.mask = mask_from_string(dj.at("mask"));
    design.layers = dj.at("layers").get<int>();
    design.transformer = transformer_from_string(dj.at("transformer"));
    design.base = base_from_string(dj.at("base"));
    design.learnable_base = dj.at("learnable_base").get<bool>();
    design.hidden = dj.at("hidden").get<std::vector<int>>();

    const auto adj = j.at("adjacency").get<std::vector<std::vector<int>>>();
    const int d = static_cast<int>(adj.size());
    Eigen::MatrixXi a(d, d);
    for (int r = 0; r < d; ++r) {
      if (static_cast<int>(adj[r].size()) != d)
        throw FormatError("checkpoint adjacency is not square");
      for (int c = 0; c < d; ++c) a(r, c) = adj[r][c];
    }
    FlowModel model = build_flow(design, validate_dag(a), 0);
    model.base_loc = matrix_from_json(j.at("base_loc"));
    model.base_logscale = matrix_from_json(j.at("base_logscale"));
    if (model.base_loc.cols() != d || model.base_logscale.cols() != d)
      throw FormatError("checkpoint base parameter width mismatch");
    if (j.contains("plaus_range")) {
      model.plaus_range = matrix_from_json(j["plaus_range"]);
      if (model.plaus_range.cols() != d)
        throw FormatError("checkpoint plaus_range width mismatch");
    }
    const json& params = j.at("params");
    for (size_t l = 0; l < model.layers.size(); ++l)
      for (int k = 0; k < model.layers[l].num_layers(); ++k) {
        const std::string wn =
            "layer" + std::to_string(l) + ".w" + std::to_string(k);
        const std::string bn =
            "layer" + std::to_string(l) + ".b" + std::to_string(k);
        if (!params.contains(wn) || !params.contains(bn))
          throw FormatError("checkpoint missing parameter " + wn);
        Eigen::MatrixXd wm = matrix_from_json(params[wn]);
        Eigen::MatrixXd bm = matrix_from_json(params[bn]);
        if (wm.rows() != model.layers[l].weights[k].rows() ||
            wm.cols() != model.layers[l].weights[k].cols() ||
            bm.rows() != model.layers[l].biases[k].rows() ||
            bm.cols() != model.layers[l].biases[k].cols())
          throw FormatError("checkpoint parameter shape mismatch for " + wn);
        model.layers[l].weights[k] = std::move(wm);
        model.layers[l].biases[k] = std::move(bm);
      }
    return model;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint field error: ") + e.what());
  }
}

}  // namespace cnflow
