#pragma once

#include <vector>

#include <Eigen/Dense>

#include "cnflow/rng.hpp"
#include "cnflow/tape.hpp"

namespace cnflow {

// Shared masked conditioner trunk: one MLP mapping all d inputs to
// per-dimension parameter groups (d * params_per_dim outputs, grouped by
// dimension), with binary masks on every weight matrix guaranteeing that
// the outputs of group i depend only on inputs j with allowed(i, j) = 1.
//
// Hidden units carry the allowed-input set of the output dimension they are
// assigned to (round-robin); a connection u -> v exists iff set(u) is a
// subset of set(v). Output group i accepts units whose set is contained in
// allowed-row i. This is sound for arbitrary DAG masks (for nested ordering
// masks it reduces to the classic autoregressive construction) and keeps a
// single parallel pass per evaluation. Units assigned to an empty row carry
// bias only, which gives root dimensions learnable constant parameters.
struct MaskedMlp {
  std::vector<Eigen::MatrixXd> weights;  // layer l: (width_{l+1} x width_l)
  std::vector<Eigen::MatrixXd> biases;   // layer l: (1 x width_{l+1})
  std::vector<Eigen::MatrixXd> masks;    // same shapes as weights
  int in_dim = 0;
  int out_dim = 0;
  int params_per_dim = 0;

  int num_layers() const { return static_cast<int>(weights.size()); }
  long parameter_count() const;

  // Batch forward pass (rows = samples); ELU between layers, linear output.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

  // Exact input-output Jacobian (out_dim x in_dim) at a single point.
  // Entries outside the masked closure are exact zeros.
  Eigen::MatrixXd jacobian(const Eigen::RowVectorXd& x) const;
};

// Builds masks and initial weights. `allowed` is (d x d); row i lists the
// inputs output group i may read. Hidden layers get a deterministic uniform
// Glorot init from `rng`; the final layer is zero-initialized so the flow
// starts at the identity. Requires d <= 64.
MaskedMlp make_masked_mlp(const Eigen::MatrixXi& allowed,
                          const std::vector<int>& hidden, int params_per_dim,
                          Rng& rng);

// Tape builders used by the trainer. `w` / `b` are leaf nodes bound to the
// MLP's weights for this step. Pre-activation nodes are appended to
// `preacts` (one per hidden layer) for later tangent passes.
ad::Var mlp_tape_forward(ad::Tape& tape, const MaskedMlp& mlp, ad::Var x,
                         const std::vector<ad::Var>& w,
                         const std::vector<ad::Var>& b,
                         std::vector<ad::Var>* preacts);

// Propagates a tangent (directional derivative of the input) through the
// same pass; `preacts` must come from the matching mlp_tape_forward call.
ad::Var mlp_tape_tangent(ad::Tape& tape, const MaskedMlp& mlp, ad::Var tx,
                         const std::vector<ad::Var>& w,
                         const std::vector<ad::Var>& preacts);

}  // namespace cnflow
