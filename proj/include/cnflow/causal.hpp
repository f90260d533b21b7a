#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "cnflow/errors.hpp"
#include "cnflow/flow.hpp"

namespace cnflow {

// Single-node hard intervention do(x_target = value), sampled n times.
struct InterventionQuery {
  int target = 0;
  double value = 0.0;
  int n = 1;
  std::uint64_t seed = 0;
};

// "What would this observed row have been under do(x_target = value)?"
struct CounterfactualQuery {
  Eigen::RowVectorXd factual;
  int target = 0;
  double value = 0.0;
};

// Interventional sampling on the exogenous distribution: sample u, map to x,
// pin x_target to the value, re-abduct the pinned coordinate and regenerate.
// Appends an ImplausibleValue warning when the value falls outside the
// model's plausible range (if known). Throws ConfigError on an out-of-range
// target, non-finite value, or n < 1.
Eigen::MatrixXd intervene(const FlowLike& model, const InterventionQuery& query,
                          WarningList* warnings = nullptr);

// Pointwise counterfactual via abduction of the factual row; same guards.
Eigen::RowVectorXd counterfactual(const FlowLike& model,
                                  const CounterfactualQuery& query,
                                  WarningList* warnings = nullptr);

// Batched counterfactual: one row of output per factual row, all under the
// same do(x_target = value).
Eigen::MatrixXd counterfactual(const FlowLike& model,
                               const Eigen::MatrixXd& factuals, int target,
                               double value, WarningList* warnings = nullptr);

// E[x | do(target=a)] - E[x | do(target=b)] with common random numbers
// across the two arms.
Eigen::RowVectorXd ate(const FlowLike& model, int target, double a, double b,
                       int n, std::uint64_t seed);

// Batch-mean Frobenius norm of the x -> u Jacobian restricted to the entries
// causal consistency requires to vanish (the diagonal and direct parents are
// exempt). A trained model scores 0 iff its abduction map never reads
// non-parents.
double consistency_score(const FlowLike& model, const Eigen::MatrixXd& data,
                         const CausalGraph& graph);
// Same, against the model's own graph.
double consistency_score(const FlowLike& model, const Eigen::MatrixXd& data);

}  // namespace cnflow
