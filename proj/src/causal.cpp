#include "cnflow/causal.hpp"

#include <cmath>
#include <string>

namespace cnflow {

namespace {

void check_target(const FlowLike& model, int target, const char* op) {
  if (target < 0 || target >= model.dim())
    throw ConfigError(std::string(op) + ": target " + std::to_string(target) +
                      " out of range for d=" + std::to_string(model.dim()));
}

void plausibility_guard(const FlowLike& model, int target, double value,
                        WarningList* warnings) {
  const Eigen::MatrixXd range = model.plausible_range();
  if (range.rows() != 2 || target >= range.cols()) return;
  const double lo = range(0, target);
  const double hi = range(1, target);
  if (value < lo || value > hi)
    warn(warnings, "ImplausibleValue",
         "intervention value " + std::to_string(value) + " for x" +
             std::to_string(target + 1) + " lies outside the plausible range [" +
             std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

}  // namespace

Eigen::MatrixXd intervene(const FlowLike& model, const InterventionQuery& query,
                          WarningList* warnings) {
  check_target(model, query.target, "intervene");
  if (!std::isfinite(query.value))
    throw ConfigError("intervene: value must be finite");
  if (query.n < 1) throw ConfigError("intervene: n must be >= 1");
  plausibility_guard(model, query.target, query.value, warnings);

  Eigen::MatrixXd u = model.sample_base(query.n, query.seed);
  Eigen::MatrixXd x = model.inverse(u);
  x.col(query.target).setConstant(query.value);
  u.col(query.target) = model.forward(x).u.col(query.target);
  return model.inverse(u);
}

Eigen::RowVectorXd counterfactual(const FlowLike& model,
                                  const CounterfactualQuery& query,
                                  WarningList* warnings) {
  check_target(model, query.target, "counterfactual");
  if (query.factual.size() != model.dim())
    throw ShapeError("counterfactual: factual has " +
                     std::to_string(query.factual.size()) +
                     " entries, model has d=" + std::to_string(model.dim()));
  if (!query.factual.allFinite())
    throw ConfigError("counterfactual: factual must be finite");
  if (!std::isfinite(query.value))
    throw ConfigError("counterfactual: value must be finite");
  plausibility_guard(model, query.target, query.value, warnings);

  Eigen::MatrixXd x = query.factual;
  Eigen::MatrixXd u = model.forward(x).u;
  x(0, query.target) = query.value;
  u(0, query.target) = model.forward(x).u(0, query.target);
  return model.inverse(u).row(0);
}

Eigen::MatrixXd counterfactual(const FlowLike& model,
                               const Eigen::MatrixXd& factuals, int target,
                               double value, WarningList* warnings) {
  check_target(model, target, "counterfactual");
  if (factuals.cols() != model.dim())
    throw ShapeError("counterfactual: factuals have " +
                     std::to_string(factuals.cols()) +
                     " columns, model has d=" + std::to_string(model.dim()));
  if (factuals.rows() == 0)
    throw ShapeError("counterfactual: no factual rows");
  if (!factuals.allFinite())
    throw ConfigError("counterfactual: factuals must be finite");
  if (!std::isfinite(value))
    throw ConfigError("counterfactual: value must be finite");
  plausibility_guard(model, target, value, warnings);

  Eigen::MatrixXd x = factuals;
  Eigen::MatrixXd u = model.forward(x).u;
  x.col(target).setConstant(value);
  u.col(target) = model.forward(x).u.col(target);
  return model.inverse(u);
}

Eigen::RowVectorXd ate(const FlowLike& model, int target, double a, double b,
                       int n, std::uint64_t seed) {
  const Eigen::MatrixXd xa = intervene(model, {target, a, n, seed}, nullptr);
  const Eigen::MatrixXd xb = intervene(model, {target, b, n, seed}, nullptr);
  return xa.colwise().mean() - xb.colwise().mean();
}

double consistency_score(const FlowLike& model, const Eigen::MatrixXd& data,
                         const CausalGraph& graph) {
  if (data.cols() != model.dim())
    throw ShapeError("consistency_score: data width != model dimension");
  if (data.rows() == 0)
    throw ShapeError("consistency_score: empty data");
  const Eigen::MatrixXd mask = penalty_mask(graph);
  double acc = 0.0;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    const Eigen::MatrixXd jac = model.jacobian_x(data.row(r));
    acc += std::sqrt((jac.array() * mask.array()).square().sum());
  }
  return acc / static_cast<double>(data.rows());
}

double consistency_score(const FlowLike& model, const Eigen::MatrixXd& data) {
  return consistency_score(model, data, model.graph());
}

}  // namespace cnflow
