#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cnflow/graph.hpp"

namespace cnflow {

// Exogenous noise family for a structural causal model. All nodes of one
// model share the family: standard Normal or standard Uniform on (0, 1).
enum class NoiseKind { Normal, Uniform };

// Structural causal model with analytic mechanisms. Each node i has
//   x_i = f_i(x_parents, u_i)
// together with the analytic inverse u_i = f_i^-1(x) and the log-derivative
// log |df_i/du_i| needed for exact densities.
struct ScmSpec {
  std::string name;
  CausalGraph graph;
  NoiseKind noise = NoiseKind::Normal;

  // equation[i](x, u_i): reads only the parents of i from x.
  std::vector<std::function<double(const Eigen::VectorXd&, double)>> equation;
  // inverse[i](x): recovers u_i from x_i and the parents of i.
  // Throws DomainError where the analytic inverse is undefined.
  std::vector<std::function<double(const Eigen::VectorXd&)>> inverse;
  // log_du[i](x, u_i): log |df_i/du_i| at the given point.
  std::vector<std::function<double(const Eigen::VectorXd&, double)>> log_du;

  int d() const { return graph.d(); }
};

// Names of the shipped models.
std::vector<std::string> scm_names();

// Looks a model up by name; throws UnknownSCMError for anything else.
ScmSpec get_scm(const std::string& name);

// Draws exogenous noise (n x d) from the model's noise family.
Eigen::MatrixXd sample_noise(const ScmSpec& scm, int n, std::uint64_t seed);

// Solves x = f(x, u) row by row in causal order.
Eigen::MatrixXd solve_recursive(const ScmSpec& scm, const Eigen::MatrixXd& u);

// Observational samples: noise draw plus recursive solve.
Eigen::MatrixXd sample_scm(const ScmSpec& scm, int n, std::uint64_t seed);

// Exact abduction u = f^-1(x), rowwise.
Eigen::MatrixXd abduct_true(const ScmSpec& scm, const Eigen::MatrixXd& x);

// Interventional samples from do(x_node = value) by graph surgery.
Eigen::MatrixXd intervene_true(const ScmSpec& scm, int node, double value,
                               int n, std::uint64_t seed);

// Counterfactuals of given factual rows under do(x_node = value): abduct the
// noise, clamp the node, re-solve.
Eigen::MatrixXd counterfactual_true(const ScmSpec& scm,
                                    const Eigen::MatrixXd& factual, int node,
                                    double value);

// E[x | do(x_node=a)] - E[x | do(x_node=b)] by Monte Carlo with common
// random numbers (the same noise draw in both arms).
Eigen::VectorXd ate_true(const ScmSpec& scm, int node, double a, double b,
                         int n, std::uint64_t seed);

// Exact observational log-density at one point via change of variables.
double log_prob_true(const ScmSpec& scm, const Eigen::VectorXd& x);

}  // namespace cnflow
