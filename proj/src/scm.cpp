#include "cnflow/scm.hpp"

#include <cmath>
#include <limits>

#include "cnflow/errors.hpp"
#include "cnflow/math.hpp"
#include "cnflow/rng.hpp"

namespace cnflow {

namespace {

using Vec = Eigen::VectorXd;

Eigen::MatrixXi adjacency_from_edges(
    int d, const std::vector<std::pair<int, int>>& edges) {
  Eigen::MatrixXi a = Eigen::MatrixXi::Zero(d, d);
  for (auto [cause, effect] : edges) a(effect, cause) = 1;
  return a;
}

double checked_softplus_inv(double y, const char* who) {
  if (!(y > 0.0))
    throw DomainError(std::string(who) +
                      ": analytic inverse undefined (softplus argument " +
                      std::to_string(y) + " <= 0)");
  return softplus_inv(y);
}

double checked_atanh(double z, const char* who) {
  if (!(z > -1.0 && z < 1.0))
    throw DomainError(std::string(who) +
                      ": analytic inverse undefined (atanh argument " +
                      std::to_string(z) + " outside (-1, 1))");
  return std::atanh(z);
}

constexpr double kSqrt10 = 3.1622776601683793319988935444327;
constexpr double kSqrt2 = 1.4142135623730950488016887242097;

ScmSpec make_chain3_lin() {
  ScmSpec s;
  s.name = "chain3-lin";
  s.graph = validate_dag(adjacency_from_edges(3, {{0, 1}, {1, 2}}));
  s.equation = {
      [](const Vec&, double u) { return u; },
      [](const Vec& x, double u) { return 10.0 * x(0) - u; },
      [](const Vec& x, double u) { return 0.25 * x(1) + 2.0 * u; },
  };
  s.inverse = {
      [](const Vec& x) { return x(0); },
      [](const Vec& x) { return 10.0 * x(0) - x(1); },
      [](const Vec& x) { return (x(2) - 0.25 * x(1)) / 2.0; },
  };
  s.log_du = {
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return std::log(2.0); },
  };
  return s;
}

ScmSpec make_chain3_nlin() {
  ScmSpec s;
  s.name = "chain3-nlin";
  s.graph = validate_dag(adjacency_from_edges(3, {{0, 1}, {1, 2}}));
  s.equation = {
      [](const Vec&, double u) { return u; },
      [](const Vec& x, double u) { return std::exp(x(0) / 2.0) + u / 4.0; },
      [](const Vec& x, double u) { return std::pow(x(1) - 5.0, 3) / 15.0 + u; },
  };
  s.inverse = {
      [](const Vec& x) { return x(0); },
      [](const Vec& x) { return 4.0 * (x(1) - std::exp(x(0) / 2.0)); },
      [](const Vec& x) { return x(2) - std::pow(x(1) - 5.0, 3) / 15.0; },
  };
  s.log_du = {
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return std::log(0.25); },
      [](const Vec&, double) { return 0.0; },
  };
  return s;
}

ScmSpec make_chain4_lin() {
  ScmSpec s;
  s.name = "chain4-lin";
  s.graph = validate_dag(adjacency_from_edges(4, {{0, 1}, {1, 2}, {2, 3}}));
  s.equation = {
      [](const Vec&, double u) { return u; },
      [](const Vec& x, double u) { return 5.0 * x(0) - u; },
      [](const Vec& x, double u) { return -0.5 * x(1) - 1.5 * u; },
      [](const Vec& x, double u) { return x(2) + u; },
  };
  s.inverse = {
      [](const Vec& x) { return x(0); },
      [](const Vec& x) { return 5.0 * x(0) - x(1); },
      [](const Vec& x) { return -(x(2) + 0.5 * x(1)) / 1.5; },
      [](const Vec& x) { return x(3) - x(2); },
  };
  s.log_du = {
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return std::log(1.5); },
      [](const Vec&, double) { return 0.0; },
  };
  return s;
}

ScmSpec make_chain5_lin() {
  ScmSpec s;
  s.name = "chain5-lin";
  s.graph =
      validate_dag(adjacency_from_edges(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}));
  s.equation = {
      [](const Vec&, double u) { return u; },
      [](const Vec& x, double u) { return 10.0 * x(0) - u; },
      [](const Vec& x, double u) { return 0.25 * x(1) + 2.0 * u; },
      [](const Vec& x, double u) { return x(2) + u; },
      [](const Vec& x, double u) { return -x(3) + u; },
  };
  s.inverse = {
      [](const Vec& x) { return x(0); },
      [](const Vec& x) { return 10.0 * x(0) - x(1); },
      [](const Vec& x) { return (x(2) - 0.25 * x(1)) / 2.0; },
      [](const Vec& x) { return x(3) - x(2); },
      [](const Vec& x) { return x(4) + x(3); },
  };
  s.log_du = {
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return std::log(2.0); },
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return 0.0; },
  };
  return s;
}

ScmSpec make_collider_lin() {
  ScmSpec s;
  s.name = "collider-lin";
  s.graph = validate_dag(adjacency_from_edges(3, {{0, 2}, {1, 2}}));
  s.equation = {
      [](const Vec&, double u) { return u; },
      [](const Vec&, double u) { return 2.0 - u; },
      [](const Vec& x, double u) {
        return 0.25 * x(1) - 0.5 * x(0) + 0.5 * u;
      },
  };
  s.inverse = {
      [](const Vec& x) { return x(0); },
      [](const Vec& x) { return 2.0 - x(1); },
      [](const Vec& x) { return 2.0 * (x(2) - 0.25 * x(1) + 0.5 * x(0)); },
  };
  s.log_du = {
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return std::log(0.5); },
  };
  return s;
}

ScmSpec make_fork_lin() {
  ScmSpec s;
  s.name = "fork-lin";
  s.graph = validate_dag(adjacency_from_edges(4, {{0, 2}, {1, 2}, {2, 3}}));
  s.equation = {
      [](const Vec&, double u) { return u; },
      [](const Vec&, double u) { return 2.0 - u; },
      [](const Vec& x, double u) {
        return 0.25 * x(1) - 1.5 * x(0) + 0.5 * u;
      },
      [](const Vec& x, double u) { return x(2) + 0.25 * u; },
  };
  s.inverse = {
      [](const Vec& x) { return x(0); },
      [](const Vec& x) { return 2.0 - x(1); },
      [](const Vec& x) { return 2.0 * (x(2) - 0.25 * x(1) + 1.5 * x(0)); },
      [](const Vec& x) { return 4.0 * (x(3) - x(2)); },
  };
  s.log_du = {
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return std::log(0.5); },
      [](const Vec&, double) { return std::log(0.25); },
  };
  return s;
}

ScmSpec make_fork_nlin() {
  ScmSpec s;
  s.name = "fork-nlin";
  s.graph = validate_dag(adjacency_from_edges(4, {{0, 2}, {1, 2}, {2, 3}}));
  s.equation = {
      [](const Vec&, double u) { return u; },
      [](const Vec&, double u) { return u; },
      [](const Vec& x, double u) {
        return 4.0 * logistic(x(0) + x(1)) - x(1) * x(1) + 0.5 * u;
      },
      [](const Vec& x, double u) {
        return 20.0 * logistic(x(2) - 0.5 * x(2) * x(2)) + u;
      },
  };
  s.inverse = {
      [](const Vec& x) { return x(0); },
      [](const Vec& x) { return x(1); },
      [](const Vec& x) {
        return 2.0 * (x(2) - 4.0 * logistic(x(0) + x(1)) + x(1) * x(1));
      },
      [](const Vec& x) {
        return x(3) - 20.0 * logistic(x(2) - 0.5 * x(2) * x(2));
      },
  };
  s.log_du = {
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return std::log(0.5); },
      [](const Vec&, double) { return 0.0; },
  };
  return s;
}

// Shared branch mechanism of the large backdoor model.
double largebd_link(double a, double b) {
  return softplus(a + 1.0) + softplus(0.5 + b) - 3.0;
}

ScmSpec make_largebd_nlin() {
  ScmSpec s;
  s.name = "largebd-nlin";
  s.noise = NoiseKind::Uniform;
  s.graph = validate_dag(adjacency_from_edges(
      9, {{0, 1}, {0, 2}, {1, 3}, {2, 4}, {3, 5}, {4, 6}, {5, 7}, {6, 8},
          {7, 8}}));
  auto loc9 = [](const Vec& x) {
    return -softplus((1.3 * x(6) + x(7)) / 3.0 + 1.0) + 2.0;
  };
  s.equation = {
      [](const Vec&, double u) { return softplus(1.8 * u) - 1.0; },
      [](const Vec& x, double u) {
        return 0.25 * u + 1.5 * largebd_link(x(0), 0.0);
      },
      [](const Vec& x, double u) { return largebd_link(x(0), u); },
      [](const Vec& x, double u) { return largebd_link(x(1), u); },
      [](const Vec& x, double u) { return largebd_link(x(2), u); },
      [](const Vec& x, double u) { return largebd_link(x(3), u); },
      [](const Vec& x, double u) { return largebd_link(x(4), u); },
      [](const Vec& x, double u) {
        return 0.3 * u + softplus(x(5) + 1.0) - 1.0;
      },
      [loc9](const Vec& x, double u) {
        return laplace_quantile(u, loc9(x), 0.6);
      },
  };
  auto inv_link = [](double out, double parent, const char* who) {
    return checked_softplus_inv(out + 3.0 - softplus(parent + 1.0), who) - 0.5;
  };
  s.inverse = {
      [](const Vec& x) {
        return checked_softplus_inv(x(0) + 1.0, "largebd-nlin x1") / 1.8;
      },
      [](const Vec& x) {
        return 4.0 * (x(1) - 1.5 * largebd_link(x(0), 0.0));
      },
      [inv_link](const Vec& x) {
        return inv_link(x(2), x(0), "largebd-nlin x3");
      },
      [inv_link](const Vec& x) {
        return inv_link(x(3), x(1), "largebd-nlin x4");
      },
      [inv_link](const Vec& x) {
        return inv_link(x(4), x(2), "largebd-nlin x5");
      },
      [inv_link](const Vec& x) {
        return inv_link(x(5), x(3), "largebd-nlin x6");
      },
      [inv_link](const Vec& x) {
        return inv_link(x(6), x(4), "largebd-nlin x7");
      },
      [](const Vec& x) {
        return (x(7) - softplus(x(5) + 1.0) + 1.0) / 0.3;
      },
      [loc9](const Vec& x) { return laplace_cdf(x(8), loc9(x), 0.6); },
  };
  auto link_log_du = [](const Vec&, double u) {
    return std::log(logistic(0.5 + u));
  };
  s.log_du = {
      [](const Vec&, double u) {
        return std::log(1.8 * logistic(1.8 * u));
      },
      [](const Vec&, double) { return std::log(0.25); },
      link_log_du,
      link_log_du,
      link_log_du,
      link_log_du,
      link_log_du,
      [](const Vec&, double) { return std::log(0.3); },
      [](const Vec&, double u) {
        if (!(u > 0.0 && u < 1.0))
          throw DomainError("largebd-nlin x9: quantile derivative needs u in "
                            "(0, 1)");
        return std::log(laplace_quantile_dp(u, 0.6));
      },
  };
  return s;
}

ScmSpec make_simpson_nlin() {
  ScmSpec s;
  s.name = "simpson-nlin";
  s.graph =
      validate_dag(adjacency_from_edges(4, {{0, 1}, {0, 2}, {1, 2}, {2, 3}}));
  const double c2 = std::sqrt(3.0 / 20.0);
  s.equation = {
      [](const Vec&, double u) { return u; },
      [c2](const Vec& x, double u) { return softplus(1.0 - x(0)) + c2 * u; },
      [](const Vec& x, double u) {
        return std::tanh(2.0 * x(1)) + 1.5 * x(0) - 1.0 + std::tanh(u);
      },
      [](const Vec& x, double u) {
        return (x(2) - 4.0) / 5.0 + 3.0 + u / kSqrt10;
      },
  };
  s.inverse = {
      [](const Vec& x) { return x(0); },
      [c2](const Vec& x) { return (x(1) - softplus(1.0 - x(0))) / c2; },
      [](const Vec& x) {
        return checked_atanh(
            x(2) - std::tanh(2.0 * x(1)) - 1.5 * x(0) + 1.0,
            "simpson-nlin x3");
      },
      [](const Vec& x) {
        return kSqrt10 * (x(3) - 3.0 - (x(2) - 4.0) / 5.0);
      },
  };
  s.log_du = {
      [](const Vec&, double) { return 0.0; },
      [c2](const Vec&, double) { return std::log(c2); },
      [](const Vec&, double u) {
        double t = std::tanh(u);
        return std::log1p(-t * t);
      },
      [](const Vec&, double) { return -std::log(kSqrt10); },
  };
  return s;
}

ScmSpec make_simpson_symprod() {
  ScmSpec s;
  s.name = "simpson-symprod";
  s.graph =
      validate_dag(adjacency_from_edges(4, {{0, 1}, {0, 2}, {1, 2}, {0, 3}}));
  const double c4 = std::sqrt(3.0 / 10.0);
  s.equation = {
      [](const Vec&, double u) { return u; },
      [](const Vec& x, double u) {
        return 2.0 * std::tanh(2.0 * x(0)) + u / kSqrt10;
      },
      [](const Vec& x, double u) { return 0.5 * x(0) * x(1) + u / kSqrt2; },
      [c4](const Vec& x, double u) {
        return std::tanh(1.5 * x(0)) + c4 * u;
      },
  };
  s.inverse = {
      [](const Vec& x) { return x(0); },
      [](const Vec& x) {
        return kSqrt10 * (x(1) - 2.0 * std::tanh(2.0 * x(0)));
      },
      [](const Vec& x) { return kSqrt2 * (x(2) - 0.5 * x(0) * x(1)); },
      [c4](const Vec& x) { return (x(3) - std::tanh(1.5 * x(0))) / c4; },
  };
  s.log_du = {
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return -std::log(kSqrt10); },
      [](const Vec&, double) { return -std::log(kSqrt2); },
      [c4](const Vec&, double) { return std::log(c4); },
  };
  return s;
}

ScmSpec make_triangle_lin() {
  ScmSpec s;
  s.name = "triangle-lin";
  s.graph = validate_dag(adjacency_from_edges(3, {{0, 1}, {0, 2}, {1, 2}}));
  s.equation = {
      [](const Vec&, double u) { return u + 1.0; },
      [](const Vec& x, double u) { return 10.0 * x(0) - u; },
      [](const Vec& x, double u) { return 0.5 * x(1) + x(0) + u; },
  };
  s.inverse = {
      [](const Vec& x) { return x(0) - 1.0; },
      [](const Vec& x) { return 10.0 * x(0) - x(1); },
      [](const Vec& x) { return x(2) - 0.5 * x(1) - x(0); },
  };
  s.log_du = {
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return 0.0; },
  };
  return s;
}

ScmSpec make_triangle_nlin() {
  ScmSpec s;
  s.name = "triangle-nlin";
  s.graph = validate_dag(adjacency_from_edges(3, {{0, 1}, {0, 2}, {1, 2}}));
  s.equation = {
      [](const Vec&, double u) { return u + 1.0; },
      [](const Vec& x, double u) { return 2.0 * x(0) * x(0) + u; },
      [](const Vec& x, double u) {
        return 20.0 * logistic(x(1) * x(1) - x(0)) + u;
      },
  };
  s.inverse = {
      [](const Vec& x) { return x(0) - 1.0; },
      [](const Vec& x) { return x(1) - 2.0 * x(0) * x(0); },
      [](const Vec& x) {
        return x(2) - 20.0 * logistic(x(1) * x(1) - x(0));
      },
  };
  s.log_du = {
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return 0.0; },
      [](const Vec&, double) { return 0.0; },
  };
  return s;
}

}  // namespace

std::vector<std::string> scm_names() {
  return {"chain3-lin",    "chain3-nlin",     "chain4-lin",
          "chain5-lin",    "collider-lin",    "fork-lin",
          "fork-nlin",     "largebd-nlin",    "simpson-nlin",
          "simpson-symprod", "triangle-lin",  "triangle-nlin"};
}

ScmSpec get_scm(const std::string& name) {
  if (name == "chain3-lin") return make_chain3_lin();
  if (name == "chain3-nlin") return make_chain3_nlin();
  if (name == "chain4-lin") return make_chain4_lin();
  if (name == "chain5-lin") return make_chain5_lin();
  if (name == "collider-lin") return make_collider_lin();
  if (name == "fork-lin") return make_fork_lin();
  if (name == "fork-nlin") return make_fork_nlin();
  if (name == "largebd-nlin") return make_largebd_nlin();
  if (name == "simpson-nlin") return make_simpson_nlin();
  if (name == "simpson-symprod") return make_simpson_symprod();
  if (name == "triangle-lin") return make_triangle_lin();
  if (name == "triangle-nlin") return make_triangle_nlin();
  throw UnknownSCMError("unknown SCM '" + name +
                        "'; run with --list to see available models");
}

Eigen::MatrixXd sample_noise(const ScmSpec& scm, int n, std::uint64_t seed) {
  Rng rng(seed);
  return scm.noise == NoiseKind::Normal ? rng.normal_matrix(n, scm.d())
                                        : rng.uniform_matrix(n, scm.d());
}

Eigen::MatrixXd solve_recursive(const ScmSpec& scm, const Eigen::MatrixXd& u) {
  if (u.cols() != scm.d())
    throw ShapeError("solve_recursive: noise has " + std::to_string(u.cols()) +
                     " columns, model has d=" + std::to_string(scm.d()));
  Eigen::MatrixXd x(u.rows(), u.cols());
  Eigen::VectorXd row = Eigen::VectorXd::Zero(scm.d());
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    row.setZero();
    for (int node : scm.graph.order)
      row(node) = scm.equation[node](row, u(r, node));
    x.row(r) = row;
  }
  return x;
}

Eigen::MatrixXd sample_scm(const ScmSpec& scm, int n, std::uint64_t seed) {
  return solve_recursive(scm, sample_noise(scm, n, seed));
}

Eigen::MatrixXd abduct_true(const ScmSpec& scm, const Eigen::MatrixXd& x) {
  if (x.cols() != scm.d())
    throw ShapeError("abduct_true: data has " + std::to_string(x.cols()) +
                     " columns, model has d=" + std::to_string(scm.d()));
  Eigen::MatrixXd u(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Eigen::VectorXd row = x.row(r);
    for (int i = 0; i < scm.d(); ++i) u(r, i) = scm.inverse[i](row);
  }
  return u;
}

namespace {

Eigen::MatrixXd solve_with_surgery(const ScmSpec& scm, const Eigen::MatrixXd& u,
                                   int node, double value) {
  if (node < 0 || node >= scm.d())
    throw ShapeError("intervention target x" + std::to_string(node + 1) +
                     " out of range for d=" + std::to_string(scm.d()));
  Eigen::MatrixXd x(u.rows(), u.cols());
  Eigen::VectorXd row = Eigen::VectorXd::Zero(scm.d());
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    row.setZero();
    for (int i : scm.graph.order)
      row(i) = (i == node) ? value : scm.equation[i](row, u(r, i));
    x.row(r) = row;
  }
  return x;
}

}  // namespace

Eigen::MatrixXd intervene_true(const ScmSpec& scm, int node, double value,
                               int n, std::uint64_t seed) {
  return solve_with_surgery(scm, sample_noise(scm, n, seed), node, value);
}

Eigen::MatrixXd counterfactual_true(const ScmSpec& scm,
                                    const Eigen::MatrixXd& factual, int node,
                                    double value) {
  return solve_with_surgery(scm, abduct_true(scm, factual), node, value);
}

Eigen::VectorXd ate_true(const ScmSpec& scm, int node, double a, double b,
                         int n, std::uint64_t seed) {
  Eigen::MatrixXd u = sample_noise(scm, n, seed);
  Eigen::MatrixXd xa = solve_with_surgery(scm, u, node, a);
  Eigen::MatrixXd xb = solve_with_surgery(scm, u, node, b);
  return (xa.colwise().mean() - xb.colwise().mean()).transpose();
}

double log_prob_true(const ScmSpec& scm, const Eigen::VectorXd& x) {
  if (x.size() != scm.d())
    throw ShapeError("log_prob_true: point has " + std::to_string(x.size()) +
                     " entries, model has d=" + std::to_string(scm.d()));
  double lp = 0.0;
  for (int i = 0; i < scm.d(); ++i) {
    double u = scm.inverse[i](x);
    if (scm.noise == NoiseKind::Normal) {
      lp += normal_logpdf(u);
    } else {
      if (!(u > 0.0 && u < 1.0))
        return -std::numeric_limits<double>::infinity();
      // Standard uniform density is 1 on (0, 1): no contribution.
    }
    lp -= scm.log_du[i](x, u);
  }
  return lp;
}

}  // namespace cnflow
