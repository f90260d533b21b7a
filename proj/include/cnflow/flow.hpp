#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cnflow/graph.hpp"
#include "cnflow/masked_mlp.hpp"
#include "cnflow/scm.hpp"
#include "cnflow/transformer.hpp"

namespace cnflow {

// Which direction the parameterized stack runs. Generative: the stack maps
// base noise to data (sampling is one parallel pass per layer, density
// evaluation inverts dimension by dimension). Abductive: the stack maps data
// to base noise (evaluation is one parallel pass, sampling inverts).
enum class Direction { Generative, Abductive };

// What the conditioner of dimension i may read: every predecessor under the
// causal ordering, or exactly the graph parents.
enum class MaskKind { Ordering, Graph };

enum class BaseFamily { Normal, Laplace };

struct DesignChoice {
  Direction direction = Direction::Abductive;
  MaskKind mask = MaskKind::Graph;
  int layers = 1;
  TransformerKind transformer = TransformerKind::Affine;
  BaseFamily base = BaseFamily::Normal;
  bool learnable_base = false;
  std::vector<int> hidden = {32, 32, 32};
};

std::string to_string(Direction d);
std::string to_string(MaskKind m);
std::string to_string(BaseFamily b);
std::string to_string(TransformerKind t);
Direction direction_from_string(const std::string& s);
MaskKind mask_from_string(const std::string& s);
BaseFamily base_from_string(const std::string& s);
TransformerKind transformer_from_string(const std::string& s);

struct EvalResult {
  Eigen::MatrixXd u;        // (n x d) base-space points
  Eigen::VectorXd logdet;   // per row: log |det d u / d x|
};

// Common interface for triangular maps x <-> u. Implemented by the trained
// flow and by exact SCM wrappers so causal queries and metrics run on either.
class FlowLike {
 public:
  virtual ~FlowLike() = default;
  virtual int dim() const = 0;
  virtual const CausalGraph& graph() const = 0;
  // x -> u with log-determinant.
  virtual EvalResult forward(const Eigen::MatrixXd& x) const = 0;
  // u -> x.
  virtual Eigen::MatrixXd inverse(const Eigen::MatrixXd& u) const = 0;
  virtual Eigen::VectorXd log_prob(const Eigen::MatrixXd& x) const = 0;
  virtual Eigen::MatrixXd sample_base(int n, std::uint64_t seed) const = 0;
  virtual Eigen::MatrixXd sample(int n, std::uint64_t seed) const;
  // Exact Jacobian of the x -> u map at one point. Default: central finite
  // differences (overridden with an analytic version by FlowModel).
  virtual Eigen::MatrixXd jacobian_x(const Eigen::RowVectorXd& x) const;
  // Empirical range of the training data ([lo; hi] per dimension) for the
  // implausible-intervention guard; empty when unknown.
  virtual Eigen::MatrixXd plausible_range() const { return {}; }
};

// A named parameter matrix of the model; used by the optimizer and the
// checkpoint format.
struct ParamRef {
  std::string name;
  Eigen::MatrixXd* value;
};

// Autoregressive normalizing flow with masked conditioners.
class FlowModel : public FlowLike {
 public:
  DesignChoice design;
  Eigen::MatrixXi cond_mask;         // (d x d) allowed conditioner inputs
  std::vector<MaskedMlp> layers;
  Eigen::MatrixXd base_loc;          // (1 x d)
  Eigen::MatrixXd base_logscale;     // (1 x d)
  // Empirical [0.1%, 99.9%] training quantiles (2 x d), set by the trainer.
  Eigen::MatrixXd plaus_range;
  WarningList build_warnings;

  int dim() const override { return graph_.d(); }
  const CausalGraph& graph() const override { return graph_; }
  void set_graph(const CausalGraph& g) { graph_ = g; }

  EvalResult forward(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& u) const override;
  Eigen::VectorXd log_prob(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd sample_base(int n, std::uint64_t seed) const override;
  Eigen::MatrixXd jacobian_x(const Eigen::RowVectorXd& x) const override;
  Eigen::MatrixXd plausible_range() const override { return plaus_range; }

  // One parallel pass of layer l in the parameterized direction; returns the
  // outputs and adds each row's log-derivative sum into logd (if non-null).
  Eigen::MatrixXd parallel_pass(const Eigen::MatrixXd& z, int l,
                                Eigen::VectorXd* logd) const;
  // Inverts layer l dimension-by-dimension in causal order; logd (if
  // non-null) receives the parameterized-direction log-derivative sums
  // evaluated at the recovered inputs.
  Eigen::MatrixXd sequential_invert(const Eigen::MatrixXd& y, int l,
                                    Eigen::VectorXd* logd) const;
  // Exact Jacobian of layer l's parameterized pass at input z.
  Eigen::MatrixXd layer_jacobian(const Eigen::RowVectorXd& z, int l) const;
  // Per-row log-density of the base distribution.
  Eigen::VectorXd base_log_prob(const Eigen::MatrixXd& u) const;

  std::vector<ParamRef> trainable_params();
  long parameter_count() const;

 private:
  friend FlowModel build_flow(const DesignChoice&, const CausalGraph&,
                              std::uint64_t);
  CausalGraph graph_;
};

// Builds a flow for the given design and graph with deterministic
// initialization (identity map at start). Emits a warning when a generative
// graph-masked design has fewer layers than the graph diameter (it cannot
// represent all indirect effects).
FlowModel build_flow(const DesignChoice& design, const CausalGraph& graph,
                     std::uint64_t seed);

// Conditioner mask for a design: strict predecessors under the causal
// ordering, or the graph parents.
Eigen::MatrixXi conditioner_mask(MaskKind kind, const CausalGraph& graph);

// Mask of Jacobian entries that causal consistency requires to vanish:
// ones everywhere except the diagonal and the direct-parent positions.
Eigen::MatrixXd penalty_mask(const CausalGraph& graph);

// Exact SCM wrapped as a FlowLike: forward is analytic abduction, inverse is
// the recursive solve, densities are exact. Used as an oracle in tests and
// metrics.
class OracleFlow : public FlowLike {
 public:
  explicit OracleFlow(ScmSpec scm) : scm_(std::move(scm)) {}

  int dim() const override { return scm_.d(); }
  const CausalGraph& graph() const override { return scm_.graph; }
  EvalResult forward(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& u) const override;
  Eigen::VectorXd log_prob(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd sample_base(int n, std::uint64_t seed) const override;

  const ScmSpec& scm() const { return scm_; }

 private:
  ScmSpec scm_;
};

}  // namespace cnflow
