#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cnflow/flow.hpp"
#include "cnflow/graph.hpp"

namespace cnflow {

enum class FeatureSetKind { Full, Unaware, FairX, FairU };
enum class ClassifierKind { Logistic, LinearMargin };

std::string to_string(FeatureSetKind k);
std::string to_string(ClassifierKind k);

struct AuditConfig {
  int sensitive = 0;  // column index of the binary sensitive attribute
  int folds = 5;
  std::uint64_t seed = 0;
};

// The four feature matrices of the fairness study, plus the column
// selections needed to rebuild them for new rows.
struct FeatureSets {
  Eigen::MatrixXd full;     // all of x
  Eigen::MatrixXd unaware;  // x without the sensitive column
  Eigen::MatrixXd fair_x;   // x restricted to non-descendant blocks of S
  Eigen::MatrixXd fair_u;   // T(x) without the u-columns of S's block
  std::vector<int> unaware_cols;
  std::vector<int> fair_x_cols;
  std::vector<int> fair_u_cols;
};

// Columns of x outside S's block that are not descendants of S's block in
// the block DAG. ConfigError when empty (no fair_x features exist).
std::vector<int> nondescendant_columns(const BlockGraph& graph, int sensitive);

FeatureSets feature_sets(const FlowLike& model, const Eigen::MatrixXd& data,
                         const BlockGraph& graph, int sensitive);

// Deterministic linear classifier over standardized features: logistic
// regression (Newton iterations) or a linear-margin hinge fit.
struct Classifier {
  ClassifierKind kind = ClassifierKind::Logistic;
  Eigen::VectorXd weights;  // over standardized features
  double bias = 0.0;
  Eigen::RowVectorXd feat_mean, feat_std;

  Eigen::VectorXd decision(const Eigen::MatrixXd& features) const;
  Eigen::VectorXi predict(const Eigen::MatrixXd& features) const;
};

// Throws DegenerateLabelsError when only one class is present, ShapeError on
// row mismatch. Deterministic given inputs (the seed is reserved for
// stochastic trainers and recorded, not consumed here).
Classifier train_classifier(const Eigen::MatrixXd& features,
                            const Eigen::VectorXi& labels, ClassifierKind kind,
                            std::uint64_t seed);

// Counterfactual unfairness of a classifier over the given factuals: the
// mean absolute difference of predictions between the do(x_S = 0.5) and
// do(x_S = 1.5) arms (bin centers of the dequantized binary attribute).
double unfairness(const FlowLike& model, const Classifier& classifier,
                  FeatureSetKind kind, const Eigen::MatrixXd& data,
                  const BlockGraph& graph, int sensitive);

struct AuditCell {
  FeatureSetKind feature_set;
  ClassifierKind classifier;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;
  double unfairness_mean = 0.0, unfairness_std = 0.0;
};

struct AuditReport {
  std::vector<AuditCell> cells;  // 4 feature sets x 2 classifiers
  int folds = 0;

  const AuditCell& cell(FeatureSetKind set, ClassifierKind clf) const;
  // Delimited export; unfairness reported both as a fraction and x100.
  std::string to_csv() const;
  std::string to_text() const;
};

// K-fold audit: trains every (feature set, classifier) pair per fold and
// aggregates accuracy, F1, and counterfactual unfairness on the held-out
// rows. ConfigError when the sensitive column is not binary.
AuditReport audit(const FlowLike& model, const Eigen::MatrixXd& data,
                  const Eigen::VectorXi& labels, const BlockGraph& graph,
                  const AuditConfig& config);

}  // namespace cnflow
