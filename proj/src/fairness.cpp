#include "cnflow/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "cnflow/data.hpp"
#include "cnflow/errors.hpp"
#include "cnflow/math.hpp"
#include "cnflow/rng.hpp"

namespace cnflow {
namespace {

constexpr double kLogisticRidge = 1e-3;
constexpr double kMarginRidge = 1e-2;
constexpr int kLogisticIters = 100;
constexpr int kMarginIters = 2000;

Eigen::MatrixXd select_cols(const Eigen::MatrixXd& m,
                            const std::vector<int>& cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(k) = m.col(cols[k]);
  return out;
}

std::vector<int> all_but(int d, int dropped) {
  std::vector<int> cols;
  cols.reserve(d - 1);
  for (int j = 0; j < d; ++j)
    if (j != dropped) cols.push_back(j);
  return cols;
}

std::vector<int> complement_of_block(const BlockGraph& graph, int sensitive) {
  const auto& block = graph.blocks[graph.block_of[sensitive]];
  std::vector<int> cols;
  for (int j = 0; j < graph.d(); ++j)
    if (std::find(block.begin(), block.end(), j) == block.end())
      cols.push_back(j);
  return cols;
}

void check_sensitive(int sensitive, int d) {
  if (sensitive < 0 || sensitive >= d)
    throw ConfigError("sensitive column " + std::to_string(sensitive) +
                      " out of range for " + std::to_string(d) + " features");
}

double fold_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double fold_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = fold_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m,
                          const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(k) = m.row(rows[k]);
  return out;
}

Eigen::VectorXi take_rows(const Eigen::VectorXi& v,
                          const std::vector<int>& rows) {
  Eigen::VectorXi out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(k) = v(rows[k]);
  return out;
}

double accuracy_of(const Eigen::VectorXi& pred, const Eigen::VectorXi& truth) {
  return (pred.array() == truth.array()).cast<double>().mean();
}

double f1_of(const Eigen::VectorXi& pred, const Eigen::VectorXi& truth) {
  int tp = 0, fp = 0, fn = 0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    if (pred(i) == 1 && truth(i) == 1) ++tp;
    if (pred(i) == 1 && truth(i) == 0) ++fp;
    if (pred(i) == 0 && truth(i) == 1) ++fn;
  }
  const int denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * tp / static_cast<double>(denom);
}

}  // namespace

std::string to_string(FeatureSetKind k) {
  switch (k) {
    case FeatureSetKind::Full: return "full";
    case FeatureSetKind::Unaware: return "unaware";
    case FeatureSetKind::FairX: return "fair_x";
    case FeatureSetKind::FairU: return "fair_u";
  }
  return "?";
}

std::string to_string(ClassifierKind k) {
  return k == ClassifierKind::Logistic ? "logistic" : "linear-margin";
}

std::vector<int> nondescendant_columns(const BlockGraph& graph,
                                       int sensitive) {
  check_sensitive(sensitive, graph.d());
  const int sblock = graph.block_of[sensitive];
  const CausalGraph bg = validate_dag(graph.block_adjacency);
  const std::vector<int> desc = descendants(bg, sblock);
  std::vector<int> cols;
  for (int b = 0; b < graph.num_blocks(); ++b) {
    if (b == sblock) continue;
    if (std::find(desc.begin(), desc.end(), b) != desc.end()) continue;
    for (int j : graph.blocks[b]) cols.push_back(j);
  }
  std::sort(cols.begin(), cols.end());
  if (cols.empty())
    throw ConfigError("no non-descendant features: fair_x is empty for "
                      "sensitive column " + std::to_string(sensitive));
  return cols;
}

FeatureSets feature_sets(const FlowLike& model, const Eigen::MatrixXd& data,
                         const BlockGraph& graph, int sensitive) {
  check_sensitive(sensitive, graph.d());
  if (data.cols() != graph.d())
    throw ShapeError("data has " + std::to_string(data.cols()) +
                     " columns, graph has " + std::to_string(graph.d()));
  if (model.dim() != graph.d())
    throw ShapeError("model dimension does not match graph");
  FeatureSets sets;
  sets.unaware_cols = all_but(graph.d(), sensitive);
  sets.fair_x_cols = nondescendant_columns(graph, sensitive);
  sets.fair_u_cols = complement_of_block(graph, sensitive);
  sets.full = data;
  sets.unaware = select_cols(data, sets.unaware_cols);
  sets.fair_x = select_cols(data, sets.fair_x_cols);
  sets.fair_u = select_cols(model.forward(data).u, sets.fair_u_cols);
  return sets;
}

Eigen::VectorXd Classifier::decision(const Eigen::MatrixXd& features) const {
  if (features.cols() != weights.size())
    throw ShapeError("classifier expects " + std::to_string(weights.size()) +
                     " features, got " + std::to_string(features.cols()));
  const Eigen::MatrixXd z =
      (features.rowwise() - feat_mean).array().rowwise() / feat_std.array();
  return (z * weights).array() + bias;
}

Eigen::VectorXi Classifier::predict(const Eigen::MatrixXd& features) const {
  return (decision(features).array() > 0.0).cast<int>();
}

Classifier train_classifier(const Eigen::MatrixXd& features,
                            const Eigen::VectorXi& labels, ClassifierKind kind,
                            std::uint64_t seed) {
  (void)seed;  // both fits are deterministic; kept for interface stability
  const Eigen::Index n = features.rows(), p = features.cols();
  if (labels.size() != n)
    throw ShapeError("labels/features row mismatch");
  if (n == 0 || p == 0) throw ShapeError("empty feature matrix");
  bool has0 = false, has1 = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels(i) == 0) has0 = true;
    else if (labels(i) == 1) has1 = true;
    else throw DegenerateLabelsError("labels must be 0 or 1");
  }
  if (!has0 || !has1)
    throw DegenerateLabelsError("training labels contain a single class");

  Classifier clf;
  clf.kind = kind;
  clf.feat_mean = features.colwise().mean();
  Eigen::RowVectorXd var =
      (features.rowwise() - clf.feat_mean).array().square().colwise().mean();
  clf.feat_std = var.array().sqrt().max(1e-9);
  const Eigen::MatrixXd z =
      (features.rowwise() - clf.feat_mean).array().rowwise() /
      clf.feat_std.array();

  Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
  double b = 0.0;
  if (kind == ClassifierKind::Logistic) {
    const Eigen::VectorXd y = labels.cast<double>();
    for (int it = 0; it < kLogisticIters; ++it) {
      const Eigen::VectorXd eta = (z * w).array() + b;
      const Eigen::VectorXd prob = eta.unaryExpr([](double e) {
        return logistic(e);
      });
      const Eigen::VectorXd wgt = (prob.array() * (1.0 - prob.array()))
                                      .max(1e-9).matrix();
      // Newton step on the ridge-penalized log-likelihood (bias unpenalized).
      Eigen::MatrixXd h(p + 1, p + 1);
      h.topLeftCorner(p, p) = z.transpose() * wgt.asDiagonal() * z;
      h.topLeftCorner(p, p).diagonal().array() += kLogisticRidge;
      h.topRightCorner(p, 1) = z.transpose() * wgt;
      h.bottomLeftCorner(1, p) = h.topRightCorner(p, 1).transpose();
      h(p, p) = wgt.sum();
      Eigen::VectorXd g(p + 1);
      g.head(p) = z.transpose() * (y - prob) - kLogisticRidge * w;
      g(p) = (y - prob).sum();
      const Eigen::VectorXd step = h.ldlt().solve(g);
      w += step.head(p);
      b += step(p);
      if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
    }
  } else {
    // Full-batch subgradient descent on the L2-regularized hinge loss.
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = labels(i) == 1 ? 1.0 : -1.0;
    for (int it = 1; it <= kMarginIters; ++it) {
      const Eigen::VectorXd margin =
          y.array() * ((z * w).array() + b);
      Eigen::VectorXd mask = (margin.array() < 1.0).cast<double>();
      const Eigen::VectorXd ym = y.cwiseProduct(mask);
      const Eigen::VectorXd grad_w =
          kMarginRidge * w - z.transpose() * ym / static_cast<double>(n);
      const double grad_b = -ym.sum() / static_cast<double>(n);
      const double lr = 1.0 / (kMarginRidge * it);
      w -= lr * grad_w;
      b -= lr * grad_b;
    }
  }
  clf.weights = w;
  clf.bias = b;
  return clf;
}

double unfairness(const FlowLike& model, const Classifier& classifier,
                  FeatureSetKind kind, const Eigen::MatrixXd& data,
                  const BlockGraph& graph, int sensitive) {
  check_sensitive(sensitive, graph.d());
  if (data.cols() != model.dim() || data.cols() != graph.d())
    throw ShapeError("data/model/graph dimension mismatch");
  if (data.rows() == 0) throw ShapeError("no factuals given");

  const Eigen::MatrixXd u_f = model.forward(data).u;
  const std::vector<int> u_cols = complement_of_block(graph, sensitive);
  Eigen::VectorXi pred[2];
  for (int s = 0; s < 2; ++s) {
    // Bin center of category s after dequantization.
    const double value = static_cast<double>(s) + 0.5;
    Eigen::MatrixXd pinned = data;
    pinned.col(sensitive).setConstant(value);
    Eigen::MatrixXd u_arm = u_f;
    u_arm.col(sensitive) = model.forward(pinned).u.col(sensitive);
    Eigen::MatrixXd features;
    switch (kind) {
      case FeatureSetKind::Full:
        features = model.inverse(u_arm);
        break;
      case FeatureSetKind::Unaware:
        features = select_cols(model.inverse(u_arm),
                               all_but(graph.d(), sensitive));
        break;
      case FeatureSetKind::FairX:
        features = select_cols(model.inverse(u_arm),
                               nondescendant_columns(graph, sensitive));
        break;
      case FeatureSetKind::FairU:
        // All u-coordinates outside S's block are untouched by the
        // counterfactual construction, so both arms see the same input.
        features = select_cols(u_arm, u_cols);
        break;
    }
    pred[s] = classifier.predict(features);
  }
  return (pred[1] - pred[0]).cast<double>().cwiseAbs().mean();
}

const AuditCell& AuditReport::cell(FeatureSetKind set,
                                   ClassifierKind clf) const {
  for (const auto& c : cells)
    if (c.feature_set == set && c.classifier == clf) return c;
  throw ConfigError("audit report has no such cell");
}

std::string AuditReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "feature_set,classifier,accuracy_mean,accuracy_std,f1_mean,f1_std,"
        "unfairness_mean,unfairness_std,unfairness_x100_mean,"
        "unfairness_x100_std\n";
  for (const auto& c : cells) {
    os << to_string(c.feature_set) << ',' << to_string(c.classifier) << ','
       << c.accuracy_mean << ',' << c.accuracy_std << ',' << c.f1_mean << ','
       << c.f1_std << ',' << c.unfairness_mean << ',' << c.unfairness_std
       << ',' << 100.0 * c.unfairness_mean << ',' << 100.0 * c.unfairness_std
       << '\n';
  }
  return os.str();
}

std::string AuditReport::to_text() const {
  std::ostringstream os;
  os << "fairness audit over " << folds << " folds (mean +/- std)\n";
  os << std::left << std::setw(10) << "features" << std::setw(15)
     << "classifier" << std::setw(22) << "accuracy" << std::setw(22) << "f1"
     << "unfairness x100\n";
  os << std::setprecision(3) << std::fixed;
  for (const auto& c : cells) {
    std::ostringstream acc, f1, unf;
    acc << std::fixed << std::setprecision(3) << c.accuracy_mean << " +/- "
        << c.accuracy_std;
    f1 << std::fixed << std::setprecision(3) << c.f1_mean << " +/- "
       << c.f1_std;
    unf << std::fixed << std::setprecision(2) << 100.0 * c.unfairness_mean
        << " +/- " << 100.0 * c.unfairness_std;
    os << std::left << std::setw(10) << to_string(c.feature_set)
       << std::setw(15) << to_string(c.classifier) << std::setw(22)
       << acc.str() << std::setw(22) << f1.str() << unf.str() << '\n';
  }
  return os.str();
}

AuditReport audit(const FlowLike& model, const Eigen::MatrixXd& data,
                  const Eigen::VectorXi& labels, const BlockGraph& graph,
                  const AuditConfig& config) {
  check_sensitive(config.sensitive, graph.d());
  if (config.folds < 1) throw ConfigError("folds must be >= 1");
  if (labels.size() != data.rows())
    throw ShapeError("labels/data row mismatch");
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const double code = std::floor(data(i, config.sensitive));
    if (code != 0.0 && code != 1.0)
      throw ConfigError("sensitive column is not binary (row " +
                        std::to_string(i) + " has code " +
                        std::to_string(code) + ")");
  }

  const FeatureSetKind kinds[] = {FeatureSetKind::Full, FeatureSetKind::Unaware,
                                  FeatureSetKind::FairX, FeatureSetKind::FairU};
  const ClassifierKind clfs[] = {ClassifierKind::Logistic,
                                 ClassifierKind::LinearMargin};
  std::vector<double> acc[4][2], f1[4][2], unf[4][2];

  SplitSpec spec;
  spec.num_folds = config.folds;
  spec.seed = config.seed;
  for (int fold = 0; fold < config.folds; ++fold) {
    spec.fold = fold;
    const SplitIndices idx = kfold_split(static_cast<int>(data.rows()), spec);
    const Eigen::MatrixXd train_x = take_rows(data, idx.train);
    const Eigen::MatrixXd test_x = take_rows(data, idx.test);
    const Eigen::VectorXi train_y = take_rows(labels, idx.train);
    const Eigen::VectorXi test_y = take_rows(labels, idx.test);
    const FeatureSets train_f =
        feature_sets(model, train_x, graph, config.sensitive);
    const FeatureSets test_f =
        feature_sets(model, test_x, graph, config.sensitive);
    const Eigen::MatrixXd* train_feat[4] = {&train_f.full, &train_f.unaware,
                                            &train_f.fair_x, &train_f.fair_u};
    const Eigen::MatrixXd* test_feat[4] = {&test_f.full, &test_f.unaware,
                                           &test_f.fair_x, &test_f.fair_u};
    for (int k = 0; k < 4; ++k) {
      for (int c = 0; c < 2; ++c) {
        const Classifier clf =
            train_classifier(*train_feat[k], train_y, clfs[c],
                             derive_seed(config.seed, "clf"));
        const Eigen::VectorXi pred = clf.predict(*test_feat[k]);
        acc[k][c].push_back(accuracy_of(pred, test_y));
        f1[k][c].push_back(f1_of(pred, test_y));
        unf[k][c].push_back(unfairness(model, clf, kinds[k], test_x, graph,
                                       config.sensitive));
      }
    }
  }

  AuditReport report;
  report.folds = config.folds;
  for (int k = 0; k < 4; ++k) {
    for (int c = 0; c < 2; ++c) {
      AuditCell cell;
      cell.feature_set = kinds[k];
      cell.classifier = clfs[c];
      cell.accuracy_mean = fold_mean(acc[k][c]);
      cell.accuracy_std = fold_std(acc[k][c]);
      cell.f1_mean = fold_mean(f1[k][c]);
      cell.f1_std = fold_std(f1[k][c]);
      cell.unfairness_mean = fold_mean(unf[k][c]);
      cell.unfairness_std = fold_std(unf[k][c]);
      report.cells.push_back(cell);
    }
  }
  return report;
}

}  // namespace cnflow
