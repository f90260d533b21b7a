#include "cnflow/fairness.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "cnflow/data.hpp"
#include "cnflow/errors.hpp"
#include "cnflow/flow.hpp"
#include "cnflow/graph.hpp"
#include "cnflow/rng.hpp"

namespace cnflow {
namespace {

struct GermanFixture {
  GermanData german;
  BlockGraph blocks;
  FlowModel flow;  // untrained => identity map, causally consistent mask

  explicit GermanFixture(int rows, std::uint64_t seed = 3) {
    const std::string path = "fairness_standin.txt";
    {
      std::ofstream out(path);
      out << generate_german_standin(rows, seed);
    }
    german = load_german(path, "", seed);
    std::remove(path.c_str());
    blocks = condense_partial(german.partial);
    DesignChoice design;
    design.hidden = {4};
    flow = build_flow(design, validate_dag(blocks.lifted_adjacency), seed);
  }
};

void perturb(FlowModel& model, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& mlp : model.layers) {
    for (auto& w : mlp.weights)
      w += scale * rng.normal_matrix(w.rows(), w.cols());
    for (auto& b : mlp.biases)
      b += scale * rng.normal_matrix(b.rows(), b.cols());
  }
}

BlockGraph chain_blocks() {
  PartialGraph p;
  p.d = 3;
  p.known_edges = {{0, 1}, {1, 2}};
  return condense_partial(p);
}

// Labeled toy with a clean margin around the boundary x0 + x1 = 0.
void separable_toy(int n, Eigen::MatrixXd* x, Eigen::VectorXi* y) {
  Rng rng(17);
  std::vector<Eigen::RowVector2d> pts;
  while (static_cast<int>(pts.size()) < n) {
    Eigen::RowVector2d p(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    if (std::abs(p(0) + p(1)) > 0.2) pts.push_back(p);
  }
  x->resize(n, 2);
  y->resize(n);
  for (int i = 0; i < n; ++i) {
    x->row(i) = pts[i];
    (*y)(i) = pts[i].sum() > 0.0 ? 1 : 0;
  }
}

TEST(NondescendantColumns, GermanKeepsOnlyAge) {
  GermanFixture fx(120);
  const std::vector<int> cols = nondescendant_columns(fx.blocks, 0);
  ASSERT_EQ(cols.size(), 1u);
  EXPECT_EQ(cols[0], 1);  // age is the only non-descendant of sex
}

TEST(NondescendantColumns, ThrowsWhenEverythingIsDownstream) {
  const BlockGraph bg = chain_blocks();
  EXPECT_THROW(nondescendant_columns(bg, 0), ConfigError);
  EXPECT_EQ(nondescendant_columns(bg, 2).size(), 2u);
  EXPECT_THROW(nondescendant_columns(bg, 7), ConfigError);
}

TEST(FeatureSets, ShapesAndContentOnGerman) {
  GermanFixture fx(150);
  const FeatureSets sets =
      feature_sets(fx.flow, fx.german.values, fx.blocks, 0);
  EXPECT_EQ(sets.full.cols(), 7);
  EXPECT_EQ(sets.unaware.cols(), 6);
  EXPECT_EQ(sets.fair_x.cols(), 1);
  EXPECT_EQ(sets.fair_u.cols(), 6);
  EXPECT_EQ(sets.full.rows(), fx.german.values.rows());
  EXPECT_TRUE(sets.fair_x.col(0).isApprox(fx.german.values.col(1), 0.0));
  // Untrained flow is the identity, so fair_u equals x without sex.
  EXPECT_TRUE(sets.fair_u.isApprox(sets.unaware, 0.0));
  EXPECT_EQ(sets.unaware_cols, (std::vector<int>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(sets.fair_u_cols, (std::vector<int>{1, 2, 3, 4, 5, 6}));
}

TEST(FeatureSets, RejectsDimensionMismatch) {
  GermanFixture fx(50);
  const Eigen::MatrixXd narrow = fx.german.values.leftCols(5);
  EXPECT_THROW(feature_sets(fx.flow, narrow, fx.blocks, 0), ShapeError);
}

TEST(TrainClassifier, PerfectOnSeparableToy) {
  Eigen::MatrixXd x;
  Eigen::VectorXi y;
  separable_toy(200, &x, &y);
  for (ClassifierKind kind :
       {ClassifierKind::Logistic, ClassifierKind::LinearMargin}) {
    const Classifier clf = train_classifier(x, y, kind, 0);
    const Eigen::VectorXi pred = clf.predict(x);
    EXPECT_EQ((pred.array() == y.array()).cast<int>().sum(), 200)
        << to_string(kind);
  }
}

TEST(TrainClassifier, DeterministicGivenData) {
  Eigen::MatrixXd x;
  Eigen::VectorXi y;
  separable_toy(120, &x, &y);
  for (ClassifierKind kind :
       {ClassifierKind::Logistic, ClassifierKind::LinearMargin}) {
    const Classifier a = train_classifier(x, y, kind, 5);
    const Classifier b = train_classifier(x, y, kind, 5);
    EXPECT_TRUE(a.weights.isApprox(b.weights, 0.0));
    EXPECT_EQ(a.bias, b.bias);
  }
}

TEST(TrainClassifier, RecoversNoisyLogisticSignal) {
  Rng rng(23);
  const int n = 800;
  Eigen::MatrixXd x = rng.normal_matrix(n, 3);
  Eigen::VectorXi y(n);
  for (int i = 0; i < n; ++i) {
    const double eta = 2.0 * x(i, 0) - 1.0 * x(i, 1) + 0.5 * x(i, 2);
    y(i) = rng.uniform() < 1.0 / (1.0 + std::exp(-eta)) ? 1 : 0;
  }
  for (ClassifierKind kind :
       {ClassifierKind::Logistic, ClassifierKind::LinearMargin}) {
    const Classifier clf = train_classifier(x, y, kind, 0);
    const Eigen::VectorXi pred = clf.predict(x);
    const double acc = (pred.array() == y.array()).cast<double>().mean();
    EXPECT_GT(acc, 0.75) << to_string(kind);  // label noise caps accuracy
    EXPECT_GT(clf.weights(0), 0.0);
    EXPECT_LT(clf.weights(1), 0.0);
  }
}

TEST(TrainClassifier, ThrowsOnDegenerateLabels) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(20, 2);
  Eigen::VectorXi ones = Eigen::VectorXi::Ones(20);
  EXPECT_THROW(train_classifier(x, ones, ClassifierKind::Logistic, 0),
               DegenerateLabelsError);
  Eigen::VectorXi bad = ones;
  bad(3) = 2;
  EXPECT_THROW(train_classifier(x, bad, ClassifierKind::LinearMargin, 0),
               DegenerateLabelsError);
  Eigen::VectorXi short_y = Eigen::VectorXi::Zero(10);
  EXPECT_THROW(train_classifier(x, short_y, ClassifierKind::Logistic, 0),
               ShapeError);
}

TEST(Unfairness, ExactlyZeroForFairSetsEvenWithPerturbedFlow) {
  GermanFixture fx(300);
  perturb(fx.flow, 0.15, 99);  // non-identity, mask still causally consistent
  const FeatureSets sets =
      feature_sets(fx.flow, fx.german.values, fx.blocks, 0);
  for (ClassifierKind kind :
       {ClassifierKind::Logistic, ClassifierKind::LinearMargin}) {
    const Classifier on_x =
        train_classifier(sets.fair_x, fx.german.labels, kind, 0);
    const Classifier on_u =
        train_classifier(sets.fair_u, fx.german.labels, kind, 0);
    EXPECT_EQ(unfairness(fx.flow, on_x, FeatureSetKind::FairX,
                         fx.german.values, fx.blocks, 0),
              0.0);
    EXPECT_EQ(unfairness(fx.flow, on_u, FeatureSetKind::FairU,
                         fx.german.values, fx.blocks, 0),
              0.0);
  }
}

TEST(Unfairness, OneForThresholdOnSensitiveColumn) {
  GermanFixture fx(200);
  Classifier clf;
  clf.kind = ClassifierKind::Logistic;
  clf.weights = Eigen::VectorXd::Zero(7);
  clf.weights(0) = 1.0;  // fires exactly when sex = 1
  clf.bias = -1.0;
  clf.feat_mean = Eigen::RowVectorXd::Zero(7);
  clf.feat_std = Eigen::RowVectorXd::Ones(7);
  EXPECT_EQ(unfairness(fx.flow, clf, FeatureSetKind::Full, fx.german.values,
                       fx.blocks, 0),
            1.0);
  // The same classifier never sees the sensitive column via fair_x.
  Classifier narrow = clf;
  narrow.weights = Eigen::VectorXd::Ones(1);
  narrow.feat_mean = Eigen::RowVectorXd::Zero(1);
  narrow.feat_std = Eigen::RowVectorXd::Ones(1);
  EXPECT_EQ(unfairness(fx.flow, narrow, FeatureSetKind::FairX,
                       fx.german.values, fx.blocks, 0),
            0.0);
}

TEST(Unfairness, TrainedFullClassifierIsUnfairOnStandin) {
  GermanFixture fx(600);
  const FeatureSets sets =
      feature_sets(fx.flow, fx.german.values, fx.blocks, 0);
  const Classifier clf = train_classifier(sets.full, fx.german.labels,
                                          ClassifierKind::Logistic, 0);
  const double unf = unfairness(fx.flow, clf, FeatureSetKind::Full,
                                fx.german.values, fx.blocks, 0);
  EXPECT_GT(unf, 0.0);
  EXPECT_LE(unf, 1.0);
}

TEST(Unfairness, RejectsBadInputs) {
  GermanFixture fx(60);
  Classifier clf;
  clf.weights = Eigen::VectorXd::Zero(7);
  clf.feat_mean = Eigen::RowVectorXd::Zero(7);
  clf.feat_std = Eigen::RowVectorXd::Ones(7);
  const Eigen::MatrixXd empty(0, 7);
  EXPECT_THROW(unfairness(fx.flow, clf, FeatureSetKind::Full, empty,
                          fx.blocks, 0),
               ShapeError);
  EXPECT_THROW(unfairness(fx.flow, clf, FeatureSetKind::Full,
                          fx.german.values, fx.blocks, -1),
               ConfigError);
}

TEST(Audit, ReportShapeDeterminismAndFairColumns) {
  GermanFixture fx(500);
  AuditConfig config;
  config.sensitive = 0;
  config.folds = 3;
  config.seed = 11;
  const AuditReport report =
      audit(fx.flow, fx.german.values, fx.german.labels, fx.blocks, config);
  ASSERT_EQ(report.cells.size(), 8u);
  EXPECT_EQ(report.folds, 3);
  for (const auto& c : report.cells) {
    EXPECT_GE(c.accuracy_mean, 0.0);
    EXPECT_LE(c.accuracy_mean, 1.0);
    EXPECT_GE(c.f1_mean, 0.0);
    EXPECT_LE(c.f1_mean, 1.0);
    EXPECT_GE(c.unfairness_mean, 0.0);
    EXPECT_LE(c.unfairness_mean, 1.0);
  }
  for (ClassifierKind kind :
       {ClassifierKind::Logistic, ClassifierKind::LinearMargin}) {
    EXPECT_EQ(report.cell(FeatureSetKind::FairX, kind).unfairness_mean, 0.0);
    EXPECT_EQ(report.cell(FeatureSetKind::FairU, kind).unfairness_mean, 0.0);
  }
  const AuditReport again =
      audit(fx.flow, fx.german.values, fx.german.labels, fx.blocks, config);
  EXPECT_EQ(report.to_csv(), again.to_csv());
  const std::string csv = report.to_csv();
  EXPECT_NE(csv.find("unfairness_x100_mean"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);  // header + 8 rows
  const std::string text = report.to_text();
  EXPECT_NE(text.find("fair_u"), std::string::npos);
  EXPECT_NE(text.find("linear-margin"), std::string::npos);
}

TEST(Audit, RejectsNonBinarySensitiveAndBadShapes) {
  GermanFixture fx(120);
  AuditConfig config;
  config.sensitive = 1;  // age has many categories
  config.folds = 2;
  EXPECT_THROW(
      audit(fx.flow, fx.german.values, fx.german.labels, fx.blocks, config),
      ConfigError);
  config.sensitive = 0;
  config.folds = 0;
  EXPECT_THROW(
      audit(fx.flow, fx.german.values, fx.german.labels, fx.blocks, config),
      ConfigError);
  config.folds = 2;
  Eigen::VectorXi short_labels = fx.german.labels.head(10);
  EXPECT_THROW(
      audit(fx.flow, fx.german.values, short_labels, fx.blocks, config),
      ShapeError);
}

}  // namespace
}  // namespace cnflow
