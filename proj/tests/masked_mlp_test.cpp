#include "cnflow/masked_mlp.hpp"

#include <gtest/gtest.h>

#include "cnflow/errors.hpp"
#include "cnflow/graph.hpp"
#include "cnflow/rng.hpp"

namespace cnflow {
namespace {

Eigen::MatrixXi random_dag_mask(int d, double p, Rng& rng) {
  std::vector<int> perm = rng.permutation(d);
  Eigen::MatrixXi a = Eigen::MatrixXi::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < i; ++j)
      if (rng.uniform() < p) a(perm[i], perm[j]) = 1;
  return a;
}

// The final layer is zero-initialized by construction; give every weight a
// random value so connectivity tests exercise real signal paths.
void randomize(MaskedMlp& mlp, Rng& rng) {
  for (int l = 0; l < mlp.num_layers(); ++l) {
    for (Eigen::Index i = 0; i < mlp.weights[l].rows(); ++i)
      for (Eigen::Index j = 0; j < mlp.weights[l].cols(); ++j)
        mlp.weights[l](i, j) = rng.normal();
    for (Eigen::Index j = 0; j < mlp.biases[l].cols(); ++j)
      mlp.biases[l](0, j) = 0.1 * rng.normal();
  }
}

TEST(MaskedMlp, ZeroInitGivesZeroOutputs) {
  Rng rng(1);
  Eigen::MatrixXi mask = random_dag_mask(4, 0.6, rng);
  MaskedMlp mlp = make_masked_mlp(mask, {16, 16}, 2, rng);
  Eigen::MatrixXd y = mlp.forward(rng.normal_matrix(8, 4));
  EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MaskedMlp, JacobianHasExactZerosOutsideMask) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    int d = 2 + static_cast<int>(rng.below(8));
    int p = 1 + static_cast<int>(rng.below(3));
    Eigen::MatrixXi mask = random_dag_mask(d, 0.5, rng);
    MaskedMlp mlp = make_masked_mlp(mask, {12, 12}, p, rng);
    randomize(mlp, rng);
    Eigen::RowVectorXd x = rng.normal_matrix(1, d);
    Eigen::MatrixXd jac = mlp.jacobian(x);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (mask(i, j) == 0)
          for (int k = 0; k < p; ++k)
            EXPECT_EQ(jac(i * p + k, j), 0.0)
                << "trial " << trial << " group " << i << " input " << j;
  }
}

TEST(MaskedMlp, AllowedConnectionsCarrySignal) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    int d = 3 + static_cast<int>(rng.below(5));
    Eigen::MatrixXi mask = random_dag_mask(d, 0.6, rng);
    MaskedMlp mlp = make_masked_mlp(mask, {16, 16}, 2, rng);
    randomize(mlp, rng);
    Eigen::RowVectorXd x = rng.normal_matrix(1, d);
    Eigen::MatrixXd jac = mlp.jacobian(x);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (mask(i, j) != 0) {
          double m = std::max(std::abs(jac(2 * i, j)),
                              std::abs(jac(2 * i + 1, j)));
          EXPECT_GT(m, 1e-12) << "allowed path " << j << " -> " << i
                              << " carries no signal";
        }
  }
}

TEST(MaskedMlp, JacobianMatchesFiniteDifferences) {
  Rng rng(4);
  Eigen::MatrixXi mask = random_dag_mask(5, 0.5, rng);
  MaskedMlp mlp = make_masked_mlp(mask, {16, 8}, 3, rng);
  randomize(mlp, rng);
  Eigen::RowVectorXd x = rng.normal_matrix(1, 5);
  Eigen::MatrixXd jac = mlp.jacobian(x);
  const double h = 1e-6;
  for (int j = 0; j < 5; ++j) {
    Eigen::RowVectorXd hi = x, lo = x;
    hi(j) += h;
    lo(j) -= h;
    Eigen::MatrixXd fd =
        (mlp.forward(hi) - mlp.forward(lo)).transpose() / (2.0 * h);
    EXPECT_LT((jac.col(j) - fd.col(0)).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(MaskedMlp, RootDimensionsGetConstantButLearnableOutputs) {
  // Row 0 all zero: outputs of group 0 must not depend on any input, yet
  // biases can still move them.
  Rng rng(5);
  Eigen::MatrixXi mask = Eigen::MatrixXi::Zero(3, 3);
  mask(1, 0) = 1;
  mask(2, 1) = 1;
  MaskedMlp mlp = make_masked_mlp(mask, {8}, 2, rng);
  randomize(mlp, rng);
  Eigen::MatrixXd a = mlp.forward(rng.normal_matrix(4, 3));
  for (int r = 1; r < 4; ++r) {
    EXPECT_EQ(a(r, 0), a(0, 0));
    EXPECT_EQ(a(r, 1), a(0, 1));
  }
  mlp.biases.back()(0, 0) += 1.0;
  Eigen::MatrixXd b = mlp.forward(Eigen::MatrixXd::Zero(1, 3));
  EXPECT_NE(b(0, 0), a(0, 0));
}

TEST(MaskedMlp, TapeForwardMatchesDirect) {
  Rng rng(6);
  Eigen::MatrixXi mask = random_dag_mask(4, 0.5, rng);
  MaskedMlp mlp = make_masked_mlp(mask, {8, 8}, 2, rng);
  randomize(mlp, rng);
  Eigen::MatrixXd x = rng.normal_matrix(6, 4);

  ad::Tape tape;
  std::vector<ad::Var> w, b;
  for (int l = 0; l < mlp.num_layers(); ++l) {
    w.push_back(tape.leaf(mlp.weights[l]));
    b.push_back(tape.leaf(mlp.biases[l]));
  }
  std::vector<ad::Var> preacts;
  ad::Var out = mlp_tape_forward(tape, mlp, tape.constant(x), w, b, &preacts);
  EXPECT_EQ((tape.val(out) - mlp.forward(x)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(preacts.size(), 2u);
}

TEST(MaskedMlp, TapeTangentMatchesJacobianColumns) {
  Rng rng(7);
  Eigen::MatrixXi mask = random_dag_mask(5, 0.6, rng);
  MaskedMlp mlp = make_masked_mlp(mask, {12, 12}, 2, rng);
  randomize(mlp, rng);
  Eigen::MatrixXd x = rng.normal_matrix(3, 5);

  ad::Tape tape;
  std::vector<ad::Var> w, b;
  for (int l = 0; l < mlp.num_layers(); ++l) {
    w.push_back(tape.leaf(mlp.weights[l]));
    b.push_back(tape.leaf(mlp.biases[l]));
  }
  std::vector<ad::Var> preacts;
  mlp_tape_forward(tape, mlp, tape.constant(x), w, b, &preacts);
  for (int j = 0; j < 5; ++j) {
    Eigen::MatrixXd t0 = Eigen::MatrixXd::Zero(3, 5);
    t0.col(j).setOnes();
    ad::Var tj = mlp_tape_tangent(tape, mlp, tape.constant(t0), w, preacts);
    for (int r = 0; r < 3; ++r) {
      Eigen::MatrixXd jac = mlp.jacobian(x.row(r));
      EXPECT_LT((tape.val(tj).row(r).transpose() - jac.col(j)).cwiseAbs()
                    .maxCoeff(),
                1e-12);
    }
  }
}

TEST(MaskedMlp, ParameterGradientsThroughTapeMatchFiniteDifferences) {
  Rng rng(8);
  Eigen::MatrixXi mask = random_dag_mask(3, 0.7, rng);
  MaskedMlp mlp = make_masked_mlp(mask, {6}, 2, rng);
  randomize(mlp, rng);
  Eigen::MatrixXd x = rng.normal_matrix(4, 3);

  auto loss_value = [&](const MaskedMlp& m) {
    return m.forward(x).array().square().mean();
  };

  ad::Tape tape;
  std::vector<ad::Var> w, b;
  for (int l = 0; l < mlp.num_layers(); ++l) {
    w.push_back(tape.leaf(mlp.weights[l]));
    b.push_back(tape.leaf(mlp.biases[l]));
  }
  ad::Var out = mlp_tape_forward(tape, mlp, tape.constant(x), w, b, nullptr);
  tape.backward(tape.mean_all(tape.square(out)));

  const double h = 1e-6;
  for (int l = 0; l < mlp.num_layers(); ++l) {
    Eigen::MatrixXd gw = tape.grad_of(w[l]);
    for (Eigen::Index i = 0; i < gw.rows(); ++i)
      for (Eigen::Index j = 0; j < gw.cols(); ++j) {
        MaskedMlp hi = mlp, lo = mlp;
        hi.weights[l](i, j) += h;
        lo.weights[l](i, j) -= h;
        double fd = (loss_value(hi) - loss_value(lo)) / (2.0 * h);
        EXPECT_NEAR(gw(i, j), fd, 1e-5 * (1.0 + std::abs(fd)));
      }
  }
}

TEST(MaskedMlp, RejectsBadArguments) {
  Rng rng(9);
  EXPECT_THROW(make_masked_mlp(Eigen::MatrixXi::Zero(2, 3), {8}, 2, rng),
               ShapeError);
  EXPECT_THROW(make_masked_mlp(Eigen::MatrixXi::Zero(2, 2), {8}, 0, rng),
               ShapeError);
  EXPECT_THROW(make_masked_mlp(Eigen::MatrixXi::Zero(2, 2), {0}, 2, rng),
               ShapeError);
  MaskedMlp mlp = make_masked_mlp(Eigen::MatrixXi::Zero(2, 2), {4}, 2, rng);
  EXPECT_THROW(mlp.forward(Eigen::MatrixXd::Zero(1, 3)), ShapeError);
}

TEST(MaskedMlp, ParameterCount) {
  Rng rng(10);
  Eigen::MatrixXi mask = Eigen::MatrixXi::Zero(2, 2);
  MaskedMlp mlp = make_masked_mlp(mask, {4}, 2, rng);
  // (4x2 + 4) + (4x4 + 4) = 32.
  EXPECT_EQ(mlp.parameter_count(), 32);
}

}  // namespace
}  // namespace cnflow
