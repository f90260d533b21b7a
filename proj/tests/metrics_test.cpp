#include "cnflow/metrics.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cnflow/causal.hpp"
#include "cnflow/errors.hpp"
#include "cnflow/rng.hpp"

namespace cnflow {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

EvalProtocol small_protocol() {
  EvalProtocol p;
  p.n_interventional = 2000;
  p.n_factuals = 128;
  p.n_observational = 2000;
  p.seed = 7;
  return p;
}

TEST(KlObs, NearZeroForOracleModel) {
  ScmSpec scm = get_scm("chain3-lin");
  OracleFlow oracle(scm);
  KlEstimate est = kl_obs(scm, oracle, 2500, 3);
  // The oracle's density is the true density, so every per-sample difference
  // is exactly zero (and so is the standard error).
  EXPECT_LT(std::abs(est.value), 3.0 * est.std_error + 1e-9);
  EXPECT_EQ(est.n, 2500);
}

TEST(KlObs, StandardErrorPositiveForImperfectModel) {
  ScmSpec scm = get_scm("chain3-lin");
  DesignChoice design;
  design.hidden = {4};
  FlowModel m = build_flow(design, scm.graph, 1);
  KlEstimate est = kl_obs(scm, m, 500, 3);
  EXPECT_GT(est.std_error, 0.0);
  EXPECT_GT(est.value, -3.0 * est.std_error);
}

TEST(KlObs, PositiveForMismatchedModel) {
  ScmSpec scm = get_scm("chain3-lin");
  OracleFlow wrong(get_scm("chain3-nlin"));
  KlEstimate est = kl_obs(scm, wrong, 2000, 5);
  EXPECT_GT(est.value, 0.1);
}

TEST(KlObs, DeterministicGivenSeed) {
  ScmSpec scm = get_scm("fork-lin");
  OracleFlow oracle(scm);
  KlEstimate a = kl_obs(scm, oracle, 500, 11);
  KlEstimate b = kl_obs(scm, oracle, 500, 11);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.std_error, b.std_error);
}

TEST(AteRmse, ZeroForOracleModelWithCommonSeeds) {
  ScmSpec scm = get_scm("triangle-lin");
  OracleFlow oracle(scm);
  EXPECT_LT(ate_rmse(scm, oracle, small_protocol()), 1e-12);
}

TEST(AteRmse, PositiveForUntrainedFlow) {
  ScmSpec scm = get_scm("chain3-lin");
  DesignChoice design;
  design.hidden = {4};
  FlowModel m = build_flow(design, scm.graph, 2);  // identity map, untrained
  EXPECT_GT(ate_rmse(scm, m, small_protocol()), 0.5);
}

TEST(CfRmse, ZeroForOracleModel) {
  ScmSpec scm = get_scm("chain3-lin");
  OracleFlow oracle(scm);
  EXPECT_LT(cf_rmse(scm, oracle, small_protocol()), 1e-9);
}

TEST(CfRmse, PositiveForUntrainedFlow) {
  ScmSpec scm = get_scm("chain3-lin");
  DesignChoice design;
  design.hidden = {4};
  FlowModel m = build_flow(design, scm.graph, 4);
  EXPECT_GT(cf_rmse(scm, m, small_protocol()), 0.5);
}

TEST(Timing, ReportsPositiveStableNumbers) {
  ScmSpec scm = get_scm("chain3-lin");
  DesignChoice design;
  design.hidden = {8};
  FlowModel m = build_flow(design, scm.graph, 6);
  Eigen::MatrixXd batch = sample_scm(scm, 128, 9);
  TimingConfig cfg;
  cfg.reps = 15;
  cfg.warmup = 5;
  TimingReport a = timing(m, batch, cfg);
  EXPECT_GT(a.train_step_us, 0.0);
  EXPECT_GT(a.eval_us, 0.0);
  EXPECT_GT(a.sample_us, 0.0);
  EXPECT_GT(a.train_step_us_mean, 0.0);
  // A training step does strictly more work than an evaluation.
  EXPECT_GT(a.train_step_us, a.eval_us);
  TimingReport b = timing(m, batch, cfg);
  // Median-based stability smoke check.
  EXPECT_LT(std::abs(a.eval_us - b.eval_us) / a.eval_us, 0.5);
}

TEST(Pairplot, EqualInputsGiveIdenticalSummaries) {
  Rng rng(21);
  Eigen::MatrixXd x = rng.normal_matrix(200, 3);
  const std::string dir = "pairplot_equal_test";
  pairplot_data(x, x, dir);
  EXPECT_EQ(slurp(dir + "/samples_true.csv"), slurp(dir + "/samples_model.csv"));
  EXPECT_EQ(slurp(dir + "/hist_true.csv"), slurp(dir + "/hist_model.csv"));
  EXPECT_EQ(slurp(dir + "/kde_true.csv"), slurp(dir + "/kde_model.csv"));
  std::filesystem::remove_all(dir);
}

TEST(Pairplot, HistogramCountsCoverAllRows) {
  Rng rng(23);
  Eigen::MatrixXd a = rng.normal_matrix(150, 2);
  Eigen::MatrixXd b = rng.normal_matrix(90, 2);
  const std::string dir = "pairplot_count_test";
  pairplot_data(a, b, dir);
  std::ifstream f(dir + "/hist_model.csv");
  std::string line;
  std::getline(f, line);  // header
  long total = 0;
  while (std::getline(f, line)) {
    const auto pos = line.rfind(',');
    total += std::stol(line.substr(pos + 1));
  }
  EXPECT_EQ(total, 90 * 2);  // 90 rows binned once per dimension
  std::filesystem::remove_all(dir);
}

TEST(Pairplot, InterventionBreaksOnlyDownstreamCorrelations) {
  // chain5-lin under do(x3): x1-x2 stays correlated, x4-x5 stays correlated,
  // x1-x4 decouples.
  ScmSpec scm = get_scm("chain5-lin");
  OracleFlow oracle(scm);
  const int n = 6000;
  Eigen::MatrixXd obs = sample_scm(scm, n, 31);
  Eigen::MatrixXd cut = intervene(oracle, {2, 2.18, n, 33});
  auto corr = [](const Eigen::MatrixXd& x, int a, int b) {
    Eigen::VectorXd xa = x.col(a).array() - x.col(a).mean();
    Eigen::VectorXd xb = x.col(b).array() - x.col(b).mean();
    return xa.dot(xb) / std::sqrt(xa.squaredNorm() * xb.squaredNorm());
  };
  // Non-descendants of x3 keep their exact joint distribution.
  EXPECT_NEAR(corr(cut, 0, 1), corr(obs, 0, 1), 0.1);
  // Downstream of the cut the x4-x5 link survives (same mechanism), though
  // its magnitude shifts because upstream variance is removed.
  EXPECT_GT(std::abs(corr(cut, 3, 4)), 0.5);
  EXPECT_EQ(corr(obs, 3, 4) < 0.0, corr(cut, 3, 4) < 0.0);
  // The path x1 -> x4 is severed entirely.
  EXPECT_GT(std::abs(corr(obs, 0, 3)), 0.2);
  EXPECT_LT(std::abs(corr(cut, 0, 3)), 0.05);
}

TEST(Protocols, RejectDimensionMismatch) {
  ScmSpec scm = get_scm("chain3-lin");
  OracleFlow wrong(get_scm("chain5-lin"));
  EXPECT_THROW(kl_obs(scm, wrong, 100, 1), ShapeError);
  EXPECT_THROW(ate_rmse(scm, wrong, small_protocol()), ShapeError);
  EXPECT_THROW(cf_rmse(scm, wrong, small_protocol()), ShapeError);
}

}  // namespace
}  // namespace cnflow
