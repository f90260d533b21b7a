#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "cnflow/flow.hpp"
#include "cnflow/scm.hpp"

namespace cnflow {

// Monte-Carlo estimate of KL(p_scm || p_model) over observational samples,
// with its standard error.
struct KlEstimate {
  double value = 0.0;
  double std_error = 0.0;
  int n = 0;
  std::uint64_t seed = 0;
};

KlEstimate kl_obs(const ScmSpec& scm, const FlowLike& model, int n = 2500,
                  std::uint64_t seed = 0);

// Intervention grid shared by the ATE and counterfactual roll-ups: for each
// non-sink node, interventions at empirical percentiles of that node's
// observational marginal.
struct EvalProtocol {
  std::vector<double> percentiles = {0.25, 0.50, 0.75};
  int n_interventional = 10000;  // samples per ATE arm
  int n_factuals = 2048;         // held-out factuals per node/percentile
  int n_observational = 10000;   // sample used for the percentile grid
  std::uint64_t seed = 0;
};

// RMSE between the model's ATE and the oracle ATE over all percentile
// contrasts (25v50, 50v75, 25v75 by default) of every non-sink node,
// collected over descendant coordinates. Common random numbers per contrast.
double ate_rmse(const ScmSpec& scm, const FlowLike& model,
                const EvalProtocol& protocol = {});

// RMSE between model counterfactuals and oracle counterfactuals over all
// coordinates of held-out factuals, for every node and percentile value.
double cf_rmse(const ScmSpec& scm, const FlowLike& model,
               const EvalProtocol& protocol = {});

// Per-sample microbenchmarks (microseconds) of a training step, density
// evaluation, and sampling. Warm-up repetitions are excluded; medians are
// the headline numbers, means reported alongside.
struct TimingReport {
  double train_step_us = 0.0;  // median
  double eval_us = 0.0;
  double sample_us = 0.0;
  double train_step_us_mean = 0.0;
  double eval_us_mean = 0.0;
  double sample_us_mean = 0.0;
  int reps = 0;
};

struct TimingConfig {
  int reps = 30;
  int warmup = 10;
  std::uint64_t seed = 0;
};

TimingReport timing(const FlowModel& model, const Eigen::MatrixXd& batch,
                    const TimingConfig& config = {});

// Writes aligned sample files plus 1-D histogram and 2-D Gaussian-KDE grid
// summaries for external plotting:
//   <dir>/samples_true.csv   <dir>/samples_model.csv
//   <dir>/hist_true.csv      <dir>/hist_model.csv
//   <dir>/kde_true.csv       <dir>/kde_model.csv
// Bin edges and grids are shared between the two sources so equal inputs
// produce identical summaries. Throws IOError on filesystem failure.
void pairplot_data(const Eigen::MatrixXd& samples_true,
                   const Eigen::MatrixXd& samples_model,
                   const std::string& dir);

}  // namespace cnflow
