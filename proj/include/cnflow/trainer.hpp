#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cnflow/flow.hpp"
#include "cnflow/tape.hpp"

namespace cnflow {

struct TrainConfig {
  int epochs = 1000;
  double learning_rate = 0.001;
  double plateau_decay = 0.95;
  int plateau_patience = 60;
  int batch_size = 256;
  bool regularizer_on = false;
  double lambda = 1.0;  // penalty multiplier when the regularizer is on
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError on violated invariants
};

struct TrainHistory {
  std::vector<int> epoch;
  std::vector<double> train_nll;
  std::vector<double> val_nll;
  std::vector<double> reg;
  std::vector<double> lr;
  std::vector<long> epoch_us;
  bool aborted = false;  // true when training stopped on a non-finite loss
  std::string abort_reason;

  std::size_t size() const { return epoch.size(); }
  // Delimited export with header. Timing is optional so artifacts that must
  // be byte-reproducible across runs can leave it out.
  void write_csv(const std::string& path, bool include_timing = true) const;
};

// Mean negative log-likelihood over the batch (value only).
// Throws NonFiniteError when the result is not finite.
double loss_mle(const FlowModel& model, const Eigen::MatrixXd& batch);

// Batch-mean Frobenius norm of jacobian_x masked by penalty_mask(graph);
// the causal-consistency penalty (and score).
double jacobian_penalty(const FlowModel& model, const Eigen::MatrixXd& batch);

// loss_mle + lambda * jacobian_penalty.
double loss_regularized(const FlowModel& model, const Eigen::MatrixXd& batch,
                        double lambda = 1.0);

// Builds the differentiable loss for one batch on the tape. Parameter leaf
// nodes are appended to `leaves` in trainable_params() order, bound to the
// model's current values.
struct LossParts {
  ad::Var loss;         // 1x1 scalar node
  double nll = 0.0;     // numeric value of the NLL part
  double penalty = 0.0;  // numeric value of the penalty (before lambda)
};
LossParts build_loss_tape(ad::Tape& tape, const FlowModel& model,
                          const Eigen::MatrixXd& batch, bool with_penalty,
                          double lambda, std::vector<ad::Var>& leaves);

// Adam + reduce-on-plateau training loop. Deterministic given (model
// initialization, data, config). The model is left at the best-validation
// parameters; plaus_range is set from the training data. A non-finite loss
// rolls the model back to the best checkpoint and stops early (recorded on
// the returned history).
TrainHistory fit(FlowModel& model, const Eigen::MatrixXd& train,
                 const Eigen::MatrixXd& val, const TrainConfig& config);

// Checkpoints are JSON with a mandatory format/version header; round trips
// reproduce log_prob bit-identically. Writes are atomic
// (write-temp-then-rename).
void save_checkpoint(const FlowModel& model, const TrainHistory& history,
                     const std::string& path);
FlowModel load_checkpoint(const std::string& path);

}  // namespace cnflow
