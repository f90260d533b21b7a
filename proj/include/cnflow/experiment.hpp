#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "cnflow/data.hpp"
#include "cnflow/flow.hpp"
#include "cnflow/metrics.hpp"
#include "cnflow/trainer.hpp"

namespace cnflow {

// Everything needed to reproduce one experiment: the dataset, the flow
// design, the training recipe, the evaluation protocol, and the seed list
// (five repetitions by default).
struct ExperimentConfig {
  std::string dataset = "chain3-lin";  // SCM name or "german"
  DesignChoice design;
  TrainConfig train;
  EvalProtocol protocol;
  SplitSizes sizes;
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

  void validate() const;  // UnknownSCMError / ConfigError
};

// Strict parse: unrecognized keys raise ConfigError naming the key; every
// field is optional and falls back to its default. When `provided` is
// non-null it receives the dotted path of every key present, so callers can
// distinguish explicit values from defaults.
ExperimentConfig config_from_json(const std::string& text,
                                  std::set<std::string>* provided = nullptr);
std::string config_to_json(const ExperimentConfig& config);

ExperimentConfig load_config(const std::string& path,
                             std::set<std::string>* provided = nullptr);
// Atomic write of the fully resolved config (round-trippable).
void save_config(const ExperimentConfig& config, const std::string& path);

// Credit-dataset training defaults (higher learning rate, faster decay),
// applied only to fields the caller did not set explicitly.
void apply_german_defaults(ExperimentConfig* config,
                           const std::set<std::string>& provided);

// Compact design tag used in file names and the results "model" column,
// e.g. "abductive-graph-L1-affine".
std::string design_label(const DesignChoice& design);

// One results-table line per (dataset, design, seed).
extern const char* const kResultsHeader;
struct ResultsRow {
  std::string dataset;
  std::string model;
  double kl = 0.0;
  double ate_rmse = 0.0;
  double cf_rmse = 0.0;
  double train_us = 0.0;
  double eval_us = 0.0;
  double sample_us = 0.0;

  std::string to_line() const;
};
// Elementwise mean and sample std over rows (dataset/model taken from the
// first row, with the model tag suffixed by "-mean" / "-std").
ResultsRow aggregate_mean(const std::vector<ResultsRow>& rows);
ResultsRow aggregate_std(const std::vector<ResultsRow>& rows);

}  // namespace cnflow
