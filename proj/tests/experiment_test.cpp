#include "cnflow/experiment.hpp"

#include <gtest/gtest.h>

#include <cstdio>

#include "cnflow/errors.hpp"

namespace cnflow {
namespace {

TEST(ExperimentConfig, DefaultsRoundTripThroughJson) {
  ExperimentConfig a;
  const ExperimentConfig b = config_from_json(config_to_json(a));
  EXPECT_EQ(b.dataset, a.dataset);
  EXPECT_EQ(b.output_dir, a.output_dir);
  EXPECT_EQ(b.seeds, (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(b.design.direction, a.design.direction);
  EXPECT_EQ(b.design.mask, a.design.mask);
  EXPECT_EQ(b.design.layers, a.design.layers);
  EXPECT_EQ(b.design.transformer, a.design.transformer);
  EXPECT_EQ(b.design.base, a.design.base);
  EXPECT_EQ(b.design.learnable_base, a.design.learnable_base);
  EXPECT_EQ(b.design.hidden, a.design.hidden);
  EXPECT_EQ(b.train.epochs, a.train.epochs);
  EXPECT_EQ(b.train.learning_rate, a.train.learning_rate);
  EXPECT_EQ(b.train.plateau_decay, a.train.plateau_decay);
  EXPECT_EQ(b.train.plateau_patience, a.train.plateau_patience);
  EXPECT_EQ(b.train.batch_size, a.train.batch_size);
  EXPECT_EQ(b.train.regularizer_on, a.train.regularizer_on);
  EXPECT_EQ(b.train.lambda, a.train.lambda);
  EXPECT_EQ(b.protocol.percentiles, a.protocol.percentiles);
  EXPECT_EQ(b.protocol.n_interventional, a.protocol.n_interventional);
  EXPECT_EQ(b.protocol.n_factuals, a.protocol.n_factuals);
  EXPECT_EQ(b.sizes.train, 20000);
  EXPECT_EQ(b.sizes.val, 2500);
  EXPECT_EQ(b.sizes.test, 2500);
}

TEST(ExperimentConfig, PartialJsonKeepsDefaultsAndTracksProvided) {
  std::set<std::string> provided;
  const ExperimentConfig c = config_from_json(
      R"({"dataset": "triangle-nlin",
          "design": {"transformer": "spline"},
          "train": {"epochs": 7}})",
      &provided);
  EXPECT_EQ(c.dataset, "triangle-nlin");
  EXPECT_EQ(c.design.transformer, TransformerKind::Spline);
  EXPECT_EQ(c.design.layers, 1);
  EXPECT_EQ(c.train.epochs, 7);
  EXPECT_EQ(c.train.batch_size, 256);
  EXPECT_TRUE(provided.count("dataset"));
  EXPECT_TRUE(provided.count("design.transformer"));
  EXPECT_TRUE(provided.count("train.epochs"));
  EXPECT_FALSE(provided.count("train.learning_rate"));
}

TEST(ExperimentConfig, RejectsUnknownKeysAtEveryLevel) {
  try {
    config_from_json(R"({"dataset": "chain3-lin", "typo_key": 1})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("typo_key"), std::string::npos);
  }
  try {
    config_from_json(R"({"design": {"widht": [4]}})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("design.widht"), std::string::npos);
  }
  EXPECT_THROW(config_from_json(R"({"train": {"momentum": 0.9}})"),
               ConfigError);
  EXPECT_THROW(config_from_json(R"({"protocol": {"reps": 3}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"sizes": {"holdout": 1}})"), ConfigError);
}

TEST(ExperimentConfig, RejectsBadValues) {
  EXPECT_THROW(config_from_json("not json at all"), FormatError);
  EXPECT_THROW(config_from_json("[1,2,3]"), FormatError);
  EXPECT_THROW(config_from_json(R"({"dataset": "no-such-scm"})"),
               UnknownSCMError);
  EXPECT_THROW(config_from_json(R"({"design": {"direction": "sideways"}})"),
               ConfigError);
  EXPECT_THROW(config_from_json(R"({"train": {"epochs": "many"}})"),
               ConfigError);
  EXPECT_THROW(config_from_json(R"({"seeds": []})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"design": {"layers": 0}})"), ConfigError);
}

TEST(ExperimentConfig, GermanDefaultsOnlyFillUnsetFields) {
  std::set<std::string> provided;
  ExperimentConfig c = config_from_json(R"({"dataset": "german"})", &provided);
  apply_german_defaults(&c, provided);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.01);
  EXPECT_DOUBLE_EQ(c.train.plateau_decay, 0.9);

  provided.clear();
  ExperimentConfig d = config_from_json(
      R"({"dataset": "german", "train": {"learning_rate": 0.003}})",
      &provided);
  apply_german_defaults(&d, provided);
  EXPECT_DOUBLE_EQ(d.train.learning_rate, 0.003);  // explicit value wins
  EXPECT_DOUBLE_EQ(d.train.plateau_decay, 0.9);

  std::set<std::string> none;
  ExperimentConfig e;  // synthetic dataset: untouched
  apply_german_defaults(&e, none);
  EXPECT_DOUBLE_EQ(e.train.learning_rate, 0.001);
}

TEST(ExperimentConfig, SaveLoadRoundTripsFile) {
  ExperimentConfig a;
  a.dataset = "fork-nlin";
  a.seeds = {7, 8};
  a.train.epochs = 12;
  a.design.layers = 3;
  const std::string path = "experiment_config_roundtrip.json";
  save_config(a, path);
  const ExperimentConfig b = load_config(path);
  std::remove(path.c_str());
  EXPECT_EQ(config_to_json(a), config_to_json(b));
  EXPECT_THROW(load_config("no/such/config.json"), IOError);
}

TEST(ResultsRows, LabelHeaderAndAggregates) {
  DesignChoice design;
  design.direction = Direction::Generative;
  design.mask = MaskKind::Ordering;
  design.layers = 4;
  design.transformer = TransformerKind::Spline;
  EXPECT_EQ(design_label(design), "generative-ordering-L4-spline");
  EXPECT_EQ(std::string(kResultsHeader),
            "dataset,model,KL,ATE_RMSE,CF_RMSE,train_us,eval_us,sample_us");

  ResultsRow r1{"chain3-lin", "m", 1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
  ResultsRow r2{"chain3-lin", "m", 3.0, 2.0, 5.0, 4.0, 7.0, 6.0};
  const ResultsRow mean = aggregate_mean({r1, r2});
  const ResultsRow sd = aggregate_std({r1, r2});
  EXPECT_EQ(mean.model, "m-mean");
  EXPECT_EQ(sd.model, "m-std");
  EXPECT_DOUBLE_EQ(mean.kl, 2.0);
  EXPECT_DOUBLE_EQ(mean.cf_rmse, 4.0);
  EXPECT_DOUBLE_EQ(sd.kl, std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(sd.ate_rmse, 0.0);
  EXPECT_EQ(r1.to_line(), "chain3-lin,m,1,2,3,4,5,6");
  EXPECT_THROW(aggregate_mean({}), ConfigError);
}

}  // namespace
}  // namespace cnflow
