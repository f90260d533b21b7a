#include "cnflow/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "cnflow/errors.hpp"
#include "cnflow/scm.hpp"

namespace cnflow {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : allowed)
      if (item.key() == key) known = true;
    if (!known)
      throw ConfigError("unrecognized config key '" +
                        (where.empty() ? item.key() : where + "." + item.key()) +
                        "'");
  }
}

void mark(std::set<std::string>* provided, const std::string& path) {
  if (provided != nullptr) provided->insert(path);
}

template <typename T>
void read_field(const json& j, const std::string& where, const char* key,
                T* out, std::set<std::string>* provided) {
  if (!j.contains(key)) return;
  try {
    *out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
  mark(provided, where + key);
}

void read_enum(const json& j, const std::string& where, const char* key,
               const std::function<void(const std::string&)>& apply,
               std::set<std::string>* provided) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string())
    throw ConfigError("config key '" + where + key + "' must be a string");
  apply(j.at(key).get<std::string>());
  mark(provided, where + key);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset != "german") get_scm(dataset);  // throws UnknownSCMError
  if (seeds.empty()) throw ConfigError("seeds list must not be empty");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (design.layers < 1) throw ConfigError("design.layers must be >= 1");
  for (int h : design.hidden)
    if (h < 1) throw ConfigError("design.hidden entries must be >= 1");
  if (sizes.train < 0 || sizes.val < 0 || sizes.test < 0)
    throw ConfigError("split sizes must be non-negative");
  train.validate();
}

ExperimentConfig config_from_json(const std::string& text,
                                  std::set<std::string>* provided) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("config root must be a JSON object");
  check_keys(j, "", {"dataset", "design", "train", "protocol", "sizes",
                     "output_dir", "seeds"});

  ExperimentConfig config;
  read_field(j, "", "dataset", &config.dataset, provided);
  read_field(j, "", "output_dir", &config.output_dir, provided);
  read_field(j, "", "seeds", &config.seeds, provided);

  if (j.contains("design")) {
    const json& d = j.at("design");
    if (!d.is_object()) throw ConfigError("'design' must be an object");
    check_keys(d, "design", {"direction", "mask", "layers", "transformer",
                             "base", "learn_base", "hidden"});
    auto& design = config.design;
    read_enum(d, "design.", "direction",
              [&](const std::string& s) {
                design.direction = direction_from_string(s);
              },
              provided);
    read_enum(d, "design.", "mask",
              [&](const std::string& s) { design.mask = mask_from_string(s); },
              provided);
    read_enum(d, "design.", "transformer",
              [&](const std::string& s) {
                design.transformer = transformer_from_string(s);
              },
              provided);
    read_enum(d, "design.", "base",
              [&](const std::string& s) { design.base = base_from_string(s); },
              provided);
    read_field(d, "design.", "layers", &design.layers, provided);
    read_field(d, "design.", "learn_base", &design.learnable_base, provided);
    read_field(d, "design.", "hidden", &design.hidden, provided);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    if (!t.is_object()) throw ConfigError("'train' must be an object");
    check_keys(t, "train",
               {"epochs", "learning_rate", "plateau_decay", "plateau_patience",
                "batch_size", "regularizer_on", "lambda", "seed"});
    auto& train = config.train;
    read_field(t, "train.", "epochs", &train.epochs, provided);
    read_field(t, "train.", "learning_rate", &train.learning_rate, provided);
    read_field(t, "train.", "plateau_decay", &train.plateau_decay, provided);
    read_field(t, "train.", "plateau_patience", &train.plateau_patience,
               provided);
    read_field(t, "train.", "batch_size", &train.batch_size, provided);
    read_field(t, "train.", "regularizer_on", &train.regularizer_on, provided);
    read_field(t, "train.", "lambda", &train.lambda, provided);
    read_field(t, "train.", "seed", &train.seed, provided);
  }

  if (j.contains("protocol")) {
    const json& p = j.at("protocol");
    if (!p.is_object()) throw ConfigError("'protocol' must be an object");
    check_keys(p, "protocol", {"percentiles", "n_interventional", "n_factuals",
                               "n_observational", "seed"});
    auto& protocol = config.protocol;
    read_field(p, "protocol.", "percentiles", &protocol.percentiles, provided);
    read_field(p, "protocol.", "n_interventional", &protocol.n_interventional,
               provided);
    read_field(p, "protocol.", "n_factuals", &protocol.n_factuals, provided);
    read_field(p, "protocol.", "n_observational", &protocol.n_observational,
               provided);
    read_field(p, "protocol.", "seed", &protocol.seed, provided);
  }

  if (j.contains("sizes")) {
    const json& s = j.at("sizes");
    if (!s.is_object()) throw ConfigError("'sizes' must be an object");
    check_keys(s, "sizes", {"train", "val", "test"});
    read_field(s, "sizes.", "train", &config.sizes.train, provided);
    read_field(s, "sizes.", "val", &config.sizes.val, provided);
    read_field(s, "sizes.", "test", &config.sizes.test, provided);
  }

  config.validate();
  return config;
}

std::string config_to_json(const ExperimentConfig& config) {
  json j;
  j["dataset"] = config.dataset;
  j["output_dir"] = config.output_dir;
  j["seeds"] = config.seeds;
  j["design"] = {{"direction", to_string(config.design.direction)},
                 {"mask", to_string(config.design.mask)},
                 {"layers", config.design.layers},
                 {"transformer", to_string(config.design.transformer)},
                 {"base", to_string(config.design.base)},
                 {"learn_base", config.design.learnable_base},
                 {"hidden", config.design.hidden}};
  j["train"] = {{"epochs", config.train.epochs},
                {"learning_rate", config.train.learning_rate},
                {"plateau_decay", config.train.plateau_decay},
                {"plateau_patience", config.train.plateau_patience},
                {"batch_size", config.train.batch_size},
                {"regularizer_on", config.train.regularizer_on},
                {"lambda", config.train.lambda},
                {"seed", config.train.seed}};
  j["protocol"] = {{"percentiles", config.protocol.percentiles},
                   {"n_interventional", config.protocol.n_interventional},
                   {"n_factuals", config.protocol.n_factuals},
                   {"n_observational", config.protocol.n_observational},
                   {"seed", config.protocol.seed}};
  j["sizes"] = {{"train", config.sizes.train},
                {"val", config.sizes.val},
                {"test", config.sizes.test}};
  return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::string& path,
                             std::set<std::string>* provided) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot read config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str(), provided);
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IOError("cannot write config file '" + tmp + "'");
    out << config_to_json(config);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IOError("cannot move config file into place at '" + path + "'");
}

void apply_german_defaults(ExperimentConfig* config,
                           const std::set<std::string>& provided) {
  if (config->dataset != "german") return;
  if (provided.count("train.learning_rate") == 0)
    config->train.learning_rate = 0.01;
  if (provided.count("train.plateau_decay") == 0)
    config->train.plateau_decay = 0.9;
}

std::string design_label(const DesignChoice& design) {
  return to_string(design.direction) + "-" + to_string(design.mask) + "-L" +
         std::to_string(design.layers) + "-" + to_string(design.transformer);
}

const char* const kResultsHeader =
    "dataset,model,KL,ATE_RMSE,CF_RMSE,train_us,eval_us,sample_us";

std::string ResultsRow::to_line() const {
  std::ostringstream os;
  os.precision(17);
  os << dataset << ',' << model << ',' << kl << ',' << ate_rmse << ','
     << cf_rmse << ',' << train_us << ',' << eval_us << ',' << sample_us;
  return os.str();
}

namespace {

ResultsRow aggregate(const std::vector<ResultsRow>& rows, bool want_std) {
  if (rows.empty()) throw ConfigError("cannot aggregate zero result rows");
  const auto n = static_cast<double>(rows.size());
  auto over = [&](double ResultsRow::*field) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r.*field;
    mean /= n;
    if (!want_std) return mean;
    if (rows.size() < 2) return 0.0;
    double ss = 0.0;
    for (const auto& r : rows) ss += (r.*field - mean) * (r.*field - mean);
    return std::sqrt(ss / (n - 1.0));
  };
  ResultsRow out;
  out.dataset = rows.front().dataset;
  out.model = rows.front().model + (want_std ? "-std" : "-mean");
  out.kl = over(&ResultsRow::kl);
  out.ate_rmse = over(&ResultsRow::ate_rmse);
  out.cf_rmse = over(&ResultsRow::cf_rmse);
  out.train_us = over(&ResultsRow::train_us);
  out.eval_us = over(&ResultsRow::eval_us);
  out.sample_us = over(&ResultsRow::sample_us);
  return out;
}

}  // namespace

ResultsRow aggregate_mean(const std::vector<ResultsRow>& rows) {
  return aggregate(rows, false);
}

ResultsRow aggregate_std(const std::vector<ResultsRow>& rows) {
  return aggregate(rows, true);
}

}  // namespace cnflow
