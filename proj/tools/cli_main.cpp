#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cnflow/causal.hpp"
#include "cnflow/data.hpp"
#include "cnflow/errors.hpp"
#include "cnflow/experiment.hpp"
#include "cnflow/fairness.hpp"
#include "cnflow/graph.hpp"
#include "cnflow/metrics.hpp"
#include "cnflow/rng.hpp"
#include "cnflow/scm.hpp"
#include "cnflow/trainer.hpp"

namespace fs = std::filesystem;
using namespace cnflow;
using nlohmann::json;

namespace {

void print_warnings(const WarningList& warnings) {
  for (const auto& w : warnings)
    std::cerr << "warning [" << w.kind << "]: " << w.message << "\n";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IOError("cannot create directory " + dir + ": " + ec.message());
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IOError("cannot write " + tmp);
    out << text;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IOError("cannot move " + tmp + " into place");
}

std::vector<std::string> x_header(Eigen::Index d) {
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < d; ++j)
    header.push_back("x" + std::to_string(j + 1));
  return header;
}

std::string data_root() { return env_or("CNFLOW_DATA_ROOT", "data"); }
std::string output_root() { return env_or("CNFLOW_OUTPUT_ROOT", "out"); }

// Shared design/train/protocol flags layered over an optional --config file.
struct ConfigFlags {
  std::string config_file;
  std::string dataset;
  std::string direction, mask, transformer, base;
  int layers = 0;
  bool learn_base = false;
  std::vector<int> hidden;
  int epochs = 0;
  double lr = 0.0, plateau_decay = 0.0, lambda = 0.0;
  int plateau_patience = 0, batch = 0;
  bool regularize = false;
  std::vector<std::uint64_t> seeds;
  int size_train = 0, size_val = 0, size_test = 0;
  int n_interventional = 0, n_factuals = 0, n_observational = 0;
  std::uint64_t protocol_seed = 0;
  std::string out;

  CLI::Option* opt_config = nullptr;
  CLI::Option* opt_dataset = nullptr;
  CLI::Option* opt_direction = nullptr;
  CLI::Option* opt_mask = nullptr;
  CLI::Option* opt_transformer = nullptr;
  CLI::Option* opt_base = nullptr;
  CLI::Option* opt_layers = nullptr;
  CLI::Option* opt_learn_base = nullptr;
  CLI::Option* opt_hidden = nullptr;
  CLI::Option* opt_epochs = nullptr;
  CLI::Option* opt_lr = nullptr;
  CLI::Option* opt_decay = nullptr;
  CLI::Option* opt_patience = nullptr;
  CLI::Option* opt_batch = nullptr;
  CLI::Option* opt_regularize = nullptr;
  CLI::Option* opt_lambda = nullptr;
  CLI::Option* opt_seeds = nullptr;
  CLI::Option* opt_size_train = nullptr;
  CLI::Option* opt_size_val = nullptr;
  CLI::Option* opt_size_test = nullptr;
  CLI::Option* opt_n_int = nullptr;
  CLI::Option* opt_n_fact = nullptr;
  CLI::Option* opt_n_obs = nullptr;
  CLI::Option* opt_protocol_seed = nullptr;
  CLI::Option* opt_out = nullptr;

  void attach(CLI::App* cmd) {
    opt_config = cmd->add_option("--config", config_file,
                                 "JSON experiment config (strict keys)");
    opt_dataset =
        cmd->add_option("--dataset", dataset, "SCM name or 'german'");
    opt_direction = cmd->add_option("--direction", direction,
                                    "abductive|generative");
    opt_mask = cmd->add_option("--mask", mask, "graph|ordering");
    opt_layers = cmd->add_option("--layers", layers, "number of flow layers");
    opt_transformer =
        cmd->add_option("--transformer", transformer, "affine|spline");
    opt_base = cmd->add_option("--base", base, "normal|laplace");
    opt_learn_base =
        cmd->add_flag("--learn-base", learn_base, "learn base loc/scale");
    opt_hidden = cmd->add_option("--hidden", hidden,
                                 "conditioner hidden widths, e.g. 32,32,32")
                     ->delimiter(',');
    opt_epochs = cmd->add_option("--epochs", epochs, "training epochs");
    opt_lr = cmd->add_option("--lr", lr, "initial learning rate");
    opt_decay = cmd->add_option("--plateau-decay", plateau_decay,
                                "learning-rate decay factor on plateau");
    opt_patience = cmd->add_option("--plateau-patience", plateau_patience,
                                   "epochs without improvement before decay");
    opt_batch = cmd->add_option("--batch", batch, "mini-batch size");
    opt_regularize = cmd->add_flag("--regularize", regularize,
                                   "enable the causal-consistency penalty");
    opt_lambda = cmd->add_option("--lambda", lambda, "penalty multiplier");
    opt_seeds = cmd->add_option("--seeds", seeds,
                                "comma-separated seed list, e.g. 0,1,2,3,4")
                    ->delimiter(',');
    opt_size_train =
        cmd->add_option("--size-train", size_train, "training rows");
    opt_size_val = cmd->add_option("--size-val", size_val, "validation rows");
    opt_size_test = cmd->add_option("--size-test", size_test, "test rows");
    opt_n_int = cmd->add_option("--n-interventional", n_interventional,
                                "interventional sample size per query");
    opt_n_fact = cmd->add_option("--n-factuals", n_factuals,
                                 "factual rows per counterfactual query");
    opt_n_obs = cmd->add_option("--n-observational", n_observational,
                                "observational rows for the KL estimate");
    opt_protocol_seed = cmd->add_option("--protocol-seed", protocol_seed,
                                        "seed for the evaluation protocol");
    opt_out = cmd->add_option("--out", out, "output directory");
  }

  ExperimentConfig resolve(std::set<std::string>* provided) const {
    ExperimentConfig config;
    if (opt_config->count() > 0) config = load_config(config_file, provided);
    auto mark = [provided](const std::string& key) { provided->insert(key); };
    if (opt_dataset->count() > 0) {
      config.dataset = dataset;
      mark("dataset");
    }
    if (opt_direction->count() > 0) {
      config.design.direction = direction_from_string(direction);
      mark("design.direction");
    }
    if (opt_mask->count() > 0) {
      config.design.mask = mask_from_string(mask);
      mark("design.mask");
    }
    if (opt_layers->count() > 0) {
      config.design.layers = layers;
      mark("design.layers");
    }
    if (opt_transformer->count() > 0) {
      config.design.transformer = transformer_from_string(transformer);
      mark("design.transformer");
    }
    if (opt_base->count() > 0) {
      config.design.base = base_from_string(base);
      mark("design.base");
    }
    if (opt_learn_base->count() > 0) {
      config.design.learnable_base = learn_base;
      mark("design.learn_base");
    }
    if (opt_hidden->count() > 0) {
      config.design.hidden = hidden;
      mark("design.hidden");
    }
    if (opt_epochs->count() > 0) {
      config.train.epochs = epochs;
      mark("train.epochs");
    }
    if (opt_lr->count() > 0) {
      config.train.learning_rate = lr;
      mark("train.learning_rate");
    }
    if (opt_decay->count() > 0) {
      config.train.plateau_decay = plateau_decay;
      mark("train.plateau_decay");
    }
    if (opt_patience->count() > 0) {
      config.train.plateau_patience = plateau_patience;
      mark("train.plateau_patience");
    }
    if (opt_batch->count() > 0) {
      config.train.batch_size = batch;
      mark("train.batch_size");
    }
    if (opt_regularize->count() > 0) {
      config.train.regularizer_on = regularize;
      mark("train.regularizer_on");
    }
    if (opt_lambda->count() > 0) {
      config.train.lambda = lambda;
      mark("train.lambda");
    }
    if (opt_seeds->count() > 0) {
      config.seeds = seeds;
      mark("seeds");
    }
    if (opt_size_train->count() > 0) {
      config.sizes.train = size_train;
      mark("sizes.train");
    }
    if (opt_size_val->count() > 0) {
      config.sizes.val = size_val;
      mark("sizes.val");
    }
    if (opt_size_test->count() > 0) {
      config.sizes.test = size_test;
      mark("sizes.test");
    }
    if (opt_n_int->count() > 0) {
      config.protocol.n_interventional = n_interventional;
      mark("protocol.n_interventional");
    }
    if (opt_n_fact->count() > 0) {
      config.protocol.n_factuals = n_factuals;
      mark("protocol.n_factuals");
    }
    if (opt_n_obs->count() > 0) {
      config.protocol.n_observational = n_observational;
      mark("protocol.n_observational");
    }
    if (opt_protocol_seed->count() > 0) {
      config.protocol.seed = protocol_seed;
      mark("protocol.seed");
    }
    if (opt_out->count() > 0) {
      config.output_dir = out;
      mark("output_dir");
    }
    apply_german_defaults(&config, *provided);
    config.validate();
    return config;
  }
};

// --- german resolution ------------------------------------------------------

struct GermanFlags {
  std::string file;
  std::string checksum;
  int standin = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--german", file,
                    "path to the raw credit data (21 whitespace fields/row)");
    cmd->add_option("--checksum", checksum,
                    "pin the expected FNV-1a checksum of the raw file");
    cmd->add_option("--standin", standin,
                    "rows of synthetic stand-in data when no raw file exists");
  }

  GermanData load(const std::string& out_dir, std::uint64_t seed) const {
    std::string path = file;
    if (path.empty()) path = env_or("CNFLOW_GERMAN", "");
    if (path.empty()) path = data_root() + "/german.data";
    if (!fs::exists(path)) {
      if (standin > 0) {
        const std::string standin_path = out_dir + "/german-standin.txt";
        write_text_file(standin_path,
                        generate_german_standin(standin, seed));
        std::cerr << "note: raw credit data not found; using a " +
                         std::to_string(standin) +
                         "-row synthetic stand-in at " + standin_path + "\n";
        return load_german(standin_path, "", seed);
      }
      throw ChecksumError(
          "raw credit data not found at '" + path +
          "'. Fetch the Statlog 'german.data' file (1000 rows, 21 "
          "whitespace-separated fields) from the UCI repository, place it "
          "there or point --german/CNFLOW_GERMAN at it, and pin its checksum "
          "with --checksum. For a smoke run without the raw file, pass "
          "--standin <rows> to generate synthetic stand-in data.");
    }
    return load_german(path, checksum, seed);
  }
};

CausalGraph german_graph() {
  return validate_dag(condense_partial(german_partial_graph()).lifted_adjacency);
}

// --- commands ----------------------------------------------------------------

struct GenDataArgs {
  std::string scm;
  std::uint64_t seed = 0;
  int train = 20000, val = 2500, test = 2500;
  std::string out;
};

void run_gen_data(const GenDataArgs& args) {
  ExperimentConfig config;
  config.dataset = args.scm;
  config.sizes = {args.train, args.val, args.test};
  config.seeds = {args.seed};
  config.output_dir = args.out.empty()
                          ? data_root() + "/" + args.scm + "-seed" +
                                std::to_string(args.seed)
                          : args.out;
  config.validate();
  const GeneratedData data =
      generate_dataset(get_scm(config.dataset), config.sizes, args.seed);
  write_dataset(data, config.output_dir);
  save_config(config, config.output_dir + "/config.json");
  for (const char* name : {"train.csv", "val.csv", "test.csv",
                           "metadata.json", "config.json"})
    std::cout << "wrote " << config.output_dir << "/" << name << "\n";
}

struct TrainArgs {
  ConfigFlags flags;
  GermanFlags german;
  std::string data_dir;
  int fold = 0;
};

struct ResolvedData {
  Eigen::MatrixXd train, val, test;
  CausalGraph graph;
};

ResolvedData training_data(const ExperimentConfig& config,
                           const TrainArgs& args, std::uint64_t seed,
                           const std::string& out_dir) {
  ResolvedData data;
  if (config.dataset == "german") {
    const GermanData german = args.german.load(out_dir, seed);
    data.graph = german_graph();
    SplitSpec spec;
    spec.fold = args.fold;
    spec.seed = seed;
    const SplitIndices idx =
        kfold_split(static_cast<int>(german.values.rows()), spec);
    auto take = [&](const std::vector<int>& rows) {
      Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                        german.values.cols());
      for (std::size_t k = 0; k < rows.size(); ++k)
        m.row(k) = german.values.row(rows[k]);
      return m;
    };
    data.train = take(idx.train);
    data.val = take(idx.val);
    data.test = take(idx.test);
    return data;
  }
  const ScmSpec scm = get_scm(config.dataset);
  data.graph = scm.graph;
  if (!args.data_dir.empty()) {
    data.train = read_matrix_csv(args.data_dir + "/train.csv");
    data.val = read_matrix_csv(args.data_dir + "/val.csv");
    data.test = read_matrix_csv(args.data_dir + "/test.csv");
    if (data.train.cols() != scm.d())
      throw ShapeError("data in " + args.data_dir + " has " +
                       std::to_string(data.train.cols()) +
                       " columns, dataset '" + config.dataset + "' has " +
                       std::to_string(scm.d()));
    return data;
  }
  const GeneratedData gen = generate_dataset(scm, config.sizes, seed);
  data.train = gen.train;
  data.val = gen.val;
  data.test = gen.test;
  return data;
}

void run_train(const TrainArgs& args) {
  std::set<std::string> provided;
  ExperimentConfig config = args.flags.resolve(&provided);
  ensure_dir(config.output_dir);
  save_config(config, config.output_dir + "/config.json");
  for (const std::uint64_t seed : config.seeds) {
    const ResolvedData data =
        training_data(config, args, seed, config.output_dir);
    FlowModel model =
        build_flow(config.design, data.graph, derive_seed(seed, "init"));
    print_warnings(model.build_warnings);
    TrainConfig train = config.train;
    train.seed = seed;
    const TrainHistory history = fit(model, data.train, data.val, train);
    if (history.aborted)
      std::cerr << "warning [aborted]: seed " << seed
                << " stopped early: " << history.abort_reason << "\n";
    const std::string tag = "seed" + std::to_string(seed);
    const std::string ck = config.output_dir + "/checkpoint-" + tag + ".json";
    const std::string hist = config.output_dir + "/history-" + tag + ".csv";
    // Wall-clock timing would break byte-reproducibility of the artifact.
    TrainHistory stored = history;
    std::fill(stored.epoch_us.begin(), stored.epoch_us.end(), 0);
    save_checkpoint(model, stored, ck);
    history.write_csv(hist, /*include_timing=*/false);
    const double test_nll =
        data.test.rows() > 0 ? -model.log_prob(data.test).mean() : 0.0;
    std::cout << "seed " << seed << ": " << history.size()
              << " epochs, test nll " << test_nll << ", wrote " << ck << "\n";
  }
}

struct EvalArgs {
  ConfigFlags flags;
  std::vector<std::string> checkpoints;
  bool oracle = false;
  int reps = 30, warmup = 10;
};

ResultsRow eval_model(const ScmSpec& scm, const FlowLike& model,
                      const std::string& label, const ExperimentConfig& config,
                      const EvalArgs& args, const FlowModel* timed) {
  ResultsRow row;
  row.dataset = scm.name;
  row.model = label;
  row.kl = kl_obs(scm, model, config.protocol.n_observational,
                  derive_seed(config.protocol.seed, "kl"))
               .value;
  row.ate_rmse = ate_rmse(scm, model, config.protocol);
  row.cf_rmse = cf_rmse(scm, model, config.protocol);
  if (timed != nullptr) {
    const Eigen::MatrixXd batch =
        sample_scm(scm, config.train.batch_size,
                   derive_seed(config.protocol.seed, "timing"));
    TimingConfig tc;
    tc.reps = args.reps;
    tc.warmup = args.warmup;
    tc.seed = config.protocol.seed;
    const TimingReport t = timing(*timed, batch, tc);
    row.train_us = t.train_step_us;
    row.eval_us = t.eval_us;
    row.sample_us = t.sample_us;
  }
  return row;
}

void run_eval(const EvalArgs& args) {
  std::set<std::string> provided;
  ExperimentConfig config = args.flags.resolve(&provided);
  if (config.dataset == "german")
    throw ConfigError(
        "eval needs a synthetic dataset with known ground truth; "
        "use 'audit' for the credit data");
  if (!args.oracle && args.checkpoints.empty())
    throw ConfigError("eval needs --checkpoint (one per seed) or --oracle");
  const ScmSpec scm = get_scm(config.dataset);
  ensure_dir(config.output_dir);
  save_config(config, config.output_dir + "/config.json");

  std::vector<ResultsRow> rows;
  if (args.oracle) {
    const OracleFlow oracle(scm);
    rows.push_back(eval_model(scm, oracle, "oracle", config, args, nullptr));
  }
  for (const std::string& path : args.checkpoints) {
    const FlowModel model = load_checkpoint(path);
    if (model.dim() != scm.d())
      throw ShapeError("checkpoint " + path + " has dimension " +
                       std::to_string(model.dim()) + ", dataset '" +
                       config.dataset + "' has " + std::to_string(scm.d()));
    rows.push_back(eval_model(scm, model, design_label(model.design), config,
                              args, &model));
  }

  std::ostringstream table;
  table << kResultsHeader << "\n";
  for (const auto& row : rows) table << row.to_line() << "\n";
  if (rows.size() > 1) {
    table << aggregate_mean(rows).to_line() << "\n";
    table << aggregate_std(rows).to_line() << "\n";
  }
  const std::string out_csv = config.output_dir + "/results.csv";
  write_text_file(out_csv, table.str());
  std::cout << table.str() << "wrote " << out_csv << "\n";
}

struct AblateArgs {
  ConfigFlags flags;
  int layers_max = 5;
};

void run_ablate(const AblateArgs& args) {
  std::set<std::string> provided;
  ExperimentConfig config = args.flags.resolve(&provided);
  if (provided.count("dataset") == 0) config.dataset = "chain4-lin";
  if (config.dataset == "german")
    throw ConfigError("the ablation grid needs a synthetic dataset");
  const ScmSpec scm = get_scm(config.dataset);
  ensure_dir(config.output_dir);
  save_config(config, config.output_dir + "/config.json");

  std::ostringstream table;
  table << "dataset,direction,mask,layers,regularized,seed,KL,consistency,"
           "ATE_RMSE,CF_RMSE\n";
  const Direction directions[] = {Direction::Abductive, Direction::Generative};
  const MaskKind masks[] = {MaskKind::Graph, MaskKind::Ordering};
  const int total = 2 * 2 * args.layers_max * 2 *
                    static_cast<int>(config.seeds.size());
  int done = 0;
  for (const std::uint64_t seed : config.seeds) {
    const GeneratedData data = generate_dataset(scm, config.sizes, seed);
    for (const Direction direction : directions) {
      for (const MaskKind mask : masks) {
        for (int layers = 1; layers <= args.layers_max; ++layers) {
          for (const bool regularized : {false, true}) {
            DesignChoice design = config.design;
            design.direction = direction;
            design.mask = mask;
            design.layers = layers;
            FlowModel model =
                build_flow(design, scm.graph, derive_seed(seed, "init"));
            TrainConfig train = config.train;
            train.seed = seed;
            train.regularizer_on = regularized;
            fit(model, data.train, data.val, train);
            const double kl =
                kl_obs(scm, model, config.protocol.n_observational,
                       derive_seed(config.protocol.seed, "kl"))
                    .value;
            const double consistency =
                consistency_score(model, data.test, scm.graph);
            const double ate = ate_rmse(scm, model, config.protocol);
            const double cf = cf_rmse(scm, model, config.protocol);
            std::ostringstream line;
            line.precision(17);
            line << scm.name << ',' << to_string(direction) << ','
                 << to_string(mask) << ',' << layers << ','
                 << (regularized ? 1 : 0) << ',' << seed << ',' << kl << ','
                 << consistency << ',' << ate << ',' << cf;
            table << line.str() << "\n";
            ++done;
            std::cout << "[" << done << "/" << total << "] "
                      << to_string(direction) << "-" << to_string(mask)
                      << "-L" << layers << (regularized ? "-reg" : "")
                      << " seed " << seed << ": KL " << kl << ", consistency "
                      << consistency << "\n";
          }
        }
      }
    }
  }
  const std::string out_csv = config.output_dir + "/ablation.csv";
  write_text_file(out_csv, table.str());
  std::cout << "wrote " << out_csv << "\n";
}

struct QueryArgs {
  std::string checkpoint;
  int node = 1;  // 1-based variable index, matching the x1..xd naming
  double value = 0.0;
  int n = 2500;
  std::uint64_t seed = 0;
  std::string scm;      // optional ground truth for pair-plot summaries
  std::string factual;  // cf only
  std::string out;
};

void save_query(const QueryArgs& args, const std::string& command) {
  json j;
  j["command"] = command;
  j["checkpoint"] = args.checkpoint;
  j["node"] = args.node;
  j["value"] = args.value;
  if (command == "intervene") {
    j["n"] = args.n;
    j["seed"] = args.seed;
    if (!args.scm.empty()) j["scm"] = args.scm;
  }
  if (command == "cf") j["factual"] = args.factual;
  write_text_file(args.out + "/query.json", j.dump(2) + "\n");
}

void check_node(int node, int d) {
  if (node < 1 || node > d)
    throw ConfigError("--node is 1-based and must be in [1, " +
                      std::to_string(d) + "], got " + std::to_string(node));
}

void run_intervene(QueryArgs& args) {
  const FlowModel model = load_checkpoint(args.checkpoint);
  check_node(args.node, model.dim());
  if (args.out.empty()) args.out = output_root() + "/intervene";
  ensure_dir(args.out);
  InterventionQuery query;
  query.target = args.node - 1;
  query.value = args.value;
  query.n = args.n;
  query.seed = args.seed;
  WarningList warnings;
  const Eigen::MatrixXd samples = intervene(model, query, &warnings);
  print_warnings(warnings);
  const std::string sample_path =
      args.out + "/intervene-x" + std::to_string(args.node) + "-samples.csv";
  write_matrix_csv(sample_path, x_header(samples.cols()), samples);
  save_query(args, "intervene");
  std::cout << "wrote " << sample_path << " (" << samples.rows() << " rows)\n";
  if (!args.scm.empty()) {
    const ScmSpec scm = get_scm(args.scm);
    const Eigen::MatrixXd truth =
        intervene_true(scm, query.target, query.value, query.n, query.seed);
    pairplot_data(truth, samples, args.out);
    std::cout << "wrote pair-plot summaries (samples_*, hist_*, kde_*) under "
              << args.out << "\n";
  }
}

void run_cf(QueryArgs& args) {
  const FlowModel model = load_checkpoint(args.checkpoint);
  check_node(args.node, model.dim());
  if (args.out.empty()) args.out = output_root() + "/cf";
  ensure_dir(args.out);
  const Eigen::MatrixXd factuals = read_matrix_csv(args.factual);
  WarningList warnings;
  const Eigen::MatrixXd result =
      counterfactual(model, factuals, args.node - 1, args.value, &warnings);
  print_warnings(warnings);
  const std::string out_path = args.out + "/counterfactual.csv";
  write_matrix_csv(out_path, x_header(result.cols()), result);
  save_query(args, "cf");
  std::cout << "wrote " << out_path << " (" << result.rows() << " rows)\n";
}

struct AuditArgs {
  GermanFlags german;
  std::string checkpoint;
  std::string sensitive = "sex";
  int folds = 5;
  std::uint64_t seed = 0;
  std::string out;
};

void run_audit(const AuditArgs& args) {
  const std::string out =
      args.out.empty() ? output_root() + "/audit" : args.out;
  ensure_dir(out);
  const GermanData german = args.german.load(out, args.seed);
  const FlowModel model = load_checkpoint(args.checkpoint);
  if (model.dim() != german.partial.d)
    throw ShapeError("checkpoint has dimension " +
                     std::to_string(model.dim()) +
                     "; train one with --dataset german first");
  const BlockGraph blocks = condense_partial(german.partial);

  AuditConfig config;
  config.folds = args.folds;
  config.seed = args.seed;
  config.sensitive = -1;
  for (std::size_t j = 0; j < german.schema.size(); ++j)
    if (german.schema[j].name == args.sensitive)
      config.sensitive = static_cast<int>(j);
  if (config.sensitive < 0) {
    try {
      config.sensitive = std::stoi(args.sensitive);
    } catch (const std::exception&) {
      throw ConfigError("unknown sensitive feature '" + args.sensitive + "'");
    }
  }

  const AuditReport report =
      audit(model, german.values, german.labels, blocks, config);
  write_text_file(out + "/audit.csv", report.to_csv());
  write_text_file(out + "/audit.txt", report.to_text());
  write_text_file(out + "/ingestion-manifest.txt", german.manifest);
  json j;
  j["command"] = "audit";
  j["checkpoint"] = args.checkpoint;
  j["sensitive"] = config.sensitive;
  j["folds"] = config.folds;
  j["seed"] = config.seed;
  j["checksum"] = german.checksum;
  write_text_file(out + "/query.json", j.dump(2) + "\n");
  std::cout << report.to_text();
  for (const char* name : {"audit.csv", "audit.txt", "ingestion-manifest.txt"})
    std::cout << "wrote " << out << "/" << name << "\n";
}

struct BenchArgs {
  ConfigFlags flags;
  std::string checkpoint;
  int reps = 30, warmup = 10;
};

void run_bench(const BenchArgs& args) {
  std::set<std::string> provided;
  ExperimentConfig config = args.flags.resolve(&provided);
  ensure_dir(config.output_dir);
  FlowModel model =
      args.checkpoint.empty()
          ? build_flow(config.design,
                       config.dataset == "german"
                           ? german_graph()
                           : get_scm(config.dataset).graph,
                       derive_seed(config.train.seed, "init"))
          : load_checkpoint(args.checkpoint);
  Eigen::MatrixXd batch;
  if (config.dataset != "german") {
    batch = sample_scm(get_scm(config.dataset), config.train.batch_size,
                       derive_seed(config.protocol.seed, "timing"));
    if (batch.cols() != model.dim())
      throw ShapeError("checkpoint dimension does not match --dataset");
  } else {
    batch = model.sample(config.train.batch_size,
                         derive_seed(config.protocol.seed, "timing"));
  }
  TimingConfig tc;
  tc.reps = args.reps;
  tc.warmup = args.warmup;
  tc.seed = config.protocol.seed;
  const TimingReport t = timing(model, batch, tc);
  std::ostringstream table;
  table.precision(17);
  table << "model,d,batch,reps,train_step_us,eval_us,sample_us,"
           "train_step_us_mean,eval_us_mean,sample_us_mean\n"
        << design_label(model.design) << ',' << model.dim() << ','
        << batch.rows() << ',' << t.reps << ',' << t.train_step_us << ','
        << t.eval_us << ',' << t.sample_us << ',' << t.train_step_us_mean
        << ',' << t.eval_us_mean << ',' << t.sample_us_mean << "\n";
  const std::string out_csv = config.output_dir + "/bench.csv";
  write_text_file(out_csv, table.str());
  std::cout << table.str() << "wrote " << out_csv << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"causal normalizing flows: data, training, queries, audits"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand(
      "gen-data", "sample train/val/test splits from a synthetic SCM");
  gen->add_option("--scm", gen_args.scm, "SCM name (see --list)")->required();
  gen->add_option("--seed", gen_args.seed, "sampling seed");
  gen->add_option("--train", gen_args.train, "training rows");
  gen->add_option("--val", gen_args.val, "validation rows");
  gen->add_option("--test", gen_args.test, "test rows");
  gen->add_option("--out", gen_args.out,
                  "output directory (default <data-root>/<scm>-seed<N>)");
  gen->callback([&] { run_gen_data(gen_args); });

  CLI::App* list = app.add_subcommand("list", "list the registered SCMs");
  list->callback([] {
    for (const std::string& name : scm_names()) std::cout << name << "\n";
  });

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand(
      "train", "fit one flow per seed and write checkpoints + histories");
  train_args.flags.attach(train);
  train_args.german.attach(train);
  train->add_option("--data", train_args.data_dir,
                    "read splits from a gen-data directory instead of "
                    "sampling fresh data per seed");
  train->add_option("--fold", train_args.fold,
                    "cross-validation fold for the credit data");
  train->callback([&] { run_train(train_args); });

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand(
      "eval", "score checkpoints against the data-generating SCM");
  eval_args.flags.attach(eval);
  eval->add_option("--checkpoint", eval_args.checkpoints,
                   "checkpoint file(s); several give a mean/std aggregate");
  eval->add_flag("--oracle", eval_args.oracle,
                 "also score the exact SCM wrapped as a flow");
  eval->add_option("--reps", eval_args.reps, "timing repetitions");
  eval->add_option("--warmup", eval_args.warmup, "timing warmup repetitions");
  eval->callback([&] { run_eval(eval_args); });

  AblateArgs ablate_args;
  CLI::App* ablate = app.add_subcommand(
      "ablate",
      "run the design grid (direction x mask x layers x regularizer)");
  ablate_args.flags.attach(ablate);
  ablate->add_option("--layers-max", ablate_args.layers_max,
                     "largest layer count in the grid");
  ablate->callback([&] { run_ablate(ablate_args); });

  QueryArgs intervene_args;
  CLI::App* intervene = app.add_subcommand(
      "intervene", "sample from an interventional distribution do(x_i = a)");
  intervene->add_option("--checkpoint", intervene_args.checkpoint)->required();
  intervene->add_option("--node", intervene_args.node,
                        "1-based variable index")->required();
  intervene->add_option("--value", intervene_args.value, "intervention value")
      ->required();
  intervene->add_option("-n,--n", intervene_args.n, "sample size");
  intervene->add_option("--seed", intervene_args.seed, "sampling seed");
  intervene->add_option("--scm", intervene_args.scm,
                        "ground-truth SCM for pair-plot summaries");
  intervene->add_option("--out", intervene_args.out, "output directory");
  intervene->callback([&] { run_intervene(intervene_args); });

  QueryArgs cf_args;
  CLI::App* cf = app.add_subcommand(
      "cf", "answer counterfactuals for factual rows from a file");
  cf->add_option("--checkpoint", cf_args.checkpoint)->required();
  cf->add_option("--factual", cf_args.factual, "CSV of factual rows")
      ->required();
  cf->add_option("--node", cf_args.node, "1-based variable index")->required();
  cf->add_option("--value", cf_args.value, "counterfactual value")->required();
  cf->add_option("--out", cf_args.out, "output directory");
  cf->callback([&] { run_cf(cf_args); });

  AuditArgs audit_args;
  CLI::App* audit_cmd = app.add_subcommand(
      "audit", "counterfactual-fairness audit on the credit data");
  audit_cmd->add_option("--checkpoint", audit_args.checkpoint)->required();
  audit_args.german.attach(audit_cmd);
  audit_cmd->add_option("--sensitive", audit_args.sensitive,
                        "sensitive feature name or index (default sex)");
  audit_cmd->add_option("--folds", audit_args.folds, "cross-validation folds");
  audit_cmd->add_option("--seed", audit_args.seed, "audit seed");
  audit_cmd->add_option("--out", audit_args.out, "output directory");
  audit_cmd->callback([&] { run_audit(audit_args); });

  BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand(
      "bench", "time training steps, density evaluation, and sampling");
  bench_args.flags.attach(bench);
  bench->add_option("--checkpoint", bench_args.checkpoint,
                    "time this checkpoint instead of a fresh untrained flow");
  bench->add_option("--reps", bench_args.reps, "timing repetitions");
  bench->add_option("--warmup", bench_args.warmup, "warmup repetitions");
  bench->callback([&] { run_bench(bench_args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error [" << e.kind() << "]: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
