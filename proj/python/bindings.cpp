#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "cnflow/causal.hpp"
#include "cnflow/data.hpp"
#include "cnflow/errors.hpp"
#include "cnflow/experiment.hpp"
#include "cnflow/flow.hpp"
#include "cnflow/metrics.hpp"
#include "cnflow/rng.hpp"
#include "cnflow/scm.hpp"
#include "cnflow/trainer.hpp"

namespace py = pybind11;
using namespace cnflow;

namespace {

// Value-semantics facade shared by trained flows and exact SCM oracles.
struct PyFlow {
  std::shared_ptr<FlowLike> impl;

  const FlowLike& ref() const { return *impl; }
  FlowModel* trained() const { return dynamic_cast<FlowModel*>(impl.get()); }

  int dim() const { return impl->dim(); }
  std::string label() const {
    const FlowModel* m = trained();
    return m != nullptr ? design_label(m->design) : "oracle";
  }
};

DesignChoice make_design(const std::string& direction, const std::string& mask,
                         int layers, const std::string& transformer,
                         const std::string& base, bool learn_base,
                         const std::vector<int>& hidden) {
  DesignChoice d;
  d.direction = direction_from_string(direction);
  d.mask = mask_from_string(mask);
  d.layers = layers;
  d.transformer = transformer_from_string(transformer);
  d.base = base_from_string(base);
  d.learnable_base = learn_base;
  d.hidden = hidden;
  return d;
}

EvalProtocol make_protocol(int n_interventional, int n_factuals,
                           int n_observational, std::uint64_t seed) {
  EvalProtocol p;
  p.n_interventional = n_interventional;
  p.n_factuals = n_factuals;
  p.n_observational = n_observational;
  p.seed = seed;
  return p;
}

py::dict history_dict(const TrainHistory& h) {
  py::dict d;
  d["epoch"] = h.epoch;
  d["train_nll"] = h.train_nll;
  d["val_nll"] = h.val_nll;
  d["reg"] = h.reg;
  d["lr"] = h.lr;
  d["aborted"] = h.aborted;
  return d;
}

}  // namespace

PYBIND11_MODULE(cnflow, m) {
  m.doc() = "causal normalizing flows: interventions, counterfactuals, and "
            "maximum-likelihood training on structural causal models";

  const auto base_exc = py::register_exception<Error>(m, "Error");
  py::register_exception<UnknownSCMError>(m, "UnknownSCMError", base_exc);
  py::register_exception<ConfigError>(m, "ConfigError", base_exc);
  py::register_exception<DomainError>(m, "DomainError", base_exc);
  py::register_exception<ShapeError>(m, "ShapeError", base_exc);

  m.def("scm_names", &scm_names, "Names of the registered synthetic SCMs.");

  m.def(
      "sample_scm",
      [](const std::string& name, int n, std::uint64_t seed) {
        return sample_scm(get_scm(name), n, seed);
      },
      py::arg("name"), py::arg("n"), py::arg("seed") = 0,
      "Draw observational samples (n x d) from a registered SCM.");

  m.def(
      "oracle",
      [](const std::string& name) {
        return PyFlow{std::make_shared<OracleFlow>(get_scm(name))};
      },
      py::arg("name"),
      "Exact SCM wrapped in the flow interface (analytic abduction).");

  m.def(
      "train_flow",
      [](const std::string& dataset, const std::string& direction,
         const std::string& mask, int layers, const std::string& transformer,
         const std::string& base, bool learn_base,
         const std::vector<int>& hidden, int epochs, double lr, int batch_size,
         bool regularize, double lam, std::uint64_t seed,
         std::tuple<int, int, int> sizes) {
        const ScmSpec scm = get_scm(dataset);
        SplitSizes split{std::get<0>(sizes), std::get<1>(sizes),
                         std::get<2>(sizes)};
        const GeneratedData data = generate_dataset(scm, split, seed);
        auto model = std::make_shared<FlowModel>(build_flow(
            make_design(direction, mask, layers, transformer, base, learn_base,
                        hidden),
            scm.graph, derive_seed(seed, "init")));
        TrainConfig config;
        config.epochs = epochs;
        config.learning_rate = lr;
        config.batch_size = batch_size;
        config.regularizer_on = regularize;
        config.lambda = lam;
        config.seed = seed;
        const TrainHistory history =
            fit(*model, data.train, data.val, config);
        return py::make_tuple(PyFlow{model}, history_dict(history));
      },
      py::arg("dataset"), py::arg("direction") = "abductive",
      py::arg("mask") = "graph", py::arg("layers") = 1,
      py::arg("transformer") = "affine", py::arg("base") = "normal",
      py::arg("learn_base") = false,
      py::arg("hidden") = std::vector<int>{32, 32, 32},
      py::arg("epochs") = 1000, py::arg("lr") = 0.001,
      py::arg("batch_size") = 256, py::arg("regularize") = false,
      py::arg("lam") = 1.0, py::arg("seed") = 0,
      py::arg("sizes") = std::make_tuple(20000, 2500, 2500),
      "Sample a dataset from the named SCM and fit a flow by maximum "
      "likelihood. Returns (flow, history).");

  m.def(
      "load",
      [](const std::string& path) {
        return PyFlow{std::make_shared<FlowModel>(load_checkpoint(path))};
      },
      py::arg("path"), "Load a training checkpoint.");

  py::class_<PyFlow>(m, "Flow")
      .def_property_readonly("dim", &PyFlow::dim)
      .def_property_readonly("design", &PyFlow::label)
      .def(
          "log_prob",
          [](const PyFlow& f, const Eigen::MatrixXd& x) {
            return f.ref().log_prob(x);
          },
          py::arg("x"), "Per-row log-density of (n x d) observations.")
      .def(
          "forward",
          [](const PyFlow& f, const Eigen::MatrixXd& x) {
            EvalResult r = f.ref().forward(x);
            return py::make_tuple(r.u, r.logdet);
          },
          py::arg("x"), "Abduction x -> (u, logdet).")
      .def(
          "inverse",
          [](const PyFlow& f, const Eigen::MatrixXd& u) {
            return f.ref().inverse(u);
          },
          py::arg("u"), "Generation u -> x.")
      .def(
          "sample",
          [](const PyFlow& f, int n, std::uint64_t seed) {
            return f.ref().sample(n, seed);
          },
          py::arg("n"), py::arg("seed") = 0)
      .def(
          "intervene",
          [](const PyFlow& f, int node, double value, int n,
             std::uint64_t seed) {
            InterventionQuery q;
            q.target = node;
            q.value = value;
            q.n = n;
            q.seed = seed;
            return intervene(f.ref(), q);
          },
          py::arg("node"), py::arg("value"), py::arg("n") = 1,
          py::arg("seed") = 0,
          "Sample from the interventional distribution do(x_node = value); "
          "node is a 0-based column index.")
      .def(
          "counterfactual",
          [](const PyFlow& f, const Eigen::MatrixXd& factuals, int node,
             double value) {
            return counterfactual(f.ref(), factuals, node, value);
          },
          py::arg("factuals"), py::arg("node"), py::arg("value"),
          "Row-wise counterfactuals under do(x_node = value); node is a "
          "0-based column index.")
      .def(
          "ate",
          [](const PyFlow& f, int node, double a, double b, int n,
             std::uint64_t seed) {
            return ate(f.ref(), node, a, b, n, seed);
          },
          py::arg("node"), py::arg("a"), py::arg("b"), py::arg("n") = 10000,
          py::arg("seed") = 0,
          "Average treatment effect E[x | do(a)] - E[x | do(b)] with common "
          "random numbers.")
      .def(
          "consistency",
          [](const PyFlow& f, const Eigen::MatrixXd& data) {
            return consistency_score(f.ref(), data);
          },
          py::arg("data"),
          "Mean masked Jacobian norm; 0 for causally consistent maps.")
      .def(
          "save",
          [](const PyFlow& f, const std::string& path) {
            const FlowModel* model = f.trained();
            if (model == nullptr)
              throw ConfigError("only trained flows can be checkpointed");
            save_checkpoint(*model, TrainHistory{}, path);
          },
          py::arg("path"), "Write a checkpoint (JSON).")
      .def("__repr__", [](const PyFlow& f) {
        return "<cnflow.Flow " + f.label() + " d=" +
               std::to_string(f.dim()) + ">";
      });

  m.def(
      "kl_obs",
      [](const std::string& dataset, const PyFlow& flow, int n,
         std::uint64_t seed) {
        const KlEstimate e = kl_obs(get_scm(dataset), flow.ref(), n, seed);
        return py::make_tuple(e.value, e.std_error);
      },
      py::arg("dataset"), py::arg("flow"), py::arg("n") = 2500,
      py::arg("seed") = 0,
      "Monte-Carlo KL(p_true || p_flow) on observational samples; returns "
      "(value, std_error).");

  m.def(
      "ate_rmse",
      [](const std::string& dataset, const PyFlow& flow, int n_interventional,
         int n_factuals, int n_observational, std::uint64_t seed) {
        return ate_rmse(get_scm(dataset), flow.ref(),
                        make_protocol(n_interventional, n_factuals,
                                      n_observational, seed));
      },
      py::arg("dataset"), py::arg("flow"), py::arg("n_interventional") = 10000,
      py::arg("n_factuals") = 2048, py::arg("n_observational") = 10000,
      py::arg("seed") = 0);

  m.def(
      "cf_rmse",
      [](const std::string& dataset, const PyFlow& flow, int n_interventional,
         int n_factuals, int n_observational, std::uint64_t seed) {
        return cf_rmse(get_scm(dataset), flow.ref(),
                       make_protocol(n_interventional, n_factuals,
                                     n_observational, seed));
      },
      py::arg("dataset"), py::arg("flow"), py::arg("n_interventional") = 10000,
      py::arg("n_factuals") = 2048, py::arg("n_observational") = 10000,
      py::arg("seed") = 0);
}
