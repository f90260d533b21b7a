#include "cnflow/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "cnflow/causal.hpp"
#include "cnflow/errors.hpp"
#include "cnflow/math.hpp"
#include "cnflow/rng.hpp"
#include "cnflow/tape.hpp"
#include "cnflow/trainer.hpp"

namespace cnflow {

KlEstimate kl_obs(const ScmSpec& scm, const FlowLike& model, int n,
                  std::uint64_t seed) {
  if (scm.d() != model.dim())
    throw ShapeError("kl_obs: scm and model dimension differ");
  if (n < 2) throw ConfigError("kl_obs: n must be >= 2");
  const Eigen::MatrixXd x = sample_scm(scm, n, seed);
  Eigen::VectorXd diff(n);
  const Eigen::VectorXd lp_model = model.log_prob(x);
  for (int r = 0; r < n; ++r)
    diff(r) = log_prob_true(scm, x.row(r)) - lp_model(r);
  KlEstimate est;
  est.value = diff.mean();
  est.std_error = std::sqrt((diff.array() - est.value).square().sum() /
                            double(n - 1) / double(n));
  est.n = n;
  est.seed = seed;
  return est;
}

namespace {

// Percentile intervention values per node from an observational sample.
Eigen::MatrixXd percentile_grid(const ScmSpec& scm,
                                const EvalProtocol& protocol) {
  const Eigen::MatrixXd obs = sample_scm(scm, protocol.n_observational,
                                         derive_seed(protocol.seed, "obs"));
  Eigen::MatrixXd grid(scm.d(), protocol.percentiles.size());
  for (int i = 0; i < scm.d(); ++i)
    for (size_t p = 0; p < protocol.percentiles.size(); ++p)
      grid(i, p) = quantile(obs.col(i), protocol.percentiles[p]);
  return grid;
}

}  // namespace

double ate_rmse(const ScmSpec& scm, const FlowLike& model,
                const EvalProtocol& protocol) {
  if (scm.d() != model.dim())
    throw ShapeError("ate_rmse: scm and model dimension differ");
  const Eigen::MatrixXd grid = percentile_grid(scm, protocol);
  const int np = static_cast<int>(protocol.percentiles.size());
  double sq_sum = 0.0;
  long cells = 0;
  for (int i = 0; i < scm.d(); ++i) {
    const std::vector<int> desc = descendants(scm.graph, i);
    if (desc.empty()) continue;  // sink node: no causal effect to measure
    for (int pa = 0; pa < np; ++pa)
      for (int pb = pa + 1; pb < np; ++pb) {
        const std::uint64_t s = derive_seed(
            protocol.seed, "ate/" + std::to_string(i) + "/" +
                               std::to_string(pa) + "v" + std::to_string(pb));
        const Eigen::RowVectorXd got =
            ate(model, i, grid(i, pa), grid(i, pb), protocol.n_interventional,
                s);
        const Eigen::VectorXd want =
            ate_true(scm, i, grid(i, pa), grid(i, pb),
                     protocol.n_interventional, s);
        for (int j : desc) {
          const double e = got(j) - want(j);
          sq_sum += e * e;
          ++cells;
        }
      }
  }
  return cells == 0 ? 0.0 : std::sqrt(sq_sum / double(cells));
}

double cf_rmse(const ScmSpec& scm, const FlowLike& model,
               const EvalProtocol& protocol) {
  if (scm.d() != model.dim())
    throw ShapeError("cf_rmse: scm and model dimension differ");
  const Eigen::MatrixXd grid = percentile_grid(scm, protocol);
  const int np = static_cast<int>(protocol.percentiles.size());
  double sq_sum = 0.0;
  long cells = 0;
  for (int i = 0; i < scm.d(); ++i)
    for (int p = 0; p < np; ++p) {
      const std::uint64_t s = derive_seed(
          protocol.seed,
          "cf/" + std::to_string(i) + "/" + std::to_string(p));
      const Eigen::MatrixXd xf = sample_scm(scm, protocol.n_factuals, s);
      const Eigen::MatrixXd got =
          counterfactual(model, xf, i, grid(i, p), nullptr);
      const Eigen::MatrixXd want = counterfactual_true(scm, xf, i, grid(i, p));
      sq_sum += (got - want).array().square().sum();
      cells += got.size();
    }
  return cells == 0 ? 0.0 : std::sqrt(sq_sum / double(cells));
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / double(v.size());
}

template <typename Fn>
void run_timed(int reps, int warmup, double per, Fn fn, double* median_out,
               double* mean_out) {
  std::vector<double> us;
  us.reserve(reps);
  for (int r = 0; r < warmup + reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    if (r < warmup) continue;
    us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count() /
                 per);
  }
  *median_out = median_of(us);
  *mean_out = mean_of(us);
}

}  // namespace

TimingReport timing(const FlowModel& model, const Eigen::MatrixXd& batch,
                    const TimingConfig& config) {
  if (batch.rows() == 0 || batch.cols() != model.dim())
    throw ShapeError("timing: batch must be non-empty with model width");
  if (config.reps < 1 || config.warmup < 0)
    throw ConfigError("timing: reps >= 1 and warmup >= 0 required");
  TimingReport report;
  report.reps = config.reps;
  const double per = static_cast<double>(batch.rows());
  const int n = static_cast<int>(batch.rows());

  // One optimizer step: build the loss tape, backprop, read the gradients.
  // The model itself is left untouched.
  run_timed(
      config.reps, config.warmup, per,
      [&] {
        ad::Tape tape;
        std::vector<ad::Var> leaves;
        LossParts parts =
            build_loss_tape(tape, model, batch, false, 0.0, leaves);
        tape.backward(parts.loss);
        volatile double sink = 0.0;
        for (ad::Var v : leaves) sink += tape.grad_of(v)(0, 0);
        (void)sink;
      },
      &report.train_step_us, &report.train_step_us_mean);

  run_timed(
      config.reps, config.warmup, per,
      [&] {
        volatile double sink = model.log_prob(batch).sum();
        (void)sink;
      },
      &report.eval_us, &report.eval_us_mean);

  std::uint64_t draw = 0;
  run_timed(
      config.reps, config.warmup, per,
      [&] {
        volatile double sink =
            model.sample(n, derive_seed(config.seed, std::to_string(draw++)))
                .sum();
        (void)sink;
      },
      &report.sample_us, &report.sample_us_mean);
  return report;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IOError("cannot write " + path.string());
  f << text;
  if (!f) throw IOError("write failed for " + path.string());
}

std::string samples_csv(const Eigen::MatrixXd& x) {
  std::ostringstream out;
  out.precision(17);
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    out << (j ? "," : "") << "x" << (j + 1);
  out << "\n";
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) out << (j ? "," : "") << x(r, j);
    out << "\n";
  }
  return out.str();
}

constexpr int kHistBins = 40;
constexpr int kKdeGrid = 25;

std::string hist_csv(const Eigen::MatrixXd& x, const Eigen::VectorXd& lo,
                     const Eigen::VectorXd& hi) {
  std::ostringstream out;
  out.precision(17);
  out << "dim,bin_lo,bin_hi,count\n";
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double w = (hi(j) - lo(j)) / kHistBins;
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(kHistBins);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      int b = static_cast<int>((x(r, j) - lo(j)) / w);
      b = std::clamp(b, 0, kHistBins - 1);
      counts(b) += 1;
    }
    for (int b = 0; b < kHistBins; ++b)
      out << (j + 1) << ',' << lo(j) + b * w << ',' << lo(j) + (b + 1) * w
          << ',' << counts(b) << "\n";
  }
  return out.str();
}

// Gaussian KDE on a fixed grid with Scott's-rule bandwidth per dimension
// (bandwidth computed from the pooled range so sources share grids).
std::string kde_csv(const Eigen::MatrixXd& x, const Eigen::VectorXd& lo,
                    const Eigen::VectorXd& hi) {
  std::ostringstream out;
  out.precision(17);
  out << "dim_a,dim_b,a,b,density\n";
  const double n = static_cast<double>(x.rows());
  const double scott = std::pow(n, -1.0 / 6.0);
  for (Eigen::Index ja = 0; ja < x.cols(); ++ja)
    for (Eigen::Index jb = ja + 1; jb < x.cols(); ++jb) {
      const double ha = std::max(1e-9, scott * (hi(ja) - lo(ja)) / 4.0);
      const double hb = std::max(1e-9, scott * (hi(jb) - lo(jb)) / 4.0);
      for (int ga = 0; ga < kKdeGrid; ++ga)
        for (int gb = 0; gb < kKdeGrid; ++gb) {
          const double a = lo(ja) + (hi(ja) - lo(ja)) * ga / (kKdeGrid - 1);
          const double b = lo(jb) + (hi(jb) - lo(jb)) * gb / (kKdeGrid - 1);
          double dens = 0.0;
          for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double za = (x(r, ja) - a) / ha;
            const double zb = (x(r, jb) - b) / hb;
            dens += std::exp(-0.5 * (za * za + zb * zb));
          }
          dens /= n * 2.0 * M_PI * ha * hb;
          out << (ja + 1) << ',' << (jb + 1) << ',' << a << ',' << b << ','
              << dens << "\n";
        }
    }
  return out.str();
}

}  // namespace

void pairplot_data(const Eigen::MatrixXd& samples_true,
                   const Eigen::MatrixXd& samples_model,
                   const std::string& dir) {
  if (samples_true.cols() != samples_model.cols())
    throw ShapeError("pairplot_data: sources have different widths");
  if (samples_true.rows() == 0 || samples_model.rows() == 0)
    throw ShapeError("pairplot_data: empty sample source");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IOError("cannot create directory " + dir + ": " + ec.message());

  // Shared per-dimension ranges so both sources bin on the same grid.
  const Eigen::Index d = samples_true.cols();
  Eigen::VectorXd lo(d), hi(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    lo(j) = std::min(samples_true.col(j).minCoeff(),
                     samples_model.col(j).minCoeff());
    hi(j) = std::max(samples_true.col(j).maxCoeff(),
                     samples_model.col(j).maxCoeff());
    if (hi(j) <= lo(j)) hi(j) = lo(j) + 1.0;  // degenerate constant column
  }
  const std::filesystem::path base(dir);
  write_text(base / "samples_true.csv", samples_csv(samples_true));
  write_text(base / "samples_model.csv", samples_csv(samples_model));
  write_text(base / "hist_true.csv", hist_csv(samples_true, lo, hi));
  write_text(base / "hist_model.csv", hist_csv(samples_model, lo, hi));
  write_text(base / "kde_true.csv", kde_csv(samples_true, lo, hi));
  write_text(base / "kde_model.csv", kde_csv(samples_model, lo, hi));
}

}  // namespace cnflow
