#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedsim/fedsim.hpp"

namespace {

using fedsim::json;

fedsim::Dataset load(const std::string& path, bool zero_one, std::size_t head) {
  fedsim::ParseOptions popt;
  popt.zero_one_labels = zero_one;
  fedsim::Dataset ds = fedsim::load_dataset(path, popt);
  if (head > 0) ds = ds.head(head);
  return ds;
}

void write_or_print(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw fedsim::Error("cannot write '" + out_path + "'");
  f << text;
}

int cmd_tune(const std::string& config_path, const std::string& out_dir,
             std::optional<int> threads, std::optional<std::uint64_t> seed) {
  std::ifstream f(config_path);
  if (!f) throw fedsim::Error("cannot read config '" + config_path + "'");
  json j = json::parse(f);
  fedsim::ExperimentConfig cfg = fedsim::config_from_json(j);
  if (threads) cfg.threads = *threads;
  if (seed) cfg.seed = *seed;
  fedsim::TuneOutcome out = fedsim::tune_and_run(cfg);
  fedsim::emit(out, out_dir);
  std::cout << fedsim::results_csv(out.rows);
  std::cerr << "wrote " << out.rows.size() << " rows to " << out_dir << " in "
            << fedsim::fmt_double(out.meta["wall_seconds"].get<double>()) << "s\n";
  return 0;
}

struct RunArgs {
  std::string data;
  bool zero_one = false;
  std::size_t head = 0;
  std::string alg = "local-sgd";
  double mu = 0;
  int M = 1;
  int K = 1;
  long long R = 1;
  double eta = 0.1;
  double beta = 0;
  double lambda_internal = 0;
  double nu = 1.25;
  std::string metric = "loss";
  std::string sampling = "with-replacement";
  std::string oracle_case = "same-sample";
  double bound_b = 10.0;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out;
};

int cmd_run(const RunArgs& a) {
  const fedsim::Dataset ds = load(a.data, a.zero_one, a.head);
  const fedsim::GlmProblem p(ds, a.mu);

  fedsim::SingleRunSpec spec;
  spec.alg = fedsim::parse_alg(a.alg);
  spec.mu = a.mu;
  spec.M = a.M;
  spec.K = a.K;
  spec.R = a.R;
  spec.eta = a.eta;
  spec.beta = a.beta;
  spec.lambda_internal = a.lambda_internal;
  spec.nu = a.nu;
  spec.sampling = a.sampling == "single-pass" ? fedsim::SamplingMode::SinglePass
                                              : fedsim::SamplingMode::WithReplacement;
  spec.oracle_case = a.oracle_case == "different-samples" ? fedsim::OracleCase::DifferentSamples
                                                          : fedsim::OracleCase::SameSample;
  spec.n_threads = a.threads;
  spec.truncate_on_divergence = false;

  if (a.metric == "rel-subopt") {
    spec.metric = fedsim::MetricKind::RelSubopt;
    const fedsim::NewtonResult nr = fedsim::newton_reference(p, {});
    if (!nr.converged) throw fedsim::Error("reference minimizer did not converge; use --metric loss");
    spec.fstar = nr.value;
  } else if (a.metric == "loss") {
    spec.metric = fedsim::MetricKind::ValLoss;  // no transform; observes the training objective
  } else {
    throw fedsim::ConfigError("--metric must be 'loss' or 'rel-subopt'");
  }

  fedsim::Constants constants;
  if (spec.alg == fedsim::AlgKind::Fedsn) {
    constants = fedsim::estimate_constants(p, ds.count(), fedsim::rng::Stream(a.seed).derive(0xC05Fu),
                                           a.bound_b);
    spec.constants = &constants;
  }

  const fedsim::RunRecord rec =
      fedsim::run_single(p, nullptr, spec, fedsim::run_seed_stream(a.seed, 1, 0, 0, 0));

  json t;
  t["alg"] = a.alg;
  t["mu"] = a.mu;
  t["M"] = a.M;
  t["K"] = a.K;
  t["R"] = a.R;
  t["eta"] = a.eta;
  t["beta"] = a.beta;
  t["lambda_internal"] = a.lambda_internal;
  t["metric"] = rec.metric_trajectory;
  t["rounds"] = rec.rounds_at;
  t["best"] = rec.best;
  t["final"] = rec.final_metric;
  t["oracle_calls"] = rec.ledger.samples_drawn;
  t["rounds_used"] = rec.ledger.rounds;
  t["diverged"] = rec.diverged;
  if (!rec.note.empty()) t["note"] = rec.note;
  write_or_print(t.dump(2) + "\n", a.out);
  return rec.diverged ? 2 : 0;
}

int cmd_newton_ref(const std::string& data, bool zero_one, std::size_t head, double mu, double tol,
                   int max_iters, const std::string& out) {
  const fedsim::Dataset ds = load(data, zero_one, head);
  const fedsim::GlmProblem p(ds, mu);
  fedsim::NewtonOptions opt;
  opt.tol = tol;
  opt.max_iters = max_iters;
  const fedsim::NewtonResult nr = fedsim::newton_reference(p, {}, opt);
  json j;
  j["value"] = nr.value;
  j["grad_norm"] = nr.grad_norm;
  j["iterations"] = nr.iterations;
  j["converged"] = nr.converged;
  j["floored"] = nr.floored;
  j["x_norm"] = fedsim::vec::norm2(nr.x);
  write_or_print(j.dump(2) + "\n", out);
  return nr.converged ? 0 : 2;
}

int cmd_parse_check(const std::string& data, bool zero_one, std::size_t dim_override,
                    const std::string& out) {
  fedsim::ParseOptions popt;
  popt.zero_one_labels = zero_one;
  popt.dim_override = dim_override;
  const fedsim::Dataset ds = fedsim::load_dataset(data, popt);
  json j;
  j["rows"] = ds.count();
  j["dim"] = ds.dim;
  j["positives"] = ds.positives();
  j["max_row_norm"] = fedsim::max_row_norm(ds);
  write_or_print(j.dump(2) + "\n", out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simulator for intermittent-communication stochastic optimization"};
  app.require_subcommand(1);

  // tune
  std::string tune_config, tune_out = "out";
  std::optional<int> tune_threads;
  std::optional<std::uint64_t> tune_seed;
  auto* tune = app.add_subcommand("tune", "run the full tuning protocol from a JSON config");
  tune->add_option("--config", tune_config, "experiment config (JSON)")->required();
  tune->add_option("--out", tune_out, "output directory");
  tune->add_option("--threads", tune_threads, "worker threads (overrides config)");
  tune->add_option("--seed", tune_seed, "master seed (overrides config)");

  // run
  RunArgs ra;
  auto* run = app.add_subcommand("run", "single run with explicit hyperparameters");
  run->add_option("--data", ra.data, "dataset path")->required();
  run->add_flag("--zero-one-labels", ra.zero_one, "accept {0,1} labels");
  run->add_option("--head", ra.head, "use only the first N rows");
  run->add_option("--alg", ra.alg,
                  "fedsn | fedsn-lite | fedac1 | fedac2 | local-sgd | minibatch-sgd");
  run->add_option("--mu", ra.mu, "L2 coefficient");
  run->add_option("--machines,-M", ra.M, "machine count");
  run->add_option("--local-steps,-K", ra.K, "local steps per round");
  run->add_option("--rounds,-R", ra.R, "communication rounds");
  run->add_option("--eta", ra.eta, "step size");
  run->add_option("--beta", ra.beta, "heavy-ball coefficient");
  run->add_option("--lambda-internal", ra.lambda_internal, "fedac internal regularization");
  run->add_option("--nu", ra.nu, "fedsn-lite damping numerator");
  run->add_option("--metric", ra.metric, "loss | rel-subopt");
  run->add_option("--sampling", ra.sampling, "with-replacement | single-pass");
  run->add_option("--oracle-case", ra.oracle_case, "same-sample | different-samples");
  run->add_option("--B", ra.bound_b, "iterate-radius scale for fedsn");
  run->add_option("--seed", ra.seed, "seed");
  run->add_option("--threads", ra.threads, "threads across machines");
  run->add_option("--out", ra.out, "write the run record here instead of stdout");

  // newton-ref
  std::string nr_data, nr_out;
  bool nr_zero_one = false;
  std::size_t nr_head = 0;
  double nr_mu = 0, nr_tol = 1e-12;
  int nr_iters = 100;
  auto* nref = app.add_subcommand("newton-ref", "dense Newton reference optimum");
  nref->add_option("--data", nr_data, "dataset path")->required();
  nref->add_flag("--zero-one-labels", nr_zero_one, "accept {0,1} labels");
  nref->add_option("--head", nr_head, "use only the first N rows");
  nref->add_option("--mu", nr_mu, "L2 coefficient");
  nref->add_option("--tol", nr_tol, "gradient-norm tolerance");
  nref->add_option("--max-iters", nr_iters, "iteration cap");
  nref->add_option("--out", nr_out, "write the result here instead of stdout");

  // parse-check
  std::string pc_data, pc_out;
  bool pc_zero_one = false;
  std::size_t pc_dim = 0;
  auto* pc = app.add_subcommand("parse-check", "validate a dataset and print a summary");
  pc->add_option("--data", pc_data, "dataset path")->required();
  pc->add_flag("--zero-one-labels", pc_zero_one, "accept {0,1} labels");
  pc->add_option("--dim", pc_dim, "force the feature dimension");
  pc->add_option("--out", pc_out, "write the summary here instead of stdout");

  // print-schema
  auto* ps = app.add_subcommand("print-schema", "describe the tune config format");

  CLI11_PARSE(app, argc, argv);

  try {
    if (tune->parsed()) return cmd_tune(tune_config, tune_out, tune_threads, tune_seed);
    if (run->parsed()) return cmd_run(ra);
    if (nref->parsed()) return cmd_newton_ref(nr_data, nr_zero_one, nr_head, nr_mu, nr_tol, nr_iters, nr_out);
    if (pc->parsed()) return cmd_parse_check(pc_data, pc_zero_one, pc_dim, pc_out);
    if (ps->parsed()) {
      std::cout << fedsim::config_schema().dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
