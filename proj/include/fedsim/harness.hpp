#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsim/baselines.hpp"
#include "fedsim/dataio.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/fedsn.hpp"
#include "fedsim/fedsn_lite.hpp"
#include "fedsim/glm.hpp"
#include "fedsim/parallel.hpp"
#include "fedsim/record.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

using json = nlohmann::json;

enum class AlgKind { Fedsn, FedsnLite, FedAc1, FedAc2, LocalSgd, MinibatchSgd };
enum class MetricKind { RelSubopt, ValLoss };

inline const char* alg_name(AlgKind a) {
  switch (a) {
    case AlgKind::Fedsn: return "fedsn";
    case AlgKind::FedsnLite: return "fedsn-lite";
    case AlgKind::FedAc1: return "fedac1";
    case AlgKind::FedAc2: return "fedac2";
    case AlgKind::LocalSgd: return "local-sgd";
    case AlgKind::MinibatchSgd: return "minibatch-sgd";
  }
  return "?";
}

inline AlgKind parse_alg(const std::string& s) {
  if (s == "fedsn") return AlgKind::Fedsn;
  if (s == "fedsn-lite") return AlgKind::FedsnLite;
  if (s == "fedac1") return AlgKind::FedAc1;
  if (s == "fedac2") return AlgKind::FedAc2;
  if (s == "local-sgd") return AlgKind::LocalSgd;
  if (s == "minibatch-sgd") return AlgKind::MinibatchSgd;
  throw ConfigError("unknown algorithm '" + s + "'");
}

inline double relative_suboptimality(double value, double fstar) {
  if (!(fstar > 0)) throw ConfigError("relative suboptimality needs fstar > 0");
  return (value - fstar) / fstar;
}

// Shortest decimal string that parses back to the same double; keeps emitted
// files byte-stable without 17-digit noise.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline const std::vector<double> kDefaultEtaGrid = {1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2,
                                                    5e-2, 0.1,  0.2,  0.5,  1.0,  2.0,  5.0,  10.0,
                                                    20.0};
inline const std::vector<double> kDefaultBetaGrid = {0.0, 0.1, 0.3, 0.5, 0.7, 0.9};
inline const std::vector<double> kDefaultLambdaInternalGrid = {1e-2, 1e-3, 1e-4, 1e-5, 1e-6};

struct ExperimentConfig {
  std::string data;
  bool zero_one_labels = false;
  std::vector<AlgKind> algs;
  std::vector<double> mu_list{0.0};
  std::vector<int> m_list{1};
  std::vector<long long> r_list{1};
  long long kr = 0;  // exactly one of kr / k is set
  int k = 0;
  std::vector<double> eta_grid = kDefaultEtaGrid;
  std::vector<double> beta_grid = kDefaultBetaGrid;
  std::vector<double> lambda_internal_grid = kDefaultLambdaInternalGrid;
  double nu = 1.25;
  int tuning_reps = 20;
  int final_reps = 20;
  std::uint64_t seed = 1;
  MetricKind metric = MetricKind::RelSubopt;
  SamplingMode sampling = SamplingMode::WithReplacement;
  std::size_t train_head = 0;  // > 0: train on the first rows, hold out the rest
  std::optional<double> fstar;
  int threads = 1;
  bool record_trajectories = true;
  double bound_b = 10.0;
  std::size_t probe_budget = 0;  // 0: exact enumeration
  OracleCase oracle_case = OracleCase::SameSample;
};

namespace detail {

inline std::vector<double> json_number_list(const json& v, const char* key) {
  std::vector<double> out;
  if (v.is_number()) {
    out.push_back(v.get<double>());
  } else if (v.is_array()) {
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(std::string(key) + " must contain numbers");
      out.push_back(e.get<double>());
    }
  } else {
    throw ConfigError(std::string(key) + " must be a number or an array of numbers");
  }
  if (out.empty()) throw ConfigError(std::string(key) + " must not be empty");
  return out;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  static const char* known[] = {"data",       "zero_one_labels", "algs",        "mu",
                                "M",          "R",               "KR",          "K",
                                "eta_grid",   "beta_grid",       "lambda_internal_grid",
                                "nu",         "tuning_reps",     "final_reps",  "seed",
                                "metric",     "sampling",        "train_head",  "fstar",
                                "threads",    "record_trajectories",            "B",
                                "probe_budget", "oracle_case"};
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || (item.key() == k);
    if (!ok) throw ConfigError("unknown config key '" + item.key() + "'");
  }
  ExperimentConfig c;
  if (!j.contains("data") || !j["data"].is_string()) throw ConfigError("config needs a string 'data' path");
  c.data = j["data"].get<std::string>();
  if (j.contains("zero_one_labels")) c.zero_one_labels = j["zero_one_labels"].get<bool>();
  if (!j.contains("algs") || !j["algs"].is_array() || j["algs"].empty())
    throw ConfigError("config needs a nonempty 'algs' array");
  for (const auto& a : j["algs"]) c.algs.push_back(parse_alg(a.get<std::string>()));
  if (j.contains("mu")) c.mu_list = detail::json_number_list(j["mu"], "mu");
  if (j.contains("M")) {
    c.m_list.clear();
    for (double v : detail::json_number_list(j["M"], "M")) c.m_list.push_back(static_cast<int>(v));
  }
  if (j.contains("R")) {
    c.r_list.clear();
    for (double v : detail::json_number_list(j["R"], "R")) c.r_list.push_back(static_cast<long long>(v));
  }
  if (j.contains("KR")) c.kr = j["KR"].get<long long>();
  if (j.contains("K")) c.k = j["K"].get<int>();
  if ((c.kr > 0) == (c.k > 0)) throw ConfigError("set exactly one of 'KR' (fixed K*R) or 'K'");
  if (j.contains("eta_grid")) c.eta_grid = detail::json_number_list(j["eta_grid"], "eta_grid");
  if (j.contains("beta_grid")) c.beta_grid = detail::json_number_list(j["beta_grid"], "beta_grid");
  if (j.contains("lambda_internal_grid"))
    c.lambda_internal_grid = detail::json_number_list(j["lambda_internal_grid"], "lambda_internal_grid");
  if (j.contains("nu")) c.nu = j["nu"].get<double>();
  if (j.contains("tuning_reps")) c.tuning_reps = j["tuning_reps"].get<int>();
  if (j.contains("final_reps")) c.final_reps = j["final_reps"].get<int>();
  if (c.tuning_reps < 1 || c.final_reps < 1) throw ConfigError("reps must be >= 1");
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("metric")) {
    const std::string m = j["metric"].get<std::string>();
    if (m == "rel-subopt")
      c.metric = MetricKind::RelSubopt;
    else if (m == "val-loss")
      c.metric = MetricKind::ValLoss;
    else
      throw ConfigError("metric must be 'rel-subopt' or 'val-loss'");
  }
  if (j.contains("sampling")) {
    const std::string s = j["sampling"].get<std::string>();
    if (s == "with-replacement")
      c.sampling = SamplingMode::WithReplacement;
    else if (s == "single-pass")
      c.sampling = SamplingMode::SinglePass;
    else
      throw ConfigError("sampling must be 'with-replacement' or 'single-pass'");
  }
  if (j.contains("train_head")) c.train_head = j["train_head"].get<std::size_t>();
  if (j.contains("fstar") && !j["fstar"].is_null()) c.fstar = j["fstar"].get<double>();
  if (j.contains("threads")) c.threads = j["threads"].get<int>();
  if (j.contains("record_trajectories")) c.record_trajectories = j["record_trajectories"].get<bool>();
  if (j.contains("B")) c.bound_b = j["B"].get<double>();
  if (j.contains("probe_budget")) c.probe_budget = j["probe_budget"].get<std::size_t>();
  if (j.contains("oracle_case")) {
    const std::string o = j["oracle_case"].get<std::string>();
    if (o == "same-sample")
      c.oracle_case = OracleCase::SameSample;
    else if (o == "different-samples")
      c.oracle_case = OracleCase::DifferentSamples;
    else
      throw ConfigError("oracle_case must be 'same-sample' or 'different-samples'");
  }
  if (c.metric == MetricKind::ValLoss && c.train_head == 0)
    throw ConfigError("metric 'val-loss' needs 'train_head' > 0 to define the held-out rows");
  if (c.metric == MetricKind::RelSubopt && c.fstar && c.mu_list.size() > 1)
    throw ConfigError("explicit 'fstar' only makes sense with a single 'mu'");
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["data"] = c.data;
  j["zero_one_labels"] = c.zero_one_labels;
  json algs = json::array();
  for (AlgKind a : c.algs) algs.push_back(alg_name(a));
  j["algs"] = algs;
  j["mu"] = c.mu_list;
  j["M"] = c.m_list;
  j["R"] = c.r_list;
  if (c.kr > 0)
    j["KR"] = c.kr;
  else
    j["K"] = c.k;
  j["eta_grid"] = c.eta_grid;
  j["beta_grid"] = c.beta_grid;
  j["lambda_internal_grid"] = c.lambda_internal_grid;
  j["nu"] = c.nu;
  j["tuning_reps"] = c.tuning_reps;
  j["final_reps"] = c.final_reps;
  j["seed"] = c.seed;
  j["metric"] = (c.metric == MetricKind::RelSubopt) ? "rel-subopt" : "val-loss";
  j["sampling"] = (c.sampling == SamplingMode::WithReplacement) ? "with-replacement" : "single-pass";
  j["train_head"] = c.train_head;
  if (c.fstar)
    j["fstar"] = *c.fstar;
  else
    j["fstar"] = nullptr;
  j["threads"] = c.threads;
  j["record_trajectories"] = c.record_trajectories;
  j["B"] = c.bound_b;
  j["probe_budget"] = c.probe_budget;
  j["oracle_case"] = (c.oracle_case == OracleCase::SameSample) ? "same-sample" : "different-samples";
  return j;
}

inline json config_schema() {
  auto field = [](const char* type, const char* dflt, const char* doc) {
    return json{{"type", type}, {"default", dflt}, {"doc", doc}};
  };
  json s;
  s["data"] = field("string", "(required)", "dataset path; '.gz' suffix enables gzip");
  s["zero_one_labels"] = field("bool", "false", "accept {0,1} labels and remap 0 to -1");
  s["algs"] = field("array of string", "(required)",
                    "any of fedsn, fedsn-lite, fedac1, fedac2, local-sgd, minibatch-sgd");
  s["mu"] = field("number or array", "[0]", "L2 coefficient(s) of the training objective");
  s["M"] = field("number or array", "[1]", "machine count(s)");
  s["R"] = field("number or array", "[1]", "communication-round budget(s)");
  s["KR"] = field("number", "unset", "fixed K*R product; K = KR / R per row (exclusive with K)");
  s["K"] = field("number", "unset", "local steps per round (exclusive with KR)");
  s["eta_grid"] = field("array", "1e-4 .. 20 (17 points)", "step-size grid for tuned algorithms");
  s["beta_grid"] = field("array", "[0, 0.1, 0.3, 0.5, 0.7, 0.9]",
                         "heavy-ball grid for fedsn-lite / local-sgd / minibatch-sgd");
  s["lambda_internal_grid"] =
      field("array", "[1e-2 .. 1e-6]",
            "fedac oracle-regularization grid, used only when mu = 0; with mu > 0 fedac uses mu "
            "as its strong-convexity estimate and adds no internal term");
  s["nu"] = field("number", "1.25", "fedsn-lite damping numerator");
  s["tuning_reps"] = field("number", "20", "repetitions per grid point during tuning");
  s["final_reps"] = field("number", "20", "repetitions at the selected grid point");
  s["seed"] = field("number", "1", "master seed; tuning and final phases use disjoint substreams");
  s["metric"] = field("string", "rel-subopt",
                      "'rel-subopt' ((F - F*) / F*, F* from Newton unless 'fstar' given) or "
                      "'val-loss' (held-out unregularized loss; needs train_head)");
  s["sampling"] = field("string", "with-replacement",
                        "'with-replacement' or 'single-pass' (per-machine permutation, errors on "
                        "exhaustion)");
  s["train_head"] = field("number", "0", "train on the first N rows and hold out the rest");
  s["fstar"] = field("number or null", "null", "reference optimum override (single mu only)");
  s["threads"] = field("number", "1", "worker threads; outputs are identical for any value");
  s["record_trajectories"] = field("bool", "true", "write trajectories.jsonl for final reps");
  s["B"] = field("number", "10", "iterate-radius scale used by fedsn's derived parameters");
  s["probe_budget"] = field("number", "0", "samples for the noise estimate; 0 enumerates exactly");
  s["oracle_case"] = field("string", "same-sample",
                           "'same-sample' or 'different-samples' curvature/gradient pairing in "
                           "fedsn's subsolver");
  s["results.csv columns"] = field(
      "-", "-",
      "alg,mu,M,K,R,eta,beta,lambda_internal,metric_mean,metric_std,reps,oracle_calls; "
      "metric_* aggregate the best metric seen at any round over final reps (std uses n-1); "
      "oracle_calls counts drawn samples; nan marks parameters an algorithm does not tune; an "
      "all-divergent grid yields metric inf with reps 0");
  return s;
}

// --- single runs ---------------------------------------------------------

struct SingleRunSpec {
  AlgKind alg = AlgKind::LocalSgd;
  double mu = 0;
  int M = 1;
  int K = 1;
  long long R = 1;
  double eta = 0.1;
  double beta = 0;
  double lambda_internal = 0;
  double nu = 1.25;
  SamplingMode sampling = SamplingMode::WithReplacement;
  OracleCase oracle_case = OracleCase::SameSample;
  int n_threads = 1;
  bool truncate_on_divergence = true;
  MetricKind metric = MetricKind::RelSubopt;
  double fstar = std::numeric_limits<double>::quiet_NaN();
  const Constants* constants = nullptr;  // required for fedsn
};

namespace detail {

inline void apply_rel_subopt(RunRecord& rec, double fstar) {
  for (double& v : rec.metric_trajectory) v = relative_suboptimality(v, fstar);
  rec.best = relative_suboptimality(rec.best, fstar);
  rec.final_metric = relative_suboptimality(rec.final_metric, fstar);
}

}  // namespace detail

inline RunRecord run_single(const GlmProblem& train, const GlmProblem* eval, const SingleRunSpec& s,
                            rng::Stream run_stream) {
  RunRecord rec;
  switch (s.alg) {
    case AlgKind::LocalSgd: {
      BaselineOptions o;
      o.sampling = s.sampling;
      o.n_threads = s.n_threads;
      o.eval = eval;
      o.truncate_on_divergence = s.truncate_on_divergence;
      rec = local_sgd(train, {}, s.eta, s.beta, s.M, s.K, s.R, run_stream, o);
      break;
    }
    case AlgKind::MinibatchSgd: {
      BaselineOptions o;
      o.sampling = s.sampling;
      o.n_threads = s.n_threads;
      o.eval = eval;
      o.truncate_on_divergence = s.truncate_on_divergence;
      rec = minibatch_sgd(train, {}, s.eta, s.beta, s.M, s.K, s.R, run_stream, o);
      break;
    }
    case AlgKind::FedAc1:
    case AlgKind::FedAc2: {
      const double sc = (s.mu > 0) ? s.mu : s.lambda_internal;
      FedAcParams prm = fedac_params(s.alg == AlgKind::FedAc1 ? FedAcVariant::I : FedAcVariant::II,
                                     s.eta, sc, s.K);
      prm.lambda_internal = (s.mu > 0) ? 0.0 : s.lambda_internal;
      BaselineOptions o;
      o.sampling = s.sampling;
      o.n_threads = s.n_threads;
      o.eval = eval;
      o.truncate_on_divergence = s.truncate_on_divergence;
      rec = fedac(train, {}, prm, s.M, s.K, s.R, run_stream, o);
      break;
    }
    case AlgKind::FedsnLite: {
      LiteOptions o;
      o.nu = s.nu;
      o.beta = s.beta;
      o.sampling = s.sampling;
      o.n_threads = s.n_threads;
      o.eval = eval;
      o.truncate_on_divergence = s.truncate_on_divergence;
      rec = fedsn_lite(train, {}, s.M, s.K, s.R, s.eta, run_stream, o);
      break;
    }
    case AlgKind::Fedsn: {
      if (!s.constants) throw ConfigError("fedsn needs derived problem constants");
      FedsnOptions o;
      o.oracle_case = s.oracle_case;
      o.sampling = s.sampling;
      o.n_threads = s.n_threads;
      o.eval = eval;
      o.truncate_on_divergence = s.truncate_on_divergence;
      rec = fedsn(train, {}, s.M, s.K, s.R, *s.constants, run_stream, o);
      break;
    }
  }
  if (s.metric == MetricKind::RelSubopt) detail::apply_rel_subopt(rec, s.fstar);
  return rec;
}

// --- tuning protocol ------------------------------------------------------

struct ResultRow {
  std::string alg;
  double mu = 0;
  int M = 1;
  int K = 1;
  long long R = 1;
  double eta = std::numeric_limits<double>::quiet_NaN();
  double beta = std::numeric_limits<double>::quiet_NaN();
  double lambda_internal = std::numeric_limits<double>::quiet_NaN();
  double metric_mean = std::numeric_limits<double>::infinity();
  double metric_std = std::numeric_limits<double>::infinity();
  int reps = 0;
  std::uint64_t oracle_calls = 0;
  bool no_stable = false;
};

struct TuneOutcome {
  std::vector<ResultRow> rows;
  std::vector<json> trajectories;
  json meta;
};

// Seed-stream layout: phase 0 tunes, phase 1 finalizes; the derivation path
// (phase, row, grid point, rep) keeps every run's stream distinct and the two
// phases disjoint.
inline rng::Stream run_seed_stream(std::uint64_t master, int phase, std::size_t row, std::size_t grid,
                                   int rep) {
  return rng::Stream(master)
      .derive(static_cast<std::uint64_t>(phase))
      .derive(static_cast<std::uint64_t>(row))
      .derive(static_cast<std::uint64_t>(grid))
      .derive(static_cast<std::uint64_t>(rep));
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

struct GridPoint {
  double eta = std::numeric_limits<double>::quiet_NaN();
  double beta = std::numeric_limits<double>::quiet_NaN();
  double lambda_internal = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<GridPoint> grid_for(AlgKind alg, double mu, const ExperimentConfig& cfg) {
  std::vector<GridPoint> g;
  switch (alg) {
    case AlgKind::FedsnLite:
    case AlgKind::LocalSgd:
    case AlgKind::MinibatchSgd:
      for (double eta : cfg.eta_grid)
        for (double beta : cfg.beta_grid) g.push_back({eta, beta, 0.0});
      break;
    case AlgKind::FedAc1:
    case AlgKind::FedAc2:
      if (mu > 0) {
        for (double eta : cfg.eta_grid) g.push_back({eta, std::numeric_limits<double>::quiet_NaN(), 0.0});
      } else {
        for (double eta : cfg.eta_grid)
          for (double lam : cfg.lambda_internal_grid)
            g.push_back({eta, std::numeric_limits<double>::quiet_NaN(), lam});
      }
      break;
    case AlgKind::Fedsn:
      g.push_back({});  // derived parameters; nothing swept
      break;
  }
  return g;
}

}  // namespace detail

inline TuneOutcome tune_and_run(const ExperimentConfig& cfg) {
  const auto t_begin = std::chrono::steady_clock::now();
  ParseOptions popt;
  popt.zero_one_labels = cfg.zero_one_labels;
  const Dataset full = load_dataset(cfg.data, popt);
  const bool split = cfg.train_head > 0;
  if (split && cfg.train_head >= full.count())
    throw ConfigError("train_head must leave at least one held-out row");
  const Dataset train_ds = split ? full.head(cfg.train_head) : full;
  const Dataset val_ds = split ? full.tail(cfg.train_head) : Dataset{};

  // per-mu problems, references and constants -- all before any run
  std::vector<GlmProblem> train_p;
  for (double mu : cfg.mu_list) {
    if (mu < 0) throw ConfigError("mu must be >= 0");
    train_p.emplace_back(train_ds, mu);
  }
  std::optional<GlmProblem> eval_p;
  if (cfg.metric == MetricKind::ValLoss) eval_p.emplace(val_ds, 0.0);

  std::vector<double> fstar(cfg.mu_list.size(), std::numeric_limits<double>::quiet_NaN());
  if (cfg.metric == MetricKind::RelSubopt) {
    for (std::size_t i = 0; i < cfg.mu_list.size(); ++i) {
      if (cfg.fstar) {
        fstar[i] = *cfg.fstar;
      } else {
        const NewtonResult nr = newton_reference(train_p[i], {});
        if (!nr.converged)
          throw ConfigError("reference minimizer did not converge (|grad| = " +
                            fmt_double(nr.grad_norm) + "); supply 'fstar' explicitly");
        fstar[i] = nr.value;
      }
      if (!(fstar[i] > 0)) throw ConfigError("reference optimum must be positive for a relative metric");
    }
  }

  const bool wants_fedsn =
      std::find(cfg.algs.begin(), cfg.algs.end(), AlgKind::Fedsn) != cfg.algs.end();
  std::vector<Constants> constants;
  if (wants_fedsn) {
    for (std::size_t i = 0; i < cfg.mu_list.size(); ++i) {
      const std::size_t budget = cfg.probe_budget == 0 ? train_ds.count() : cfg.probe_budget;
      constants.push_back(estimate_constants(train_p[i], budget,
                                             rng::Stream(cfg.seed).derive(0xC05Fu), cfg.bound_b));
    }
  }

  struct Row {
    AlgKind alg;
    std::size_t mu_idx;
    int M;
    int K;
    long long R;
  };
  std::vector<Row> rows;
  for (AlgKind alg : cfg.algs)
    for (std::size_t mi = 0; mi < cfg.mu_list.size(); ++mi)
      for (int M : cfg.m_list)
        for (long long R : cfg.r_list) {
          int K = cfg.k;
          if (cfg.kr > 0) {
            if (R <= 0 || cfg.kr % R != 0)
              throw ConfigError("KR = " + std::to_string(cfg.kr) + " is not divisible by R = " +
                                std::to_string(R));
            K = static_cast<int>(cfg.kr / R);
          }
          if (M < 1 || K < 1 || R < 1) throw ConfigError("need M, K, R >= 1");
          rows.push_back({alg, mi, M, K, R});
        }

  // fedsn budget feasibility is a config property; fail before any compute
  for (const Row& r : rows) {
    if (r.alg != AlgKind::Fedsn) continue;
    const Hyperparams hp = derive_hyperparams(r.M, r.K, r.R, constants[r.mu_idx]);
    if (hp.required_rounds > r.R)
      throw ConfigError("fedsn row (M=" + std::to_string(r.M) + ", K=" + std::to_string(r.K) +
                        ", R=" + std::to_string(r.R) + ") infeasible: needs " +
                        std::to_string(hp.required_rounds) + " rounds; smallest workable budget about " +
                        std::to_string(feasible_rounds_estimate(r.M, r.K, r.R, constants[r.mu_idx])));
  }

  auto make_spec = [&](const Row& r, const detail::GridPoint& gp) {
    SingleRunSpec s;
    s.alg = r.alg;
    s.mu = cfg.mu_list[r.mu_idx];
    s.M = r.M;
    s.K = r.K;
    s.R = r.R;
    s.eta = gp.eta;
    s.beta = std::isnan(gp.beta) ? 0.0 : gp.beta;
    s.lambda_internal = std::isnan(gp.lambda_internal) ? 0.0 : gp.lambda_internal;
    s.nu = cfg.nu;
    s.sampling = cfg.sampling;
    s.oracle_case = cfg.oracle_case;
    s.n_threads = 1;  // parallelism lives at the job level
    s.truncate_on_divergence = true;
    s.metric = cfg.metric;
    s.fstar = fstar[r.mu_idx];
    s.constants = wants_fedsn ? &constants[r.mu_idx] : nullptr;
    return s;
  };
  const GlmProblem* eval_ptr = eval_p ? &*eval_p : nullptr;

  // phase 0: tuning
  struct TuneJob {
    std::size_t row;
    std::size_t grid;
    int rep;
  };
  std::vector<std::vector<detail::GridPoint>> grids;
  grids.reserve(rows.size());
  for (const Row& r : rows) grids.push_back(detail::grid_for(r.alg, cfg.mu_list[r.mu_idx], cfg));

  std::vector<TuneJob> jobs;
  for (std::size_t ri = 0; ri < rows.size(); ++ri)
    for (std::size_t gi = 0; gi < grids[ri].size(); ++gi)
      for (int rep = 0; rep < cfg.tuning_reps; ++rep) jobs.push_back({ri, gi, rep});

  struct TuneResult {
    double best = std::numeric_limits<double>::infinity();
    bool diverged = false;
  };
  std::vector<TuneResult> tuned(jobs.size());
  detail::parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
    const TuneJob& job = jobs[i];
    const Row& r = rows[job.row];
    const SingleRunSpec spec = make_spec(r, grids[job.row][job.grid]);
    RunRecord rec = run_single(train_p[r.mu_idx], eval_ptr, spec,
                               run_seed_stream(cfg.seed, 0, job.row, job.grid, job.rep));
    tuned[i] = {rec.best, rec.diverged};
  });

  // selection: mean best per grid point; grid points whose every rep diverged
  // are only eligible when nothing else is
  std::vector<std::size_t> chosen(rows.size());
  std::vector<bool> row_unstable(rows.size(), false);
  {
    std::vector<std::vector<double>> sums(rows.size());
    std::vector<std::vector<int>> div_count(rows.size());
    for (std::size_t ri = 0; ri < rows.size(); ++ri) {
      sums[ri].assign(grids[ri].size(), 0.0);
      div_count[ri].assign(grids[ri].size(), 0);
    }
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      sums[jobs[i].row][jobs[i].grid] += tuned[i].best;
      div_count[jobs[i].row][jobs[i].grid] += tuned[i].diverged ? 1 : 0;
    }
    for (std::size_t ri = 0; ri < rows.size(); ++ri) {
      double best_score = std::numeric_limits<double>::infinity();
      std::size_t best_gi = 0;
      bool any_stable = false;
      for (std::size_t gi = 0; gi < grids[ri].size(); ++gi) {
        const bool fully_diverged = (div_count[ri][gi] == cfg.tuning_reps);
        if (fully_diverged) continue;
        any_stable = true;
        const double score = sums[ri][gi] / cfg.tuning_reps;
        if (score < best_score) {
          best_score = score;
          best_gi = gi;
        }
      }
      chosen[ri] = best_gi;
      row_unstable[ri] = !any_stable;
    }
  }

  // phase 1: final repetitions at the selected point
  struct FinalJob {
    std::size_t row;
    int rep;
  };
  std::vector<FinalJob> fjobs;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    if (row_unstable[ri]) continue;
    for (int rep = 0; rep < cfg.final_reps; ++rep) fjobs.push_back({ri, rep});
  }
  std::vector<RunRecord> finals(fjobs.size());
  detail::parallel_for(fjobs.size(), cfg.threads, [&](std::size_t i) {
    const FinalJob& job = fjobs[i];
    const Row& r = rows[job.row];
    const SingleRunSpec spec = make_spec(r, grids[job.row][chosen[job.row]]);
    finals[i] = run_single(train_p[r.mu_idx], eval_ptr, spec,
                           run_seed_stream(cfg.seed, 1, job.row, chosen[job.row], job.rep));
  });

  // assemble
  TuneOutcome out;
  out.rows.resize(rows.size());
  std::vector<std::vector<const RunRecord*>> per_row(rows.size());
  for (std::size_t i = 0; i < fjobs.size(); ++i) per_row[fjobs[i].row].push_back(&finals[i]);

  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    const Row& r = rows[ri];
    ResultRow& row = out.rows[ri];
    row.alg = alg_name(r.alg);
    row.mu = cfg.mu_list[r.mu_idx];
    row.M = r.M;
    row.K = r.K;
    row.R = r.R;
    if (row_unstable[ri]) {
      row.no_stable = true;
      continue;
    }
    const detail::GridPoint& gp = grids[ri][chosen[ri]];
    row.eta = gp.eta;
    row.beta = gp.beta;
    row.lambda_internal = gp.lambda_internal;
    const auto& recs = per_row[ri];
    row.reps = static_cast<int>(recs.size());
    double mean = 0;
    for (const RunRecord* rec : recs) mean += rec->best;
    mean /= recs.size();
    double var = 0;
    for (const RunRecord* rec : recs) var += (rec->best - mean) * (rec->best - mean);
    row.metric_mean = mean;
    row.metric_std = recs.size() > 1 ? std::sqrt(var / (recs.size() - 1)) : 0.0;
    for (const RunRecord* rec : recs) row.oracle_calls = std::max(row.oracle_calls, rec->ledger.samples_drawn);
  }

  // canonical order: alg, mu, M, K, R
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const ResultRow &ra = out.rows[a], &rb = out.rows[b];
    if (ra.alg != rb.alg) return ra.alg < rb.alg;
    if (ra.mu != rb.mu) return ra.mu < rb.mu;
    if (ra.M != rb.M) return ra.M < rb.M;
    if (ra.K != rb.K) return ra.K < rb.K;
    return ra.R < rb.R;
  });
  std::vector<ResultRow> sorted;
  sorted.reserve(out.rows.size());
  for (std::size_t i : order) sorted.push_back(out.rows[i]);
  out.rows = std::move(sorted);

  if (cfg.record_trajectories) {
    for (std::size_t i = 0; i < fjobs.size(); ++i) {
      const Row& r = rows[fjobs[i].row];
      const detail::GridPoint& gp = grids[fjobs[i].row][chosen[fjobs[i].row]];
      const RunRecord& rec = finals[i];
      json t;
      t["alg"] = alg_name(r.alg);
      t["mu"] = cfg.mu_list[r.mu_idx];
      t["M"] = r.M;
      t["K"] = r.K;
      t["R"] = r.R;
      t["eta"] = std::isnan(gp.eta) ? json() : json(gp.eta);
      t["beta"] = std::isnan(gp.beta) ? json() : json(gp.beta);
      t["lambda_internal"] = std::isnan(gp.lambda_internal) ? json() : json(gp.lambda_internal);
      t["rep"] = fjobs[i].rep;
      t["best"] = rec.best;
      t["final"] = rec.final_metric;
      t["metric"] = rec.metric_trajectory;
      t["rounds"] = rec.rounds_at;
      t["oracle_calls"] = rec.ledger.samples_drawn;
      t["diverged"] = rec.diverged;
      if (!rec.note.empty()) t["note"] = rec.note;
      out.trajectories.push_back(std::move(t));
    }
  }

  const json cfg_json = config_to_json(cfg);
  char fp[32];
  std::snprintf(fp, sizeof fp, "%016llx",
                static_cast<unsigned long long>(fnv1a(cfg_json.dump())));
  out.meta["config"] = cfg_json;
  out.meta["config_fingerprint"] = fp;
  out.meta["library"] = "fedsim 0.1.0";
  out.meta["compiler"] = __VERSION__;
  json fs = json::object();
  for (std::size_t i = 0; i < cfg.mu_list.size(); ++i)
    if (!std::isnan(fstar[i])) fs[fmt_double(cfg.mu_list[i])] = fstar[i];
  out.meta["fstar"] = fs;
  if (wants_fedsn) {
    json cs = json::array();
    for (const Constants& c : constants)
      cs.push_back({{"H", c.H}, {"B", c.B}, {"sigma", c.sigma}, {"rho", c.rho}, {"alpha", c.alpha}});
    out.meta["constants"] = cs;
  }
  out.meta["train_rows"] = train_ds.count();
  out.meta["val_rows"] = split ? val_ds.count() : 0;
  out.meta["threads"] = cfg.threads;
  out.meta["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
  return out;
}

// --- emission -------------------------------------------------------------

inline std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out = "alg,mu,M,K,R,eta,beta,lambda_internal,metric_mean,metric_std,reps,oracle_calls\n";
  for (const ResultRow& r : rows) {
    out += r.alg;
    out += ',';
    out += fmt_double(r.mu);
    out += ',';
    out += std::to_string(r.M);
    out += ',';
    out += std::to_string(r.K);
    out += ',';
    out += std::to_string(r.R);
    out += ',';
    out += fmt_double(r.eta);
    out += ',';
    out += fmt_double(r.beta);
    out += ',';
    out += fmt_double(r.lambda_internal);
    out += ',';
    out += fmt_double(r.metric_mean);
    out += ',';
    out += fmt_double(r.metric_std);
    out += ',';
    out += std::to_string(r.reps);
    out += ',';
    out += std::to_string(r.oracle_calls);
    out += '\n';
  }
  return out;
}

// results.csv and trajectories.jsonl are pure functions of the config (same
// bytes for any thread count); timing and environment live in meta.json only.
inline void emit(const TuneOutcome& out, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream f(fs::path(dir) / "results.csv", std::ios::binary);
    if (!f) throw Error("cannot write results.csv in '" + dir + "'");
    f << results_csv(out.rows);
  }
  {
    std::ofstream f(fs::path(dir) / "trajectories.jsonl", std::ios::binary);
    if (!f) throw Error("cannot write trajectories.jsonl in '" + dir + "'");
    for (const json& t : out.trajectories) f << t.dump() << '\n';
  }
  {
    std::ofstream f(fs::path(dir) / "meta.json", std::ios::binary);
    if (!f) throw Error("cannot write meta.json in '" + dir + "'");
    f << out.meta.dump(2) << '\n';
  }
}

}  // namespace fedsim
