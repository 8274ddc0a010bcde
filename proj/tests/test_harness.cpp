#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedsim/harness.hpp"
#include "support/synthetic.hpp"

using namespace fedsim;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::string write_dataset(const std::string& name, const Dataset& ds) {
  std::ofstream f(name, std::ios::binary);
  f << serialize_libsvm(ds);
  return name;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

json base_config(const std::string& data) {
  json j;
  j["data"] = data;
  j["algs"] = json::array({"local-sgd"});
  j["mu"] = 0.5;
  j["M"] = 2;
  j["R"] = 3;
  j["K"] = 2;
  j["eta_grid"] = json::array({0.2});
  j["beta_grid"] = json::array({0.0});
  j["tuning_reps"] = 2;
  j["final_reps"] = 2;
  j["seed"] = 7;
  return j;
}

}  // namespace

TEST_CASE("config parsing rejects malformed inputs") {
  const json base = base_config("x.libsvm");

  json j = base;
  j["bogus_key"] = 1;
  REQUIRE_THROWS_MATCHES(config_from_json(j), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("bogus_key")));

  j = base;
  j["KR"] = 10;  // both K and KR
  REQUIRE_THROWS_AS(config_from_json(j), ConfigError);

  j = base;
  j.erase("K");  // neither
  REQUIRE_THROWS_AS(config_from_json(j), ConfigError);

  j = base;
  j["metric"] = "accuracy";
  REQUIRE_THROWS_AS(config_from_json(j), ConfigError);

  j = base;
  j["sampling"] = "bootstrap";
  REQUIRE_THROWS_AS(config_from_json(j), ConfigError);

  j = base;
  j["oracle_case"] = "both";
  REQUIRE_THROWS_AS(config_from_json(j), ConfigError);

  j = base;
  j["tuning_reps"] = 0;
  REQUIRE_THROWS_AS(config_from_json(j), ConfigError);

  j = base;
  j["mu"] = json::array({0.1, 0.2});
  j["fstar"] = 0.5;  // explicit reference with several objectives
  REQUIRE_THROWS_AS(config_from_json(j), ConfigError);

  j = base;
  j["metric"] = "val-loss";  // no train_head
  REQUIRE_THROWS_AS(config_from_json(j), ConfigError);

  j = base;
  j["algs"] = json::array();
  REQUIRE_THROWS_AS(config_from_json(j), ConfigError);

  j = base;
  j.erase("data");
  REQUIRE_THROWS_AS(config_from_json(j), ConfigError);

  REQUIRE_NOTHROW(config_from_json(base));
}

TEST_CASE("config survives a json round trip") {
  json j = base_config("some/data.libsvm.gz");
  j["metric"] = "rel-subopt";
  j["sampling"] = "single-pass";
  j["oracle_case"] = "different-samples";
  j["fstar"] = 0.25;
  const ExperimentConfig a = config_from_json(j);
  const json ja = config_to_json(a);
  const ExperimentConfig b = config_from_json(ja);
  REQUIRE(config_to_json(b).dump() == ja.dump());
  REQUIRE(a.sampling == SamplingMode::SinglePass);
  REQUIRE(a.oracle_case == OracleCase::DifferentSamples);
  REQUIRE(a.fstar.has_value());
}

TEST_CASE("the schema names every config key") {
  const json s = config_schema();
  const json j = config_to_json(config_from_json(base_config("x")));
  for (const auto& item : j.items()) REQUIRE(s.contains(item.key()));
}

TEST_CASE("run seed streams are pairwise distinct") {
  std::vector<std::uint64_t> keys;
  for (int phase = 0; phase < 2; ++phase)
    for (std::size_t row = 0; row < 3; ++row)
      for (std::size_t grid = 0; grid < 4; ++grid)
        for (int rep = 0; rep < 3; ++rep) keys.push_back(run_seed_stream(9, phase, row, grid, rep).key());
  std::sort(keys.begin(), keys.end());
  REQUIRE(std::adjacent_find(keys.begin(), keys.end()) == keys.end());
}

TEST_CASE("fmt_double round-trips numbers and names the specials") {
  for (double v : {0.0, 0.1, 1.0 / 3.0, 1e-300, 6.02e23, -2.5, 12345.0}) {
    const std::string s = fmt_double(v);
    REQUIRE(std::strtod(s.c_str(), nullptr) == v);
  }
  REQUIRE(fmt_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  REQUIRE(fmt_double(std::numeric_limits<double>::infinity()) == "inf");
  REQUIRE(fmt_double(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("relative suboptimality guards its denominator") {
  REQUIRE_THAT(relative_suboptimality(1.2, 1.0), WithinAbs(0.2, 1e-15));
  REQUIRE(relative_suboptimality(1.0, 1.0) == 0.0);
  REQUIRE_THROWS_AS(relative_suboptimality(1.0, 0.0), ConfigError);
  REQUIRE_THROWS_AS(relative_suboptimality(1.0, -1.0), ConfigError);
}

TEST_CASE("ties select the first grid point with zero variance") {
  // all-zero features freeze every run at the optimum, so every grid point
  // scores exactly zero and selection must fall back to grid order
  const Dataset frozen = parse_libsvm("+1 1:0\n-1 1:0\n");
  const std::string path = write_dataset("th_tie.libsvm", frozen);
  json j = base_config(path);
  j["mu"] = 1.0;
  j["K"] = 3;
  j["R"] = 2;
  j["eta_grid"] = json::array({0.2, 0.7});
  j["beta_grid"] = json::array({0.0, 0.5});

  const TuneOutcome out = tune_and_run(config_from_json(j));
  REQUIRE(out.rows.size() == 1);
  const ResultRow& row = out.rows[0];
  REQUIRE(row.eta == 0.2);
  REQUIRE(row.beta == 0.0);
  REQUIRE(row.metric_mean == 0.0);
  REQUIRE(row.metric_std == 0.0);
  REQUIRE(row.reps == 2);
  REQUIRE(row.oracle_calls == 12);  // M K R
  REQUIRE_FALSE(row.no_stable);
  REQUIRE(out.trajectories.size() == 2);
  std::filesystem::remove(path);
}

TEST_CASE("tuning discards divergent step sizes") {
  const std::string path = write_dataset("th_div.libsvm", testsupport::synthetic_logistic(3, 40, 91));
  json j = base_config(path);
  j["algs"] = json::array({"minibatch-sgd"});
  j["K"] = 3;
  j["R"] = 5;
  j["eta_grid"] = json::array({0.2, 1e5});
  j["tuning_reps"] = 3;

  const TuneOutcome out = tune_and_run(config_from_json(j));
  REQUIRE(out.rows.size() == 1);
  REQUIRE(out.rows[0].eta == 0.2);
  REQUIRE_FALSE(out.rows[0].no_stable);
  REQUIRE(std::isfinite(out.rows[0].metric_mean));
  std::filesystem::remove(path);
}

TEST_CASE("a fully divergent grid yields a sentinel row and no trajectories") {
  const std::string path = write_dataset("th_alldiv.libsvm", testsupport::synthetic_logistic(3, 40, 92));
  json j = base_config(path);
  j["algs"] = json::array({"minibatch-sgd"});
  j["K"] = 3;
  j["R"] = 5;
  j["eta_grid"] = json::array({1e6});

  const TuneOutcome out = tune_and_run(config_from_json(j));
  REQUIRE(out.rows.size() == 1);
  const ResultRow& row = out.rows[0];
  REQUIRE(row.no_stable);
  REQUIRE(std::isnan(row.eta));
  REQUIRE(std::isinf(row.metric_mean));
  REQUIRE(row.reps == 0);
  REQUIRE(row.oracle_calls == 0);
  REQUIRE(out.trajectories.empty());

  const std::string csv = results_csv(out.rows);
  REQUIRE_THAT(csv, ContainsSubstring(",nan,nan,nan,inf,inf,0,0"));
  std::filesystem::remove(path);
}

TEST_CASE("rows come out in canonical order") {
  const std::string path = write_dataset("th_order.libsvm", testsupport::synthetic_logistic(3, 30, 93));
  json j = base_config(path);
  j["algs"] = json::array({"minibatch-sgd", "local-sgd"});
  j["R"] = json::array({4, 2});
  j["tuning_reps"] = 1;
  j["final_reps"] = 1;

  const TuneOutcome out = tune_and_run(config_from_json(j));
  REQUIRE(out.rows.size() == 4);
  REQUIRE(out.rows[0].alg == "local-sgd");
  REQUIRE(out.rows[0].R == 2);
  REQUIRE(out.rows[1].alg == "local-sgd");
  REQUIRE(out.rows[1].R == 4);
  REQUIRE(out.rows[2].alg == "minibatch-sgd");
  REQUIRE(out.rows[2].R == 2);
  REQUIRE(out.rows[3].alg == "minibatch-sgd");
  REQUIRE(out.rows[3].R == 4);
  std::filesystem::remove(path);
}

TEST_CASE("emitted files match the in-memory outcome") {
  const std::string path = write_dataset("th_emit.libsvm", testsupport::synthetic_logistic(3, 30, 94));
  json j = base_config(path);
  const TuneOutcome out = tune_and_run(config_from_json(j));
  const std::string dir = "th_emit_out";
  emit(out, dir);

  namespace fs = std::filesystem;
  const std::string csv = read_file(fs::path(dir) / "results.csv");
  REQUIRE(csv == results_csv(out.rows));
  REQUIRE_THAT(csv, ContainsSubstring(
                        "alg,mu,M,K,R,eta,beta,lambda_internal,metric_mean,metric_std,reps,oracle_calls\n"));

  const std::string traj = read_file(fs::path(dir) / "trajectories.jsonl");
  const std::size_t lines = static_cast<std::size_t>(std::count(traj.begin(), traj.end(), '\n'));
  REQUIRE(lines == out.trajectories.size());

  const json meta = json::parse(read_file(fs::path(dir) / "meta.json"));
  char fp[32];
  std::snprintf(fp, sizeof fp, "%016llx",
                static_cast<unsigned long long>(fnv1a(meta["config"].dump())));
  REQUIRE(meta["config_fingerprint"].get<std::string>() == fp);
  REQUIRE(meta["train_rows"].get<std::size_t>() == 30);

  fs::remove_all(dir);
  fs::remove(path);
}

TEST_CASE("outputs are identical for any thread count") {
  const std::string path = write_dataset("th_threads.libsvm", testsupport::synthetic_logistic(3, 30, 95));
  json j = base_config(path);
  j["algs"] = json::array({"local-sgd", "minibatch-sgd"});
  j["eta_grid"] = json::array({0.1, 0.5});
  j["beta_grid"] = json::array({0.0, 0.3});

  j["threads"] = 1;
  const TuneOutcome a = tune_and_run(config_from_json(j));
  j["threads"] = 3;
  const TuneOutcome b = tune_and_run(config_from_json(j));

  REQUIRE(results_csv(a.rows) == results_csv(b.rows));
  REQUIRE(a.trajectories.size() == b.trajectories.size());
  for (std::size_t i = 0; i < a.trajectories.size(); ++i)
    REQUIRE(a.trajectories[i].dump() == b.trajectories[i].dump());
  std::filesystem::remove(path);
}

TEST_CASE("held-out loss as the metric") {
  const std::string path = write_dataset("th_val.libsvm", testsupport::synthetic_logistic(3, 30, 96));
  json j = base_config(path);
  j["metric"] = "val-loss";
  j["train_head"] = 20;
  j["tuning_reps"] = 1;
  j["final_reps"] = 1;

  const TuneOutcome out = tune_and_run(config_from_json(j));
  REQUIRE(std::isfinite(out.rows[0].metric_mean));
  REQUIRE(out.meta["fstar"].empty());  // no reference optimum in this mode
  REQUIRE(out.meta["train_rows"].get<std::size_t>() == 20);
  REQUIRE(out.meta["val_rows"].get<std::size_t>() == 10);
  // the starting iterate is all zeros, where the held-out loss is exactly log 2
  REQUIRE_THAT(out.trajectories.at(0)["metric"][0].get<double>(), WithinRel(std::log(2.0), 1e-14));
  std::filesystem::remove(path);
}

TEST_CASE("infeasible round budgets are caught before any run") {
  const std::string path = write_dataset("th_infeas.libsvm", testsupport::synthetic_logistic(3, 30, 97));
  json j = base_config(path);
  j["algs"] = json::array({"fedsn"});
  j["K"] = 200;
  j["R"] = 1;
  REQUIRE_THROWS_MATCHES(tune_and_run(config_from_json(j)), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("infeasible")));
  std::filesystem::remove(path);
}

TEST_CASE("a fixed local-step budget must split evenly across rounds") {
  const std::string path = write_dataset("th_kr.libsvm", testsupport::synthetic_logistic(3, 30, 98));
  json j = base_config(path);
  j.erase("K");
  j["KR"] = 12;
  j["R"] = json::array({3, 4});
  j["tuning_reps"] = 1;
  j["final_reps"] = 1;

  const TuneOutcome out = tune_and_run(config_from_json(j));
  REQUIRE(out.rows.size() == 2);
  // canonical order sorts K before R, so the K = 3 (R = 4) row leads
  REQUIRE(out.rows[0].K == 3);
  REQUIRE(out.rows[0].R == 4);
  REQUIRE(out.rows[1].K == 4);
  REQUIRE(out.rows[1].R == 3);

  j["R"] = json::array({5});
  REQUIRE_THROWS_AS(tune_and_run(config_from_json(j)), ConfigError);
  std::filesystem::remove(path);
}
