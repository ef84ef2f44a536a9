#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sibo/io.hpp"
#include "sibo/session.hpp"
#include "test_util.hpp"

using namespace sibo;

namespace {

std::string temp_path(const char* stem) {
  return std::string("/tmp/sibo_test_") + stem + "_" +
         std::to_string(::getpid()) + ".csv";
}

LoopConfig session_config(StrategyKind kind, Eigen::Index pool_size,
                          long budget, std::uint64_t seed) {
  LoopConfig cfg;
  cfg.strategy.kind = kind;
  cfg.pool = generate_pool(OracleKind::TRIANGLE, pool_size, -5.0, 5.0,
                           derive_seed(seed, 3));
  cfg.initial_indices = {1, pool_size - 2};
  cfg.budget = budget;
  cfg.seed = seed;
  cfg.fit_first.n_starts = 2;
  cfg.fit_first.max_iters = 20;
  cfg.fit_refit.max_iters = 8;
  return cfg;
}

struct SessionFixture {
  LoopConfig cfg;
  Target target;
  SyntheticOracle oracle;
  Rng oracle_rng{42};
  SessionState state;

  explicit SessionFixture(StrategyKind kind, std::uint64_t seed = 7)
      : cfg(session_config(kind, 10, 4, seed)) {
    target.values = triangle_eval(cfg.pool(4, 0));
    oracle.noise.variances = Eigen::VectorXd::Constant(12, 1e-4);
    Eigen::MatrixXd init_obs(2, 12);
    for (int i = 0; i < 2; ++i)
      init_obs.row(i) =
          observe(oracle, cfg.pool(cfg.initial_indices[i], 0), oracle_rng)
              .transpose();
    state = session_init(cfg, target, init_obs);
  }
};

bool records_equal(const TraceRecord& a, const TraceRecord& b) {
  return a.iteration == b.iteration && a.pool_index == b.pool_index &&
         a.input == b.input && a.observation == b.observation &&
         a.objective == b.objective &&
         a.incumbent_value == b.incumbent_value &&
         a.incumbent_input == b.incumbent_input &&
         a.acquisition_value == b.acquisition_value;
}

}  // namespace

TEST_CASE("doubles survive the decimal round trip bitwise") {
  Rng rng(5);
  auto roundtrip = [](double v) {
    std::string text = io::format_double(v);
    return std::strtod(text.c_str(), nullptr);
  };
  for (int i = 0; i < 3000; ++i) {
    double mag = std::pow(10.0, -300.0 + 600.0 * rng.uniform());
    double v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * mag * rng.uniform();
    double back = roundtrip(v);
    REQUIRE(std::memcmp(&back, &v, sizeof v) == 0);
  }
  for (double v : {0.0, -0.0, 1.0, -1.0, 0.1, 1e308, 5e-324,
                   2.2250738585072014e-308}) {
    double back = roundtrip(v);
    CHECK(std::memcmp(&back, &v, sizeof v) == 0);
  }
}

TEST_CASE("csv reader recovers values and reports line numbers") {
  std::string path = temp_path("csv");
  {
    std::ofstream out(path);
    out << "x_1,y_1,y_2\n";
    out << "0.5,1.25,-3\n";
    out << "-1.0,0,42\n";
  }
  io::Csv csv = io::read_csv(path);
  REQUIRE(csv.header == std::vector<std::string>{"x_1", "y_1", "y_2"});
  REQUIRE(csv.values.rows() == 2);
  CHECK(csv.values(0, 1) == 1.25);
  CHECK(csv.values(1, 2) == 42.0);
  CHECK(csv.column("y_2") == 2);
  CHECK(csv.column("absent") == -1);

  {
    std::ofstream out(path, std::ios::trunc);
  }
  try {
    io::read_csv(path);
    FAIL("expected a parse error for an empty file");
  } catch (const io::ParseError& e) {
    CHECK(std::string(e.what()).find("line 0") != std::string::npos);
  }

  {
    std::ofstream out(path, std::ios::trunc);
    out << "a,b\n1,2\n3\n";
  }
  try {
    io::read_csv(path);
    FAIL("expected a parse error for a ragged row");
  } catch (const io::ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  {
    std::ofstream out(path, std::ios::trunc);
    out << "a\n1\noops\n";
  }
  try {
    io::read_csv(path);
    FAIL("expected a parse error for a bad number");
  } catch (const io::ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("oops") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("trace lines cover the budget or mark exhaustion") {
  Trace trace;
  TraceRecord rec;
  rec.iteration = 1;
  rec.pool_index = 3;
  rec.input = Eigen::VectorXd::Constant(1, 0.25);
  rec.observation = Eigen::VectorXd::Zero(2);
  rec.incumbent_input = rec.input;
  trace.records = {rec, rec};

  std::string full = io::trace_jsonl(trace, "EI", 0, 2);
  CHECK(std::count(full.begin(), full.end(), '\n') == 2);
  CHECK(full.find("pool_exhausted") == std::string::npos);

  std::string marked = io::trace_jsonl(trace, "EI", 0, 5);
  CHECK(std::count(marked.begin(), marked.end(), '\n') == 3);
  CHECK(marked.find("\"pool_exhausted\":true") != std::string::npos);
  CHECK(marked.rfind("{\"strategy\":\"EI\",\"trial\":0,", 0) == 0);
}

TEST_CASE("summary csv has the pinned column layout") {
  StrategySummary s;
  s.strategy.kind = StrategyKind::PI;
  s.mean_log10_regret = Eigen::VectorXd::LinSpaced(3, -0.5, -1.5);
  s.std_log10_regret = Eigen::VectorXd::Constant(3, 0.25);
  std::string text = io::summary_csv({s});
  std::istringstream ss(text);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "strategy,iteration,mean_log10_regret,std_log10_regret");
  std::getline(ss, line);
  CHECK(line.rfind("PI,1,", 0) == 0);
  std::getline(ss, line);
  std::getline(ss, line);
  CHECK(line.rfind("PI,3,", 0) == 0);
}

TEST_CASE("session state survives save-load-save byte identically") {
  for (StrategyKind kind : {StrategyKind::EI, StrategyKind::RANDOM}) {
    SessionFixture fx(kind);

    std::string first = serialize_session(fx.state);
    SessionState loaded = parse_session(first);
    CHECK(serialize_session(loaded) == first);

    PendingProposal pending = session_ask(fx.state);
    std::string with_pending = serialize_session(fx.state);
    SessionState loaded2 = parse_session(with_pending);
    CHECK(serialize_session(loaded2) == with_pending);
    REQUIRE(loaded2.pending.has_value());
    CHECK(loaded2.pending->pool_index == pending.pool_index);

    Eigen::VectorXd y =
        observe(fx.oracle, pending.input(0), fx.oracle_rng);
    session_tell(fx.state, y);
    std::string after_tell = serialize_session(fx.state);
    SessionState loaded3 = parse_session(after_tell);
    CHECK(serialize_session(loaded3) == after_tell);
    REQUIRE(loaded3.history.size() == 1);
    CHECK(records_equal(loaded3.history[0], fx.state.history[0]));
  }
}

TEST_CASE("ask twice without tell is rejected, tell validates shape") {
  SessionFixture fx(StrategyKind::MEAN_MSE);
  session_ask(fx.state);
  CHECK_THROWS_AS(session_ask(fx.state), InvalidArgument);

  Eigen::VectorXd short_y = Eigen::VectorXd::Zero(5);
  std::string before = serialize_session(fx.state);
  CHECK_THROWS_AS(session_tell(fx.state, short_y), InvalidArgument);
  CHECK(serialize_session(fx.state) == before);

  SessionFixture fresh(StrategyKind::MEAN_MSE);
  CHECK_THROWS_AS(session_tell(fresh.state, Eigen::VectorXd::Zero(12)),
                  InvalidArgument);
}

TEST_CASE("ask-tell sessions replay the autonomous loop bitwise") {
  for (StrategyKind kind :
       {StrategyKind::EI, StrategyKind::PI, StrategyKind::RANDOM}) {
    LoopConfig cfg = session_config(kind, 10, 5, 99 + long(kind));
    Target target;
    target.values = triangle_eval(cfg.pool(6, 0));
    SyntheticOracle oracle;
    oracle.noise.variances = Eigen::VectorXd::Constant(12, 1e-4);

    Rng rng_auto(1234);
    Trace autonomous = run(cfg, synthetic_oracle_fn(oracle, rng_auto), target);
    REQUIRE_FALSE(autonomous.aborted);
    REQUIRE(autonomous.records.size() == 5);

    Rng rng_manual(1234);
    Eigen::MatrixXd init_obs(2, 12);
    for (int i = 0; i < 2; ++i)
      init_obs.row(i) =
          observe(oracle, cfg.pool(cfg.initial_indices[i], 0), rng_manual)
              .transpose();
    REQUIRE(init_obs == autonomous.initial_observations);

    SessionState state = session_init(cfg, target, init_obs);
    CHECK(state.initial_incumbent_value == autonomous.initial_incumbent_value);
    for (long t = 0; t < 5; ++t) {
      state = parse_session(serialize_session(state));
      PendingProposal pending = session_ask(state);
      CHECK(pending.pool_index == autonomous.records[t].pool_index);
      state = parse_session(serialize_session(state));
      Eigen::VectorXd y = observe(oracle, pending.input(0), rng_manual);
      TraceRecord rec = session_tell(state, y);
      CHECK(records_equal(rec, autonomous.records[t]));
    }
    CHECK(state.incumbent.best_value == autonomous.final_incumbent_value);
  }
}

TEST_CASE("malformed session documents fail with parse errors") {
  CHECK_THROWS_AS(parse_session("not json at all"), io::ParseError);
  CHECK_THROWS_AS(parse_session("{}"), io::ParseError);
  CHECK_THROWS_AS(parse_session("{\"schema_version\":99}"), io::ParseError);

  SessionFixture fx(StrategyKind::EI);
  std::string good = serialize_session(fx.state);
  std::string broken = good;
  std::size_t pos = broken.find("\"rng_state\"");
  REQUIRE(pos != std::string::npos);
  broken.replace(pos, 11, "\"rng_stale\"");
  CHECK_THROWS_AS(parse_session(broken), io::ParseError);
}
