#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sibo/acquisition.hpp"
#include "sibo/common.hpp"
#include "sibo/mogp.hpp"
#include "sibo/oracles.hpp"

namespace sibo {

enum class StrategyKind { EI, PI, MEAN_MSE, RANDOM };

struct Strategy {
  StrategyKind kind = StrategyKind::EI;
};

inline const char* strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::EI: return "EI";
    case StrategyKind::PI: return "PI";
    case StrategyKind::MEAN_MSE: return "MEAN_MSE";
    case StrategyKind::RANDOM: return "RANDOM";
  }
  throw InvalidArgument("strategy_name: unknown strategy");
}

inline StrategyKind strategy_from_name(const std::string& name) {
  if (name == "EI") return StrategyKind::EI;
  if (name == "PI") return StrategyKind::PI;
  if (name == "MEAN_MSE") return StrategyKind::MEAN_MSE;
  if (name == "RANDOM") return StrategyKind::RANDOM;
  throw InvalidArgument("unknown strategy name: " + name);
}

struct LoopConfig {
  Strategy strategy;
  long budget = 30;
  Eigen::MatrixXd pool;  // P x d candidate inputs
  std::vector<Eigen::Index> initial_indices;
  std::uint64_t seed = 0;
  long refit_every = 1;
  bool include_noise = true;
  FitOptions fit_first;
  FitOptions fit_refit;

  LoopConfig() {
    fit_refit.n_starts = 1;
    fit_refit.max_iters = 25;
  }

  void validate() const {
    SIBO_REQUIRE(budget >= 1, "LoopConfig: budget must be at least 1");
    SIBO_REQUIRE(refit_every >= 1, "LoopConfig: refit_every must be positive");
    SIBO_REQUIRE(pool.rows() >= 1 && pool.allFinite(),
                 "LoopConfig: pool must be non-empty and finite");
    SIBO_REQUIRE(!initial_indices.empty(),
                 "LoopConfig: at least one initial index required");
    std::vector<Eigen::Index> sorted = initial_indices;
    std::sort(sorted.begin(), sorted.end());
    SIBO_REQUIRE(sorted.front() >= 0 && sorted.back() < pool.rows(),
                 "LoopConfig: initial index out of pool range");
    SIBO_REQUIRE(std::adjacent_find(sorted.begin(), sorted.end()) ==
                     sorted.end(),
                 "LoopConfig: initial indices must be distinct");
  }
};

struct TraceRecord {
  long iteration = 0;  // 1-based acquisition step
  Eigen::Index pool_index = -1;
  Eigen::VectorXd input;
  Eigen::VectorXd observation;
  double objective = 0.0;
  double incumbent_value = 0.0;
  Eigen::VectorXd incumbent_input;
  double acquisition_value = 0.0;
  double wall_seconds = 0.0;  // in-memory diagnostic, never serialized
};

struct Trace {
  std::vector<Eigen::Index> initial_indices;
  Eigen::MatrixXd initial_observations;  // k x M
  double initial_incumbent_value = 0.0;
  std::vector<TraceRecord> records;
  Eigen::VectorXd final_incumbent_input;
  double final_incumbent_value = 0.0;
  bool aborted = false;
  std::string error_message;
};

struct LoopState {
  LoopConfig config;
  Target target;
  Dataset data;
  std::vector<Eigen::Index> queried_order;  // includes the initial indices
  std::vector<char> is_queried;
  Hyperparams hyper;
  Incumbent incumbent;
  Rng loop_rng{0};
  long iteration = 0;  // completed acquisition steps
};

struct Proposal {
  Eigen::Index pool_index = -1;
  double acquisition_value = 0.0;
};

namespace detail {

constexpr std::uint64_t kLoopRngTag = 0xA11CE;
constexpr std::uint64_t kFitTag = 0xF17;
constexpr std::uint64_t kOracleTag = 0x0B5E;

inline void refit_hyper(LoopState& state, const FitOptions& base,
                        std::uint64_t stream) {
  // RANDOM never consults the model, so fitting one would only spend time.
  if (state.config.strategy.kind == StrategyKind::RANDOM) return;
  FitOptions opts = base;
  opts.seed = derive_seed(state.config.seed, kFitTag + stream);
  FittedModel model = fit(state.data, state.hyper, opts);
  state.hyper = Hyperparams{model.kernel, model.coreg, model.noise};
}

}  // namespace detail

inline LoopState init_loop(const LoopConfig& config, const Target& target,
                           const Eigen::MatrixXd& initial_observations) {
  config.validate();
  const Eigen::Index k = static_cast<Eigen::Index>(config.initial_indices.size());
  const Eigen::Index M = target.values.size();
  SIBO_REQUIRE(initial_observations.rows() == k &&
                   initial_observations.cols() == M,
               "init_loop: initial observation shape mismatch");

  LoopState state;
  state.config = config;
  state.target = target;
  state.is_queried.assign(static_cast<std::size_t>(config.pool.rows()), 0);
  state.data.inputs.resize(k, config.pool.cols());
  state.data.outputs = initial_observations;
  state.incumbent.best_value = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < k; ++i) {
    Eigen::Index idx = config.initial_indices[static_cast<std::size_t>(i)];
    state.data.inputs.row(i) = config.pool.row(idx);
    state.queried_order.push_back(idx);
    state.is_queried[static_cast<std::size_t>(idx)] = 1;
    double value = squared_error(initial_observations.row(i).transpose(),
                                 target);
    if (value < state.incumbent.best_value) {
      state.incumbent.best_value = value;
      state.incumbent.best_input = config.pool.row(idx).transpose();
    }
  }
  state.loop_rng = Rng(derive_seed(config.seed, detail::kLoopRngTag));
  state.hyper = default_init(state.data, M);
  detail::refit_hyper(state, config.fit_first, 0);
  return state;
}

inline Proposal propose_next(LoopState& state) {
  std::vector<Eigen::Index> open;
  for (Eigen::Index p = 0; p < state.config.pool.rows(); ++p)
    if (!state.is_queried[static_cast<std::size_t>(p)]) open.push_back(p);
  SIBO_REQUIRE(!open.empty(), "propose_next: candidate pool exhausted");

  const StrategyKind kind = state.config.strategy.kind;
  if (kind == StrategyKind::RANDOM) {
    std::uint64_t pick = state.loop_rng.uniform_int(
        static_cast<std::uint64_t>(open.size()));
    return {open[static_cast<std::size_t>(pick)], 0.0};
  }

  FittedModel model = make_model(state.data, state.hyper);
  Eigen::MatrixXd candidates(static_cast<Eigen::Index>(open.size()),
                             state.config.pool.cols());
  for (std::size_t i = 0; i < open.size(); ++i)
    candidates.row(static_cast<Eigen::Index>(i)) =
        state.config.pool.row(open[i]);

  Proposal best;
  double best_score = -std::numeric_limits<double>::infinity();
  auto consider = [&](std::size_t i, double score) {
    if (score > best_score) {
      best_score = score;
      best = {open[i], score};
    }
  };
  if (kind == StrategyKind::MEAN_MSE) {
    Eigen::MatrixXd means = predict_means(model, candidates);
    for (std::size_t i = 0; i < open.size(); ++i)
      consider(i, -(means.row(static_cast<Eigen::Index>(i)).transpose() -
                    state.target.values)
                       .squaredNorm());
  } else {
    std::vector<Posterior> posts =
        predict_batch(model, candidates, state.config.include_noise);
    for (std::size_t i = 0; i < open.size(); ++i) {
      double score = kind == StrategyKind::EI
                         ? ei_score(posts[i], state.target,
                                    state.incumbent.best_value)
                         : pi_score(posts[i], state.target,
                                    state.incumbent.best_value);
      consider(i, score);
    }
  }
  return best;
}

inline TraceRecord absorb(LoopState& state, const Proposal& proposal,
                          const Eigen::VectorXd& observation) {
  Eigen::Index idx = proposal.pool_index;
  SIBO_REQUIRE(idx >= 0 && idx < state.config.pool.rows(),
               "absorb: pool index out of range");
  SIBO_REQUIRE(!state.is_queried[static_cast<std::size_t>(idx)],
               "absorb: pool point already queried");
  SIBO_REQUIRE(observation.size() == state.target.values.size(),
               "absorb: observation length mismatch");

  const Eigen::Index n = state.data.size();
  state.data.inputs.conservativeResize(n + 1, Eigen::NoChange);
  state.data.outputs.conservativeResize(n + 1, Eigen::NoChange);
  state.data.inputs.row(n) = state.config.pool.row(idx);
  state.data.outputs.row(n) = observation.transpose();
  state.is_queried[static_cast<std::size_t>(idx)] = 1;
  state.queried_order.push_back(idx);
  state.iteration += 1;

  double value = squared_error(observation, state.target);
  if (value < state.incumbent.best_value) {
    state.incumbent.best_value = value;
    state.incumbent.best_input = state.config.pool.row(idx).transpose();
  }
  if (state.iteration % state.config.refit_every == 0)
    detail::refit_hyper(state, state.config.fit_refit,
                        static_cast<std::uint64_t>(state.iteration));

  TraceRecord rec;
  rec.iteration = state.iteration;
  rec.pool_index = idx;
  rec.input = state.config.pool.row(idx).transpose();
  rec.observation = observation;
  rec.objective = value;
  rec.incumbent_value = state.incumbent.best_value;
  rec.incumbent_input = state.incumbent.best_input;
  rec.acquisition_value = proposal.acquisition_value;
  return rec;
}

using OracleFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

inline OracleFn synthetic_oracle_fn(const SyntheticOracle& oracle, Rng& rng) {
  return [&oracle, &rng](const Eigen::VectorXd& x) {
    SIBO_REQUIRE(x.size() == 1, "synthetic oracle expects scalar inputs");
    return observe(oracle, x(0), rng);
  };
}

inline Trace run(const LoopConfig& config, const OracleFn& oracle,
                 const Target& target) {
  auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t0)
        .count();
  };
  Trace trace;
  trace.initial_indices = config.initial_indices;
  try {
    config.validate();
    const Eigen::Index k =
        static_cast<Eigen::Index>(config.initial_indices.size());
    Eigen::MatrixXd init_obs(k, target.values.size());
    for (Eigen::Index i = 0; i < k; ++i)
      init_obs.row(i) =
          oracle(config.pool.row(config.initial_indices[static_cast<std::size_t>(i)])
                     .transpose())
              .transpose();
    trace.initial_observations = init_obs;

    LoopState state = init_loop(config, target, init_obs);
    trace.initial_incumbent_value = state.incumbent.best_value;
    trace.final_incumbent_input = state.incumbent.best_input;
    trace.final_incumbent_value = state.incumbent.best_value;

    for (long t = 0; t < config.budget; ++t) {
      if (state.queried_order.size() ==
          static_cast<std::size_t>(config.pool.rows()))
        break;
      Proposal prop = propose_next(state);
      Eigen::VectorXd y =
          oracle(state.config.pool.row(prop.pool_index).transpose());
      TraceRecord rec = absorb(state, prop, y);
      rec.wall_seconds = elapsed();
      trace.records.push_back(rec);
      trace.final_incumbent_input = state.incumbent.best_input;
      trace.final_incumbent_value = state.incumbent.best_value;
    }
  } catch (const std::exception& e) {
    trace.aborted = true;
    trace.error_message = e.what();
  }
  return trace;
}

inline Eigen::VectorXd simple_regret(const Trace& trace) {
  SIBO_REQUIRE(!trace.records.empty(), "simple_regret: empty trace");
  Eigen::VectorXd out(static_cast<Eigen::Index>(trace.records.size()));
  for (std::size_t i = 0; i < trace.records.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = trace.records[i].incumbent_value;
  return out;
}

constexpr double kLogRegretEpsilon = 1e-12;

struct ProblemSpec {
  OracleKind kind = OracleKind::TRIANGLE;
  Eigen::Index pool_size = 100;
  Eigen::Index init_size = 2;
  double input_lo = -5.0;
  double input_hi = 5.0;
  double noise_variance = 1e-4;  // 0 -> noise-free

  void validate() const {
    SIBO_REQUIRE(pool_size >= 2 && init_size >= 1 && init_size < pool_size,
                 "ProblemSpec: need 1 <= init_size < pool_size");
    SIBO_REQUIRE(std::isfinite(input_lo) && std::isfinite(input_hi) &&
                     input_lo < input_hi,
                 "ProblemSpec: invalid input range");
    SIBO_REQUIRE(noise_variance >= 0.0 && std::isfinite(noise_variance),
                 "ProblemSpec: invalid noise variance");
  }
};

struct StrategySummary {
  Strategy strategy;
  Eigen::VectorXd mean_log10_regret;  // indexed by iteration 1..budget
  Eigen::VectorXd std_log10_regret;
};

struct BenchmarkResult {
  std::vector<std::vector<Trace>> traces;  // [strategy][trial]
  std::vector<StrategySummary> summary;
  std::vector<double> target_inputs;       // per-trial x0
};

// Paired trials: every strategy sees the same pool, initial indices, target,
// and oracle noise stream within a trial; only the loop-decision seed varies
// with the strategy's own base seed, so equal configs reproduce each other.
inline BenchmarkResult benchmark(const ProblemSpec& problem,
                                 const std::vector<LoopConfig>& strategies,
                                 long n_trials, std::uint64_t pairing_seed) {
  problem.validate();
  SIBO_REQUIRE(n_trials >= 1, "benchmark: n_trials must be at least 1");
  SIBO_REQUIRE(!strategies.empty(), "benchmark: no strategies given");

  const Eigen::Index M = oracle_output_dim(problem.kind);
  long budget = strategies.front().budget;
  for (const LoopConfig& cfg : strategies)
    SIBO_REQUIRE(cfg.budget == budget,
                 "benchmark: strategies must share one budget");

  BenchmarkResult result;
  result.traces.resize(strategies.size());
  for (long trial = 0; trial < n_trials; ++trial) {
    std::uint64_t t = static_cast<std::uint64_t>(trial);
    Eigen::MatrixXd pool =
        generate_pool(problem.kind, problem.pool_size, problem.input_lo,
                      problem.input_hi, derive_seed(pairing_seed, 2 * t));
    Rng pick(derive_seed(pairing_seed, 2 * t + 1));
    Eigen::Index target_idx = static_cast<Eigen::Index>(
        pick.uniform_int(static_cast<std::uint64_t>(problem.pool_size)));
    std::vector<Eigen::Index> order(
        static_cast<std::size_t>(problem.pool_size));
    for (Eigen::Index i = 0; i < problem.pool_size; ++i)
      order[static_cast<std::size_t>(i)] = i;
    std::vector<Eigen::Index> initial;
    for (Eigen::Index i = 0; i < problem.init_size; ++i) {
      std::uint64_t j = pick.uniform_int(
          static_cast<std::uint64_t>(problem.pool_size - i));
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(i) + j]);
      initial.push_back(order[static_cast<std::size_t>(i)]);
    }
    Target target;
    target.values = problem.kind == OracleKind::TRIANGLE
                        ? triangle_eval(pool(target_idx, 0))
                        : sphere_eval(pool(target_idx, 0));
    result.target_inputs.push_back(pool(target_idx, 0));

    for (std::size_t sidx = 0; sidx < strategies.size(); ++sidx) {
      LoopConfig cfg = strategies[sidx];
      cfg.pool = pool;
      cfg.initial_indices = initial;
      cfg.seed = derive_seed(strategies[sidx].seed, 0xB0B + t);
      SyntheticOracle oracle;
      oracle.kind = problem.kind;
      if (problem.noise_variance > 0.0)
        oracle.noise.variances =
            Eigen::VectorXd::Constant(M, problem.noise_variance);
      // One noise stream per trial, shared by all strategies, so paired
      // trials start from bitwise-identical initial observations.
      Rng oracle_rng(derive_seed(derive_seed(pairing_seed, detail::kOracleTag), t));
      Trace trace = run(cfg, synthetic_oracle_fn(oracle, oracle_rng), target);
      if (trace.aborted)
        throw NumericalError("benchmark: trial aborted: " +
                             trace.error_message);
      result.traces[sidx].push_back(std::move(trace));
    }
  }

  for (std::size_t sidx = 0; sidx < strategies.size(); ++sidx) {
    StrategySummary summary;
    summary.strategy = strategies[sidx].strategy;
    summary.mean_log10_regret.resize(budget);
    summary.std_log10_regret.resize(budget);
    for (long it = 1; it <= budget; ++it) {
      Eigen::VectorXd logs(n_trials);
      for (long trial = 0; trial < n_trials; ++trial) {
        const Trace& tr = result.traces[sidx][static_cast<std::size_t>(trial)];
        double regret;
        if (tr.records.empty())
          regret = tr.initial_incumbent_value;
        else
          regret = tr.records[static_cast<std::size_t>(std::min(
                                  it, static_cast<long>(tr.records.size())) -
                              1)]
                       .incumbent_value;
        logs(trial) = std::log10(regret + kLogRegretEpsilon);
      }
      double mean = logs.mean();
      summary.mean_log10_regret(it - 1) = mean;
      summary.std_log10_regret(it - 1) =
          std::sqrt((logs.array() - mean).square().sum() /
                    static_cast<double>(n_trials));
    }
    result.summary.push_back(std::move(summary));
  }
  return result;
}

}  // namespace sibo
