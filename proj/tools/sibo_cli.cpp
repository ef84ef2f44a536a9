#include <CLI11.hpp>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "sibo/sibo.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

// Held for the duration of a session command; a sidecar path keeps the lock
// independent of the atomic rename that replaces the state file itself.
class FileLock {
 public:
  explicit FileLock(const std::string& path) : path_(path + ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0)
      throw sibo::io::ParseError(path_ + ": cannot open lock file");
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw sibo::io::ParseError(path_ + ": cannot acquire lock");
    }
  }
  ~FileLock() {
    if (fd_ >= 0) ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

sibo::OracleKind parse_problem(const std::string& name) {
  if (name == "triangle") return sibo::OracleKind::TRIANGLE;
  if (name == "sphere") return sibo::OracleKind::SPHERE;
  throw CLI::ValidationError("--problem", "expected 'triangle' or 'sphere'");
}

sibo::StrategyKind parse_strategy(const std::string& name) {
  if (name == "ei") return sibo::StrategyKind::EI;
  if (name == "pi") return sibo::StrategyKind::PI;
  if (name == "mean-mse") return sibo::StrategyKind::MEAN_MSE;
  if (name == "random") return sibo::StrategyKind::RANDOM;
  throw CLI::ValidationError(
      "--strategy", "expected one of ei, pi, mean-mse, random, or all");
}

std::vector<sibo::StrategyKind> parse_strategies(const std::string& spec) {
  if (spec == "all")
    return {sibo::StrategyKind::EI, sibo::StrategyKind::PI,
            sibo::StrategyKind::MEAN_MSE, sibo::StrategyKind::RANDOM};
  std::vector<sibo::StrategyKind> out;
  std::string item;
  std::istringstream ss(spec);
  while (std::getline(ss, item, ',')) out.push_back(parse_strategy(item));
  if (out.empty())
    throw CLI::ValidationError("--strategy", "no strategy given");
  return out;
}

std::string state_text(const std::string& path) {
  return sibo::io::read_file(path);
}

void save_state(const std::string& path, const sibo::SessionState& state) {
  sibo::io::write_file(path, sibo::serialize_session(state) + "\n");
}

struct RunSyntheticArgs {
  std::string problem = "triangle";
  std::string strategy = "ei";
  long budget = 30;
  long trials = 10;
  std::uint64_t seed = 0;
  long pool_size = 100;
  long init_size = 2;
  double noise_var = 1e-4;
  bool include_noise = true;
  std::string out_dir = ".";
};

std::string config_snapshot_json(const RunSyntheticArgs& args) {
  std::string out = "{\"problem\":\"" + sibo::io::json_escape(args.problem);
  out += "\",\"strategy\":\"" + sibo::io::json_escape(args.strategy);
  out += "\",\"budget\":" + std::to_string(args.budget);
  out += ",\"trials\":" + std::to_string(args.trials);
  out += ",\"seed\":\"" + std::to_string(args.seed) + "\"";
  out += ",\"pool_size\":" + std::to_string(args.pool_size);
  out += ",\"init_size\":" + std::to_string(args.init_size);
  out += ",\"noise_var\":" + sibo::io::format_double(args.noise_var);
  out += ",\"include_noise\":";
  out += args.include_noise ? "true" : "false";
  return out + "}";
}

int cmd_run_synthetic(const RunSyntheticArgs& args) {
  sibo::ProblemSpec problem;
  problem.kind = parse_problem(args.problem);
  problem.pool_size = args.pool_size;
  problem.init_size = args.init_size;
  problem.noise_variance = args.noise_var;

  std::vector<sibo::LoopConfig> strategies;
  for (sibo::StrategyKind kind : parse_strategies(args.strategy)) {
    sibo::LoopConfig cfg;
    cfg.strategy.kind = kind;
    cfg.budget = args.budget;
    cfg.seed = args.seed;
    cfg.include_noise = args.include_noise;
    strategies.push_back(cfg);
  }

  sibo::BenchmarkResult result =
      sibo::benchmark(problem, strategies, args.trials, args.seed);

  std::filesystem::create_directories(args.out_dir);
  std::string trace_path = args.out_dir + "/traces.jsonl";
  std::string summary_path = args.out_dir + "/regret_summary.csv";
  std::string config_path = args.out_dir + "/config.json";

  std::string traces;
  for (std::size_t s = 0; s < result.traces.size(); ++s)
    for (std::size_t trial = 0; trial < result.traces[s].size(); ++trial)
      traces += sibo::io::trace_jsonl(
          result.traces[s][trial],
          sibo::strategy_name(strategies[s].strategy.kind),
          static_cast<long>(trial), args.budget);
  sibo::io::write_file(trace_path, traces);
  sibo::io::write_file(summary_path, sibo::io::summary_csv(result.summary));
  sibo::io::write_file(config_path, config_snapshot_json(args) + "\n");

  for (const sibo::StrategySummary& s : result.summary)
    std::cout << sibo::strategy_name(s.strategy.kind)
              << " final mean log10 regret: "
              << sibo::io::format_double(
                     s.mean_log10_regret(s.mean_log10_regret.size() - 1))
              << "\n";
  std::cout << "trace file: " << trace_path << "\n";
  std::cout << "regret summary: " << summary_path << "\n";
  std::cout << "config snapshot: " << config_path << "\n";
  return 0;
}

int cmd_ask(const std::string& state_path) {
  FileLock lock(state_path);
  sibo::SessionState state = sibo::parse_session(state_text(state_path));
  sibo::PendingProposal pending = sibo::session_ask(state);
  save_state(state_path, state);
  std::cout << "iteration " << state.iteration + 1 << " proposal\n";
  std::cout << "pool index: " << pending.pool_index << "\n";
  std::cout << "input:";
  for (Eigen::Index i = 0; i < pending.input.size(); ++i)
    std::cout << " " << sibo::io::format_double(pending.input(i));
  std::cout << "\n";
  std::cout << "acquisition value: "
            << sibo::io::format_double(pending.acquisition_value) << "\n";
  return 0;
}

int cmd_tell(const std::string& state_path,
             const std::vector<double>& values) {
  FileLock lock(state_path);
  sibo::SessionState state = sibo::parse_session(state_text(state_path));
  Eigen::VectorXd y(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i)
    y(static_cast<Eigen::Index>(i)) = values[i];
  sibo::TraceRecord rec = sibo::session_tell(state, y);
  save_state(state_path, state);
  std::cout << "iteration " << rec.iteration << " recorded\n";
  std::cout << "objective: " << sibo::io::format_double(rec.objective) << "\n";
  std::cout << "incumbent value: "
            << sibo::io::format_double(rec.incumbent_value);
  if (rec.incumbent_value <= 1e-12) std::cout << " (converged)";
  std::cout << "\n";
  std::cout << "incumbent input:";
  for (Eigen::Index i = 0; i < rec.incumbent_input.size(); ++i)
    std::cout << " " << sibo::io::format_double(rec.incumbent_input(i));
  std::cout << "\n";
  return 0;
}

struct ImportArgs {
  std::string inputs_path;
  std::string target_path;
  std::string state_path;
  std::string strategy = "ei";
  long budget = 30;
  std::uint64_t seed = 0;
  bool include_noise = true;
};

int cmd_import_dataset(const ImportArgs& args) {
  sibo::io::Csv data = sibo::io::read_csv(args.inputs_path);
  std::vector<Eigen::Index> x_cols, y_cols;
  Eigen::Index flag_col = -1;
  for (std::size_t c = 0; c < data.header.size(); ++c) {
    const std::string& name = data.header[c];
    if (name.rfind("x_", 0) == 0)
      x_cols.push_back(static_cast<Eigen::Index>(c));
    else if (name.rfind("y_", 0) == 0)
      y_cols.push_back(static_cast<Eigen::Index>(c));
    else if (name == "initial")
      flag_col = static_cast<Eigen::Index>(c);
    else
      throw sibo::io::ParseError(args.inputs_path + ": unknown column '" +
                                 name + "' (expected x_*, y_*, or initial)");
  }
  if (x_cols.empty() || y_cols.empty() || flag_col < 0)
    throw sibo::io::ParseError(
        args.inputs_path +
        ": need x_1..x_d, y_1..y_M, and an 'initial' flag column");
  if (data.values.rows() < 2)
    throw sibo::io::ParseError(args.inputs_path +
                               ": need at least two pool rows");

  const Eigen::Index P = data.values.rows();
  const Eigen::Index d = static_cast<Eigen::Index>(x_cols.size());
  const Eigen::Index M = static_cast<Eigen::Index>(y_cols.size());

  sibo::io::Csv target_csv = sibo::io::read_csv(args.target_path);
  if (target_csv.values.rows() < 1)
    throw sibo::io::ParseError(args.target_path + ": no target row");
  if (target_csv.values.cols() != M)
    throw sibo::io::ParseError(
        args.target_path + ": target has " +
        std::to_string(target_csv.values.cols()) + " columns but the dataset " +
        "has " + std::to_string(M) + " outputs");

  sibo::LoopConfig cfg;
  cfg.strategy.kind = parse_strategy(args.strategy);
  cfg.budget = args.budget;
  cfg.seed = args.seed;
  cfg.include_noise = args.include_noise;
  cfg.pool.resize(P, d);
  for (Eigen::Index r = 0; r < P; ++r)
    for (Eigen::Index c = 0; c < d; ++c)
      cfg.pool(r, c) = data.values(r, x_cols[static_cast<std::size_t>(c)]);

  std::vector<Eigen::Index> initial;
  for (Eigen::Index r = 0; r < P; ++r) {
    double flag = data.values(r, flag_col);
    if (flag != 0.0 && flag != 1.0)
      throw sibo::io::ParseError(args.inputs_path + ": line " +
                                 std::to_string(r + 2) +
                                 ": 'initial' flag must be 0 or 1");
    if (flag == 1.0) initial.push_back(r);
  }
  if (initial.empty())
    throw sibo::io::ParseError(args.inputs_path +
                               ": no rows flagged as initial");
  cfg.initial_indices = initial;

  Eigen::MatrixXd init_obs(static_cast<Eigen::Index>(initial.size()), M);
  for (std::size_t i = 0; i < initial.size(); ++i)
    for (Eigen::Index c = 0; c < M; ++c)
      init_obs(static_cast<Eigen::Index>(i), c) =
          data.values(initial[i], y_cols[static_cast<std::size_t>(c)]);

  sibo::Target target;
  target.values = target_csv.values.row(0).transpose();

  FileLock lock(args.state_path);
  sibo::SessionState state = sibo::session_init(cfg, target, init_obs);
  save_state(args.state_path, state);
  std::cout << "session created: " << args.state_path << "\n";
  std::cout << "pool points: " << P << " (" << initial.size()
            << " initial, " << P - static_cast<Eigen::Index>(initial.size())
            << " unqueried)\n";
  std::cout << "outputs per observation: " << M << "\n";
  std::cout << "initial incumbent value: "
            << sibo::io::format_double(state.incumbent.best_value) << "\n";
  return 0;
}

int cmd_export_trace(const std::string& state_path,
                     const std::string& out_dir) {
  FileLock lock(state_path);
  sibo::SessionState state = sibo::parse_session(state_text(state_path));
  std::filesystem::create_directories(out_dir);

  sibo::Trace trace;
  trace.records = state.history;
  bool exhausted = state.queried_order.size() ==
                   static_cast<std::size_t>(state.config.pool.rows());
  long budget_for_marker =
      exhausted ? state.config.budget
                : static_cast<long>(trace.records.size());
  std::string trace_path = out_dir + "/session_trace.jsonl";
  sibo::io::write_file(
      trace_path,
      sibo::io::trace_jsonl(trace,
                            sibo::strategy_name(state.config.strategy.kind), 0,
                            budget_for_marker));

  sibo::StrategySummary summary;
  summary.strategy = state.config.strategy;
  long n = static_cast<long>(state.history.size());
  summary.mean_log10_regret.resize(n);
  summary.std_log10_regret = Eigen::VectorXd::Zero(n);
  for (long i = 0; i < n; ++i)
    summary.mean_log10_regret(i) = std::log10(
        state.history[static_cast<std::size_t>(i)].incumbent_value +
        sibo::kLogRegretEpsilon);
  std::string regret_path = out_dir + "/session_regret.csv";
  sibo::io::write_file(regret_path, sibo::io::summary_csv({summary}));

  std::cout << "trace file: " << trace_path << "\n";
  std::cout << "regret file: " << regret_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian active learning for structured inverse problems"};
  app.require_subcommand(1);

  RunSyntheticArgs run_args;
  CLI::App* run_cmd = app.add_subcommand(
      "run-synthetic", "Run a synthetic benchmark and write its artifacts");
  run_cmd->add_option("--problem", run_args.problem,
                      "Synthetic problem: triangle or sphere");
  run_cmd->add_option("--strategy", run_args.strategy,
                      "Strategy: ei, pi, mean-mse, random, a comma list, or "
                      "all");
  run_cmd->add_option("--budget", run_args.budget, "Acquisition iterations")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--trials", run_args.trials, "Paired trials")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--seed", run_args.seed, "Base seed");
  run_cmd->add_option("--pool-size", run_args.pool_size, "Candidate pool size")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--init-size", run_args.init_size,
                      "Initial observations per trial")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--noise-var", run_args.noise_var,
                      "Observation noise variance (0 for noise-free)");
  run_cmd->add_option("--include-noise", run_args.include_noise,
                      "Score with predictive noise included");
  run_cmd->add_option("--out-dir", run_args.out_dir, "Artifact directory");

  std::string state_path;
  CLI::App* ask_cmd =
      app.add_subcommand("ask", "Propose the next input to measure");
  ask_cmd->add_option("--state", state_path, "Session state file")
      ->required();

  std::vector<double> tell_values;
  CLI::App* tell_cmd = app.add_subcommand(
      "tell", "Record the measured observation for the pending proposal");
  tell_cmd->add_option("--state", state_path, "Session state file")
      ->required();
  tell_cmd->add_option("values", tell_values,
                       "Observed outputs y_1 .. y_M for the pending input");

  ImportArgs import_args;
  CLI::App* import_cmd = app.add_subcommand(
      "import-dataset", "Create a session from measured pool data");
  import_cmd
      ->add_option("inputs", import_args.inputs_path,
                   "CSV with x_1..x_d, y_1..y_M, initial columns")
      ->required();
  import_cmd
      ->add_option("target", import_args.target_path,
                   "CSV whose first row is the target y_1..y_M")
      ->required();
  import_cmd->add_option("--state", import_args.state_path,
                         "Session state file to create")
      ->required();
  import_cmd->add_option("--strategy", import_args.strategy,
                         "Strategy: ei, pi, mean-mse, or random");
  import_cmd->add_option("--budget", import_args.budget,
                         "Acquisition iterations")
      ->check(CLI::PositiveNumber);
  import_cmd->add_option("--seed", import_args.seed, "Base seed");
  import_cmd->add_option("--include-noise", import_args.include_noise,
                         "Score with predictive noise included");

  std::string out_dir = ".";
  CLI::App* export_cmd = app.add_subcommand(
      "export-trace", "Write a session's trace and regret curve");
  export_cmd->add_option("--state", state_path, "Session state file")
      ->required();
  export_cmd->add_option("--out-dir", out_dir, "Artifact directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (run_cmd->parsed()) return cmd_run_synthetic(run_args);
    if (ask_cmd->parsed()) return cmd_ask(state_path);
    if (tell_cmd->parsed()) return cmd_tell(state_path, tell_values);
    if (import_cmd->parsed()) return cmd_import_dataset(import_args);
    if (export_cmd->parsed()) return cmd_export_trace(state_path, out_dir);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const sibo::io::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const sibo::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const sibo::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  std::cerr << "error: no command given\n";
  return kExitUsage;
}
