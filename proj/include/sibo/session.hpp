#pragma once

#include <Eigen/Dense>

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "sibo/common.hpp"
#include "sibo/io.hpp"
#include "sibo/loop.hpp"

namespace sibo {

struct PendingProposal {
  Eigen::Index pool_index = -1;
  Eigen::VectorXd input;
  double acquisition_value = 0.0;
};

struct SessionState {
  int schema_version = 1;
  LoopConfig config;
  Target target;
  Dataset data;
  std::vector<Eigen::Index> queried_order;
  Hyperparams hyper;
  Incumbent incumbent;
  long iteration = 0;
  double initial_incumbent_value = 0.0;
  std::string rng_state;
  std::optional<PendingProposal> pending;
  std::vector<TraceRecord> history;
};

inline LoopState to_loop_state(const SessionState& s) {
  LoopState ls;
  ls.config = s.config;
  ls.target = s.target;
  ls.data = s.data;
  ls.queried_order = s.queried_order;
  ls.is_queried.assign(static_cast<std::size_t>(s.config.pool.rows()), 0);
  for (Eigen::Index idx : s.queried_order) {
    SIBO_REQUIRE(idx >= 0 && idx < s.config.pool.rows(),
                 "session: queried index out of pool range");
    ls.is_queried[static_cast<std::size_t>(idx)] = 1;
  }
  ls.hyper = s.hyper;
  ls.incumbent = s.incumbent;
  ls.loop_rng = Rng::deserialize(s.rng_state);
  ls.iteration = s.iteration;
  return ls;
}

inline void sync_from_loop_state(SessionState& s, const LoopState& ls) {
  s.data = ls.data;
  s.queried_order = ls.queried_order;
  s.hyper = ls.hyper;
  s.incumbent = ls.incumbent;
  s.iteration = ls.iteration;
  s.rng_state = ls.loop_rng.serialize();
}

inline SessionState session_init(const LoopConfig& config, const Target& target,
                                 const Eigen::MatrixXd& initial_observations) {
  LoopState ls = init_loop(config, target, initial_observations);
  SessionState s;
  s.config = config;
  s.target = target;
  sync_from_loop_state(s, ls);
  s.initial_incumbent_value = ls.incumbent.best_value;
  return s;
}

inline PendingProposal session_ask(SessionState& s) {
  SIBO_REQUIRE(!s.pending.has_value(),
               "session: a proposal is already pending; tell its observation "
               "before asking again");
  LoopState ls = to_loop_state(s);
  Proposal prop = propose_next(ls);
  s.rng_state = ls.loop_rng.serialize();
  PendingProposal pending;
  pending.pool_index = prop.pool_index;
  pending.input = s.config.pool.row(prop.pool_index).transpose();
  pending.acquisition_value = prop.acquisition_value;
  s.pending = pending;
  return pending;
}

inline TraceRecord session_tell(SessionState& s,
                                const Eigen::VectorXd& observation) {
  SIBO_REQUIRE(s.pending.has_value(),
               "session: no pending proposal; ask for one first");
  SIBO_REQUIRE(observation.size() == s.target.values.size(),
               "session: observation length does not match the output "
               "dimension");
  SIBO_REQUIRE(observation.allFinite(),
               "session: observation has non-finite entries");
  LoopState ls = to_loop_state(s);
  Proposal prop{s.pending->pool_index, s.pending->acquisition_value};
  TraceRecord rec = absorb(ls, prop, observation);
  sync_from_loop_state(s, ls);
  s.pending.reset();
  s.history.push_back(rec);
  return rec;
}

namespace detail {

inline std::string fit_options_json(const FitOptions& f) {
  std::string out = "{\"n_starts\":" + std::to_string(f.n_starts);
  out += ",\"max_iters\":" + std::to_string(f.max_iters);
  out += ",\"grad_tol\":" + io::format_double(f.grad_tol);
  out += ",\"bound_lo\":" + io::format_double(f.bound_lo);
  out += ",\"bound_hi\":" + io::format_double(f.bound_hi);
  out += ",\"fix_noise\":";
  out += f.fix_noise ? "true" : "false";
  out += ",\"seed\":\"" + std::to_string(f.seed) + "\"";
  return out + "}";
}

}  // namespace detail

inline std::string serialize_session(const SessionState& s) {
  std::string out = "{\"schema_version\":" + std::to_string(s.schema_version);
  out += ",\"config\":{";
  out += "\"strategy\":\"";
  out += strategy_name(s.config.strategy.kind);
  out += "\",\"budget\":" + std::to_string(s.config.budget);
  out += ",\"seed\":\"" + std::to_string(s.config.seed) + "\"";
  out += ",\"refit_every\":" + std::to_string(s.config.refit_every);
  out += ",\"include_noise\":";
  out += s.config.include_noise ? "true" : "false";
  out += ",\"pool\":" + io::json_matrix(s.config.pool);
  out += ",\"initial_indices\":" + io::json_indices(s.config.initial_indices);
  out += ",\"fit_first\":" + detail::fit_options_json(s.config.fit_first);
  out += ",\"fit_refit\":" + detail::fit_options_json(s.config.fit_refit);
  out += "},\"target\":" + io::json_vector(s.target.values);
  out += ",\"data_inputs\":" + io::json_matrix(s.data.inputs);
  out += ",\"data_outputs\":" + io::json_matrix(s.data.outputs);
  out += ",\"queried_order\":" + io::json_indices(s.queried_order);
  out += ",\"hyper\":{";
  out += "\"variance\":" + io::format_double(s.hyper.kernel.variance);
  out += ",\"lengthscale\":" + io::format_double(s.hyper.kernel.lengthscale);
  out += ",\"factor\":" + io::json_matrix(s.hyper.coreg.factor);
  out += ",\"kappa\":" + io::format_double(s.hyper.coreg.kappa);
  out += ",\"noise_variances\":" + io::json_vector(s.hyper.noise.variances);
  out += "},\"incumbent_value\":" + io::format_double(s.incumbent.best_value);
  out += ",\"incumbent_input\":" + io::json_vector(s.incumbent.best_input);
  out += ",\"iteration\":" + std::to_string(s.iteration);
  out += ",\"initial_incumbent_value\":" +
         io::format_double(s.initial_incumbent_value);
  out += ",\"rng_state\":\"" + io::json_escape(s.rng_state) + "\"";
  if (s.pending.has_value()) {
    out += ",\"pending\":{\"pool_index\":" +
           std::to_string(s.pending->pool_index);
    out += ",\"input\":" + io::json_vector(s.pending->input);
    out += ",\"acquisition_value\":" +
           io::format_double(s.pending->acquisition_value);
    out += "}";
  } else {
    out += ",\"pending\":null";
  }
  out += ",\"history\":[";
  for (std::size_t i = 0; i < s.history.size(); ++i) {
    if (i) out += ",";
    out += io::trace_record_json(s.history[i]);
  }
  out += "]}";
  return out;
}

namespace detail {

inline const nlohmann::json& j_field(const nlohmann::json& j,
                                     const char* name) {
  auto it = j.find(name);
  if (it == j.end())
    throw io::ParseError(std::string("session: missing field '") + name + "'");
  return *it;
}

inline double j_double(const nlohmann::json& j, const char* name) {
  const nlohmann::json& v = j_field(j, name);
  if (!v.is_number())
    throw io::ParseError(std::string("session: field '") + name +
                         "' is not a number");
  return v.get<double>();
}

inline long j_long(const nlohmann::json& j, const char* name) {
  const nlohmann::json& v = j_field(j, name);
  if (!v.is_number_integer())
    throw io::ParseError(std::string("session: field '") + name +
                         "' is not an integer");
  return v.get<long>();
}

inline std::uint64_t j_seed(const nlohmann::json& j, const char* name) {
  const nlohmann::json& v = j_field(j, name);
  if (!v.is_string())
    throw io::ParseError(std::string("session: field '") + name +
                         "' is not a seed string");
  const std::string text = v.get<std::string>();
  try {
    std::size_t used = 0;
    std::uint64_t out = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return out;
  } catch (const std::exception&) {
    throw io::ParseError(std::string("session: field '") + name +
                         "' is not a decimal seed");
  }
}

inline std::string j_string(const nlohmann::json& j, const char* name) {
  const nlohmann::json& v = j_field(j, name);
  if (!v.is_string())
    throw io::ParseError(std::string("session: field '") + name +
                         "' is not a string");
  return v.get<std::string>();
}

inline bool j_bool(const nlohmann::json& j, const char* name) {
  const nlohmann::json& v = j_field(j, name);
  if (!v.is_boolean())
    throw io::ParseError(std::string("session: field '") + name +
                         "' is not a boolean");
  return v.get<bool>();
}

inline Eigen::VectorXd j_vector(const nlohmann::json& j, const char* name) {
  const nlohmann::json& v = j_field(j, name);
  if (!v.is_array())
    throw io::ParseError(std::string("session: field '") + name +
                         "' is not an array");
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number())
      throw io::ParseError(std::string("session: field '") + name +
                           "' has a non-numeric entry");
    out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
  }
  return out;
}

inline Eigen::MatrixXd j_matrix(const nlohmann::json& j, const char* name) {
  const nlohmann::json& v = j_field(j, name);
  if (!v.is_array())
    throw io::ParseError(std::string("session: field '") + name +
                         "' is not an array");
  if (v.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd out;
  for (std::size_t r = 0; r < v.size(); ++r) {
    if (!v[r].is_array())
      throw io::ParseError(std::string("session: field '") + name +
                           "' row " + std::to_string(r) + " is not an array");
    if (r == 0)
      out.resize(static_cast<Eigen::Index>(v.size()),
                 static_cast<Eigen::Index>(v[r].size()));
    if (static_cast<Eigen::Index>(v[r].size()) != out.cols())
      throw io::ParseError(std::string("session: field '") + name +
                           "' has ragged rows");
    for (std::size_t c = 0; c < v[r].size(); ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          v[r][c].get<double>();
  }
  return out;
}

inline std::vector<Eigen::Index> j_indices(const nlohmann::json& j,
                                           const char* name) {
  const nlohmann::json& v = j_field(j, name);
  if (!v.is_array())
    throw io::ParseError(std::string("session: field '") + name +
                         "' is not an array");
  std::vector<Eigen::Index> out;
  for (const nlohmann::json& e : v) {
    if (!e.is_number_integer())
      throw io::ParseError(std::string("session: field '") + name +
                           "' has a non-integer entry");
    out.push_back(e.get<Eigen::Index>());
  }
  return out;
}

inline FitOptions j_fit_options(const nlohmann::json& j, const char* name) {
  const nlohmann::json& v = j_field(j, name);
  FitOptions f;
  f.n_starts = static_cast<int>(j_long(v, "n_starts"));
  f.max_iters = static_cast<int>(j_long(v, "max_iters"));
  f.grad_tol = j_double(v, "grad_tol");
  f.bound_lo = j_double(v, "bound_lo");
  f.bound_hi = j_double(v, "bound_hi");
  f.fix_noise = j_bool(v, "fix_noise");
  f.seed = j_seed(v, "seed");
  return f;
}

inline TraceRecord j_trace_record(const nlohmann::json& v) {
  TraceRecord rec;
  rec.iteration = j_long(v, "iteration");
  rec.pool_index = j_long(v, "pool_index");
  rec.input = j_vector(v, "input");
  rec.observation = j_vector(v, "observation");
  rec.objective = j_double(v, "objective");
  rec.incumbent_value = j_double(v, "incumbent_value");
  rec.incumbent_input = j_vector(v, "incumbent_input");
  rec.acquisition_value = j_double(v, "acquisition_value");
  return rec;
}

}  // namespace detail

inline SessionState parse_session(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw io::ParseError("session: state file is not valid JSON");
  using namespace detail;

  SessionState s;
  s.schema_version = static_cast<int>(j_long(j, "schema_version"));
  if (s.schema_version != 1)
    throw io::ParseError("session: unsupported schema version " +
                         std::to_string(s.schema_version));
  const nlohmann::json& jc = j_field(j, "config");
  s.config.strategy.kind = strategy_from_name(j_string(jc, "strategy"));
  s.config.budget = j_long(jc, "budget");
  s.config.seed = j_seed(jc, "seed");
  s.config.refit_every = j_long(jc, "refit_every");
  s.config.include_noise = j_bool(jc, "include_noise");
  s.config.pool = j_matrix(jc, "pool");
  s.config.initial_indices = j_indices(jc, "initial_indices");
  s.config.fit_first = j_fit_options(jc, "fit_first");
  s.config.fit_refit = j_fit_options(jc, "fit_refit");
  s.target.values = j_vector(j, "target");
  s.data.inputs = j_matrix(j, "data_inputs");
  s.data.outputs = j_matrix(j, "data_outputs");
  s.queried_order = j_indices(j, "queried_order");
  const nlohmann::json& jh = j_field(j, "hyper");
  s.hyper.kernel.variance = j_double(jh, "variance");
  s.hyper.kernel.lengthscale = j_double(jh, "lengthscale");
  s.hyper.coreg.factor = j_matrix(jh, "factor");
  s.hyper.coreg.kappa = j_double(jh, "kappa");
  s.hyper.noise.variances = j_vector(jh, "noise_variances");
  s.incumbent.best_value = j_double(j, "incumbent_value");
  s.incumbent.best_input = j_vector(j, "incumbent_input");
  s.iteration = j_long(j, "iteration");
  s.initial_incumbent_value = j_double(j, "initial_incumbent_value");
  s.rng_state = j_string(j, "rng_state");
  const nlohmann::json& jp = j_field(j, "pending");
  if (!jp.is_null()) {
    PendingProposal pending;
    pending.pool_index = j_long(jp, "pool_index");
    pending.input = j_vector(jp, "input");
    pending.acquisition_value = j_double(jp, "acquisition_value");
    s.pending = pending;
  }
  const nlohmann::json& jhist = j_field(j, "history");
  if (!jhist.is_array())
    throw io::ParseError("session: field 'history' is not an array");
  for (const nlohmann::json& rec : jhist)
    s.history.push_back(j_trace_record(rec));

  SIBO_REQUIRE(s.data.inputs.rows() == s.data.outputs.rows(),
               "session: data inputs/outputs row mismatch");
  SIBO_REQUIRE(static_cast<std::size_t>(s.data.inputs.rows()) ==
                   s.queried_order.size(),
               "session: queried_order does not match data size");
  return s;
}

}  // namespace sibo
