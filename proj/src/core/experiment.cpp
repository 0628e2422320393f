#include "sfv/experiment.hpp"

#include <algorithm>
#include <cmath>

#include "format.hpp"
#include "sfv/errors.hpp"

namespace sfv {

namespace {

std::vector<double> sweep_grid(const nlohmann::json& j) {
  if (j.contains("values")) {
    auto values = j.at("values").get<std::vector<double>>();
    if (values.empty()) throw ConfigError("sweep.values must not be empty");
    for (double v : values) {
      if (!(v > 0.0 && v < 1.0)) throw ConfigError("sweep values must lie in (0, 1)");
    }
    return values;
  }
  const double start = j.value("start", 0.05);
  const double stop = j.value("stop", 0.95);
  const double step = j.value("step", 0.05);
  if (!(step > 0.0) || !(start > 0.0) || !(stop < 1.0) || stop < start) {
    throw ConfigError("sweep grid must satisfy 0 < start <= stop < 1 and step > 0");
  }
  const auto count = static_cast<std::size_t>(std::llround((stop - start) / step)) + 1;
  std::vector<double> grid;
  for (std::size_t k = 0; k < count; ++k) {
    // Snap to 12 decimals so 0.1 + 2 * 0.1 prints as 0.3.
    grid.push_back(std::round((start + static_cast<double>(k) * step) * 1e12) / 1e12);
  }
  return grid;
}

ValidationPolicy policy_from_json(const nlohmann::json& j) {
  ValidationPolicy p;
  p.variance_tolerance = j.value("variance_tolerance", p.variance_tolerance);
  p.tau_tolerance = j.value("tau_tolerance", p.tau_tolerance);
  p.jmax_fraction = j.value("jmax_fraction", p.jmax_fraction);
  p.cost_tolerance_sync = j.value("cost_tolerance_sync", p.cost_tolerance_sync);
  p.cost_tolerance_classical = j.value("cost_tolerance_classical", p.cost_tolerance_classical);
  p.bias_standard_errors = j.value("bias_standard_errors", p.bias_standard_errors);
  p.min_replicas_for_variance = j.value("min_replicas", p.min_replicas_for_variance);
  return p;
}

std::string fmt(double v) { return detail::format_double(v); }

}  // namespace

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  ExperimentConfig exp;
  exp.run = fv_config_from_json(j);
  if (!j.contains("model")) throw ConfigError("missing field \"model\"");
  exp.model = model_from_json(j.at("model"));
  try {
    exp.replicas = j.value("replicas", exp.replicas);
    if (exp.replicas < 2) throw ConfigError("replicas must be >= 2");
    exp.threads = j.value("threads", 1u);
    exp.oracle_grid_points = j.value("oracle_grid_points", exp.oracle_grid_points);
    if (exp.oracle_grid_points < 2) throw ConfigError("oracle_grid_points must be >= 2");
    if (j.contains("oracle_theta")) {
      exp.oracle_theta = j.at("oracle_theta").get<double>();
      if (!(*exp.oracle_theta > 0.0 && *exp.oracle_theta < 1.0)) throw ConfigError("oracle_theta must lie in (0, 1)");
    }
    exp.sweep_thetas = sweep_grid(j.value("sweep", nlohmann::json::object()));
    if (j.contains("validation")) exp.policy = policy_from_json(j.at("validation"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  }
  auto& names = exp.run.test_functions;
  if (std::find(names.begin(), names.end(), "1_F") == names.end()) names.insert(names.begin(), "1_F");
  // Fail early on unknown test function names.
  for (const auto& name : exp.run.test_functions) (void)exp.model->test_function(name);
  return exp;
}

ExperimentConfig experiment_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  return experiment_from_json(j);
}

const CtmcModel& require_exact(const ExperimentConfig& exp) {
  const CtmcModel* exact = exp.model->exact();
  if (!exact) {
    throw NoOracle("model type \"" + std::string(exp.model->kind()) +
                   "\" has no exact oracle; oracle and validation need a finite-state (ctmc or pure_death) model");
  }
  return *exact;
}

OracleReport experiment_oracle(const ExperimentConfig& exp) {
  const CtmcModel& model = require_exact(exp);
  OracleRequest request;
  request.theta = exp.comparison_theta();
  request.T = exp.run.horizon;
  request.n_particles = exp.run.n_particles;
  request.include_sync = exp.run.batch > 1 || exp.oracle_theta.has_value();
  for (const auto& name : exp.run.test_functions) request.test_functions.push_back(model.test_function(name));
  bool has_indicator = false;
  for (const auto& f : request.test_functions) has_indicator = has_indicator || f.name() == "1_F";
  if (!has_indicator) request.test_functions.insert(request.test_functions.begin(), indicator_of_alive());
  return build_oracle_report(model, request);
}

std::vector<FVRunRecord> experiment_simulate(const ExperimentConfig& exp) {
  return run_replicas(exp.run, *exp.model, exp.replicas, exp.run.seed, exp.threads);
}

std::string sweep_theta_csv(const ExperimentConfig& exp) {
  const CtmcModel& model = require_exact(exp);
  const double T = exp.run.horizon;
  const double p_T = survival_probability(model, T);
  const bool rare = p_T > 0.0 && p_T < 1.0;
  const auto ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(model.n_states()));
  const std::size_t n = exp.run.n_particles;

  std::string out =
      "theta,j_max,r,h,rel_var_lower,rel_var_upper,sigma2_sync,relative_sigma2_sync,cost_sync,cost_classical,"
      "cost_sync_over_N,cost_classical_over_N,flagged,flag_reason\n";
  for (const double theta : exp.sweep_thetas) {
    std::string reason;
    auto add_reason = [&](const char* r) { reason += reason.empty() ? r : std::string(";") + r; };
    if (!rare) {
      add_reason("no_mass_lost");
      out += fmt(theta) + ",0,nan,nan,nan,nan,nan,nan," + fmt(static_cast<double>(n)) + ',' +
             fmt(static_cast<double>(n)) + ",1,1,1," + reason + '\n';
      continue;
    }
    const std::size_t j = level_count(p_T, theta);
    const double r = p_T / std::pow(theta, static_cast<double>(j));
    const double ratio = std::log(p_T) / std::log(theta);
    if (std::abs(ratio - std::round(ratio)) < 1e-9) add_reason("near_integer");
    if (std::abs(r - theta) < 0.05 || std::abs(r - 1.0) < 0.05) add_reason("boundary");
    const auto bounds = relative_variance_bounds(p_T, theta);
    const auto cost = cost_model(p_T, theta, n);
    double sigma2 = std::nan("");
    try {
      sigma2 = sigma2_sync(model, ones, theta, T);
    } catch (const DegenerateQuantile&) {
      add_reason("degenerate_quantile");
    }
    out += fmt(theta) + ',' + std::to_string(j) + ',' + fmt(r) + ',' + fmt(h_theta(p_T, theta)) + ',' +
           fmt(bounds.lower) + ',' + fmt(bounds.upper) + ',' + fmt(sigma2) + ',' + fmt(sigma2 / (p_T * p_T)) + ',' +
           fmt(cost.cost_sync) + ',' + fmt(cost.cost_classical) + ',' + fmt(cost.cost_sync / static_cast<double>(n)) +
           ',' + fmt(cost.cost_classical / static_cast<double>(n)) + ',' + (reason.empty() ? "0" : "1") + ',' + reason +
           '\n';
  }
  return out;
}

}  // namespace sfv
