#ifndef SFV_EXPERIMENT_HPP
#define SFV_EXPERIMENT_HPP

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfv/engine.hpp"
#include "sfv/models.hpp"
#include "sfv/oracle.hpp"
#include "sfv/stats.hpp"

namespace sfv {

/// A complete experiment file: the run configuration and model plus the
/// replica count and per-subcommand options.
///
///   {"N": 10000, "theta": 0.5 | "K": 5000, "T": 3, "seed": 1,
///    "model": {...}, "test_functions": ["1_F"],
///    "replicas": 400, "threads": 1, "oracle_grid_points": 201,
///    "oracle_theta": 0.5, "sweep": {"start": .., "stop": .., "step": ..} | {"values": [..]},
///    "validation": {"variance_tolerance": 0.2, "tau_tolerance": 0.02, ...}}
struct ExperimentConfig {
  FVConfig run;
  std::shared_ptr<const ProcessModel> model;
  std::size_t replicas = 100;
  unsigned threads = 1;
  std::size_t oracle_grid_points = 201;
  std::optional<double> oracle_theta;  // overrides 1 - K/N in oracle comparisons
  std::vector<double> sweep_thetas;
  ValidationPolicy policy;

  double comparison_theta() const { return oracle_theta.value_or(run.effective_theta()); }
};

/// Throws ConfigError with a message naming the offending field.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig experiment_from_string(const std::string& text);

/// Throws NoOracle for models without a finite-state oracle.
const CtmcModel& require_exact(const ExperimentConfig& exp);

OracleReport experiment_oracle(const ExperimentConfig& exp);

std::vector<FVRunRecord> experiment_simulate(const ExperimentConfig& exp);

/// Rows (θ, j_max, r, h, bounds, σ², costs, flag) over the sweep grid.
std::string sweep_theta_csv(const ExperimentConfig& exp);

}  // namespace sfv

#endif  // SFV_EXPERIMENT_HPP
