#ifndef SFV_ORACLE_HPP
#define SFV_ORACLE_HPP

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfv/models.hpp"

namespace sfv {

// --- semigroup --------------------------------------------------------------

/// Q^t φ = exp(t·A)φ for the sub-generator A, by uniformization: the Poisson
/// series is truncated once its tail falls below 1e-13, and long horizons are
/// split so no Poisson weight underflows. Throws std::invalid_argument if t < 0.
Eigen::VectorXd semigroup_apply(const CtmcModel& model, double t, const Eigen::VectorXd& phi);

/// μ exp(t·A): the (defective) law at time t of the chain started from μ.
Eigen::RowVectorXd propagate_law(const CtmcModel& model, double t, const Eigen::RowVectorXd& mu);

/// p_t = η_0 exp(tA) 1.
double survival_probability(const CtmcModel& model, double t);

/// dp_t/dt = η_0 exp(tA) A 1.
double survival_derivative(const CtmcModel& model, double t);

// --- quantiles --------------------------------------------------------------

struct QuantileGrid {
  double theta = 0.5;
  std::vector<double> t_levels;  // t_1 < ... < t_{j_max}, p(t_j) = θ^j
  std::size_t j_max = 0;         // floor(log p_T / log θ)
  double r = 1.0;                // p_T θ^{-j_max}
  double p_T = 1.0;
  bool no_mass_lost = false;     // p_T = 1: r is not in (θ, 1)
  bool boundary_warning = false; // r within 0.05 of θ or of 1
  bool near_integer = false;     // log p_T / log θ within 1e-9 of an integer
};

/// j_max and r from (p_T, θ); the same floor rule used by all closed forms.
std::size_t level_count(double p_T, double theta);

/// Solves p(t_j) = θ^j by bisection to 1e-12 in t. Throws DegenerateQuantile
/// if p is not strictly decreasing on [0, T] when levels are required.
QuantileGrid quantile_times(const CtmcModel& model, double theta, double T);

// --- asymptotic variances -----------------------------------------------------

/// Synchronized-system CLT variance σ_T²(φ) with η_t = γ_t/ρ_t.
double sigma2_sync(const CtmcModel& model, const Eigen::VectorXd& phi, double theta, double T);

/// Same quantity through predicted measures η̃_{t_j} = θη_{t_j} + (1-θ)δ_∂,
/// each obtained by propagating the previous corrected law forward.
double sigma2_sync_alt(const CtmcModel& model, const Eigen::VectorXd& phi, double theta, double T);

/// Classical (K = 1) variance with η_t = L(X_t | alive); the time integral is
/// evaluated by adaptive Gauss-Kronrod to 1e-9 absolute. Throws QuadratureError.
double sigma2_classical(const CtmcModel& model, const Eigen::VectorXd& phi, double T);

/// 𝕍_{η_{t_j}}(Q^{T-t_j} φ) for j = 1..j_max.
std::vector<double> sync_variance_terms(const CtmcModel& model, const Eigen::VectorXd& phi, double theta,
                                        double T);

// --- closed forms in (p_T, θ) -------------------------------------------------

struct VarianceBounds {
  double lower = 0.0;
  double upper = 0.0;
};

/// Window for σ_T²(1_F)/p_T². Throws std::invalid_argument unless 0 < p_T < 1, 0 < θ < 1.
VarianceBounds relative_variance_bounds(double p_T, double theta);

/// h(θ) = j(1-θ)/θ + θ^j/p_T - 1 with j = floor(log p_T / log θ).
double h_theta(double p_T, double theta);

struct CostPrediction {
  double cost_sync = 0.0;       // N (1 + j_max (1-θ))
  double cost_classical = 0.0;  // N (1 - log p_T)
};

CostPrediction cost_model(double p_T, double theta, std::size_t n_particles);

// --- report -----------------------------------------------------------------

struct TestFunctionOracle {
  std::string name;
  double sup_norm = 0.0;
  double gamma_T = 0.0;            // γ_T(φ)
  double eta_ratio = 0.0;          // η_T(φ)/η_T(1_F) = E[φ(X_T) | alive]
  std::optional<double> sigma2_sync;
  std::optional<double> sigma2_sync_alt;
  double sigma2_classical = 0.0;
  // Variances of the normalized estimator: σ²(φ - c 1_F)/p_T², c = eta_ratio.
  std::optional<double> eta_sigma2_sync;
  double eta_sigma2_classical = 0.0;
  std::vector<double> variance_terms;
};

struct OracleReport {
  double T = 0.0;
  std::size_t n_particles = 0;
  QuantileGrid grid;
  bool sync_computed = false;  // false for K = 1 configurations
  std::vector<TestFunctionOracle> functions;
  std::optional<VarianceBounds> rel_var_bounds;
  std::vector<std::pair<double, double>> h_curve;  // (θ, h(θ))
  std::optional<CostPrediction> cost;
  std::vector<Eigen::RowVectorXd> eta_levels;  // η_{t_j}, j = 1..j_max
  std::vector<std::string> warnings;

  const TestFunctionOracle& function(const std::string& name) const;
};

struct OracleRequest {
  double theta = 0.5;
  double T = 1.0;
  std::size_t n_particles = 0;  // for cost predictions; 0 = omit
  bool include_sync = true;
  std::vector<TestFunction> test_functions;
};

OracleReport build_oracle_report(const CtmcModel& model, const OracleRequest& request);

nlohmann::json to_json(const OracleReport& report);

/// "t,p_t" rows on a uniform grid of `points` >= 2 times over [0, T].
std::string survival_curve_csv(const CtmcModel& model, double T, std::size_t points);

}  // namespace sfv

#endif  // SFV_ORACLE_HPP
