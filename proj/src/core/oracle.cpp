#include "sfv/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "format.hpp"
#include "sfv/errors.hpp"

namespace sfv {

namespace {

constexpr double kPoissonTail = 1e-13;
// Poisson mean per uniformization step; e^{-30} is still far from underflow.
constexpr double kMaxStepMean = 30.0;
constexpr double kBisectionTolerance = 1e-12;
constexpr std::size_t kMonotoneGridPoints = 257;
constexpr double kQuadratureTolerance = 1e-9;

double max_exit_rate(const Eigen::MatrixXd& a) { return (-a.diagonal()).maxCoeff(); }

// Applies exp(t A) to v, from the right (column) or the left (row).
template <class Vec, class Step>
Vec uniformize(const Eigen::MatrixXd& a, double t, Vec v, Step apply_p) {
  if (t < 0.0 || !std::isfinite(t)) throw std::invalid_argument("semigroup time must be finite and >= 0");
  const double lambda_total = max_exit_rate(a);
  if (t == 0.0 || lambda_total <= 0.0) return v;
  const Eigen::MatrixXd p = Eigen::MatrixXd::Identity(a.rows(), a.cols()) + a / lambda_total;
  const double mean_total = lambda_total * t;
  const auto steps = static_cast<int>(std::ceil(mean_total / kMaxStepMean));
  const double mean = mean_total / steps;
  for (int s = 0; s < steps; ++s) {
    double weight = std::exp(-mean);
    Vec term = v;
    Vec acc = weight * term;
    for (int k = 1;; ++k) {
      term = apply_p(p, term);
      weight *= mean / k;
      acc += weight * term;
      if (k + 2 > mean) {
        // Σ_{i>k} w_i <= w_{k+1} / (1 - mean/(k+2)).
        const double next = weight * mean / (k + 1);
        const double tail = next / (1.0 - mean / (k + 2));
        if (tail < kPoissonTail) break;
      }
    }
    v = std::move(acc);
  }
  return v;
}

double variance_under(const Eigen::RowVectorXd& mu, const Eigen::VectorXd& f) {
  const double m1 = mu.dot(f.transpose());
  const double m2 = mu.dot(f.cwiseProduct(f).transpose());
  return m2 - m1 * m1;
}

double mean_under(const Eigen::RowVectorXd& mu, const Eigen::VectorXd& f) { return mu.dot(f.transpose()); }

Eigen::RowVectorXd initial_row(const CtmcModel& model) { return model.initial_law().transpose(); }

void check_phi(const CtmcModel& model, const Eigen::VectorXd& phi) {
  if (static_cast<std::size_t>(phi.size()) != model.n_states()) {
    throw std::invalid_argument("test function vector length must equal the number of states");
  }
}

void check_theta(double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw std::invalid_argument("theta must lie in (0, 1)");
}

}  // namespace

Eigen::VectorXd semigroup_apply(const CtmcModel& model, double t, const Eigen::VectorXd& phi) {
  check_phi(model, phi);
  return uniformize(model.sub_generator(), t, phi,
                    [](const Eigen::MatrixXd& p, const Eigen::VectorXd& v) -> Eigen::VectorXd { return p * v; });
}

Eigen::RowVectorXd propagate_law(const CtmcModel& model, double t, const Eigen::RowVectorXd& mu) {
  if (static_cast<std::size_t>(mu.size()) != model.n_states()) {
    throw std::invalid_argument("law vector length must equal the number of states");
  }
  return uniformize(model.sub_generator(), t, mu,
                    [](const Eigen::MatrixXd& p, const Eigen::RowVectorXd& v) -> Eigen::RowVectorXd { return v * p; });
}

double survival_probability(const CtmcModel& model, double t) {
  // Without killing the sub-generator is conservative; avoid rounding below 1.
  if (model.killing_rates().maxCoeff() == 0.0) return 1.0;
  return propagate_law(model, t, initial_row(model)).sum();
}

double survival_derivative(const CtmcModel& model, double t) {
  const Eigen::VectorXd outflow = model.sub_generator() * Eigen::VectorXd::Ones(model.n_states());
  return propagate_law(model, t, initial_row(model)).dot(outflow.transpose());
}

std::size_t level_count(double p_T, double theta) {
  check_theta(theta);
  if (!(p_T > 0.0)) throw std::invalid_argument("p_T must be > 0");
  if (p_T >= 1.0) return 0;
  return static_cast<std::size_t>(std::floor(std::log(p_T) / std::log(theta)));
}

QuantileGrid quantile_times(const CtmcModel& model, double theta, double T) {
  check_theta(theta);
  if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("T must be finite and > 0");
  QuantileGrid grid;
  grid.theta = theta;
  grid.p_T = survival_probability(model, T);
  if (!(grid.p_T > 0.0)) throw DegenerateQuantile("p_T = 0: the target event has no mass");
  if (grid.p_T >= 1.0 - 1e-15) {
    grid.no_mass_lost = true;
    grid.r = grid.p_T;
    return grid;
  }
  const double ratio = std::log(grid.p_T) / std::log(theta);
  grid.near_integer = std::abs(ratio - std::round(ratio)) < 1e-9;
  grid.j_max = level_count(grid.p_T, theta);
  grid.r = grid.p_T / std::pow(theta, static_cast<double>(grid.j_max));
  grid.boundary_warning = std::abs(grid.r - theta) < 0.05 || std::abs(grid.r - 1.0) < 0.05;
  if (grid.j_max == 0) return grid;

  double previous = 1.0;
  for (std::size_t k = 1; k < kMonotoneGridPoints; ++k) {
    const double t = T * static_cast<double>(k) / static_cast<double>(kMonotoneGridPoints - 1);
    const double p = survival_probability(model, t);
    if (!(p < previous)) {
      std::ostringstream msg;
      msg << "survival probability is not strictly decreasing near t = " << t
          << "; quantile times are not unique";
      throw DegenerateQuantile(msg.str());
    }
    previous = p;
  }

  double lo_start = 0.0;
  for (std::size_t j = 1; j <= grid.j_max; ++j) {
    const double target = std::pow(theta, static_cast<double>(j));
    double lo = lo_start;
    double hi = T;
    while (hi - lo > kBisectionTolerance) {
      const double mid = 0.5 * (lo + hi);
      if (survival_probability(model, mid) > target) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double t_j = 0.5 * (lo + hi);
    grid.t_levels.push_back(t_j);
    lo_start = t_j;
  }
  return grid;
}

std::vector<double> sync_variance_terms(const CtmcModel& model, const Eigen::VectorXd& phi, double theta,
                                        double T) {
  check_phi(model, phi);
  const QuantileGrid grid = quantile_times(model, theta, T);
  const Eigen::RowVectorXd eta0 = initial_row(model);
  std::vector<double> terms;
  terms.reserve(grid.j_max);
  for (std::size_t j = 1; j <= grid.j_max; ++j) {
    const double t_j = grid.t_levels[j - 1];
    const Eigen::RowVectorXd eta = propagate_law(model, t_j, eta0) / std::pow(theta, static_cast<double>(j));
    terms.push_back(variance_under(eta, semigroup_apply(model, T - t_j, phi)));
  }
  return terms;
}

double sigma2_sync(const CtmcModel& model, const Eigen::VectorXd& phi, double theta, double T) {
  check_phi(model, phi);
  const QuantileGrid grid = quantile_times(model, theta, T);
  const auto terms = sync_variance_terms(model, phi, theta, T);
  const double jmax = static_cast<double>(grid.j_max);

  double total = 0.0;
  for (std::size_t j = 1; j <= grid.j_max; ++j) {
    const double jd = static_cast<double>(j);
    total += terms[j - 1] * (std::pow(theta, 2 * jd - 1) - std::pow(theta, 2 * jd + 1));
  }
  // η_T = γ_T/ρ_T carries mass r < 1; the defect sits on ∂ where φ = 0.
  const Eigen::RowVectorXd eta_T = propagate_law(model, T, initial_row(model)) / std::pow(theta, jmax);
  const double theta_2j = std::pow(theta, 2 * jmax);
  const double mean_T = mean_under(eta_T, phi);
  total += theta_2j * variance_under(eta_T, phi) + jmax * (1.0 / theta - 1.0) * theta_2j * mean_T * mean_T;
  return total;
}

double sigma2_sync_alt(const CtmcModel& model, const Eigen::VectorXd& phi, double theta, double T) {
  check_phi(model, phi);
  const QuantileGrid grid = quantile_times(model, theta, T);
  const std::size_t jmax = grid.j_max;

  Eigen::RowVectorXd corrected = initial_row(model);
  double t_prev = 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j <= jmax; ++j) {
    const double t_next = j < jmax ? grid.t_levels[j] : T;
    const Eigen::RowVectorXd predicted = propagate_law(model, t_next - t_prev, corrected);
    const Eigen::VectorXd q = semigroup_apply(model, T - t_next, phi);
    const double jd = static_cast<double>(j);
    total += std::pow(theta, 2 * jd) * variance_under(predicted, q);
    if (j < jmax) {
      corrected = predicted / predicted.sum();
      total -= std::pow(theta, 2 * (jd + 1) + 1) * variance_under(corrected, q);
    }
    t_prev = t_next;
  }
  return total;
}

double sigma2_classical(const CtmcModel& model, const Eigen::VectorXd& phi, double T) {
  check_phi(model, phi);
  if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("T must be finite and > 0");
  const Eigen::RowVectorXd eta0 = initial_row(model);
  const Eigen::VectorXd outflow = model.sub_generator() * Eigen::VectorXd::Ones(model.n_states());

  const Eigen::RowVectorXd gamma_T = propagate_law(model, T, eta0);
  const double p_T = gamma_T.sum();
  if (!(p_T > 0.0)) throw std::invalid_argument("sigma2_classical: p_T = 0");
  const Eigen::RowVectorXd eta_T = gamma_T / p_T;
  const double mean_T = mean_under(eta_T, phi);
  const double log_p = std::log(std::min(p_T, 1.0));
  const double base = p_T * p_T * variance_under(eta_T, phi) - p_T * p_T * log_p * mean_T * mean_T;

  // 𝕍_{η_t}(Q^{T-t}φ) p_t dp_t/dt with η_t the conditional law.
  auto integrand = [&](double t) {
    const Eigen::RowVectorXd gamma = propagate_law(model, t, eta0);
    const double p = gamma.sum();
    const double dp = gamma.dot(outflow.transpose());
    if (dp == 0.0 || p <= 0.0) return 0.0;
    return variance_under(gamma / p, semigroup_apply(model, T - t, phi)) * p * dp;
  };
  double error = 0.0;
  const double integral =
      boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, 0.0, T, 15, 1e-13, &error);
  if (!(error <= kQuadratureTolerance) || !std::isfinite(integral)) {
    throw QuadratureError("classical variance quadrature did not reach 1e-9 (estimate " + std::to_string(error) + ")");
  }
  return base - 2.0 * integral;
}

VarianceBounds relative_variance_bounds(double p_T, double theta) {
  check_theta(theta);
  if (!(p_T > 0.0 && p_T < 1.0)) throw std::invalid_argument("relative_variance_bounds: requires 0 < p_T < 1");
  const std::size_t j = level_count(p_T, theta);
  const double jd = static_cast<double>(j);
  const double r = p_T / std::pow(theta, jd);
  return {jd * (1.0 - theta) / theta + (1.0 - r) / r,
          (1.0 + theta) / p_T - (theta + r) / r - jd * (1.0 - theta)};
}

double h_theta(double p_T, double theta) {
  check_theta(theta);
  if (!(p_T > 0.0 && p_T < 1.0)) throw std::invalid_argument("h_theta: requires 0 < p_T < 1");
  const double j = static_cast<double>(level_count(p_T, theta));
  return j * (1.0 - theta) / theta + std::pow(theta, j) / p_T - 1.0;
}

CostPrediction cost_model(double p_T, double theta, std::size_t n_particles) {
  const double n = static_cast<double>(n_particles);
  const double j = static_cast<double>(level_count(p_T, theta));
  return {n * (1.0 + j * (1.0 - theta)), n * (1.0 - std::log(std::min(p_T, 1.0)))};
}

const TestFunctionOracle& OracleReport::function(const std::string& name) const {
  for (const auto& f : functions) {
    if (f.name == name) return f;
  }
  throw std::out_of_range("no oracle entry for test function " + name);
}

OracleReport build_oracle_report(const CtmcModel& model, const OracleRequest& request) {
  check_theta(request.theta);
  OracleReport report;
  report.T = request.T;
  report.n_particles = request.n_particles;
  report.sync_computed = request.include_sync;

  if (request.include_sync) {
    report.grid = quantile_times(model, request.theta, request.T);
  } else {
    // Closed-form bookkeeping only; θ = 1 - 1/N would mean ~N|log p_T| levels.
    report.grid.theta = request.theta;
    report.grid.p_T = survival_probability(model, request.T);
    report.grid.no_mass_lost = report.grid.p_T >= 1.0 - 1e-15;
    if (report.grid.p_T > 0.0) {
      report.grid.j_max = level_count(report.grid.p_T, request.theta);
      report.grid.r = report.grid.p_T / std::pow(request.theta, static_cast<double>(report.grid.j_max));
    }
  }
  const QuantileGrid& grid = report.grid;
  const double p_T = grid.p_T;
  if (grid.no_mass_lost) report.warnings.push_back("p_T = 1: no killing mass; r is not in (theta, 1)");
  if (grid.boundary_warning) report.warnings.push_back("r is within 0.05 of theta or 1; quantile comparisons are fragile");
  if (grid.near_integer) report.warnings.push_back("log p_T / log theta is (nearly) an integer");

  const Eigen::RowVectorXd gamma_T = propagate_law(model, request.T, initial_row(model));
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(model.n_states());
  for (const auto& phi : request.test_functions) {
    const Eigen::VectorXd values = model.tabulate(phi);
    TestFunctionOracle f;
    f.name = phi.name();
    f.sup_norm = phi.sup_norm();
    f.gamma_T = mean_under(gamma_T, values);
    f.eta_ratio = f.gamma_T / p_T;
    const Eigen::VectorXd centered = values - f.eta_ratio * ones;
    f.sigma2_classical = sigma2_classical(model, values, request.T);
    f.eta_sigma2_classical = sigma2_classical(model, centered, request.T) / (p_T * p_T);
    if (request.include_sync) {
      f.sigma2_sync = sigma2_sync(model, values, request.theta, request.T);
      f.sigma2_sync_alt = sigma2_sync_alt(model, values, request.theta, request.T);
      f.eta_sigma2_sync = sigma2_sync(model, centered, request.theta, request.T) / (p_T * p_T);
      f.variance_terms = sync_variance_terms(model, values, request.theta, request.T);
    }
    report.functions.push_back(std::move(f));
  }

  if (p_T > 0.0 && p_T < 1.0 && !grid.no_mass_lost) {
    report.rel_var_bounds = relative_variance_bounds(p_T, request.theta);
    for (int k = 1; k <= 19; ++k) {
      const double theta = 0.05 * k;
      report.h_curve.emplace_back(theta, h_theta(p_T, theta));
    }
  }
  if (request.n_particles > 0) report.cost = cost_model(p_T, request.theta, request.n_particles);
  if (request.include_sync) {
    for (std::size_t j = 1; j <= grid.j_max; ++j) {
      report.eta_levels.push_back(propagate_law(model, grid.t_levels[j - 1], initial_row(model)) /
                                  std::pow(request.theta, static_cast<double>(j)));
    }
  }
  return report;
}

namespace {

nlohmann::json optional_number(const std::optional<double>& v) {
  return v && std::isfinite(*v) ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json to_json(const OracleReport& report) {
  const auto& g = report.grid;
  nlohmann::json j;
  j["T"] = report.T;
  j["theta"] = g.theta;
  j["p_T"] = g.p_T;
  j["j_max"] = g.j_max;
  j["r"] = g.r;
  j["t_levels"] = g.t_levels;
  j["flags"] = {{"no_mass_lost", g.no_mass_lost}, {"boundary_warning", g.boundary_warning}, {"near_integer", g.near_integer}};
  j["sync_computed"] = report.sync_computed;
  auto functions = nlohmann::json::array();
  for (const auto& f : report.functions) {
    nlohmann::json fj{{"name", f.name},
                      {"sup_norm", f.sup_norm},
                      {"gamma_T", f.gamma_T},
                      {"eta_ratio", f.eta_ratio},
                      {"sigma2_sync", optional_number(f.sigma2_sync)},
                      {"sigma2_sync_alt", optional_number(f.sigma2_sync_alt)},
                      {"sigma2_classical", f.sigma2_classical},
                      {"eta_sigma2_sync", optional_number(f.eta_sigma2_sync)},
                      {"eta_sigma2_classical", f.eta_sigma2_classical},
                      {"variance_terms", f.variance_terms}};
    if (f.sigma2_sync && g.p_T > 0.0) fj["relative_sigma2_sync"] = *f.sigma2_sync / (g.p_T * g.p_T);
    functions.push_back(std::move(fj));
  }
  j["functions"] = std::move(functions);
  if (report.rel_var_bounds) {
    j["rel_var_lower"] = report.rel_var_bounds->lower;
    j["rel_var_upper"] = report.rel_var_bounds->upper;
  } else {
    j["rel_var_lower"] = nullptr;
    j["rel_var_upper"] = nullptr;
  }
  auto h = nlohmann::json::array();
  for (const auto& [theta, value] : report.h_curve) h.push_back({{"theta", theta}, {"h", value}});
  j["h_curve"] = std::move(h);
  if (report.cost) {
    j["N"] = report.n_particles;
    j["cost_sync"] = report.cost->cost_sync;
    j["cost_classical"] = report.cost->cost_classical;
  }
  auto levels = nlohmann::json::array();
  for (const auto& eta : report.eta_levels) levels.push_back(std::vector<double>(eta.data(), eta.data() + eta.size()));
  j["eta_levels"] = std::move(levels);
  j["warnings"] = report.warnings;
  return j;
}

std::string survival_curve_csv(const CtmcModel& model, double T, std::size_t points) {
  if (points < 2) throw std::invalid_argument("survival curve needs at least 2 points");
  std::string out = "t,p_t\n";
  for (std::size_t k = 0; k < points; ++k) {
    const double t = T * static_cast<double>(k) / static_cast<double>(points - 1);
    out += detail::format_double(t) + ',' + detail::format_double(survival_probability(model, t)) + '\n';
  }
  return out;
}

}  // namespace sfv
