// Shared fixtures: benchmark models, random chains, and a dense
// matrix-exponential oracle independent of the uniformization path.
#ifndef SFV_TESTS_SUPPORT_HPP
#define SFV_TESTS_SUPPORT_HPP

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "sfv/experiment.hpp"
#include "sfv/models.hpp"
#include "sfv/rng.hpp"

namespace sfv::testing {

inline std::string config_path(const std::string& name) { return std::string(SFV_CONFIG_DIR) + "/" + name; }

inline ExperimentConfig load_config(const std::string& name) {
  std::ifstream in(config_path(name));
  std::stringstream ss;
  ss << in.rdbuf();
  return experiment_from_string(ss.str());
}

inline CtmcModel two_state() {
  Eigen::MatrixXd q(2, 2);
  q << -1.5, 1.0, 1.0, -3.0;
  return CtmcModel(q, Eigen::Vector2d(1.0, 0.0));
}

inline CtmcModel no_killing_two_state() {
  Eigen::MatrixXd q(2, 2);
  q << -1.0, 1.0, 2.0, -2.0;
  return CtmcModel(q, Eigen::Vector2d(0.3, 0.7));
}

/// Off-diagonal rates in [0.1, 2], killing in [0.05, 1], strictly positive
/// initial law. Every state is killable, so p_t is strictly decreasing.
inline CtmcModel random_ctmc(RandomStream& rng, std::size_t n) {
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * (1.0 - rng.uniform_pos()); };
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      q(i, j) = u(0.1, 2.0);
      row += q(i, j);
    }
    q(i, i) = -(row + u(0.05, 1.0));
  }
  Eigen::VectorXd law(n);
  for (std::size_t i = 0; i < n; ++i) law(i) = u(0.1, 1.0);
  law /= law.sum();
  return CtmcModel(q, law);
}

inline Eigen::MatrixXd dense_expm(const Eigen::MatrixXd& a, double t) {
  const Eigen::MatrixXd at = a * t;
  return at.exp();
}

inline double dense_survival(const CtmcModel& m, double t) {
  return m.initial_law().transpose() * dense_expm(m.sub_generator(), t) * Eigen::VectorXd::Ones(m.n_states());
}

inline double relative_error(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace sfv::testing

#endif  // SFV_TESTS_SUPPORT_HPP
