#ifndef SFV_MODELS_HPP
#define SFV_MODELS_HPP

#include <Eigen/Dense>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sfv/rng.hpp"
#include "sfv/state.hpp"

namespace sfv {

class CtmcModel;

/// A killed Markov process on F ∪ {∂}. Implementations are immutable after
/// construction; all randomness comes from the caller's stream.
class ProcessModel {
 public:
  virtual ~ProcessModel() = default;

  virtual std::string_view kind() const noexcept = 0;

  // Draws X_0 ~ η_0. Always interior: p_0 = 1.
  virtual StatePoint sample_initial(RandomStream& rng) const = 0;

  /// Evolves `state` from t_from until death or t_cap (which may be +inf).
  /// Throws std::invalid_argument when t_from >= t_cap or state is ∂.
  virtual TrajectorySegment advance_with_skeleton(const StatePoint& state, double t_from,
                                                  double t_cap, RandomStream& rng) const = 0;

  /// Looks up a named observable. Throws ConfigError for unknown names.
  virtual TestFunction test_function(std::string_view name) const = 0;

  // Non-null when the model admits the exact finite-state oracle.
  virtual const CtmcModel* exact() const noexcept { return nullptr; }

  virtual nlohmann::json to_json() const = 0;
};

/// Finite-state continuous-time chain with a sub-Markovian generator. Row
/// deficits are the killing rates κ_i. Simulated exactly (jump chain with
/// exponential holding times), so death times are atomless.
class CtmcModel final : public ProcessModel {
 public:
  CtmcModel(Eigen::MatrixXd sub_generator, Eigen::VectorXd initial_law);

  static CtmcModel pure_death(double rate);

  std::size_t n_states() const noexcept { return static_cast<std::size_t>(generator_.rows()); }
  const Eigen::MatrixXd& sub_generator() const noexcept { return generator_; }
  const Eigen::VectorXd& initial_law() const noexcept { return initial_law_; }
  const Eigen::VectorXd& killing_rates() const noexcept { return killing_; }
  bool is_pure_death() const noexcept { return pure_death_; }

  // Values of a test function on the interior states.
  Eigen::VectorXd tabulate(const TestFunction& phi) const;

  std::string_view kind() const noexcept override { return pure_death_ ? "pure_death" : "ctmc"; }
  StatePoint sample_initial(RandomStream& rng) const override;
  TrajectorySegment advance_with_skeleton(const StatePoint& state, double t_from, double t_cap,
                                          RandomStream& rng) const override;
  TestFunction test_function(std::string_view name) const override;
  const CtmcModel* exact() const noexcept override { return this; }
  nlohmann::json to_json() const override;

 private:
  // Samples the index of the next event from row i: 0..n-1 jump, n kill.
  std::size_t draw_event(std::size_t i, RandomStream& rng) const;

  Eigen::MatrixXd generator_;
  Eigen::VectorXd initial_law_;
  Eigen::VectorXd killing_;
  Eigen::VectorXd exit_rate_;
  std::vector<std::vector<double>> event_cdf_;  // per row, length n+1
  std::vector<double> initial_cdf_;
  bool pure_death_ = false;
};

struct AffineDrift {
  Eigen::MatrixXd matrix;  // drift(x) = matrix·x + offset
  Eigen::VectorXd offset;
};

struct BarrierKilling {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct RateKilling {
  double constant = 0.0;
  double quadratic = 0.0;  // rate(x) = constant + quadratic·|x|²
};

struct InitialLaw {
  enum class Kind { kPoint, kUniformBox } kind = Kind::kPoint;
  Eigen::VectorXd point;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

/// Euler-Maruyama diffusion dX = b(X)dt + σ dW, killed on leaving a box
/// (checked at grid points) or at a state-dependent rate. Biased by the time
/// step; for demonstration only, no exact oracle.
class DiffusionModel final : public ProcessModel {
 public:
  DiffusionModel(AffineDrift drift, double diffusion_coeff, std::optional<BarrierKilling> barrier,
                 std::optional<RateKilling> rate, double step_size, InitialLaw initial);

  std::size_t dimension() const noexcept { return static_cast<std::size_t>(drift_.offset.size()); }
  double step_size() const noexcept { return step_; }

  std::string_view kind() const noexcept override { return "diffusion"; }
  StatePoint sample_initial(RandomStream& rng) const override;
  TrajectorySegment advance_with_skeleton(const StatePoint& state, double t_from, double t_cap,
                                          RandomStream& rng) const override;
  TestFunction test_function(std::string_view name) const override;
  nlohmann::json to_json() const override;

 private:
  bool outside_barrier(const Eigen::VectorXd& x) const;

  AffineDrift drift_;
  double sigma_;
  std::optional<BarrierKilling> barrier_;
  std::optional<RateKilling> rate_;
  double step_;
  InitialLaw initial_;
};

double standard_normal(RandomStream& rng);

/// Parses {"type": "ctmc" | "pure_death" | "diffusion", ...}. Throws ConfigError.
std::shared_ptr<const ProcessModel> model_from_json(const nlohmann::json& j);

}  // namespace sfv

#endif  // SFV_MODELS_HPP
