#ifndef SFV_ENGINE_HPP
#define SFV_ENGINE_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfv/models.hpp"
#include "sfv/rng.hpp"
#include "sfv/state.hpp"

namespace sfv {

/// Parameters of one synchronized Fleming-Viot run. K particles are
/// rebranched together each time the K-th pending death occurs.
struct FVConfig {
  std::size_t n_particles = 0;         // N >= 2
  std::size_t batch = 0;               // K, 1 <= K < N
  std::optional<double> theta;         // requested θ when K was derived from it
  double horizon = 0.0;                // T > 0
  std::uint64_t seed = 0;
  std::optional<std::size_t> max_branchings;  // default: see branching_ceiling()
  std::vector<std::string> test_functions{"1_F"};
  unsigned threads = 1;

  // K = round((1-θ)N) clamped to [1, N-1].
  static std::size_t batch_from_theta(double theta, std::size_t n_particles);

  // 1 - K/N, the survival fraction of a batch; equals θ when (1-θ)N is integral.
  double effective_theta() const noexcept {
    return 1.0 - static_cast<double>(batch) / static_cast<double>(n_particles);
  }
  std::size_t branching_ceiling() const noexcept;

  // Throws ConfigError naming the violated constraint.
  void validate() const;
};

/// Reads N, K or theta, T, seed, test_functions, max_branchings. The model
/// field is parsed separately by model_from_json.
FVConfig fv_config_from_json(const nlohmann::json& j);

/// Snapshot of the N-particle system.
struct EnsembleState {
  std::vector<StatePoint> states;
  std::vector<std::size_t> dead_pending;  // particles at ∂ awaiting the batch
  std::size_t branch_count = 0;           // B_t
  double sim_time = 0.0;
  std::vector<double> branch_times;       // τ_1 < τ_2 < ...
  std::size_t cost_segments = 0;
};

struct FVRunRecord {
  std::size_t n_particles = 0;
  std::size_t batch = 0;
  double p_hat = 0.0;
  std::map<std::string, double> gamma_hat;
  std::map<std::string, double> eta_norm_hat;  // NaN when every particle is dead at T
  std::vector<double> branch_times;
  std::size_t resample_count = 0;  // j_max^N
  std::size_t cost_segments = 0;
  double alive_fraction_at_T = 0.0;

  bool eta_norm_defined() const noexcept { return alive_fraction_at_T > 0.0; }
  friend bool operator==(const FVRunRecord&, const FVRunRecord&) = default;
};

nlohmann::json to_json(const FVRunRecord& record);

struct Estimates {
  double p_hat = 0.0;
  std::map<std::string, double> gamma_hat;
  std::map<std::string, double> eta_norm_hat;
  double alive_fraction = 0.0;
};

// (1 - K/N)^B. Throws std::invalid_argument unless 1 <= K < N.
double rho_estimator(std::size_t branch_count, std::size_t batch, std::size_t n_particles);

/// K independent uniform draws (with replacement) from {0, ..., n_survivors-1}.
std::vector<std::size_t> draw_parents(std::size_t n_dead, std::size_t n_survivors, RandomStream& rng);

/// Rebirth of the pending dead: each receives a uniformly chosen survivor
/// state. Requires |dead_pending| = K and survivor_states.size() = N - K.
/// Returns the chosen survivor positions, one per dead particle.
std::vector<std::size_t> branch_step(EnsembleState& ensemble, std::span<const StatePoint> survivor_states,
                                     std::size_t batch, RandomStream& rng);

/// η_T^N(φ) = mean of φ over particles (φ(∂) = 0), γ_T^N = ρ_T^N η_T^N,
/// p_hat = γ_T^N(1_F), normalized η = η(φ)/η(1_F).
Estimates estimators_at_T(const EnsembleState& ensemble, std::size_t batch,
                          std::span<const TestFunction> test_functions);

/// Called with the ensemble right after every branching and once at T.
using RunObserver = std::function<void(const EnsembleState&)>;

/// Runs the synchronized system on [0, T]. Deterministic given config.seed,
/// independent of config.threads. Throws NonTermination past the ceiling.
FVRunRecord run_fv(const FVConfig& config, const ProcessModel& model, const RunObserver& observer = {});

}  // namespace sfv

#endif  // SFV_ENGINE_HPP
