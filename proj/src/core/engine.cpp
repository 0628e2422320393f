#include "sfv/engine.hpp"

#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

#include "parallel.hpp"
#include "sfv/errors.hpp"

namespace sfv {

namespace {

constexpr std::size_t kCeilingPerSlot = 10'000;
// Below this many segments a parallel evolve costs more than it saves.
constexpr std::size_t kParallelGrain = 256;

struct DeathEvent {
  double time;
  std::uint64_t tie_key;
  std::size_t particle;

  // Min-heap on (time, tie_key).
  bool operator>(const DeathEvent& o) const {
    if (time != o.time) return time > o.time;
    if (tie_key != o.tie_key) return tie_key > o.tie_key;
    return particle > o.particle;
  }
};

// Alive particles as a dense array, O(1) insert/erase and uniform access.
class AliveSet {
 public:
  explicit AliveSet(std::size_t n) : members_(n), position_(n) {
    for (std::size_t i = 0; i < n; ++i) members_[i] = position_[i] = i;
  }
  std::size_t size() const noexcept { return members_.size(); }
  std::size_t operator[](std::size_t k) const noexcept { return members_[k]; }
  void erase(std::size_t particle) {
    const std::size_t pos = position_[particle];
    const std::size_t last = members_.back();
    members_[pos] = last;
    position_[last] = pos;
    members_.pop_back();
  }
  void insert(std::size_t particle) {
    position_[particle] = members_.size();
    members_.push_back(particle);
  }

 private:
  std::vector<std::size_t> members_;
  std::vector<std::size_t> position_;
};

std::vector<TestFunction> resolve_test_functions(const FVConfig& config, const ProcessModel& model) {
  std::vector<TestFunction> out;
  out.reserve(config.test_functions.size());
  for (const auto& name : config.test_functions) out.push_back(model.test_function(name));
  return out;
}

}  // namespace

std::size_t FVConfig::batch_from_theta(double theta, std::size_t n_particles) {
  if (!(theta > 0.0 && theta < 1.0)) throw ConfigError("theta must lie in (0, 1)");
  if (n_particles < 2) throw ConfigError("N must be >= 2");
  const double raw = std::round((1.0 - theta) * static_cast<double>(n_particles));
  const double clamped = std::clamp(raw, 1.0, static_cast<double>(n_particles - 1));
  return static_cast<std::size_t>(clamped);
}

std::size_t FVConfig::branching_ceiling() const noexcept {
  if (max_branchings) return *max_branchings;
  const std::size_t k = std::max<std::size_t>(batch, 1);
  return kCeilingPerSlot * ((n_particles + k - 1) / k);
}

void FVConfig::validate() const {
  if (n_particles < 2) throw ConfigError("N must be >= 2");
  if (batch < 1 || batch >= n_particles) throw ConfigError("K must satisfy 1 <= K < N");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("T must be finite and > 0");
  if (max_branchings && *max_branchings == 0) throw ConfigError("max_branchings must be >= 1");
  if (test_functions.empty()) throw ConfigError("test_functions must not be empty");
}

FVConfig fv_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run configuration must be a JSON object");
  try {
    FVConfig c;
    if (!j.contains("N")) throw ConfigError("missing field \"N\"");
    const auto n = j.at("N").get<long long>();
    if (n < 2) throw ConfigError("N must be >= 2");
    c.n_particles = static_cast<std::size_t>(n);

    const bool has_k = j.contains("K");
    const bool has_theta = j.contains("theta");
    if (has_k == has_theta) throw ConfigError("exactly one of \"K\" or \"theta\" is required");
    if (has_k) {
      const auto k = j.at("K").get<long long>();
      if (k < 1 || k >= n) throw ConfigError("K must satisfy 1 <= K < N");
      c.batch = static_cast<std::size_t>(k);
    } else {
      c.theta = j.at("theta").get<double>();
      c.batch = FVConfig::batch_from_theta(*c.theta, c.n_particles);
    }

    if (!j.contains("T")) throw ConfigError("missing field \"T\"");
    c.horizon = j.at("T").get<double>();
    if (!j.contains("seed")) throw ConfigError("missing field \"seed\" (seeds are mandatory)");
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("max_branchings")) c.max_branchings = j.at("max_branchings").get<std::size_t>();
    if (j.contains("test_functions")) {
      c.test_functions = j.at("test_functions").get<std::vector<std::string>>();
    }
    if (j.contains("threads")) c.threads = j.at("threads").get<unsigned>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run configuration: ") + e.what());
  }
}

nlohmann::json to_json(const FVRunRecord& r) {
  nlohmann::json eta = nlohmann::json::object();
  for (const auto& [name, v] : r.eta_norm_hat) {
    eta[name] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  }
  return {{"N", r.n_particles},
          {"K", r.batch},
          {"p_hat", r.p_hat},
          {"gamma_hat", r.gamma_hat},
          {"eta_norm_hat", eta},
          {"eta_norm_defined", r.eta_norm_defined()},
          {"branch_times", r.branch_times},
          {"resample_count", r.resample_count},
          {"cost_segments", r.cost_segments},
          {"alive_fraction_at_T", r.alive_fraction_at_T}};
}

double rho_estimator(std::size_t branch_count, std::size_t batch, std::size_t n_particles) {
  if (batch < 1 || batch >= n_particles) throw std::invalid_argument("rho_estimator: requires 1 <= K < N");
  const double keep = static_cast<double>(n_particles - batch) / static_cast<double>(n_particles);
  // Repeated multiplication: exact for the dyadic cases and free of pow's
  // last-ulp variation across libms.
  double rho = 1.0;
  for (std::size_t b = 0; b < branch_count; ++b) rho *= keep;
  return rho;
}

std::vector<std::size_t> draw_parents(std::size_t n_dead, std::size_t n_survivors, RandomStream& rng) {
  if (n_survivors == 0) throw std::invalid_argument("draw_parents: no survivors");
  std::vector<std::size_t> parents(n_dead);
  for (auto& p : parents) p = static_cast<std::size_t>(rng.below(n_survivors));
  return parents;
}

std::vector<std::size_t> branch_step(EnsembleState& ensemble, std::span<const StatePoint> survivor_states,
                                     std::size_t batch, RandomStream& rng) {
  const std::size_t n = ensemble.states.size();
  if (batch < 1 || batch >= n) throw std::invalid_argument("branch_step: requires 1 <= K < N");
  if (survivor_states.size() != n - batch) throw std::invalid_argument("branch_step: survivor count must equal N - K");
  if (ensemble.dead_pending.size() != batch) throw std::invalid_argument("branch_step: exactly K particles must be pending");
  for (const auto& s : survivor_states) {
    if (s.is_cemetery()) throw std::invalid_argument("branch_step: survivor states must be interior");
  }
  auto parents = draw_parents(batch, survivor_states.size(), rng);
  for (std::size_t k = 0; k < batch; ++k) ensemble.states[ensemble.dead_pending[k]] = survivor_states[parents[k]];
  ensemble.dead_pending.clear();
  ++ensemble.branch_count;
  return parents;
}

Estimates estimators_at_T(const EnsembleState& ensemble, std::size_t batch,
                          std::span<const TestFunction> test_functions) {
  const std::size_t n = ensemble.states.size();
  const double rho = rho_estimator(ensemble.branch_count, batch, n);
  const double inv_n = 1.0 / static_cast<double>(n);

  std::size_t alive = 0;
  for (const auto& s : ensemble.states) alive += s.is_interior() ? 1 : 0;

  Estimates est;
  est.alive_fraction = static_cast<double>(alive) * inv_n;
  est.p_hat = rho * est.alive_fraction;
  for (const auto& phi : test_functions) {
    double sum = 0.0;
    for (const auto& s : ensemble.states) sum += phi(s);
    const double eta = sum * inv_n;
    est.gamma_hat[phi.name()] = rho * eta;
    est.eta_norm_hat[phi.name()] =
        alive > 0 ? eta / est.alive_fraction : std::numeric_limits<double>::quiet_NaN();
  }
  return est;
}

FVRunRecord run_fv(const FVConfig& config, const ProcessModel& model, const RunObserver& observer) {
  config.validate();
  const auto test_functions = resolve_test_functions(config, model);
  const std::size_t n = config.n_particles;
  const std::size_t k_batch = config.batch;
  const double horizon = config.horizon;
  const std::size_t ceiling = config.branching_ceiling();
  const unsigned threads = config.threads;

  std::vector<TrajectorySegment> segments(n);
  std::vector<char> dead(n, 0);
  AliveSet alive(n);
  std::priority_queue<DeathEvent, std::vector<DeathEvent>, std::greater<>> deaths;
  std::vector<std::size_t> pending;
  pending.reserve(k_batch);

  EnsembleState ensemble;
  ensemble.cost_segments = n;

  auto schedule = [&](std::size_t particle, std::size_t epoch) {
    if (const auto t = segments[particle].death_time()) {
      deaths.push({*t, stream_key(config.seed, StreamDomain::kTieBreak, particle, epoch), particle});
    }
  };

  detail::parallel_for(n, n >= kParallelGrain ? threads : 1, [&](std::size_t i) {
    auto rng = RandomStream::derive(config.seed, StreamDomain::kParticle, i, 0);
    segments[i] = model.advance_with_skeleton(model.sample_initial(rng), 0.0, horizon, rng);
  });
  for (std::size_t i = 0; i < n; ++i) schedule(i, 0);

  std::vector<StatePoint> rebirth_states(k_batch);
  while (!deaths.empty()) {
    const DeathEvent ev = deaths.top();
    deaths.pop();
    dead[ev.particle] = 1;
    alive.erase(ev.particle);
    pending.push_back(ev.particle);
    if (pending.size() != k_batch || !(ev.time < horizon)) continue;

    // K-th death strictly before T: synchronized branching at τ = ev.time.
    if (ensemble.branch_count + 1 > ceiling) {
      throw NonTermination("branching count exceeded the ceiling of " + std::to_string(ceiling) +
                           " before T; the model may never reach the horizon (p_T = 0?)");
    }
    const double tau = ev.time;
    auto branch_rng = RandomStream::derive(config.seed, StreamDomain::kBranch, ensemble.branch_count + 1);
    const auto parents = draw_parents(k_batch, alive.size(), branch_rng);
    for (std::size_t k = 0; k < k_batch; ++k) rebirth_states[k] = segments[alive[parents[k]]].state_at(tau);

    ++ensemble.branch_count;
    ensemble.branch_times.push_back(tau);
    const std::size_t epoch = ensemble.branch_count;
    detail::parallel_for(k_batch, k_batch >= kParallelGrain ? threads : 1, [&](std::size_t k) {
      const std::size_t particle = pending[k];
      auto rng = RandomStream::derive(config.seed, StreamDomain::kParticle, particle, epoch);
      segments[particle] = model.advance_with_skeleton(rebirth_states[k], tau, horizon, rng);
    });
    ensemble.cost_segments += k_batch;
    for (const std::size_t particle : pending) {
      dead[particle] = 0;
      alive.insert(particle);
      schedule(particle, epoch);
    }
    pending.clear();

    if (observer) {
      ensemble.sim_time = tau;
      ensemble.states.resize(n);
      for (std::size_t i = 0; i < n; ++i) ensemble.states[i] = segments[i].state_at(tau);
      ensemble.dead_pending.clear();
      observer(ensemble);
    }
  }

  ensemble.sim_time = horizon;
  ensemble.states.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ensemble.states[i] = dead[i] ? StatePoint::cemetery() : segments[i].last_interior();
  }
  ensemble.dead_pending = pending;
  if (observer) observer(ensemble);

  const Estimates est = estimators_at_T(ensemble, k_batch, test_functions);
  FVRunRecord record;
  record.n_particles = n;
  record.batch = k_batch;
  record.p_hat = est.p_hat;
  record.gamma_hat = est.gamma_hat;
  record.eta_norm_hat = est.eta_norm_hat;
  record.branch_times = std::move(ensemble.branch_times);
  record.resample_count = ensemble.branch_count;
  record.cost_segments = ensemble.cost_segments;
  record.alive_fraction_at_T = est.alive_fraction;
  return record;
}

}  // namespace sfv
