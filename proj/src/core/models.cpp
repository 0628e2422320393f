#include "sfv/models.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "sfv/errors.hpp"

namespace sfv {

namespace {

constexpr double kLawTolerance = 1e-12;

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const char* field) {
  if (!j.is_array() || j.empty()) throw ConfigError(std::string(field) + " must be a non-empty array of rows");
  const auto rows = j.size();
  const auto cols = j.front().is_array() ? j.front().size() : 0;
  if (cols == 0) throw ConfigError(std::string(field) + " rows must be non-empty arrays");
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) {
      throw ConfigError(std::string(field) + " must be rectangular");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw ConfigError(std::string(field) + " entries must be numbers");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j, const char* field) {
  if (!j.is_array() || j.empty()) throw ConfigError(std::string(field) + " must be a non-empty array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(std::string(field) + " entries must be numbers");
    v(i) = j[i].get<double>();
  }
  return v;
}

nlohmann::json to_json_array(const Eigen::VectorXd& v) {
  auto out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

nlohmann::json to_json_rows(const Eigen::MatrixXd& m) {
  auto out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(to_json_array(m.row(r).transpose()));
  return out;
}

const nlohmann::json& require(const nlohmann::json& j, const char* field) {
  if (!j.contains(field)) throw ConfigError(std::string("model is missing field \"") + field + "\"");
  return j.at(field);
}

double require_number(const nlohmann::json& j, const char* field) {
  const auto& v = require(j, field);
  if (!v.is_number()) throw ConfigError(std::string("model field \"") + field + "\" must be a number");
  return v.get<double>();
}

void check_interval(double t_from, double t_cap) {
  if (!(t_from < t_cap)) throw std::invalid_argument("advance_with_skeleton: t_from must be < t_cap");
}

// Parses "prefix:<integer>" and returns the integer, or nullopt.
std::optional<std::size_t> parse_indexed(std::string_view name, std::string_view prefix) {
  if (name.substr(0, prefix.size()) != prefix) return std::nullopt;
  const auto digits = name.substr(prefix.size());
  if (digits.empty()) return std::nullopt;
  std::size_t value = 0;
  for (char c : digits) {
    if (c < '0' || c > '9') return std::nullopt;
    value = value * 10 + static_cast<std::size_t>(c - '0');
  }
  return value;
}

}  // namespace

double standard_normal(RandomStream& rng) {
  // Box-Muller, one variate per call.
  const double u1 = rng.uniform_pos();
  const double u2 = rng.uniform_pos();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------
// CtmcModel

CtmcModel::CtmcModel(Eigen::MatrixXd sub_generator, Eigen::VectorXd initial_law)
    : generator_(std::move(sub_generator)), initial_law_(std::move(initial_law)) {
  const auto n = generator_.rows();
  if (n == 0 || generator_.cols() != n) throw ConfigError("sub_generator must be a non-empty square matrix");
  if (initial_law_.size() != n) throw ConfigError("initial_law length must equal the number of states");
  if (!generator_.allFinite() || !initial_law_.allFinite()) throw ConfigError("model entries must be finite");

  killing_.resize(n);
  exit_rate_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j && generator_(i, j) < 0.0) {
        throw ConfigError("sub_generator off-diagonal entries must be >= 0");
      }
    }
    if (generator_(i, i) > 0.0) throw ConfigError("sub_generator diagonal entries must be <= 0");
    const double deficit = -generator_.row(i).sum();
    const double scale = std::max(1.0, -generator_(i, i));
    if (deficit < -1e-12 * scale) {
      throw ConfigError("sub_generator row sums must be <= 0 (killing rate per state)");
    }
    killing_(i) = std::max(0.0, deficit);
    exit_rate_(i) = -generator_(i, i);
  }

  double mass = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (initial_law_(i) < 0.0) throw ConfigError("initial_law entries must be >= 0");
    mass += initial_law_(i);
  }
  if (std::abs(mass - 1.0) > kLawTolerance) throw ConfigError("initial_law must sum to 1");

  event_cdf_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& cdf = event_cdf_[i];
    cdf.assign(n + 1, 0.0);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) acc += generator_(i, j);
      cdf[j] = acc;
    }
    cdf[n] = acc + killing_(i);
  }
  initial_cdf_.resize(n);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) initial_cdf_[i] = (acc += initial_law_(i));
}

CtmcModel CtmcModel::pure_death(double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw ConfigError("pure_death rate must be > 0");
  Eigen::MatrixXd q(1, 1);
  q(0, 0) = -rate;
  CtmcModel m(q, Eigen::VectorXd::Ones(1));
  m.pure_death_ = true;
  return m;
}

Eigen::VectorXd CtmcModel::tabulate(const TestFunction& phi) const {
  Eigen::VectorXd v(n_states());
  for (std::size_t i = 0; i < n_states(); ++i) v(i) = phi(StatePoint::at_index(i));
  return v;
}

StatePoint CtmcModel::sample_initial(RandomStream& rng) const {
  const std::size_t n = n_states();
  if (n == 1) return StatePoint::at_index(0);
  const double u = rng.uniform_pos() * initial_cdf_.back();
  for (std::size_t i = 0; i < n; ++i) {
    if (u <= initial_cdf_[i] && initial_law_(i) > 0.0) return StatePoint::at_index(i);
  }
  // Rounding at the top of the cdf: last state with positive mass.
  for (std::size_t i = n; i-- > 0;) {
    if (initial_law_(i) > 0.0) return StatePoint::at_index(i);
  }
  return StatePoint::at_index(0);
}

std::size_t CtmcModel::draw_event(std::size_t i, RandomStream& rng) const {
  const auto& cdf = event_cdf_[i];
  const std::size_t n = n_states();
  const double u = rng.uniform_pos() * cdf[n];
  for (std::size_t k = 0; k < n; ++k) {
    if (k != i && u <= cdf[k] && generator_(i, k) > 0.0) return k;
  }
  return n;
}

TrajectorySegment CtmcModel::advance_with_skeleton(const StatePoint& state, double t_from,
                                                   double t_cap, RandomStream& rng) const {
  check_interval(t_from, t_cap);
  if (!state.has_index() || state.index() >= n_states()) {
    throw std::invalid_argument("CtmcModel::advance_with_skeleton: state must be an interior index");
  }
  TrajectorySegment seg(t_from, state);
  std::size_t i = state.index();
  double t = t_from;
  for (;;) {
    const double rate = exit_rate_(i);
    if (rate <= 0.0) break;
    t += -std::log(rng.uniform_pos()) / rate;
    if (t >= t_cap) break;
    const std::size_t next = draw_event(i, rng);
    if (next == n_states()) {
      seg.finish_killed(t);
      return seg;
    }
    i = next;
    seg.record_jump(t, StatePoint::at_index(i));
  }
  seg.finish_survived(t_cap);
  return seg;
}

TestFunction CtmcModel::test_function(std::string_view name) const {
  if (name == "1_F" || name == "one") return indicator_of_alive();
  if (name == "state_index") {
    return TestFunction(
        "state_index", [](const StatePoint& x) { return static_cast<double>(x.index()); },
        static_cast<double>(n_states() - 1));
  }
  if (auto k = parse_indexed(name, "indicator:")) {
    if (*k >= n_states()) throw ConfigError("test function " + std::string(name) + " names a state out of range");
    const std::size_t target = *k;
    return TestFunction(
        std::string(name), [target](const StatePoint& x) { return x.index() == target ? 1.0 : 0.0; },
        1.0);
  }
  throw ConfigError("unknown test function \"" + std::string(name) +
                    "\" (ctmc supports 1_F, state_index, indicator:<i>)");
}

nlohmann::json CtmcModel::to_json() const {
  if (pure_death_) return {{"type", "pure_death"}, {"rate", -generator_(0, 0)}};
  return {{"type", "ctmc"}, {"sub_generator", to_json_rows(generator_)}, {"initial_law", to_json_array(initial_law_)}};
}

// ---------------------------------------------------------------------------
// DiffusionModel

DiffusionModel::DiffusionModel(AffineDrift drift, double diffusion_coeff,
                               std::optional<BarrierKilling> barrier, std::optional<RateKilling> rate,
                               double step_size, InitialLaw initial)
    : drift_(std::move(drift)),
      sigma_(diffusion_coeff),
      barrier_(std::move(barrier)),
      rate_(rate),
      step_(step_size),
      initial_(std::move(initial)) {
  const auto d = drift_.offset.size();
  if (d == 0) throw ConfigError("diffusion drift offset must be non-empty");
  if (drift_.matrix.rows() != d || drift_.matrix.cols() != d) {
    throw ConfigError("diffusion drift matrix must be d x d with d = offset length");
  }
  if (!(sigma_ > 0.0)) throw ConfigError("diffusion_coeff must be > 0");
  if (!(step_ > 0.0)) throw ConfigError("step_size must be > 0");
  if (!barrier_ && !rate_) throw ConfigError("diffusion killing must be a barrier or a rate");
  if (barrier_) {
    if (barrier_->lower.size() != d || barrier_->upper.size() != d) {
      throw ConfigError("barrier bounds must have the model dimension");
    }
    if ((barrier_->lower.array() >= barrier_->upper.array()).any()) {
      throw ConfigError("barrier box must be nonempty (lower < upper)");
    }
  }
  if (rate_ && (rate_->constant < 0.0 || rate_->quadratic < 0.0)) {
    throw ConfigError("killing rate coefficients must be >= 0");
  }
  if (initial_.kind == InitialLaw::Kind::kPoint) {
    if (initial_.point.size() != d) throw ConfigError("initial point must have the model dimension");
    if (barrier_ && outside_barrier(initial_.point)) throw ConfigError("initial point must lie inside the barrier");
  } else {
    if (initial_.lower.size() != d || initial_.upper.size() != d) {
      throw ConfigError("initial box must have the model dimension");
    }
    if ((initial_.lower.array() > initial_.upper.array()).any()) {
      throw ConfigError("initial box must satisfy lower <= upper");
    }
  }
}

bool DiffusionModel::outside_barrier(const Eigen::VectorXd& x) const {
  return barrier_ && ((x.array() <= barrier_->lower.array()).any() || (x.array() >= barrier_->upper.array()).any());
}

StatePoint DiffusionModel::sample_initial(RandomStream& rng) const {
  if (initial_.kind == InitialLaw::Kind::kPoint) {
    return StatePoint::at_coords({initial_.point.data(), initial_.point.data() + initial_.point.size()});
  }
  std::vector<double> x(dimension());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double lo = initial_.lower(k);
    const double hi = initial_.upper(k);
    x[k] = lo + (hi - lo) * (1.0 - rng.uniform_pos());
  }
  return StatePoint::at_coords(std::move(x));
}

TrajectorySegment DiffusionModel::advance_with_skeleton(const StatePoint& state, double t_from,
                                                        double t_cap, RandomStream& rng) const {
  check_interval(t_from, t_cap);
  if (!std::isfinite(t_cap)) throw std::invalid_argument("DiffusionModel requires a finite t_cap");
  if (!state.has_coords() || state.coords().size() != dimension()) {
    throw std::invalid_argument("DiffusionModel::advance_with_skeleton: state must be an interior point");
  }
  TrajectorySegment seg(t_from, state);
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(state.coords().data(), static_cast<Eigen::Index>(dimension()));
  Eigen::VectorXd noise(x.size());
  // Steps land on the global grid k·h so that deaths of different particles
  // can coincide; the engine's tie rule handles that.
  auto k = static_cast<long long>(std::floor(t_from / step_ + 1e-9));
  double t = t_from;
  while (t < t_cap) {
    ++k;
    const double t_next = std::min(static_cast<double>(k) * step_, t_cap);
    const double dt = t_next - t;
    if (dt <= 0.0) continue;
    for (Eigen::Index c = 0; c < noise.size(); ++c) noise(c) = standard_normal(rng);
    x += (drift_.matrix * x + drift_.offset) * dt + sigma_ * std::sqrt(dt) * noise;
    t = t_next;
    bool killed = outside_barrier(x);
    if (!killed && rate_) {
      const double rate = rate_->constant + rate_->quadratic * x.squaredNorm();
      killed = rng.uniform_pos() > std::exp(-rate * dt);
    }
    if (killed) {
      seg.finish_killed(t);
      return seg;
    }
    seg.record_jump(t, StatePoint::at_coords({x.data(), x.data() + x.size()}));
  }
  seg.finish_survived(t_cap);
  return seg;
}

TestFunction DiffusionModel::test_function(std::string_view name) const {
  if (name == "1_F" || name == "one") return indicator_of_alive();
  if (auto k = parse_indexed(name, "coord:")) {
    if (*k >= dimension()) throw ConfigError("test function " + std::string(name) + " names a coordinate out of range");
    const std::size_t c = *k;
    const double sup = barrier_ ? std::max(std::abs(barrier_->lower(c)), std::abs(barrier_->upper(c)))
                                : std::numeric_limits<double>::infinity();
    return TestFunction(std::string(name), [c](const StatePoint& x) { return x.coords()[c]; }, sup);
  }
  throw ConfigError("unknown test function \"" + std::string(name) + "\" (diffusion supports 1_F, coord:<k>)");
}

nlohmann::json DiffusionModel::to_json() const {
  nlohmann::json j{{"type", "diffusion"},
                   {"drift", {{"matrix", to_json_rows(drift_.matrix)}, {"offset", to_json_array(drift_.offset)}}},
                   {"diffusion_coeff", sigma_},
                   {"step_size", step_}};
  if (barrier_) {
    j["killing"] = {{"kind", "barrier"}, {"lower", to_json_array(barrier_->lower)}, {"upper", to_json_array(barrier_->upper)}};
  } else {
    j["killing"] = {{"kind", "rate"}, {"constant", rate_->constant}, {"quadratic", rate_->quadratic}};
  }
  if (initial_.kind == InitialLaw::Kind::kPoint) {
    j["initial_law"] = {{"kind", "point"}, {"x", to_json_array(initial_.point)}};
  } else {
    j["initial_law"] = {{"kind", "uniform_box"}, {"lower", to_json_array(initial_.lower)}, {"upper", to_json_array(initial_.upper)}};
  }
  return j;
}

// ---------------------------------------------------------------------------

namespace {

std::shared_ptr<const ProcessModel> parse_model(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model must be a JSON object");
  const auto& type_field = require(j, "type");
  if (!type_field.is_string()) throw ConfigError("model \"type\" must be a string");
  const auto type = type_field.get<std::string>();

  if (type == "pure_death") {
    return std::make_shared<CtmcModel>(CtmcModel::pure_death(require_number(j, "rate")));
  }
  if (type == "ctmc") {
    return std::make_shared<CtmcModel>(matrix_from_json(require(j, "sub_generator"), "sub_generator"),
                                       vector_from_json(require(j, "initial_law"), "initial_law"));
  }
  if (type == "diffusion") {
    const auto& drift_j = require(j, "drift");
    AffineDrift drift{matrix_from_json(require(drift_j, "matrix"), "drift.matrix"),
                      vector_from_json(require(drift_j, "offset"), "drift.offset")};
    const auto& kill_j = require(j, "killing");
    const auto kill_kind = require(kill_j, "kind").get<std::string>();
    std::optional<BarrierKilling> barrier;
    std::optional<RateKilling> rate;
    if (kill_kind == "barrier") {
      barrier = BarrierKilling{vector_from_json(require(kill_j, "lower"), "killing.lower"),
                               vector_from_json(require(kill_j, "upper"), "killing.upper")};
    } else if (kill_kind == "rate") {
      rate = RateKilling{kill_j.value("constant", 0.0), kill_j.value("quadratic", 0.0)};
    } else {
      throw ConfigError("killing.kind must be \"barrier\" or \"rate\"");
    }
    const auto& init_j = require(j, "initial_law");
    InitialLaw init;
    const auto init_kind = require(init_j, "kind").get<std::string>();
    if (init_kind == "point") {
      init.point = vector_from_json(require(init_j, "x"), "initial_law.x");
    } else if (init_kind == "uniform_box") {
      init.kind = InitialLaw::Kind::kUniformBox;
      init.lower = vector_from_json(require(init_j, "lower"), "initial_law.lower");
      init.upper = vector_from_json(require(init_j, "upper"), "initial_law.upper");
    } else {
      throw ConfigError("initial_law.kind must be \"point\" or \"uniform_box\"");
    }
    return std::make_shared<DiffusionModel>(std::move(drift), require_number(j, "diffusion_coeff"), std::move(barrier),
                                            rate, require_number(j, "step_size"), std::move(init));
  }
  throw ConfigError("unknown model type \"" + type + "\" (expected ctmc, pure_death or diffusion)");
}

}  // namespace

std::shared_ptr<const ProcessModel> model_from_json(const nlohmann::json& j) {
  try {
    return parse_model(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model: ") + e.what());
  }
}

}  // namespace sfv
