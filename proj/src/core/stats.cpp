#include "sfv/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include <boost/math/distributions/chi_squared.hpp>

#include "format.hpp"
#include "sfv/errors.hpp"

namespace sfv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double target_variance(const TestFunctionOracle& f, bool classical) {
  if (classical) return f.sigma2_classical;
  if (!f.sigma2_sync) throw std::invalid_argument("oracle report lacks the synchronized variance for K > 1");
  return *f.sigma2_sync;
}

double eta_target_variance(const TestFunctionOracle& f, bool classical) {
  if (classical) return f.eta_sigma2_classical;
  return f.eta_sigma2_sync.value_or(kNaN);
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::vector<FVRunRecord> run_replicas(const FVConfig& config, const ProcessModel& model, std::size_t replicas,
                                      std::uint64_t base_seed, unsigned threads) {
  if (replicas < 2) throw ConfigError("replicas must be >= 2");
  config.validate();
  std::vector<FVRunRecord> records(replicas);
  std::vector<std::exception_ptr> errors(replicas);
  std::atomic<std::size_t> next{0};

  FVConfig per_run = config;
  // Parallelism lives at the replica level; each run is single-threaded.
  per_run.threads = threads > 1 ? 1 : config.threads;
  auto worker = [&] {
    for (std::size_t i = next++; i < replicas; i = next++) {
      FVConfig c = per_run;
      c.seed = base_seed + i;
      try {
        records[i] = run_fv(c, model);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(replicas)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < replicas; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw ReplicaError(i, e.what());
    }
  }
  return records;
}

double sample_mean(const std::vector<double>& xs) {
  if (xs.empty()) return kNaN;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_variance(const std::vector<double>& xs) {
  if (xs.size() < 2) return kNaN;
  const double m = sample_mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

std::pair<double, double> variance_ci95(double sample_var, std::size_t m) {
  if (m < 2 || !std::isfinite(sample_var)) return {kNaN, kNaN};
  const double dof = static_cast<double>(m - 1);
  const boost::math::chi_squared chi(dof);
  return {dof * sample_var / boost::math::quantile(chi, 0.975), dof * sample_var / boost::math::quantile(chi, 0.025)};
}

std::pair<double, double> skewness_kurtosis(const std::vector<double>& xs) {
  if (xs.size() < 3) return {kNaN, kNaN};
  const double m = sample_mean(xs);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : xs) {
    const double d = x - m;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  const double n = static_cast<double>(xs.size());
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (m2 <= 0.0) return {kNaN, kNaN};
  return {m3 / std::pow(m2, 1.5), m4 / (m2 * m2) - 3.0};
}

double lag1_correlation(const std::vector<double>& xs) {
  if (xs.size() < 3) return kNaN;
  const std::vector<double> a(xs.begin(), xs.end() - 1);
  const std::vector<double> b(xs.begin() + 1, xs.end());
  const double ma = sample_mean(a);
  const double mb = sample_mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

ReplicaSummary clt_report(const std::vector<FVRunRecord>& records, const OracleReport& oracle) {
  if (records.empty()) throw std::invalid_argument("clt_report: no records");
  ReplicaSummary s;
  s.M = records.size();
  s.N = records.front().n_particles;
  s.K = records.front().batch;
  for (const auto& r : records) {
    if (r.n_particles != s.N || r.batch != s.K) throw std::invalid_argument("clt_report: records from different configurations");
  }
  s.classical = s.K == 1;
  s.p_T = oracle.grid.p_T;
  s.insufficient_replicas = s.M < 100;
  const double n = static_cast<double>(s.N);
  const double root_n = std::sqrt(n);
  const double m = static_cast<double>(s.M);

  s.target_sigma2 = target_variance(oracle.function("1_F"), s.classical);

  std::vector<double> p_hat, scaled, costs;
  for (const auto& r : records) {
    p_hat.push_back(r.p_hat);
    scaled.push_back(root_n * (r.p_hat - s.p_T));
    costs.push_back(static_cast<double>(r.cost_segments));
    ++s.resample_histogram[r.resample_count];
  }
  s.mean_p = sample_mean(p_hat);
  s.bias = s.mean_p - s.p_T;
  s.bias_se = std::sqrt(s.target_sigma2 / (n * m));
  s.var_scaled = sample_variance(scaled);
  s.ci95_var = variance_ci95(s.var_scaled, s.M);
  s.cost_mean = sample_mean(costs);
  s.replica_correlation = lag1_correlation(p_hat);

  if (s.target_sigma2 > 0.0) {
    std::vector<double> z;
    for (double x : scaled) z.push_back(x / std::sqrt(s.target_sigma2));
    std::tie(s.skewness, s.excess_kurtosis) = skewness_kurtosis(z);
  } else {
    s.skewness = s.excess_kurtosis = kNaN;
  }

  s.j_max = oracle.grid.j_max;
  if (!s.classical) {
    std::size_t matches = 0;
    for (const auto& r : records) matches += r.resample_count == s.j_max ? 1 : 0;
    s.jmax_match_frac = static_cast<double>(matches) / m;
    for (std::size_t j = 1; j <= s.j_max; ++j) {
      double sum = 0.0, dev = 0.0;
      std::size_t count = 0;
      const bool have_level = j <= oracle.grid.t_levels.size();
      for (const auto& r : records) {
        if (r.branch_times.size() < j) continue;
        const double tau = r.branch_times[j - 1];
        sum += tau;
        if (have_level) dev += std::abs(tau - oracle.grid.t_levels[j - 1]);
        ++count;
      }
      s.tau_counts.push_back(count);
      s.tau_means.push_back(count ? sum / static_cast<double>(count) : kNaN);
      s.tau_abs_dev.push_back(count && have_level ? dev / static_cast<double>(count) : kNaN);
    }
  } else {
    s.jmax_match_frac = kNaN;
  }

  for (const auto& f : oracle.functions) {
    double sq = 0.0;
    for (const auto& r : records) {
      const auto it = r.gamma_hat.find(f.name);
      if (it == r.gamma_hat.end()) throw std::invalid_argument("record lacks test function " + f.name);
      sq += (it->second - f.gamma_T) * (it->second - f.gamma_T);
    }
    s.mse_scaled[f.name] = n * sq / m;
    s.l2_bound[f.name] = 4.0 * f.sup_norm * f.sup_norm;

    std::vector<double> eta_err;
    for (const auto& r : records) {
      const double v = r.eta_norm_hat.at(f.name);
      if (std::isfinite(v)) eta_err.push_back(root_n * (v - f.eta_ratio));
    }
    s.eta_samples[f.name] = eta_err.size();
    s.eta_var_scaled[f.name] = sample_variance(eta_err);
    s.eta_target[f.name] = eta_target_variance(f, s.classical);
  }
  return s;
}

CostReport cost_report(const std::vector<FVRunRecord>& records, const OracleReport& oracle) {
  if (records.empty()) throw std::invalid_argument("cost_report: no records");
  CostReport c;
  c.classical = records.front().batch == 1;
  std::vector<double> costs;
  for (const auto& r : records) costs.push_back(static_cast<double>(r.cost_segments));
  c.mean_cost = sample_mean(costs);
  const auto prediction = cost_model(oracle.grid.p_T, oracle.grid.theta, records.front().n_particles);
  c.cost_sync = prediction.cost_sync;
  c.cost_classical = prediction.cost_classical;
  c.predicted = c.classical ? c.cost_classical : c.cost_sync;
  c.relative_deviation = (c.mean_cost - c.predicted) / c.predicted;
  return c;
}

const char* to_string(CriterionStatus status) noexcept {
  switch (status) {
    case CriterionStatus::kPass: return "pass";
    case CriterionStatus::kFail: return "fail";
    case CriterionStatus::kSkipped: return "skipped";
  }
  return "unknown";
}

bool ValidationResult::passed() const {
  return std::none_of(criteria.begin(), criteria.end(),
                      [](const CriterionResult& c) { return c.status == CriterionStatus::kFail; });
}

namespace {

CriterionResult window(std::string name, double value, double lower, double upper, std::string detail = {}) {
  CriterionResult c{std::move(name), CriterionStatus::kFail, value, lower, upper, std::move(detail)};
  if (std::isfinite(value) && value >= lower && value <= upper) c.status = CriterionStatus::kPass;
  return c;
}

CriterionResult skipped(std::string name, std::string why) {
  return {std::move(name), CriterionStatus::kSkipped, kNaN, kNaN, kNaN, std::move(why)};
}

CriterionResult relative_window(std::string name, double value, double target, double tolerance) {
  if (target == 0.0) return window(std::move(name), value, 0.0, 0.0, "target variance is zero");
  return window(std::move(name), value, target * (1.0 - tolerance), target * (1.0 + tolerance));
}

}  // namespace

ValidationResult validate_replicas(const std::vector<FVRunRecord>& records, const OracleReport& oracle,
                                   const ValidationPolicy& policy) {
  ValidationResult out;
  out.summary = clt_report(records, oracle);
  out.cost = cost_report(records, oracle);
  const auto& s = out.summary;
  out.warnings = oracle.warnings;
  const bool enough = s.M >= policy.min_replicas_for_variance;
  if (!enough) {
    out.warnings.push_back("only " + std::to_string(s.M) + " replicas; variance criteria need at least " +
                           std::to_string(policy.min_replicas_for_variance) + " and are skipped");
  }

  const double bias_half = policy.bias_standard_errors * s.bias_se;
  out.criteria.push_back(window("bias", s.bias, -bias_half, bias_half));

  if (enough) {
    out.criteria.push_back(relative_window("variance_p_hat", s.var_scaled, s.target_sigma2, policy.variance_tolerance));
  } else {
    out.criteria.push_back(skipped("variance_p_hat", "insufficient replicas"));
  }

  for (const auto& f : oracle.functions) {
    const std::string name = "eta_variance:" + f.name;
    const double target = s.eta_target.at(f.name);
    if (f.name == "1_F") continue;  // normalized estimate of 1_F is identically 1
    if (!enough) {
      out.criteria.push_back(skipped(name, "insufficient replicas"));
    } else if (!std::isfinite(target)) {
      out.criteria.push_back(skipped(name, "no oracle target"));
    } else {
      out.criteria.push_back(relative_window(name, s.eta_var_scaled.at(f.name), target, policy.variance_tolerance));
    }
  }

  if (s.classical) {
    out.criteria.push_back(skipped("jmax_match", "classical system (K = 1)"));
  } else {
    out.criteria.push_back(window("jmax_match", s.jmax_match_frac, policy.jmax_fraction, 1.0));
    for (std::size_t j = 1; j <= s.j_max; ++j) {
      out.criteria.push_back(window("quantile_tau:" + std::to_string(j), s.tau_abs_dev[j - 1], 0.0, policy.tau_tolerance,
                                    "mean |tau_j - t_j|"));
    }
  }

  const double l2_factor = 1.0 + 5.0 / std::sqrt(static_cast<double>(s.M));
  for (const auto& f : oracle.functions) {
    const std::string name = "l2_bound:" + f.name;
    if (!std::isfinite(f.sup_norm)) {
      out.criteria.push_back(skipped(name, "unbounded test function"));
      continue;
    }
    out.criteria.push_back(window(name, s.mse_scaled.at(f.name), 0.0, s.l2_bound.at(f.name) * l2_factor));
  }

  const double cost_tol = s.classical ? policy.cost_tolerance_classical : policy.cost_tolerance_sync;
  out.criteria.push_back(window("cost", out.cost.relative_deviation, -cost_tol, cost_tol,
                                "relative deviation of mean cost_segments from the asymptotic cost"));

  if (oracle.sync_computed) {
    double worst = 0.0;
    for (const auto& f : oracle.functions) {
      const double a = *f.sigma2_sync;
      const double b = *f.sigma2_sync_alt;
      const double scale = std::max(std::abs(a), std::abs(b));
      worst = std::max(worst, scale > 0.0 ? std::abs(a - b) / scale : 0.0);
    }
    out.criteria.push_back(window("variance_formula_equivalence", worst, 0.0, policy.formula_tolerance));
    if (oracle.rel_var_bounds) {
      const double rel = *oracle.function("1_F").sigma2_sync / (s.p_T * s.p_T);
      const double slack = policy.formula_tolerance * std::max(1.0, rel);
      out.criteria.push_back(window("bound_sandwich", rel, oracle.rel_var_bounds->lower - slack,
                                    oracle.rel_var_bounds->upper + slack));
    }
  }
  return out;
}

nlohmann::json to_json(const ReplicaSummary& s) {
  nlohmann::json j{{"M", s.M},
                   {"N", s.N},
                   {"K", s.K},
                   {"classical", s.classical},
                   {"p_T", s.p_T},
                   {"target_sigma2", s.target_sigma2},
                   {"mean_p", s.mean_p},
                   {"bias", s.bias},
                   {"bias_se", s.bias_se},
                   {"var_scaled", number_or_null(s.var_scaled)},
                   {"ci95_var", {number_or_null(s.ci95_var.first), number_or_null(s.ci95_var.second)}},
                   {"insufficient_replicas", s.insufficient_replicas},
                   {"j_max", s.j_max},
                   {"jmax_match_frac", number_or_null(s.jmax_match_frac)},
                   {"skewness", number_or_null(s.skewness)},
                   {"excess_kurtosis", number_or_null(s.excess_kurtosis)},
                   {"replica_correlation", number_or_null(s.replica_correlation)},
                   {"cost_mean", s.cost_mean}};
  auto taus = nlohmann::json::array();
  for (std::size_t i = 0; i < s.tau_means.size(); ++i) {
    taus.push_back({{"j", i + 1}, {"mean", number_or_null(s.tau_means[i])},
                    {"mean_abs_dev", number_or_null(s.tau_abs_dev[i])}, {"runs", s.tau_counts[i]}});
  }
  j["tau"] = std::move(taus);
  auto hist = nlohmann::json::object();
  for (const auto& [count, freq] : s.resample_histogram) hist[std::to_string(count)] = freq;
  j["resample_histogram"] = std::move(hist);
  auto fns = nlohmann::json::object();
  for (const auto& [name, mse] : s.mse_scaled) {
    fns[name] = {{"mse_scaled", mse},
                 {"l2_bound", s.l2_bound.at(name)},
                 {"eta_var_scaled", number_or_null(s.eta_var_scaled.at(name))},
                 {"eta_target", number_or_null(s.eta_target.at(name))},
                 {"eta_samples", s.eta_samples.at(name)}};
  }
  j["test_functions"] = std::move(fns);
  return j;
}

nlohmann::json to_json(const CostReport& c) {
  return {{"classical", c.classical},       {"mean_cost", c.mean_cost},   {"predicted", c.predicted},
          {"relative_deviation", c.relative_deviation}, {"cost_sync", c.cost_sync}, {"cost_classical", c.cost_classical}};
}

nlohmann::json to_json(const ValidationResult& v) {
  auto criteria = nlohmann::json::array();
  for (const auto& c : v.criteria) {
    criteria.push_back({{"name", c.name},
                        {"status", to_string(c.status)},
                        {"value", number_or_null(c.value)},
                        {"lower", number_or_null(c.lower)},
                        {"upper", number_or_null(c.upper)},
                        {"detail", c.detail}});
  }
  return {{"passed", v.passed()},
          {"criteria", std::move(criteria)},
          {"summary", to_json(v.summary)},
          {"cost", to_json(v.cost)},
          {"warnings", v.warnings}};
}

nlohmann::json records_to_json(const std::vector<FVRunRecord>& records) {
  auto out = nlohmann::json::array();
  for (const auto& r : records) out.push_back(to_json(r));
  return out;
}

std::string records_to_csv(const std::vector<FVRunRecord>& records) {
  std::size_t levels = 0;
  for (const auto& r : records) levels = std::max(levels, r.branch_times.size());
  std::string out = "replica,p_hat,resample_count,cost_segments,alive_fraction_at_T";
  for (std::size_t j = 1; j <= levels; ++j) out += ",tau_" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out += std::to_string(i) + ',' + detail::format_double(r.p_hat) + ',' + std::to_string(r.resample_count) + ',' +
           std::to_string(r.cost_segments) + ',' + detail::format_double(r.alive_fraction_at_T);
    for (std::size_t j = 0; j < levels; ++j) {
      out += ',';
      if (j < r.branch_times.size()) out += detail::format_double(r.branch_times[j]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace sfv
