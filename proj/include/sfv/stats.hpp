#ifndef SFV_STATS_HPP
#define SFV_STATS_HPP

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sfv/engine.hpp"
#include "sfv/oracle.hpp"

namespace sfv {

/// M independent runs with seeds base_seed, base_seed+1, ...; record i always
/// comes from seed base_seed+i regardless of `threads`. Engine failures are
/// rethrown as ReplicaError carrying the lowest failing replica index.
std::vector<FVRunRecord> run_replicas(const FVConfig& config, const ProcessModel& model, std::size_t replicas,
                                      std::uint64_t base_seed, unsigned threads = 1);

/// Empirical counterparts of the CLT objects, compared against the oracle.
struct ReplicaSummary {
  std::size_t M = 0;
  std::size_t N = 0;
  std::size_t K = 0;
  bool classical = false;       // K = 1: compare against the classical variance
  double p_T = 0.0;
  double target_sigma2 = 0.0;   // σ_T²(1_F) of the matching regime
  double mean_p = 0.0;
  double bias = 0.0;            // mean_p - p_T
  double bias_se = 0.0;         // sqrt(target_sigma2 / (N M))
  double var_scaled = 0.0;      // sample variance of sqrt(N)(p_hat - p_T)
  std::pair<double, double> ci95_var{0.0, 0.0};
  bool insufficient_replicas = false;  // M < 100

  std::size_t j_max = 0;
  std::vector<double> tau_means;    // mean τ_j over runs that reached level j
  std::vector<double> tau_abs_dev;  // mean |τ_j - t_j| over the same runs
  std::vector<std::size_t> tau_counts;
  double jmax_match_frac = 0.0;
  std::map<std::size_t, std::size_t> resample_histogram;

  std::map<std::string, double> mse_scaled;      // N · MSE(γ_T^N(φ))
  std::map<std::string, double> l2_bound;        // 4 ‖φ‖∞²
  std::map<std::string, double> eta_var_scaled;  // sample variance of sqrt(N)(η̂(φ) - η(φ))
  std::map<std::string, double> eta_target;      // σ²(φ - c 1_F)/p_T²
  std::map<std::string, std::size_t> eta_samples;

  double skewness = 0.0;         // of standardized errors sqrt(N)(p_hat - p_T)/σ
  double excess_kurtosis = 0.0;
  double replica_correlation = 0.0;  // lag-1 correlation of p_hat across replicas
  double cost_mean = 0.0;
};

ReplicaSummary clt_report(const std::vector<FVRunRecord>& records, const OracleReport& oracle);

struct CostReport {
  bool classical = false;
  double mean_cost = 0.0;
  double predicted = 0.0;  // the regime's asymptotic cost
  double relative_deviation = 0.0;
  double cost_sync = 0.0;
  double cost_classical = 0.0;
};

CostReport cost_report(const std::vector<FVRunRecord>& records, const OracleReport& oracle);

struct ValidationPolicy {
  double variance_tolerance = 0.20;
  double tau_tolerance = 0.02;
  double jmax_fraction = 0.95;
  double cost_tolerance_sync = 0.05;
  double cost_tolerance_classical = 0.10;
  double bias_standard_errors = 4.0;
  double formula_tolerance = 1e-10;
  std::size_t min_replicas_for_variance = 100;
};

enum class CriterionStatus { kPass, kFail, kSkipped };

struct CriterionResult {
  std::string name;
  CriterionStatus status = CriterionStatus::kSkipped;
  double value = 0.0;
  double lower = 0.0;  // acceptance window [lower, upper]
  double upper = 0.0;
  std::string detail;
};

struct ValidationResult {
  ReplicaSummary summary;
  CostReport cost;
  std::vector<CriterionResult> criteria;
  std::vector<std::string> warnings;

  bool passed() const;
};

ValidationResult validate_replicas(const std::vector<FVRunRecord>& records, const OracleReport& oracle,
                                   const ValidationPolicy& policy = {});

const char* to_string(CriterionStatus status) noexcept;

nlohmann::json to_json(const ReplicaSummary& summary);
nlohmann::json to_json(const CostReport& cost);
nlohmann::json to_json(const ValidationResult& result);
nlohmann::json records_to_json(const std::vector<FVRunRecord>& records);

/// One row per replica: replica, p_hat, resample_count, cost_segments,
/// alive_fraction_at_T, tau_1..tau_L (blank past a run's own count).
std::string records_to_csv(const std::vector<FVRunRecord>& records);

// Sample statistics shared by the reports.
double sample_mean(const std::vector<double>& xs);
double sample_variance(const std::vector<double>& xs);  // divisor M-1
std::pair<double, double> variance_ci95(double sample_var, std::size_t m);
std::pair<double, double> skewness_kurtosis(const std::vector<double>& xs);
double lag1_correlation(const std::vector<double>& xs);

}  // namespace sfv

#endif  // SFV_STATS_HPP
