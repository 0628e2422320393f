#include "sfv/sfv.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "sfv/engine.hpp"
#include "sfv/errors.hpp"
#include "sfv/experiment.hpp"
#include "sfv/oracle.hpp"
#include "sfv/stats.hpp"

struct sfv_experiment {
  sfv::ExperimentConfig config;
};

struct sfv_records {
  std::vector<sfv::FVRunRecord> records;
};

struct sfv_oracle {
  sfv::OracleReport report;
};

struct sfv_validation {
  sfv::ValidationResult result;
};

namespace {

thread_local std::string g_last_error;

sfv_status fail(sfv_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Runs fn, mapping the exception hierarchy onto status codes.
template <class Fn>
sfv_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return SFV_OK;
  } catch (const sfv::ConfigError& e) {
    return fail(SFV_ERR_INVALID_CONFIG, e.what());
  } catch (const sfv::NoOracle& e) {
    return fail(SFV_ERR_NO_ORACLE, e.what());
  } catch (const sfv::DegenerateQuantile& e) {
    return fail(SFV_ERR_ORACLE, e.what());
  } catch (const sfv::QuadratureError& e) {
    return fail(SFV_ERR_ORACLE, e.what());
  } catch (const sfv::NonTermination& e) {
    return fail(SFV_ERR_ENGINE, e.what());
  } catch (const sfv::ReplicaError& e) {
    return fail(SFV_ERR_ENGINE, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(SFV_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(SFV_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(SFV_ERR_INTERNAL, e.what());
  }
}

char* copy_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

#define SFV_REQUIRE(cond, msg) \
  do {                         \
    if (!(cond)) return fail(SFV_ERR_INVALID_ARGUMENT, msg); \
  } while (0)

}  // namespace

extern "C" {

const char* sfv_version(void) { return "1.0.0"; }

const char* sfv_last_error(void) { return g_last_error.c_str(); }

void sfv_string_free(char* s) { std::free(s); }

sfv_status sfv_experiment_create(const char* json_text, sfv_experiment** out) {
  SFV_REQUIRE(json_text && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new sfv_experiment{sfv::experiment_from_string(json_text)}; });
}

void sfv_experiment_free(sfv_experiment* exp) { delete exp; }

sfv_status sfv_experiment_set_threads(sfv_experiment* exp, unsigned threads) {
  SFV_REQUIRE(exp, "null experiment");
  SFV_REQUIRE(threads >= 1, "threads must be >= 1");
  exp->config.threads = threads;
  return SFV_OK;
}

sfv_status sfv_experiment_info(const sfv_experiment* exp, size_t* n_particles, size_t* batch, size_t* replicas,
                               double* horizon) {
  SFV_REQUIRE(exp, "null experiment");
  if (n_particles) *n_particles = exp->config.run.n_particles;
  if (batch) *batch = exp->config.run.batch;
  if (replicas) *replicas = exp->config.replicas;
  if (horizon) *horizon = exp->config.run.horizon;
  return SFV_OK;
}

sfv_status sfv_run_once(const sfv_experiment* exp, uint64_t seed, char** record_json) {
  SFV_REQUIRE(exp && record_json, "null argument");
  return guarded([&] {
    sfv::FVConfig c = exp->config.run;
    c.seed = seed;
    c.threads = exp->config.threads;
    *record_json = copy_string(sfv::to_json(sfv::run_fv(c, *exp->config.model)).dump());
  });
}

sfv_status sfv_simulate(const sfv_experiment* exp, sfv_records** out) {
  SFV_REQUIRE(exp && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new sfv_records{sfv::experiment_simulate(exp->config)}; });
}

void sfv_records_free(sfv_records* records) { delete records; }

size_t sfv_records_count(const sfv_records* records) { return records ? records->records.size() : 0; }

sfv_status sfv_records_p_hat(const sfv_records* records, size_t index, double* out) {
  SFV_REQUIRE(records && out, "null argument");
  SFV_REQUIRE(index < records->records.size(), "record index out of range");
  *out = records->records[index].p_hat;
  return SFV_OK;
}

sfv_status sfv_records_resample_count(const sfv_records* records, size_t index, size_t* out) {
  SFV_REQUIRE(records && out, "null argument");
  SFV_REQUIRE(index < records->records.size(), "record index out of range");
  *out = records->records[index].resample_count;
  return SFV_OK;
}

sfv_status sfv_records_cost(const sfv_records* records, size_t index, size_t* out) {
  SFV_REQUIRE(records && out, "null argument");
  SFV_REQUIRE(index < records->records.size(), "record index out of range");
  *out = records->records[index].cost_segments;
  return SFV_OK;
}

sfv_status sfv_records_to_json(const sfv_records* records, char** out) {
  SFV_REQUIRE(records && out, "null argument");
  return guarded([&] { *out = copy_string(sfv::records_to_json(records->records).dump(2) + "\n"); });
}

sfv_status sfv_records_to_csv(const sfv_records* records, char** out) {
  SFV_REQUIRE(records && out, "null argument");
  return guarded([&] { *out = copy_string(sfv::records_to_csv(records->records)); });
}

sfv_status sfv_oracle_compute(const sfv_experiment* exp, sfv_oracle** out) {
  SFV_REQUIRE(exp && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new sfv_oracle{sfv::experiment_oracle(exp->config)}; });
}

void sfv_oracle_free(sfv_oracle* oracle) { delete oracle; }

sfv_status sfv_oracle_to_json(const sfv_oracle* oracle, char** out) {
  SFV_REQUIRE(oracle && out, "null argument");
  return guarded([&] { *out = copy_string(sfv::to_json(oracle->report).dump(2) + "\n"); });
}

sfv_status sfv_oracle_survival_csv(const sfv_experiment* exp, size_t points, char** out) {
  SFV_REQUIRE(exp && out, "null argument");
  return guarded([&] {
    const auto& model = sfv::require_exact(exp->config);
    *out = copy_string(sfv::survival_curve_csv(model, exp->config.run.horizon,
                                               points ? points : exp->config.oracle_grid_points));
  });
}

sfv_status sfv_oracle_p_T(const sfv_oracle* oracle, double* out) {
  SFV_REQUIRE(oracle && out, "null argument");
  *out = oracle->report.grid.p_T;
  return SFV_OK;
}

sfv_status sfv_oracle_j_max(const sfv_oracle* oracle, size_t* out) {
  SFV_REQUIRE(oracle && out, "null argument");
  *out = oracle->report.grid.j_max;
  return SFV_OK;
}

sfv_status sfv_validate(const sfv_experiment* exp, const sfv_records* records, const sfv_oracle* oracle,
                        sfv_validation** out) {
  SFV_REQUIRE(exp && records && oracle && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    *out = new sfv_validation{sfv::validate_replicas(records->records, oracle->report, exp->config.policy)};
  });
}

void sfv_validation_free(sfv_validation* v) { delete v; }

int sfv_validation_passed(const sfv_validation* v) { return v && v->result.passed() ? 1 : 0; }

size_t sfv_validation_warning_count(const sfv_validation* v) { return v ? v->result.warnings.size() : 0; }

const char* sfv_validation_warning(const sfv_validation* v, size_t index) {
  if (!v || index >= v->result.warnings.size()) return nullptr;
  return v->result.warnings[index].c_str();
}

sfv_status sfv_validation_to_json(const sfv_validation* v, char** out) {
  SFV_REQUIRE(v && out, "null argument");
  return guarded([&] { *out = copy_string(sfv::to_json(v->result).dump(2) + "\n"); });
}

sfv_status sfv_sweep_theta(const sfv_experiment* exp, char** csv_out) {
  SFV_REQUIRE(exp && csv_out, "null argument");
  return guarded([&] { *csv_out = copy_string(sfv::sweep_theta_csv(exp->config)); });
}

sfv_status sfv_rho_estimator(size_t branch_count, size_t batch, size_t n_particles, double* out) {
  SFV_REQUIRE(out, "null argument");
  return guarded([&] { *out = sfv::rho_estimator(branch_count, batch, n_particles); });
}

sfv_status sfv_h_theta(double p_T, double theta, double* out) {
  SFV_REQUIRE(out, "null argument");
  return guarded([&] { *out = sfv::h_theta(p_T, theta); });
}

sfv_status sfv_relative_variance_bounds(double p_T, double theta, double* lower, double* upper) {
  SFV_REQUIRE(lower && upper, "null argument");
  return guarded([&] {
    const auto b = sfv::relative_variance_bounds(p_T, theta);
    *lower = b.lower;
    *upper = b.upper;
  });
}

}  // extern "C"
