/*
 * sfv.h - C interface to the synchronized Fleming-Viot simulator.
 *
 * All objects are opaque handles created by sfv_*_create/compute functions
 * and released with the matching sfv_*_free. Every fallible call returns an
 * sfv_status; on failure a thread-local message is available from
 * sfv_last_error() until the next call on the same thread. Strings returned
 * through char** out-parameters are heap-allocated and must be released with
 * sfv_string_free.
 */
#ifndef SFV_SFV_H
#define SFV_SFV_H

#include <stddef.h>
#include <stdint.h>

#if defined(SFV_BUILDING_LIBRARY)
#define SFV_API __attribute__((visibility("default")))
#else
#define SFV_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sfv_status {
  SFV_OK = 0,
  SFV_ERR_INVALID_CONFIG = 1, /* malformed or inconsistent configuration */
  SFV_ERR_ENGINE = 2,         /* simulation failure, e.g. branching ceiling */
  SFV_ERR_NO_ORACLE = 3,      /* model has no exact finite-state oracle */
  SFV_ERR_ORACLE = 5,         /* degenerate quantile, quadrature failure */
  SFV_ERR_INVALID_ARGUMENT = 6,
  SFV_ERR_INTERNAL = 7
} sfv_status;

typedef struct sfv_experiment sfv_experiment;
typedef struct sfv_records sfv_records;
typedef struct sfv_oracle sfv_oracle;
typedef struct sfv_validation sfv_validation;

SFV_API const char* sfv_version(void);
SFV_API const char* sfv_last_error(void);
SFV_API void sfv_string_free(char* s);

/* Experiments: parsed from the JSON configuration text. */
SFV_API sfv_status sfv_experiment_create(const char* json_text, sfv_experiment** out);
SFV_API void sfv_experiment_free(sfv_experiment* exp);
SFV_API sfv_status sfv_experiment_set_threads(sfv_experiment* exp, unsigned threads);
SFV_API sfv_status sfv_experiment_info(const sfv_experiment* exp, size_t* n_particles, size_t* batch,
                                       size_t* replicas, double* horizon);

/* Single run with an explicit seed; returns the record as JSON. */
SFV_API sfv_status sfv_run_once(const sfv_experiment* exp, uint64_t seed, char** record_json);

/* Replicas with seeds seed, seed+1, ... from the configuration. */
SFV_API sfv_status sfv_simulate(const sfv_experiment* exp, sfv_records** out);
SFV_API void sfv_records_free(sfv_records* records);
SFV_API size_t sfv_records_count(const sfv_records* records);
SFV_API sfv_status sfv_records_p_hat(const sfv_records* records, size_t index, double* out);
SFV_API sfv_status sfv_records_resample_count(const sfv_records* records, size_t index, size_t* out);
SFV_API sfv_status sfv_records_cost(const sfv_records* records, size_t index, size_t* out);
SFV_API sfv_status sfv_records_to_json(const sfv_records* records, char** out);
SFV_API sfv_status sfv_records_to_csv(const sfv_records* records, char** out);

/* Exact oracle for finite-state models. */
SFV_API sfv_status sfv_oracle_compute(const sfv_experiment* exp, sfv_oracle** out);
SFV_API void sfv_oracle_free(sfv_oracle* oracle);
SFV_API sfv_status sfv_oracle_to_json(const sfv_oracle* oracle, char** out);
SFV_API sfv_status sfv_oracle_survival_csv(const sfv_experiment* exp, size_t points, char** out);
SFV_API sfv_status sfv_oracle_p_T(const sfv_oracle* oracle, double* out);
SFV_API sfv_status sfv_oracle_j_max(const sfv_oracle* oracle, size_t* out);

/* Replicas against the oracle; passed is 1 iff no criterion failed. */
SFV_API sfv_status sfv_validate(const sfv_experiment* exp, const sfv_records* records, const sfv_oracle* oracle,
                                sfv_validation** out);
SFV_API void sfv_validation_free(sfv_validation* v);
SFV_API int sfv_validation_passed(const sfv_validation* v);
SFV_API size_t sfv_validation_warning_count(const sfv_validation* v);
SFV_API const char* sfv_validation_warning(const sfv_validation* v, size_t index);
SFV_API sfv_status sfv_validation_to_json(const sfv_validation* v, char** out);

/* θ sweep as CSV. */
SFV_API sfv_status sfv_sweep_theta(const sfv_experiment* exp, char** csv_out);

/* Closed forms. */
SFV_API sfv_status sfv_rho_estimator(size_t branch_count, size_t batch, size_t n_particles, double* out);
SFV_API sfv_status sfv_h_theta(double p_T, double theta, double* out);
SFV_API sfv_status sfv_relative_variance_bounds(double p_T, double theta, double* lower, double* upper);

#ifdef __cplusplus
}
#endif

#endif /* SFV_SFV_H */
