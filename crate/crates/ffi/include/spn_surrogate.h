#ifndef SPN_SURROGATE_H
#define SPN_SURROGATE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpnStatus {
  SPN_STATUS_OK = 0,
  SPN_STATUS_NULL_POINTER = 1,
  SPN_STATUS_INVALID_ARGUMENT = 2,
  SPN_STATUS_IO = 3,
  SPN_STATUS_NUMERIC = 4,
  SPN_STATUS_BUFFER_TOO_SMALL = 5,
  SPN_STATUS_PANIC = 6,
} SpnStatus;

/**
 * A trained network with its checkpoint metadata.
 */
typedef struct SpnPredictor SpnPredictor;

/**
 * Two-patch net with covariates resolved from a run configuration.
 */
typedef struct SpnSimulator SpnSimulator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to fit). Returns the full message length plus one.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t spn_last_error_message(char *buf, size_t len);

double spn_briere(double t, double a, double t_min, double t_max);

double spn_briere_diurnal_avg(double t_mean,
                              double t_lo,
                              double t_hi,
                              double a,
                              double t_min,
                              double t_max);

double spn_eyring(double t, double psi_ad, double ae_ad, double r_gas);

double spn_logistic_rh(double rh, double k, double rh_opt);

double spn_rh_diurnal_logistic_avg(double rh_lo, double rh_hi, double k, double rh_opt);

/**
 * Build a simulator from a JSON run configuration (null for defaults).
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be valid.
 */
enum SpnStatus spn_simulator_new(const char *config_json, struct SpnSimulator **out);

/**
 * # Safety
 * `sim` must be null or a handle from [`spn_simulator_new`] not yet freed.
 */
void spn_simulator_free(struct SpnSimulator *sim);

/**
 * Days per trajectory, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t spn_simulator_horizon(const struct SpnSimulator *sim);

size_t spn_n_places(void);

size_t spn_n_coefficients(void);

/**
 * Draw a coefficient vector from the configured prior with `seed`.
 *
 * # Safety
 * `sim` must be a live handle and `theta_out` valid for `len` doubles.
 */
enum SpnStatus spn_simulator_sample_theta(const struct SpnSimulator *sim,
                                          uint64_t seed_value,
                                          double *theta_out,
                                          size_t len);

/**
 * Simulate one observed run for `theta` (rate units) with `run_seed` and
 * write the normalised `horizon × places` matrix, row-major, to `x_out`.
 *
 * # Safety
 * `sim` must be a live handle, `theta` valid for `n_theta` doubles and
 * `x_out` for `x_len` floats.
 */
enum SpnStatus spn_simulator_run(const struct SpnSimulator *sim,
                                 const double *theta,
                                 size_t n_theta,
                                 uint64_t run_seed,
                                 float *x_out,
                                 size_t x_len);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum SpnStatus spn_predictor_load(const char *path, struct SpnPredictor **out);

/**
 * # Safety
 * `p` must be null or a handle from [`spn_predictor_load`] not yet freed.
 */
void spn_predictor_free(struct SpnPredictor *p);

/**
 * Input length (`horizon × places`) the network expects, or 0 for null.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t spn_predictor_input_len(const struct SpnPredictor *p);

/**
 * MC-dropout posterior mean and standard deviation in rate units for one
 * normalised trajectory, using `passes` stochastic passes.
 *
 * # Safety
 * `p` must be a live handle, `x` valid for `x_len` floats and the outputs
 * for `n_out` doubles each.
 */
enum SpnStatus spn_predictor_predict(const struct SpnPredictor *p,
                                     const float *x,
                                     size_t x_len,
                                     uint32_t passes,
                                     uint64_t seed_value,
                                     double *mean_out,
                                     double *std_out,
                                     size_t n_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPN_SURROGATE_H */
