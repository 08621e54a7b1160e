#ifndef HYPOSPLIT_H
#define HYPOSPLIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Number of Kramers parameters (η, a, b, σ²).
#define HS_N_PARAMS 4

typedef enum HsStatus {
  HS_STATUS_OK = 0,
  HS_STATUS_NULL_POINTER = 1,
  HS_STATUS_INVALID_ARGUMENT = 2,
  HS_STATUS_DOMAIN = 3,
  HS_STATUS_NUMERIC = 4,
  HS_STATUS_SIMULATION = 5,
  HS_STATUS_ESTIMATION = 6,
  HS_STATUS_IO = 7,
  HS_STATUS_PANIC = 8,
} HsStatus;

typedef enum HsObjective {
  HS_OBJECTIVE_CF = 0,
  HS_OBJECTIVE_CR = 1,
  HS_OBJECTIVE_PF = 2,
  HS_OBJECTIVE_PR = 3,
  HS_OBJECTIVE_EM_PR = 4,
  HS_OBJECTIVE_EM_CR = 5,
  HS_OBJECTIVE_LG_CF = 6,
} HsObjective;

typedef enum HsScheme {
  HS_SCHEME_FORWARD = 0,
  HS_SCHEME_BACKWARD = 1,
  HS_SCHEME_CENTRAL = 2,
} HsScheme;

// Source of the asymptotic information used for intervals.
typedef enum HsInfo {
  // Ergodic averages over the observed path.
  HS_INFO_EMPIRICAL = 0,
  // Quadrature against the invariant density at θ̂.
  HS_INFO_QUADRATURE = 1,
} HsInfo;

// Fitted parameters together with the data they came from.
typedef struct HsEstimate HsEstimate;

// Observed path of the Kramers oscillator.
typedef struct HsTrajectory HsTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL if none. The pointer
// stays valid until the next failing call on the same thread.
const char *hs_last_error(void);

// Library version as a static NUL-terminated string.
const char *hs_version(void);

// Kramers mean waiting time between the wells.
//
// # Safety
// `theta` points to 4 doubles (η, a, b, σ²); `out_tau` is writable.
enum HsStatus hs_kramers_tau(const double *theta, double *out_tau);

// Delta-method interval for τ at level 1 − α, using the quadrature
// information of `objective` for a design of `n` intervals of width `h`.
//
// # Safety
// `theta` points to 4 doubles; the three outputs are writable.
enum HsStatus hs_kramers_tau_interval(const double *theta,
                                      enum HsObjective objective,
                                      size_t n,
                                      double h,
                                      double alpha,
                                      double *out_tau,
                                      double *out_lower,
                                      double *out_upper);

// Simulates `n` intervals of width `h` by Euler–Maruyama at `h_sim`, which
// must divide `h`. The path starts in the right well at rest.
//
// # Safety
// `theta` points to 4 doubles; `out` is writable.
enum HsStatus hs_simulate_kramers(const double *theta,
                                  double h,
                                  double h_sim,
                                  size_t n,
                                  uint64_t seed,
                                  struct HsTrajectory **out);

// Builds a trajectory from `n_points` positions sampled every `h`, with
// velocities when `v` is not NULL.
//
// # Safety
// `x` points to `n_points` doubles, `v` is NULL or points to `n_points`
// doubles, and `out` is writable.
enum HsStatus hs_trajectory_new(const double *x,
                                const double *v,
                                size_t n_points,
                                double h,
                                struct HsTrajectory **out);

// Reads a trajectory CSV written by the `hyposplit` command line tool.
//
// # Safety
// `path` is a NUL-terminated UTF-8 string; `out` is writable.
enum HsStatus hs_trajectory_read_csv(const char *path, struct HsTrajectory **out);

// Number of sampled points, N + 1; zero for NULL.
//
// # Safety
// `traj` is NULL or a live handle.
size_t hs_trajectory_len(const struct HsTrajectory *traj);

// Sampling step h; NaN for NULL.
//
// # Safety
// `traj` is NULL or a live handle.
double hs_trajectory_step(const struct HsTrajectory *traj);

// Whether the trajectory carries velocities.
//
// # Safety
// `traj` is NULL or a live handle.
bool hs_trajectory_has_velocities(const struct HsTrajectory *traj);

// Copies the positions into `out`, which holds `capacity` doubles.
//
// # Safety
// `traj` is a live handle and `out` points to `capacity` writable doubles.
enum HsStatus hs_trajectory_positions(const struct HsTrajectory *traj,
                                      double *out,
                                      size_t capacity);

// Copies the velocities into `out`, which holds `capacity` doubles.
//
// # Safety
// `traj` is a live handle and `out` points to `capacity` writable doubles.
enum HsStatus hs_trajectory_velocities(const struct HsTrajectory *traj,
                                       double *out,
                                       size_t capacity);

// # Safety
// `traj` is NULL or a handle not yet freed.
void hs_trajectory_free(struct HsTrajectory *traj);

// Fits the Kramers oscillator with `objective`. Complete-data objectives
// need velocities; partial ones use finite differences under `scheme`.
//
// # Safety
// `traj` is a live handle and `out` is writable.
enum HsStatus hs_estimate(const struct HsTrajectory *traj,
                          enum HsObjective objective,
                          enum HsScheme scheme,
                          struct HsEstimate **out);

// Copies θ̂ = (η, a, b, σ²) into `out`.
//
// # Safety
// `est` is a live handle and `out` points to 4 writable doubles.
enum HsStatus hs_estimate_theta(const struct HsEstimate *est, double *out);

// Objective value at θ̂; NaN for NULL.
//
// # Safety
// `est` is NULL or a live handle.
double hs_estimate_objective(const struct HsEstimate *est);

// Whether the optimizer met its tolerance.
//
// # Safety
// `est` is NULL or a live handle.
bool hs_estimate_converged(const struct HsEstimate *est);

// Wald intervals at level 1 − α for each of the 4 parameters.
//
// # Safety
// `est` is a live handle; `lower` and `upper` point to 4 writable doubles.
enum HsStatus hs_estimate_intervals(const struct HsEstimate *est,
                                    enum HsInfo info,
                                    double alpha,
                                    double *lower,
                                    double *upper);

// # Safety
// `est` is NULL or a handle not yet freed.
void hs_estimate_free(struct HsEstimate *est);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYPOSPLIT_H */
