#ifndef LIMM_LIMM_H
#define LIMM_LIMM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define LIMM_API __declspec(dllexport)
#else
#define LIMM_API __attribute__((visibility("default")))
#endif

typedef enum {
    LIMM_OK = 0,
    LIMM_ERR_INVALID_ARGUMENT = 1,
    LIMM_ERR_INVALID_DIMENSION = 2,
    LIMM_ERR_NOT_AVAILABLE = 3,
    LIMM_ERR_DEGENERATE_GRID = 4,
    LIMM_ERR_INADMISSIBLE = 5,
    LIMM_ERR_INVALID_HISTORY = 6,
    LIMM_ERR_SINGULAR_MATRIX = 7,
    LIMM_ERR_CONVERGENCE = 8,
    LIMM_ERR_MINIMUM_STEPSIZE = 9,
    LIMM_ERR_STEP_FAILURE = 10,
    LIMM_ERR_IO = 11,
    LIMM_ERR_PARSE = 12,
    LIMM_ERR_INTERNAL = 13
} limm_status;

typedef struct limm_problem limm_problem;
typedef struct limm_method limm_method;
typedef struct limm_report limm_report;

/// Message of the most recent failure on the calling thread ("" if none).
LIMM_API const char* limm_last_error(void);
LIMM_API const char* limm_status_name(limm_status status);
/// Frees strings returned through char** outputs.
LIMM_API void limm_string_free(char* s);

/* Problems */
LIMM_API limm_status limm_problem_create(const char* name, const char* params_json, limm_problem** out);
LIMM_API void limm_problem_destroy(limm_problem* p);
LIMM_API limm_status limm_problem_dimension(const limm_problem* p, int* n);
LIMM_API limm_status limm_problem_time_span(const limm_problem* p, double* t0, double* tf);
LIMM_API limm_status limm_problem_initial_state(const limm_problem* p, double* y0);
LIMM_API limm_status limm_problem_rhs(const limm_problem* p, double t, const double* y, double* out);

/* Methods. family is "limm", "limmw" or "bdf". Coefficient arrays have k+1
   entries ordered from index -1 (the new point) to k-1. */
LIMM_API limm_status limm_method_fixed(const char* family, int k, limm_method** out);
/// c holds c_1..c_{k-1}; with guard nonzero the admissibility band is enforced.
LIMM_API limm_status limm_method_variable(const char* family, int k, const double* c, int guard, limm_method** out);
LIMM_API void limm_method_destroy(limm_method* m);
LIMM_API limm_status limm_method_order(const limm_method* m, int* k);
LIMM_API limm_status limm_method_coefficients(const limm_method* m, double* alpha, double* beta, double* mu);
/// Overwrites one coefficient; which is 'a', 'b' or 'm'; index in -1..k-1.
LIMM_API limm_status limm_method_set_coefficient(limm_method* m, char which, int index, double value);
/// c is c_1..c_k of the grid (NULL for uniform).
LIMM_API limm_status limm_method_residuals(const limm_method* m, const double* c, int ell, double* rho_a,
                                           double* rho_b);
LIMM_API limm_status limm_method_condition_residual(const limm_method* m, const double* c, int ell, double* r);
LIMM_API limm_status limm_method_verify(const limm_method* m, const double* c, double* max_residual);
LIMM_API limm_status limm_method_error_constant(const limm_method* m, double* constant);
LIMM_API limm_status limm_method_stability_angle(const limm_method* m, double* phi_degrees, int* a_stable);
/// Fills n samples; at-infinity samples get infinite real and imaginary parts.
LIMM_API limm_status limm_method_root_locus(const limm_method* m, int n, double* theta, double* re, double* im);
LIMM_API limm_status limm_method_zero_stable(const limm_method* m, int* stable);
LIMM_API limm_status limm_method_objectives(const limm_method* m, double* phi1, double* phi2);

/// count draws of c_1..c_k written row-major into out (count*k values).
LIMM_API limm_status limm_random_fractions(uint64_t seed, int k, int count, double band, double* out);

/* Integration. options_json uses the run configuration keys (family, rtol,
   atol, h0, h_min, h_max, k_max, linear, jacobian_reuse, trace, time_handling). */
LIMM_API limm_status limm_solve(const limm_problem* p, const char* options_json, limm_report** out);
LIMM_API void limm_report_destroy(limm_report* r);
LIMM_API limm_status limm_report_final_state(const limm_report* r, double* t, double* y);
/// JSON object with final time, counters and final state.
LIMM_API limm_status limm_report_summary_json(const limm_report* r, char** out);
LIMM_API limm_status limm_report_write_trace_csv(const limm_report* r, const char* path);

LIMM_API limm_status limm_solve_fixed(const limm_problem* p, const char* family, int k, double h, double* y_final);

/* Experiment drivers. Each takes a JSON configuration, writes CSV to
   csv_path (stdout when NULL or "-") and returns a JSON summary. */
LIMM_API limm_status limm_run_verify(const char* config_json, const char* csv_path, char** summary);
LIMM_API limm_status limm_run_convergence(const char* config_json, const char* csv_path, char** summary);
LIMM_API limm_status limm_run_work_precision(const char* config_json, const char* csv_path, char** summary);
LIMM_API limm_status limm_run_matstab(const char* trace_csv_path, const char* family, double lambda, int k_max,
                                      const char* csv_path, char** summary);

#ifdef __cplusplus
}
#endif

#endif
