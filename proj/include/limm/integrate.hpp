#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "limm/coeffs.hpp"
#include "limm/history.hpp"
#include "limm/linalg.hpp"
#include "limm/problems.hpp"

namespace limm {

enum class TimeHandling { Auto, Augment, Dfdt };

struct ControllerParams {
    double safety = 0.9;
    double reject_floor = 0.1;
    double ratio_min = 0.5;
    double ratio_max = 2.0;
    int rejections_before_order_drop = 3;
};

struct NewtonParams {
    int max_iterations = 7;
    double tol = 0.1;              // WRMS of the update
    double refactor_change = 0.2;  // relative change of h*beta_{-1} forcing a new Jacobian and LU
};

struct IntegratorOptions {
    Family family = Family::Limm;
    double rtol = 1e-6;
    double atol = 1e-6;
    std::optional<double> h0;
    std::optional<double> h_min;
    std::optional<double> h_max;
    int k_max = 5;
    LinearSolveConfig linear;
    bool gmres_tol_from_rtol = true;  // gmres_tol = rtol / 10
    int jacobian_reuse = 1;
    bool trace = false;
    TimeHandling time_handling = TimeHandling::Auto;
    ControllerParams controller;
    NewtonParams newton;
};

struct TraceRecord {
    double t = 0;
    double h = 0;
    int k = 0;
    double err_norm = 0;
    bool accepted = false;
    Vec y;  // empty on rejected rows
};

struct SolverReport {
    double final_time = 0;
    Vec final_state;
    long n_accepted = 0;
    long n_rejected = 0;
    long n_f_evals = 0;
    long n_jac_evals = 0;
    long n_linear_solves = 0;
    long n_newton_iters = 0;
    long n_factorizations = 0;
    long n_gmres_iters = 0;
    std::vector<TraceRecord> trace;
};

struct ControllerState {
    double h = 0;
    int k = 1;
    int steps_at_current_h = 0;
    int steps_at_current_k = 0;
    int consecutive_rejections = 0;
    double rtol = 1e-6;
    double atol = 1e-6;
    double h_min = 0;
    double h_max = 0;
    int k_max = 5;
};

struct StepProposal {
    bool accept = false;
    double h_next = 0;
    int k_next = 1;
};

/// Decision after an attempted step of size ctrl.h at order ctrl.k. Counters in
/// ctrl refer to accepted steps before this attempt.
StepProposal propose_next(const ControllerState& ctrl, std::optional<double> err_km1, double err_k,
                          std::optional<double> err_kp1, const ControllerParams& params = {});

/// Updates the counters and (h, k) of ctrl with a proposal.
void commit(ControllerState& ctrl, const StepProposal& proposal, const ControllerParams& params = {});

double wrms_norm(const Vec& v, const Vec& weights);
Vec error_weights(const Vec& y_old, const Vec& y_new, double rtol, double atol);

/// y differences that appending (t_new, y_new) to hist would produce.
std::vector<Vec> prospective_differences(const DifferenceHistory& hist, double t_new, const Vec& y_new);

/// Local error estimate (q+1)! C_q(c) h^{q+1} delta^{q+1} y for a probe order q,
/// with diffs from prospective_differences and times of the history before the step.
/// Returns nullopt when the needed difference is not available.
std::optional<Vec> local_error_vector(const std::vector<Vec>& diffs, const std::vector<double>& times,
                                      Family family, int q, double h);

std::optional<double> estimate_error(const std::vector<Vec>& diffs, const std::vector<double>& times,
                                     Family family, int q, double h, const Vec& weights);

/// Jacobian (or the frozen matrix of the W variant) as an operator, with a
/// version number that changes whenever the matrix does.
struct JacobianSnapshot {
    LinearOperator op;
    std::uint64_t version = 0;
};

JacobianSnapshot evaluate_jacobian(const OdeProblem& p, double t, const Vec& y, LinearMode mode,
                                   std::uint64_t version);

/// One linearly implicit step from divided differences.
Vec limm_step(const DifferenceHistory& hist, const MethodCoefficients& m, const StepsizeFractions& c,
              double h, const JacobianSnapshot& jac, ShiftedSolver& solver, const Vec* f_t = nullptr);

/// Same step assembled from raw values: times, ys, fs hold t_n, t_{n-1}, ... .
Vec limm_step_raw(const std::vector<double>& times, const std::vector<Vec>& ys,
                  const std::vector<Vec>& fs, const MethodCoefficients& m, double h,
                  const JacobianSnapshot& jac, ShiftedSolver& solver, const Vec* f_t = nullptr);

struct NewtonResult {
    Vec y;
    int iterations = 0;
    bool converged = false;
};

/// Simplified Newton for y + known - gamma f(t_new, y) = 0 with the matrix
/// I - h_fact mu_fact J. Convergence when the weighted update norm is <= tol.
NewtonResult bdf_newton(const OdeProblem& p, double t_new, const Vec& known, double gamma,
                        const Vec& predictor, const JacobianSnapshot& jac, double h_fact,
                        double mu_fact, ShiftedSolver& solver, const Vec& weights,
                        const NewtonParams& params, EvalCounters* counters = nullptr);

/// Problem with t appended to the state (autonomous form).
OdeProblem augment_time(const OdeProblem& p);

/// Whether a run of this family integrates the time-augmented problem.
bool uses_time_augmentation(const OdeProblem& p, Family family, TimeHandling mode);

SolverReport integrate_adaptive(const OdeProblem& problem, const IntegratorOptions& opts);

struct FixedStepOptions {
    LinearSolveConfig linear;
    int starter_substeps = 100;
    int jacobian_reuse = 1;
    TimeHandling time_handling = TimeHandling::Auto;
    bool keep_trajectory = false;
};

struct FixedStepResult {
    std::vector<double> t;
    std::vector<Vec> y;  // whole trajectory when requested, else only the final state
    Vec final_state;
    long n_steps = 0;
    long n_linear_solves = 0;
    long n_f_evals = 0;
};

FixedStepResult integrate_fixed(const OdeProblem& problem, Family family, int k, double h,
                                const FixedStepOptions& opts = {});

/// Classical RK4 with n uniform steps over the problem's time span.
Vec rk4_solve(const OdeProblem& problem, long n_steps);
Vec rk4_advance(const OdeProblem& problem, double t, Vec y, double h, long n_steps);

}  // namespace limm
