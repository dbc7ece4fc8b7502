#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "limm/integrate.hpp"

namespace limm {

/// A run configuration: problem by name with its parameters plus integrator options.
struct RunConfig {
    std::string problem = "dahlquist";
    nlohmann::json params = nlohmann::json::object();
    IntegratorOptions options;
};

RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

/// Trace CSV: t,h,k,err_norm,accepted,y0..y{n-1}; y columns empty on rejected rows.
void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace);
std::vector<TraceRecord> read_trace_csv(std::istream& is);

/// Recomputes err_norm for every accepted non-initial row by replaying the run's
/// history from the recorded states. Rows that cannot be replayed get NaN.
std::vector<double> replay_error_norms(const OdeProblem& problem, const IntegratorOptions& opts,
                                       const std::vector<TraceRecord>& trace);

double relative_error(const Vec& y, const Vec& reference);

/// Least-squares slope of log(y) against log(x), skipping non-finite or non-positive pairs.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct ConvergenceRow {
    double h;
    int order;
    double error;  // NaN when the run failed
};

struct ConvergenceStudy {
    std::vector<ConvergenceRow> rows;
    std::vector<std::pair<int, double>> slopes;  // (order, fitted slope)
};

ConvergenceStudy convergence_study(const OdeProblem& problem, Family family, const std::vector<int>& orders,
                                   const std::vector<double>& h_list, const Vec& reference,
                                   const FixedStepOptions& opts = {}, int threads = 1);

struct ReferenceSolution {
    Vec state;               // tight-tolerance adaptive run
    Vec rk4_state;           // tiny-step RK4 cross-check
    double discrepancy = 0;  // relative difference of the two
    bool from_cache = false;
    std::string cache_file;
};

struct ReferenceSettings {
    double tol = 1e-12;
    long rk4_steps = 20000;
    std::string cache_dir;  // empty disables caching
};

/// Adaptive LIMM run at tol plus an RK4 cross-check, cached under a content hash.
ReferenceSolution reference_solution(const std::string& problem_name, const nlohmann::json& params,
                                     const ReferenceSettings& settings);

/// 64-bit FNV-1a of a string, used for cache file names.
std::uint64_t content_hash(const std::string& text);

struct WorkPrecisionRecord {
    std::string method;
    double tolerance = 0;
    double final_error = 0;
    long n_accepted = 0;
    long n_rejected = 0;
    long n_f_evals = 0;
    long n_jac_evals = 0;
    long n_linear_solves = 0;
    long n_newton_iters = 0;
    double wall_seconds = 0;
    bool ok = true;
    std::string failure;
};

/// One record per (family, tolerance); rtol = atol = tolerance. Cells run on up to
/// `threads` workers; failures are recorded and the sweep continues.
std::vector<WorkPrecisionRecord> work_precision(const OdeProblem& problem, const std::vector<Family>& families,
                                                const std::vector<double>& tolerances, const Vec& reference,
                                                const IntegratorOptions& base, int threads = 1);

void write_work_precision_csv(std::ostream& os, const std::vector<WorkPrecisionRecord>& records);

/// Running product norms for y' = lambda y along the accepted steps of a trace.
std::vector<double> trace_product_norm(const std::vector<TraceRecord>& trace, Family family, double lambda,
                                       int k_max);

/// Parallel map over indices 0..n-1 on up to `threads` workers.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

}  // namespace limm
