#include "limm/limm.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <tuple>

#include "limm/coeffs.hpp"
#include "limm/errors.hpp"
#include "limm/experiments.hpp"
#include "limm/integrate.hpp"
#include "limm/problems.hpp"
#include "limm/stability.hpp"

struct limm_problem {
    std::string name;
    nlohmann::json params;
    limm::OdeProblem problem;
};

struct limm_method {
    limm::MethodCoefficients m;
};

struct limm_report {
    limm::SolverReport report;
};

namespace {

using nlohmann::json;
using namespace limm;

thread_local std::string last_error;

limm_status to_status(ErrorCode c) {
    switch (c) {
        case ErrorCode::InvalidArgument: return LIMM_ERR_INVALID_ARGUMENT;
        case ErrorCode::InvalidDimension: return LIMM_ERR_INVALID_DIMENSION;
        case ErrorCode::NotAvailable: return LIMM_ERR_NOT_AVAILABLE;
        case ErrorCode::DegenerateGrid: return LIMM_ERR_DEGENERATE_GRID;
        case ErrorCode::Inadmissible: return LIMM_ERR_INADMISSIBLE;
        case ErrorCode::InvalidHistory: return LIMM_ERR_INVALID_HISTORY;
        case ErrorCode::SingularMatrix: return LIMM_ERR_SINGULAR_MATRIX;
        case ErrorCode::ConvergenceFailure: return LIMM_ERR_CONVERGENCE;
        case ErrorCode::MinimumStepsize: return LIMM_ERR_MINIMUM_STEPSIZE;
        case ErrorCode::StepFailure: return LIMM_ERR_STEP_FAILURE;
        case ErrorCode::Io: return LIMM_ERR_IO;
        case ErrorCode::Parse: return LIMM_ERR_PARSE;
    }
    return LIMM_ERR_INTERNAL;
}

template <class F>
limm_status guarded(F&& body) {
    try {
        body();
        last_error.clear();
        return LIMM_OK;
    } catch (const Error& e) {
        last_error = e.what();
        return to_status(e.code());
    } catch (const json::exception& e) {
        last_error = e.what();
        return LIMM_ERR_PARSE;
    } catch (const std::exception& e) {
        last_error = e.what();
        return LIMM_ERR_INTERNAL;
    }
}

void require(const void* p, const char* what) {
    if (!p) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must not be null");
}

json parse_json(const char* text) {
    if (!text || !*text) return json::object();
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, std::string("invalid JSON: ") + e.what());
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void set_out(char** out, const json& j) {
    if (out) *out = dup_string(j.dump());
}

StepsizeFractions grid_or_uniform(const MethodCoefficients& m, const double* c) {
    if (!c) return StepsizeFractions::uniform(m.k);
    return StepsizeFractions::from_tail(std::vector<double>(c, c + m.k));
}

double& coefficient_ref(MethodCoefficients& m, char which, int index) {
    if (index < -1 || index >= m.k) throw Error(ErrorCode::InvalidArgument, "coefficient index out of range");
    switch (which) {
        case 'a': return m.alpha_[index + 1];
        case 'b': return m.beta_[index + 1];
        case 'm': return m.mu_[index + 1];
    }
    throw Error(ErrorCode::InvalidArgument, "coefficient selector must be 'a', 'b' or 'm'");
}

// Writes CSV text to a path, or stdout for NULL / "-".
template <class F>
void with_output(const char* path, F&& write) {
    if (!path || std::strcmp(path, "-") == 0) {
        write(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream os(path);
    if (!os) throw Error(ErrorCode::Io, std::string("cannot open ") + path + " for writing");
    write(os);
    if (!os) throw Error(ErrorCode::Io, std::string("write failed for ") + path);
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<Family> families_from(const json& cfg, std::vector<Family> fallback) {
    if (cfg.contains("families")) {
        std::vector<Family> out;
        for (const auto& f : cfg.at("families")) out.push_back(parse_family(f.get<std::string>()));
        return out;
    }
    if (cfg.contains("family")) return {parse_family(cfg.at("family").get<std::string>())};
    return fallback;
}

std::vector<int> orders_from(const json& cfg) {
    if (cfg.contains("orders")) return cfg.at("orders").get<std::vector<int>>();
    if (cfg.contains("k")) return {cfg.at("k").get<int>()};
    return {1, 2, 3, 4, 5};
}

int threads_from(const json& cfg) { return std::max(1, cfg.value("threads", 1)); }

}  // namespace

extern "C" {

const char* limm_last_error(void) { return last_error.c_str(); }

const char* limm_status_name(limm_status status) {
    switch (status) {
        case LIMM_OK: return "ok";
        case LIMM_ERR_INVALID_ARGUMENT: return "invalid-argument";
        case LIMM_ERR_INVALID_DIMENSION: return "invalid-dimension";
        case LIMM_ERR_NOT_AVAILABLE: return "not-available";
        case LIMM_ERR_DEGENERATE_GRID: return "degenerate-grid";
        case LIMM_ERR_INADMISSIBLE: return "inadmissible";
        case LIMM_ERR_INVALID_HISTORY: return "invalid-history";
        case LIMM_ERR_SINGULAR_MATRIX: return "singular-matrix";
        case LIMM_ERR_CONVERGENCE: return "convergence-failure";
        case LIMM_ERR_MINIMUM_STEPSIZE: return "minimum-stepsize";
        case LIMM_ERR_STEP_FAILURE: return "step-failure";
        case LIMM_ERR_IO: return "io";
        case LIMM_ERR_PARSE: return "parse";
        case LIMM_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

void limm_string_free(char* s) { std::free(s); }

limm_status limm_problem_create(const char* name, const char* params_json, limm_problem** out) {
    return guarded([&] {
        require(name, "name");
        require(out, "out");
        auto p = std::make_unique<limm_problem>();
        p->name = name;
        p->params = parse_json(params_json);
        p->problem = make_problem(p->name, p->params);
        *out = p.release();
    });
}

void limm_problem_destroy(limm_problem* p) { delete p; }

limm_status limm_problem_dimension(const limm_problem* p, int* n) {
    return guarded([&] {
        require(p, "problem");
        require(n, "n");
        *n = p->problem.dimension;
    });
}

limm_status limm_problem_time_span(const limm_problem* p, double* t0, double* tf) {
    return guarded([&] {
        require(p, "problem");
        if (t0) *t0 = p->problem.t0;
        if (tf) *tf = p->problem.tf;
    });
}

limm_status limm_problem_initial_state(const limm_problem* p, double* y0) {
    return guarded([&] {
        require(p, "problem");
        require(y0, "y0");
        Eigen::Map<Vec>(y0, p->problem.dimension) = p->problem.y0;
    });
}

limm_status limm_problem_rhs(const limm_problem* p, double t, const double* y, double* out) {
    return guarded([&] {
        require(p, "problem");
        require(y, "y");
        require(out, "out");
        const int n = p->problem.dimension;
        Eigen::Map<Vec>(out, n) = p->problem.eval(t, Eigen::Map<const Vec>(y, n));
    });
}

limm_status limm_method_fixed(const char* family, int k, limm_method** out) {
    return guarded([&] {
        require(family, "family");
        require(out, "out");
        *out = new limm_method{fixed_coefficients(parse_family(family), k)};
    });
}

limm_status limm_method_variable(const char* family, int k, const double* c, int guard, limm_method** out) {
    return guarded([&] {
        require(family, "family");
        require(out, "out");
        if (k > 1) require(c, "c");
        std::vector<double> tail = k > 1 ? std::vector<double>(c, c + k - 1) : std::vector<double>{};
        *out = new limm_method{variable_coefficients(parse_family(family), k, StepsizeFractions::from_tail(tail), guard != 0)};
    });
}

void limm_method_destroy(limm_method* m) { delete m; }

limm_status limm_method_order(const limm_method* m, int* k) {
    return guarded([&] {
        require(m, "method");
        require(k, "k");
        *k = m->m.k;
    });
}

limm_status limm_method_coefficients(const limm_method* m, double* alpha, double* beta, double* mu) {
    return guarded([&] {
        require(m, "method");
        for (int i = -1; i < m->m.k; ++i) {
            if (alpha) alpha[i + 1] = m->m.alpha(i);
            if (beta) beta[i + 1] = m->m.beta(i);
            if (mu) mu[i + 1] = m->m.mu(i);
        }
    });
}

limm_status limm_method_set_coefficient(limm_method* m, char which, int index, double value) {
    return guarded([&] {
        require(m, "method");
        coefficient_ref(m->m, which, index) = value;
    });
}

limm_status limm_method_residuals(const limm_method* m, const double* c, int ell, double* rho_a, double* rho_b) {
    return guarded([&] {
        require(m, "method");
        if (ell < 1) throw Error(ErrorCode::InvalidArgument, "ell must be >= 1");
        auto [a, b] = order_residuals(m->m, grid_or_uniform(m->m, c), ell);
        if (rho_a) *rho_a = a;
        if (rho_b) *rho_b = b;
    });
}

limm_status limm_method_condition_residual(const limm_method* m, const double* c, int ell, double* r) {
    return guarded([&] {
        require(m, "method");
        require(r, "r");
        *r = condition_residual(m->m, grid_or_uniform(m->m, c), ell);
    });
}

limm_status limm_method_verify(const limm_method* m, const double* c, double* max_residual) {
    return guarded([&] {
        require(m, "method");
        require(max_residual, "max_residual");
        *max_residual = verify_order_conditions(m->m, grid_or_uniform(m->m, c));
    });
}

limm_status limm_method_error_constant(const limm_method* m, double* constant) {
    return guarded([&] {
        require(m, "method");
        require(constant, "constant");
        *constant = error_constant(m->m, StepsizeFractions::uniform(m->m.k));
    });
}

limm_status limm_method_stability_angle(const limm_method* m, double* phi_degrees, int* a_stable) {
    return guarded([&] {
        require(m, "method");
        auto a = stability_angle(m->m);
        if (phi_degrees) *phi_degrees = a.phi_degrees;
        if (a_stable) *a_stable = a.a_stable ? 1 : 0;
    });
}

limm_status limm_method_root_locus(const limm_method* m, int n, double* theta, double* re, double* im) {
    return guarded([&] {
        require(m, "method");
        if (n < 1) throw Error(ErrorCode::InvalidArgument, "need at least one sample");
        auto locus = root_locus(m->m, n);
        const double inf = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            if (theta) theta[i] = locus[i].theta;
            if (re) re[i] = locus[i].at_infinity ? inf : locus[i].z.real();
            if (im) im[i] = locus[i].at_infinity ? inf : locus[i].z.imag();
        }
    });
}

limm_status limm_method_zero_stable(const limm_method* m, int* stable) {
    return guarded([&] {
        require(m, "method");
        require(stable, "stable");
        *stable = zero_stable(m->m).stable ? 1 : 0;
    });
}

limm_status limm_method_objectives(const limm_method* m, double* phi1, double* phi2) {
    return guarded([&] {
        require(m, "method");
        auto o = objectives(m->m);
        if (phi1) *phi1 = o.phi1;
        if (phi2) *phi2 = o.phi2;
    });
}

limm_status limm_random_fractions(uint64_t seed, int k, int count, double band, double* out) {
    return guarded([&] {
        require(out, "out");
        if (k < 0 || count < 0) throw Error(ErrorCode::InvalidArgument, "k and count must be nonnegative");
        std::mt19937_64 rng(seed);
        for (int s = 0; s < count; ++s) {
            auto c = random_admissible_fractions(rng, k, band);
            for (int i = 1; i <= k; ++i) out[s * k + i - 1] = c(i);
        }
    });
}

limm_status limm_solve(const limm_problem* p, const char* options_json, limm_report** out) {
    return guarded([&] {
        require(p, "problem");
        require(out, "out");
        auto cfg = parse_run_config(parse_json(options_json));
        *out = new limm_report{integrate_adaptive(p->problem, cfg.options)};
    });
}

void limm_report_destroy(limm_report* r) { delete r; }

limm_status limm_report_final_state(const limm_report* r, double* t, double* y) {
    return guarded([&] {
        require(r, "report");
        if (t) *t = r->report.final_time;
        if (y) Eigen::Map<Vec>(y, r->report.final_state.size()) = r->report.final_state;
    });
}

limm_status limm_report_summary_json(const limm_report* r, char** out) {
    return guarded([&] {
        require(r, "report");
        require(out, "out");
        const auto& s = r->report;
        json j = {{"final_time", s.final_time},
                  {"n_accepted", s.n_accepted},
                  {"n_rejected", s.n_rejected},
                  {"n_f_evals", s.n_f_evals},
                  {"n_jac_evals", s.n_jac_evals},
                  {"n_linear_solves", s.n_linear_solves},
                  {"n_newton_iters", s.n_newton_iters},
                  {"n_factorizations", s.n_factorizations},
                  {"n_gmres_iters", s.n_gmres_iters},
                  {"final_state", std::vector<double>(s.final_state.data(), s.final_state.data() + s.final_state.size())}};
        set_out(out, j);
    });
}

limm_status limm_report_write_trace_csv(const limm_report* r, const char* path) {
    return guarded([&] {
        require(r, "report");
        with_output(path, [&](std::ostream& os) { write_trace_csv(os, r->report.trace); });
    });
}

limm_status limm_solve_fixed(const limm_problem* p, const char* family, int k, double h, double* y_final) {
    return guarded([&] {
        require(p, "problem");
        require(family, "family");
        require(y_final, "y_final");
        auto res = integrate_fixed(p->problem, parse_family(family), k, h);
        Eigen::Map<Vec>(y_final, res.final_state.size()) = res.final_state;
    });
}

limm_status limm_run_verify(const char* config_json, const char* csv_path, char** summary) {
    return guarded([&] {
        const json cfg = parse_json(config_json);
        const auto families = families_from(cfg, {Family::Limm, Family::LimmW, Family::Bdf});
        const auto orders = orders_from(cfg);
        const int samples = cfg.value("samples", 100);
        const double band = cfg.value("band", 0.45);
        const double tol = cfg.value("tol", 1e-8);
        const double perturb = cfg.value("perturb_alpha0", 0.0);
        std::mt19937_64 rng(cfg.value("seed", std::uint64_t{20240101}));

        double worst = 0;
        json worst_row;
        std::ostringstream csv;
        csv << "family,k,grid,ell,rho_a,rho_b,residual\n";
        for (Family f : families)
            for (int k : orders) {
                for (int s = -1; s < samples; ++s) {
                    // s = -1 is the tabulated method on the uniform grid.
                    auto c = s < 0 ? StepsizeFractions::uniform(k) : random_admissible_fractions(rng, k, band);
                    auto m = s < 0 ? fixed_coefficients(f, k) : variable_coefficients(f, k, c);
                    m.alpha_[1] += perturb;
                    const std::string grid = s < 0 ? "uniform" : "random" + std::to_string(s);
                    for (int ell = 0; ell <= k; ++ell) {
                        double ra = 0, rb = 0;
                        if (ell == 0) {
                            for (int i = -1; i < k; ++i) {
                                ra += m.alpha(i);
                                rb += m.mu(i);
                            }
                        } else {
                            std::tie(ra, rb) = order_residuals(m, c, ell);
                        }
                        const double r = condition_residual(m, c, ell);
                        csv << family_name(f) << ',' << k << ',' << grid << ',' << ell << ',' << fmt17(ra) << ','
                            << fmt17(rb) << ',' << fmt17(r) << '\n';
                        if (!(r <= worst)) {
                            worst = r;
                            std::vector<double> cv;
                            for (int i = 1; i <= k; ++i) cv.push_back(c(i));
                            worst_row = {{"family", family_name(f)}, {"k", k}, {"grid", grid}, {"ell", ell},
                                         {"residual", r}, {"c", cv}};
                        }
                    }
                }
            }
        with_output(csv_path, [&](std::ostream& os) { os << csv.str(); });
        set_out(summary, json{{"ok", worst <= tol}, {"max_residual", worst}, {"tolerance", tol}, {"worst", worst_row}});
    });
}

limm_status limm_run_convergence(const char* config_json, const char* csv_path, char** summary) {
    return guarded([&] {
        const json cfg = parse_json(config_json);
        const std::string name = cfg.value("problem", std::string("lorenz96"));
        const json params = cfg.value("params", json::object());
        const OdeProblem p = make_problem(name, params);
        const auto families = families_from(cfg, {Family::Limm, Family::LimmW});
        const auto orders = orders_from(cfg);
        std::vector<double> hs;
        if (cfg.contains("h_list")) {
            hs = cfg.at("h_list").get<std::vector<double>>();
        } else {
            auto e = cfg.value("h_exponents", std::vector<int>{5, 11});
            if (e.size() != 2 || e[0] > e[1]) throw Error(ErrorCode::InvalidArgument, "h_exponents must be [lo, hi]");
            for (int i = e[0]; i <= e[1]; ++i) hs.push_back(std::ldexp(1.0, -i));
        }
        const long rk4_steps = cfg.value("rk4_steps", 16384L);
        const Vec reference = p.exact ? p.exact(p.tf) : rk4_solve(p, rk4_steps);
        FixedStepOptions fo;
        fo.starter_substeps = cfg.value("starter_substeps", 100);

        json slopes = json::array();
        std::ostringstream csv;
        csv << "family,h,order,error\n";
        for (Family f : families) {
            auto study = convergence_study(p, f, orders, hs, reference, fo, threads_from(cfg));
            for (const auto& r : study.rows)
                csv << family_name(f) << ',' << fmt17(r.h) << ',' << r.order << ',' << fmt17(r.error) << '\n';
            for (auto [k, s] : study.slopes) slopes.push_back({{"family", family_name(f)}, {"order", k}, {"slope", s}});
        }
        with_output(csv_path, [&](std::ostream& os) { os << csv.str(); });
        set_out(summary, json{{"slopes", slopes}, {"reference", p.exact ? "exact" : "rk4"}});
    });
}

limm_status limm_run_work_precision(const char* config_json, const char* csv_path, char** summary) {
    return guarded([&] {
        const json cfg = parse_json(config_json);
        json run = cfg;
        run.erase("rtol");
        run.erase("atol");
        const RunConfig rc = parse_run_config(run);
        const OdeProblem p = make_problem(rc.problem, rc.params);
        const auto families = cfg.contains("methods") ? [&] {
            std::vector<Family> out;
            for (const auto& m : cfg.at("methods")) out.push_back(parse_family(m.get<std::string>()));
            return out;
        }() : std::vector<Family>{Family::Limm, Family::LimmW, Family::Bdf};
        const auto tolerances = cfg.value("tolerances", std::vector<double>{1e-2, 1e-3, 1e-4, 1e-5, 1e-6});
        const json rcfg = cfg.value("reference", json::object());
        ReferenceSettings rs;
        rs.tol = rcfg.value("tol", rs.tol);
        rs.rk4_steps = rcfg.value("rk4_steps", rs.rk4_steps);
        rs.cache_dir = rcfg.value("cache_dir", std::string("limm_cache"));
        const auto ref = reference_solution(rc.problem, rc.params, rs);
        auto records = work_precision(p, families, tolerances, ref.state, rc.options, threads_from(cfg));
        with_output(csv_path, [&](std::ostream& os) { write_work_precision_csv(os, records); });
        json recs = json::array();
        for (const auto& r : records)
            recs.push_back({{"method", r.method}, {"tolerance", r.tolerance}, {"final_error", r.final_error},
                            {"n_accepted", r.n_accepted}, {"ok", r.ok}});
        set_out(summary, json{{"reference", {{"discrepancy", ref.discrepancy}, {"from_cache", ref.from_cache},
                                             {"cache_file", ref.cache_file}}},
                              {"records", recs}});
    });
}

limm_status limm_run_matstab(const char* trace_csv_path, const char* family, double lambda, int k_max,
                             const char* csv_path, char** summary) {
    return guarded([&] {
        require(trace_csv_path, "trace_csv_path");
        require(family, "family");
        std::ifstream in(trace_csv_path);
        if (!in) throw Error(ErrorCode::Io, std::string("cannot open ") + trace_csv_path);
        const auto trace = read_trace_csv(in);
        const auto norms = trace_product_norm(trace, parse_family(family), lambda, k_max);
        double peak = 0;
        with_output(csv_path, [&](std::ostream& os) {
            os << "step,norm\n";
            for (std::size_t i = 0; i < norms.size(); ++i) {
                os << i + 1 << ',' << fmt17(norms[i]) << '\n';
                peak = std::max(peak, norms[i]);
            }
        });
        set_out(summary, json{{"steps", norms.size()}, {"max_norm", peak},
                              {"final_norm", norms.empty() ? 1.0 : norms.back()}});
    });
}

}  // extern "C"
