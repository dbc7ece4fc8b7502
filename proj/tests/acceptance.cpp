// Acceptance suite: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "limm/coeffs.hpp"
#include "limm/experiments.hpp"
#include "limm/history.hpp"
#include "limm/integrate.hpp"
#include "limm/problems.hpp"
#include "limm/stability.hpp"

using namespace limm;

namespace {

const Family all_families[] = {Family::Limm, Family::LimmW, Family::Bdf};
const Family linear_families[] = {Family::Limm, Family::LimmW};

int failures = 0;

// Every adaptive LIMM/LIMM-W run made below is checked for one solve per attempted step.
long solve_runs = 0;
long solve_violations = 0;

void record_solves(Family f, long solves, long accepted, long rejected) {
    if (f == Family::Bdf) return;
    ++solve_runs;
    if (solves != accepted + rejected) ++solve_violations;
}

SolverReport run(const OdeProblem& p, const IntegratorOptions& o) {
    auto r = integrate_adaptive(p, o);
    record_solves(o.family, r.n_linear_solves, r.n_accepted, r.n_rejected);
    return r;
}

int hardware_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

void criterion(int n, const std::string& title, const std::function<bool(std::string&)>& body) {
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
        ok = body(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %d: %s; %s (%.2f s)\n", ok ? "PASS" : "FAIL", n, title.c_str(), detail.c_str(), secs);
    std::fflush(stdout);
    if (!ok) ++failures;
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// Newton divided-difference table over raw points, newest first.
std::vector<double> oracle_differences(const std::vector<double>& t, const std::vector<double>& y, std::size_t m) {
    std::vector<double> col(y.begin(), y.begin() + m), out{col[0]};
    for (std::size_t j = 1; j < m; ++j) {
        for (std::size_t i = 0; i + j < m; ++i) col[i] = (col[i] - col[i + 1]) / (t[i] - t[i + j]);
        out.push_back(col[0]);
    }
    return out;
}

}  // namespace

int main() {
    criterion(1, "coefficient tables satisfy the order conditions", [](std::string& d) {
        const auto t0 = std::chrono::steady_clock::now();
        double worst = 0;
        for (Family f : all_families)
            for (int k = 1; k <= 5; ++k)
                worst = std::max(worst, verify_order_conditions(fixed_coefficients(f, k), StepsizeFractions::uniform(k)));
        const double secs = elapsed_since(t0);
        d = fmt("max residual %.3g (<= 1e-10), %.3f s (< 1 s)", worst, secs);
        return worst <= 1e-10 && secs < 1.0;
    });

    criterion(2, "error constants", [](std::string& d) {
        const double table[3][5] = {{0.5, 0.222222, 0.167344, 0.204625, 0.217405},
                                    {0.5, 0.424915, 0.403238, 0.380873, 0.365325},
                                    {0.5, 1.0 / 3, 0.25, 0.2, 1.0 / 6}};
        double worst = 0;
        for (int f = 0; f < 3; ++f)
            for (int k = 1; k <= 5; ++k)
                worst = std::max(worst, std::fabs(error_constant(fixed_coefficients(all_families[f], k),
                                                                 StepsizeFractions::uniform(k)) -
                                                  table[f][k - 1]));
        d = fmt("max deviation %.3g (<= 1e-5)", worst);
        return worst <= 1e-5;
    });

    criterion(3, "stability angles", [](std::string& d) {
        const double table[3][5] = {{90, 90, 87.7849, 78.0742, 72.9999},
                                    {90, 90, 87.3899, 77.9101, 70.3168},
                                    {90, 90, 86.03, 73.35, 51.84}};
        const auto t0 = std::chrono::steady_clock::now();
        double worst = 0;
        for (int f = 0; f < 3; ++f)
            for (int k = 1; k <= 5; ++k)
                worst = std::max(worst, std::fabs(stability_angle(fixed_coefficients(all_families[f], k)).phi_degrees -
                                                  table[f][k - 1]));
        const double secs = elapsed_since(t0);
        d = fmt("max deviation %.3g deg (<= 0.01), %.2f s (< 10 s)", worst, secs);
        return worst <= 0.01 && secs < 10.0;
    });

    criterion(4, "orders one and two are A-stable", [](std::string& d) {
        double min_re = INFINITY;
        for (Family f : linear_families)
            for (int k = 1; k <= 2; ++k)
                for (const auto& s : root_locus(fixed_coefficients(f, k), 8192))
                    if (!s.at_infinity) min_re = std::min(min_re, s.z.real());
        d = fmt("min Re z(theta) %.3g (>= -1e-9)", min_re);
        return min_re >= -1e-9;
    });

    criterion(5, "variable coefficients on random and uniform grids", [](std::string& d) {
        const auto t0 = std::chrono::steady_clock::now();
        std::mt19937_64 rng(5);
        double worst_random = 0, worst_uniform = 0;
        for (Family f : all_families)
            for (int k = 1; k <= 5; ++k) {
                for (int s = 0; s < 1000; ++s) {
                    auto c = random_admissible_fractions(rng, k);
                    worst_random = std::max(worst_random, verify_order_conditions(variable_coefficients(f, k, c), c));
                }
                auto u = variable_coefficients(f, k, StepsizeFractions::uniform(k));
                auto t = fixed_coefficients(f, k);
                for (int i = -1; i < k; ++i)
                    worst_uniform = std::max({worst_uniform, std::fabs(u.alpha(i) - t.alpha(i)),
                                              std::fabs(u.beta(i) - t.beta(i)), std::fabs(u.mu(i) - t.mu(i))});
            }
        const double secs = elapsed_since(t0);
        d = fmt("random residual %.3g (<= 1e-8), uniform deviation %.3g (<= 1e-12), %.2f s (< 30 s)", worst_random,
                worst_uniform, secs);
        return worst_random <= 1e-8 && worst_uniform <= 1e-12 && secs < 30.0;
    });

    criterion(6, "fixed-step convergence on Lorenz-96", [](std::string& d) {
        const auto t0 = std::chrono::steady_clock::now();
        auto p = lorenz96(40);
        const Vec ref = rk4_solve(p, 16384);
        std::vector<double> hs;
        for (int e = 5; e <= 11; ++e) hs.push_back(std::ldexp(1.0, -e));
        double worst = 0;
        std::string slopes;
        for (Family f : linear_families) {
            auto s = convergence_study(p, f, {1, 2, 3, 4, 5}, hs, ref, {}, hardware_threads());
            slopes += std::string(slopes.empty() ? "" : " ") + family_name(f) + ":";
            for (auto [k, slope] : s.slopes) {
                worst = std::max(worst, std::isfinite(slope) ? std::fabs(slope - k) : INFINITY);
                slopes += fmt(" %.3f", slope);
            }
        }
        const double secs = elapsed_since(t0);
        d = "slopes " + slopes + fmt("; max deviation %.3f (<= 0.15), %.1f s (< 120 s)", worst, secs);
        return worst <= 0.15 && secs < 120.0;
    });

    // Criterion 7 is evaluated last, over the adaptive runs of criteria 8, 9 and 11.

    criterion(8, "adaptive comparison on Gray-Scott n=32", [](std::string& d) {
        const auto t0 = std::chrono::steady_clock::now();
        const nlohmann::json params = {{"n", 32}};
        ReferenceSettings rs;
        rs.cache_dir = "limm_cache";
        const auto ref = reference_solution("grayscott", params, rs);
        const auto p = make_problem("grayscott", params);
        const std::vector<double> tols = {1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
        auto recs = work_precision(p, {all_families[0], all_families[1], all_families[2]}, tols, ref.state, {},
                                   hardware_threads());
        bool ok = true;
        int non_monotone = 0;
        double worst_ratio = 1;
        std::string errs;
        for (std::size_t f = 0; f < 3; ++f) {
            errs += std::string(f ? " " : "") + family_name(all_families[f]) + ":";
            for (std::size_t i = 0; i < tols.size(); ++i) {
                const auto& r = recs[f * tols.size() + i];
                if (!r.ok) ok = false;
                record_solves(all_families[f], r.n_linear_solves, r.n_accepted, r.n_rejected);
                errs += fmt(" %.2g", r.final_error);
                if (i > 0 && !(r.final_error < recs[f * tols.size() + i - 1].final_error)) ++non_monotone;
            }
        }
        for (std::size_t i = 0; i < tols.size(); ++i) {
            const double a = static_cast<double>(recs[i].n_accepted);
            const double b = static_cast<double>(recs[2 * tols.size() + i].n_accepted);
            worst_ratio = std::max(worst_ratio, std::max(a / b, b / a));
        }
        const double secs = elapsed_since(t0);
        d = "errors " + errs +
            fmt("; non-monotone cells %.0f (<= 1), LIMM/BDF step ratio %.2f (<= 2), %.1f s (< 300 s)", non_monotone,
                worst_ratio, secs) +
            (ref.from_cache ? ", cached reference" : ", fresh reference");
        return ok && non_monotone <= 1 && worst_ratio <= 2.0 && secs < 300.0;
    });

    criterion(9, "Dahlquist exactness", [](std::string& d) {
        auto p = dahlquist(-1.0);
        double worst_fixed = 0;
        for (int e = 2; e <= 10; ++e) {
            const double h = std::ldexp(1.0, -e);
            const double n = std::round(1.0 / h);
            const double y = integrate_fixed(p, Family::Limm, 1, h).final_state(0);
            worst_fixed = std::max(worst_fixed, std::fabs(y / std::pow(1.0 + h, -n) - 1.0));
        }
        double worst_adaptive = 0;
        for (Family f : all_families) {
            IntegratorOptions o;
            o.family = f;
            o.rtol = 1e-8;
            o.atol = 1e-8;
            auto r = run(p, o);
            worst_adaptive = std::max(worst_adaptive, std::fabs(r.final_state(0) - std::exp(-r.final_time)));
        }
        d = fmt("fixed-step relative deviation %.3g (rounding, <= 1e-13), adaptive error %.3g (<= 1e-6)", worst_fixed,
                worst_adaptive);
        return worst_fixed <= 1e-13 && worst_adaptive <= 1e-6;
    });

    criterion(10, "history matches the brute-force oracle", [](std::string& d) {
        std::mt19937_64 rng(10);
        std::uniform_real_distribution<double> log_ratio(std::log(0.5), std::log(2.0)), val(-1, 1);
        double worst = 0;
        long compared = 0;
        for (int seq = 0; seq < 10000; ++seq) {
            const int k_max = 1 + seq % 5;
            double t = val(rng), h = 0.01 + 0.1 * std::fabs(val(rng));
            std::vector<double> ts = {t}, ys = {val(rng)}, fs = {val(rng)};
            auto hist = DifferenceHistory::from_point(t, Vec::Constant(1, ys[0]), Vec::Constant(1, fs[0]), k_max);
            const int appends = 6 + seq % 10;
            for (int a = 0; a < appends; ++a) {
                h *= std::exp(log_ratio(rng));
                t += h;
                const double y = std::sin(3 * t) + 0.1 * val(rng), f = std::cos(3 * t) + 0.1 * val(rng);
                hist.append(t, Vec::Constant(1, y), Vec::Constant(1, f));
                ts.insert(ts.begin(), t);
                ys.insert(ys.begin(), y);
                fs.insert(fs.begin(), f);
                auto oy = oracle_differences(ts, ys, std::min(ts.size(), hist.y_diffs().size()));
                auto of = oracle_differences(ts, fs, std::min(ts.size(), hist.f_diffs().size()));
                for (std::size_t j = 0; j < oy.size(); ++j, ++compared)
                    worst = std::max(worst, std::fabs(hist.y_diffs()[j](0) - oy[j]) / std::max(1.0, std::fabs(oy[j])));
                for (std::size_t j = 0; j < of.size(); ++j, ++compared)
                    worst = std::max(worst, std::fabs(hist.f_diffs()[j](0) - of[j]) / std::max(1.0, std::fabs(of[j])));
            }
        }
        d = fmt("max relative deviation %.3g (<= 1e-9) over %.0f stored differences", worst,
                static_cast<double>(compared));
        return worst <= 1e-9;
    });

    criterion(11, "direct and GMRES solves agree on Gray-Scott n=16", [](std::string& d) {
        auto p = gray_scott(16);
        bool ok = true;
        std::string parts;
        for (double tol : {1e-4, 1e-5, 1e-6}) {
            IntegratorOptions o;
            o.rtol = o.atol = tol;
            const Vec direct = run(p, o).final_state;
            o.linear.mode = LinearMode::Gmres;
            o.gmres_tol_from_rtol = true;
            const Vec krylov = run(p, o).final_state;
            const double diff = (direct - krylov).lpNorm<Eigen::Infinity>();
            parts += fmt("tol %.0e: %.3g; ", tol, diff);
            ok = ok && diff <= 10 * tol;
        }
        d = "max |direct - gmres| " + parts + "bound 10*tol";
        return ok;
    });

    criterion(7, "one linear solve per attempted step", [](std::string& d) {
        // A few extra runs on other problems, including a W method with a lagged Jacobian.
        for (Family f : linear_families) {
            IntegratorOptions o;
            o.family = f;
            o.rtol = o.atol = 1e-6;
            run(lorenz96(40), o);
            run(dahlquist(-50.0, 20.0), o);
            o.jacobian_reuse = 4;
            run(gray_scott(16), o);
        }
        d = fmt("%.0f of %.0f LIMM/LIMM-W runs violate n_linear_solves = n_accepted + n_rejected",
                static_cast<double>(solve_violations), static_cast<double>(solve_runs));
        return solve_runs > 0 && solve_violations == 0;
    });

    std::printf("%s: %d criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
    return failures ? 1 : 0;
}
