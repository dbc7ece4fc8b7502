#include <cmath>
#include <limits>

#include "doctest.h"
#include "limm/errors.hpp"
#include "limm/integrate.hpp"

using namespace limm;

namespace {

Vec scalar(double v) { return Vec::Constant(1, v); }

ControllerState controller(double h, int k, int steps) {
    ControllerState c;
    c.h = h;
    c.k = k;
    c.steps_at_current_h = steps;
    c.steps_at_current_k = steps;
    c.h_min = 0;
    c.h_max = std::numeric_limits<double>::infinity();
    return c;
}

double rel(const Vec& a, const Vec& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("controller decisions") {
    auto a = propose_next(controller(0.1, 1, 10), std::nullopt, 1.0, std::nullopt);
    CHECK(a.accept);
    CHECK(a.h_next == doctest::Approx(0.09));

    // h_opt = 2h at err 1/4 and order one; the safety factor leaves 1.8h.
    auto q = propose_next(controller(0.1, 1, 10), std::nullopt, 0.25, std::nullopt);
    CHECK(q.h_next == doctest::Approx(0.18));

    auto b = propose_next(controller(0.1, 1, 10), std::nullopt, 1e-8, std::nullopt);
    CHECK(b.h_next == doctest::Approx(0.2));

    auto c = propose_next(controller(0.1, 3, 10), std::nullopt, 16.0, std::nullopt);
    CHECK_FALSE(c.accept);
    CHECK(c.h_next == doctest::Approx(0.045));
    CHECK(c.k_next == 3);

    auto d = propose_next(controller(0.1, 3, 10), std::nullopt, 1e12, std::nullopt);
    CHECK(d.h_next == doctest::Approx(0.01));

    // Too few steps at the current size: no increase.
    auto e = propose_next(controller(0.1, 3, 0), std::nullopt, 1e-8, std::nullopt);
    CHECK(e.h_next == doctest::Approx(0.1));

    // Order choice picks the largest optimal step; ties favour the lower order.
    auto f = propose_next(controller(0.1, 2, 10), 0.5, 0.5, 1e-6);
    CHECK(f.k_next == 3);
    auto g = propose_next(controller(0.1, 2, 10), std::pow(0.5, 2.0 / 3.0), 0.5, std::nullopt);
    CHECK(g.k_next == 1);

    // Repeated rejections drop the order.
    auto s = controller(0.1, 3, 0);
    s.consecutive_rejections = 2;
    CHECK(propose_next(s, std::nullopt, 4.0, std::nullopt).k_next == 2);

    auto m = controller(0.1, 1, 10);
    m.h_min = 0.05;
    CHECK_THROWS_AS(propose_next(m, std::nullopt, 1e6, std::nullopt), Error);
}

TEST_CASE("error estimate on polynomial data") {
    for (double h : {0.1, 0.05}) {
        auto hist = DifferenceHistory::from_point(0.0, scalar(0), scalar(0), 3);
        for (int i = 1; i <= 3; ++i) hist.append(i * h, scalar(i * h * i * h), scalar(2 * i * h));
        const double tn = 4 * h;
        auto diffs = prospective_differences(hist, tn, scalar(tn * tn));
        auto e = local_error_vector(diffs, hist.times(), Family::Limm, 1, h);
        REQUIRE(e);
        CHECK((*e)(0) == doctest::Approx(h * h).epsilon(1e-9));
    }
    // Cubic data at order two scales by 2^3 when h halves.
    double est[2];
    for (int j = 0; j < 2; ++j) {
        const double h = j == 0 ? 0.1 : 0.05;
        auto hist = DifferenceHistory::from_point(0.0, scalar(0), scalar(0), 3);
        for (int i = 1; i <= 3; ++i) hist.append(i * h, scalar(std::pow(i * h, 3)), scalar(3 * std::pow(i * h, 2)));
        auto diffs = prospective_differences(hist, 4 * h, scalar(std::pow(4 * h, 3)));
        est[j] = (*local_error_vector(diffs, hist.times(), Family::LimmW, 2, h))(0);
    }
    CHECK(est[0] / est[1] == doctest::Approx(8.0).epsilon(1e-9));
    CHECK(wrms_norm(Vec::Constant(4, 2.0), Vec::Constant(4, 0.5)) == doctest::Approx(1.0));
    auto w = error_weights(scalar(-2), scalar(1), 1e-3, 1e-6);
    CHECK(w(0) == doctest::Approx(1.0 / (1e-6 + 2e-3)));
}

TEST_CASE("first-order step on the Dahlquist problem") {
    auto p = dahlquist(-1.0);
    auto hist = DifferenceHistory::from_point(0.0, p.y0, p.eval(0, p.y0), 1);
    auto jac = evaluate_jacobian(p, 0.0, p.y0, LinearMode::Direct, 1);
    ShiftedSolver solver;
    for (Family f : {Family::Limm, Family::LimmW}) {
        Vec y = limm_step(hist, fixed_coefficients(f, 1), StepsizeFractions::uniform(1), 0.5, jac, solver);
        CHECK(y(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    }
}

TEST_CASE("difference and raw assembly agree") {
    auto p = lorenz96(12);
    const std::vector<double> t = {0.0, 0.011, 0.019, 0.031};
    std::vector<Vec> ys, fs;
    DifferenceHistory hist;
    for (std::size_t i = 0; i < t.size(); ++i) {
        Vec y = p.y0 + 0.1 * t[i] * Vec::LinSpaced(12, -1, 1);
        Vec f = p.eval(t[i], y);
        if (i == 0)
            hist = DifferenceHistory::from_point(t[i], y, f, 5);
        else
            hist.append(t[i], y, f);
        ys.insert(ys.begin(), y);
        fs.insert(fs.begin(), f);
    }
    const double h = 0.01;
    std::vector<double> times(t.rbegin(), t.rend());
    auto c = fractions_from_times(times, h);
    auto jac = evaluate_jacobian(p, times[0], ys[0], LinearMode::Direct, 1);
    ShiftedSolver solver;
    for (Family f : {Family::Limm, Family::LimmW}) {
        auto m = variable_coefficients(f, 3, c);
        Vec a = limm_step(hist, m, c, h, jac, solver);
        Vec b = limm_step_raw(times, ys, fs, m, h, jac, solver);
        CHECK((a - b).norm() <= 1e-12 * b.norm());
    }
}

TEST_CASE("adaptive runs") {
    SUBCASE("zero right-hand side") {
        auto p = dahlquist(0.0);
        auto r = integrate_adaptive(p, {});
        CHECK(r.final_state(0) == 1.0);
        CHECK(r.final_time == p.tf);
        CHECK(r.n_rejected == 0);
    }
    SUBCASE("Dahlquist accuracy per family") {
        auto p = dahlquist(-1.0);
        for (Family f : {Family::Limm, Family::LimmW, Family::Bdf}) {
            IntegratorOptions o;
            o.family = f;
            o.rtol = o.atol = 1e-4;
            auto r = integrate_adaptive(p, o);
            CHECK(std::fabs(r.final_state(0) - std::exp(-1.0)) <= 1e-3);
            o.rtol = o.atol = 1e-8;
            r = integrate_adaptive(p, o);
            CHECK(std::fabs(r.final_state(0) - std::exp(-1.0)) <= 1e-6);
        }
    }
    SUBCASE("Lorenz-96 against RK4") {
        auto p = lorenz96(40);
        Vec ref = rk4_solve(p, 16384);
        double prev = INFINITY;
        for (double tol : {1e-4, 1e-6, 1e-8}) {
            IntegratorOptions o;
            o.rtol = o.atol = tol;
            o.trace = true;
            auto r = integrate_adaptive(p, o);
            const double err = rel(r.final_state, ref);
            CHECK(err < prev);
            prev = err;
            CHECK(r.n_linear_solves == r.n_accepted + r.n_rejected);
            CHECK(r.trace.front().h == 0.0);
            CHECK(r.trace.back().t == p.tf);
            double last_h = 0;
            for (const auto& row : r.trace) {
                if (!row.accepted || row.h == 0) continue;
                if (last_h > 0 && row.t != p.tf) {
                    CHECK(row.h / last_h <= 2.0 + 1e-12);
                    CHECK(row.h / last_h >= 0.5 - 1e-12);
                }
                last_h = row.h;
            }
        }
        CHECK(prev <= 1e-5);
    }
    SUBCASE("tightening the tolerance never costs more than a factor two") {
        auto p = lorenz96(40);
        Vec ref = rk4_solve(p, 16384);
        for (Family f : {Family::Limm, Family::LimmW, Family::Bdf}) {
            double prev = INFINITY;
            for (double tol = 1e-2; tol >= 1e-8; tol /= 10) {
                IntegratorOptions o;
                o.family = f;
                o.rtol = o.atol = tol;
                const double err = rel(integrate_adaptive(p, o).final_state, ref);
                CHECK(err <= 2 * prev);
                prev = err;
            }
        }
    }
    SUBCASE("runs are deterministic") {
        auto p = lorenz96(20);
        IntegratorOptions o;
        o.family = Family::LimmW;
        auto a = integrate_adaptive(p, o), b = integrate_adaptive(p, o);
        CHECK(a.final_state == b.final_state);
        CHECK(a.n_accepted == b.n_accepted);
    }
    SUBCASE("time augmentation against the time partial") {
        auto p = lorenz96(10);
        CHECK(uses_time_augmentation(p, Family::Limm, TimeHandling::Augment));
        CHECK_FALSE(uses_time_augmentation(p, Family::Limm, TimeHandling::Dfdt));
        CHECK_FALSE(uses_time_augmentation(p, Family::Bdf, TimeHandling::Augment));
        Vec ref = rk4_solve(p, 16384);
        for (TimeHandling th : {TimeHandling::Augment, TimeHandling::Dfdt}) {
            IntegratorOptions o;
            o.rtol = o.atol = 1e-8;
            o.time_handling = th;
            CHECK(rel(integrate_adaptive(p, o).final_state, ref) <= 1e-5);
        }
        auto q = augment_time(p);
        CHECK(q.dimension == 11);
        CHECK(q.eval(0.3, Vec::Zero(11))(10) == 1.0);
    }
    SUBCASE("W method with a reused Jacobian") {
        auto p = lorenz96(20);
        Vec ref = rk4_solve(p, 16384);
        IntegratorOptions o;
        o.family = Family::LimmW;
        o.rtol = o.atol = 1e-7;
        auto every = integrate_adaptive(p, o);
        o.jacobian_reuse = 5;
        auto reuse = integrate_adaptive(p, o);
        CHECK(reuse.n_jac_evals < every.n_jac_evals);
        CHECK(rel(reuse.final_state, ref) <= 1e-4);
    }
    SUBCASE("Gray-Scott with BDF and GMRES") {
        auto p = gray_scott(16);
        IntegratorOptions o;
        o.rtol = o.atol = 1e-9;
        Vec ref = integrate_adaptive(p, o).final_state;
        o.rtol = o.atol = 1e-5;
        o.family = Family::Bdf;
        auto b = integrate_adaptive(p, o);
        CHECK(rel(b.final_state, ref) <= 1e-3);
        CHECK(b.n_newton_iters >= b.n_accepted);
        o.family = Family::Limm;
        o.linear.mode = LinearMode::Gmres;
        CHECK(rel(integrate_adaptive(p, o).final_state, ref) <= 1e-3);
    }
}

TEST_CASE("fixed-step runs") {
    auto p = dahlquist(-1.0);
    auto r = integrate_fixed(p, Family::Limm, 1, 0.1);
    CHECK(r.final_state(0) == doctest::Approx(std::pow(1.0 / 1.1, 10)).epsilon(1e-14));
    CHECK(r.n_steps == 10);
    CHECK(r.n_linear_solves == 10);

    // Second order: halving h cuts the error by about four.
    const double e1 = std::fabs(integrate_fixed(p, Family::LimmW, 2, 1.0 / 32).final_state(0) - std::exp(-1.0));
    const double e2 = std::fabs(integrate_fixed(p, Family::LimmW, 2, 1.0 / 64).final_state(0) - std::exp(-1.0));
    CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.1));

    auto b = integrate_fixed(p, Family::Bdf, 1, 0.1);
    CHECK(b.final_state(0) == doctest::Approx(std::pow(1.0 / 1.1, 10)).epsilon(1e-10));

    // Fourth-order starter plus steps recover y(1) closely.
    auto l = lorenz96(10);
    Vec ref = rk4_solve(l, 16384);
    const double f1 = rel(integrate_fixed(l, Family::Limm, 4, 1.0 / 256).final_state, ref);
    const double f2 = rel(integrate_fixed(l, Family::Limm, 4, 1.0 / 512).final_state, ref);
    CHECK(f2 <= 1e-5);
    CHECK(f1 / f2 >= 12.0);
    CHECK(f1 / f2 <= 20.0);
    CHECK_THROWS_AS(integrate_fixed(p, Family::Limm, 1, -0.1), Error);
}

TEST_CASE("RK4 convergence") {
    auto p = dahlquist(-2.0);
    const double e1 = std::fabs(rk4_solve(p, 20)(0) - std::exp(-2.0));
    const double e2 = std::fabs(rk4_solve(p, 40)(0) - std::exp(-2.0));
    CHECK(e1 / e2 == doctest::Approx(16.0).epsilon(0.1));
}
