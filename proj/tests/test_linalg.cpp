#include <cmath>
#include <random>

#include "doctest.h"
#include "limm/coeffs.hpp"
#include "limm/errors.hpp"
#include "limm/linalg.hpp"
#include "limm/problems.hpp"

using namespace limm;

namespace {

Mat random_matrix(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> g;
    Mat a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = g(rng);
    return a;
}

Vec random_vector(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> g;
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = g(rng);
    return v;
}

}  // namespace

TEST_CASE("lu on identity, diagonal and random systems") {
    Vec b(3);
    b << 1, 2, 3;
    CHECK((lu_factor(Mat::Identity(3, 3)).solve(b) - b).norm() == 0.0);

    Mat d(2, 2);
    d << 2, 0, 0, 4;
    Vec rhs(2);
    rhs << 2, 8;
    Vec x = lu_factor(d).solve(rhs);
    CHECK(x(0) == doctest::Approx(1.0));
    CHECK(x(1) == doctest::Approx(2.0));

    std::mt19937_64 rng(11);
    Mat a = random_matrix(rng, 20) + 20.0 * Mat::Identity(20, 20);
    Vec r = random_vector(rng, 20);
    auto lu = lu_factor(a);
    CHECK((a * lu.solve(r) - r).norm() / r.norm() <= 1e-12);
    // Factors are reusable for other right-hand sides.
    Vec r2 = random_vector(rng, 20);
    CHECK((a * lu.solve(r2) - r2).norm() / r2.norm() <= 1e-12);
}

TEST_CASE("lu reports the singular pivot column") {
    Mat a(3, 3);
    a << 1, 2, 3, 2, 4, 6, 0, 0, 1;
    try {
        lu_factor(a);
        FAIL("expected a singular-matrix error");
    } catch (const SingularMatrixError& e) {
        CHECK(e.code() == ErrorCode::SingularMatrix);
        CHECK(e.column() >= 1);
    }
}

TEST_CASE("gmres trivial cases") {
    LinearSolveConfig cfg;
    cfg.mode = LinearMode::Gmres;
    cfg.gmres_tol = 1e-12;
    auto id = dense_operator(Mat::Identity(5, 5));
    Vec b = Vec::LinSpaced(5, 1, 5);
    auto r = gmres(id, b, cfg, Vec::Zero(5));
    CHECK(r.converged);
    CHECK(r.iterations <= 1);
    CHECK((r.x - b).norm() <= 1e-14);

    auto z = gmres(id, Vec::Zero(5), cfg, Vec::Zero(5));
    CHECK(z.iterations == 0);
    CHECK(z.x.norm() == 0.0);
}

TEST_CASE("gmres matches lu and respects distinct-eigenvalue bound") {
    std::mt19937_64 rng(5);
    Mat m = random_matrix(rng, 30);
    Mat a = m * m.transpose() / 30.0 + Mat::Identity(30, 30);
    Vec b = random_vector(rng, 30);
    LinearSolveConfig cfg;
    cfg.gmres_tol = 1e-10;
    auto r = gmres(dense_operator(a), b, cfg, Vec::Zero(30));
    Vec x = lu_factor(a).solve(b);
    CHECK(r.converged);
    CHECK((a * r.x - b).norm() <= 1e-10 * b.norm());
    CHECK((r.x - x).norm() <= 1e-8 * x.norm());

    Vec diag(12);
    for (int i = 0; i < 12; ++i) diag(i) = 1.0 + (i % 4);
    auto dr = gmres(dense_operator(Mat(diag.asDiagonal())), random_vector(rng, 12), cfg, Vec::Zero(12));
    CHECK(dr.converged);
    CHECK(dr.iterations <= 4);
}

TEST_CASE("gmres reports non-convergence with its best iterate") {
    std::mt19937_64 rng(9);
    Mat a = random_matrix(rng, 40);
    LinearSolveConfig cfg;
    cfg.gmres_tol = 1e-14;
    cfg.restart = 2;
    cfg.max_iterations = 4;
    Vec b = random_vector(rng, 40);
    auto r = gmres(dense_operator(a), b, cfg, Vec::Zero(40));
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 4);
    CHECK(r.residual_norm <= b.norm() * (1 + 1e-12));
    CHECK(std::fabs((a * r.x - b).norm() - r.residual_norm) <= 1e-10 * b.norm());
}

TEST_CASE("shifted solves") {
    Vec rhs = Vec::LinSpaced(4, -1, 2);
    LinearSolveConfig cfg;
    CHECK((solve_shifted(dense_operator(Mat::Zero(4, 4)), 0.1, 0.7, rhs, cfg) - rhs).norm() == 0.0);

    Mat s(1, 1);
    s << -3.0;
    Vec r1 = Vec::Constant(1, 2.0);
    CHECK(solve_shifted(dense_operator(s), 0.5, 0.8, r1, cfg)(0) == doctest::Approx(2.0 / (1 + 0.5 * 0.8 * 3.0)));

    // Singular shift surfaces as an error the stepper treats as a failure.
    Mat one(1, 1);
    one << 1.0;
    CHECK_THROWS_AS(solve_shifted(dense_operator(one), 1.0, 1.0, r1, cfg), Error);
}

TEST_CASE("factorization cache reuse") {
    std::mt19937_64 rng(1);
    Mat j = random_matrix(rng, 6);
    auto op = dense_operator(j);
    ShiftedSolver solver;
    Vec b = random_vector(rng, 6);
    solver.solve(op, 1, 0.1, 0.5, b);
    solver.solve(op, 1, 0.1, 0.5, b);
    CHECK(solver.factorizations() == 1);
    solver.solve(op, 1, 0.2, 0.5, b);
    CHECK(solver.factorizations() == 2);
    solver.solve(op, 2, 0.2, 0.5, b);
    CHECK(solver.factorizations() == 3);
}

TEST_CASE("direct residual bound and cross-solver agreement on lorenz96") {
    auto p = lorenz96(40);
    Mat j;
    p.jacobian(0.0, p.y0, j);
    const double h = 0.01, mu = fixed_coefficients(Family::Limm, 3).mu(-1);
    std::mt19937_64 rng(2);
    Vec rhs = random_vector(rng, 40);
    LinearSolveConfig direct;
    Vec zd = solve_shifted(dense_operator(j), h, mu, rhs, direct);
    Mat shifted = Mat::Identity(40, 40) - h * mu * j;
    CHECK((shifted * zd - rhs).cwiseAbs().maxCoeff() <= 1e-10 * (1 + rhs.cwiseAbs().maxCoeff()));

    LinearSolveConfig g;
    g.mode = LinearMode::Gmres;
    g.gmres_tol = 1e-12;
    Vec zg = solve_shifted(dense_operator(j), h, mu, rhs, g);
    CHECK((zg - zd).cwiseAbs().maxCoeff() <= 1e-10);

    // Sparse and dense direct paths agree.
    LinearSolveConfig sp;
    sp.mode = LinearMode::Sparse;
    Vec zs = solve_shifted(sparse_operator(j.sparseView()), h, mu, rhs, sp);
    CHECK((zs - zd).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("linear operators are linear") {
    std::mt19937_64 rng(4);
    auto p = gray_scott(8);
    Vec y = random_vector(rng, 128).cwiseAbs();
    LinearOperator op;
    op.dimension = 128;
    op.apply = [&](const Vec& v, Vec& out) {
        out.resize(128);
        p.jac_vec(0, y, v, out);
    };
    Vec u = random_vector(rng, 128), v = random_vector(rng, 128), a(128), b(128), c(128);
    op.apply(2.0 * u - 3.0 * v, a);
    op.apply(u, b);
    op.apply(v, c);
    CHECK((a - (2.0 * b - 3.0 * c)).norm() <= 1e-12 * a.norm());
    CHECK(parse_linear_mode("gmres") == LinearMode::Gmres);
    CHECK_THROWS_AS(parse_linear_mode("magic"), Error);
}
