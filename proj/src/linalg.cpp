#include "limm/linalg.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/SparseLU>

#include "limm/errors.hpp"

namespace limm {

LinearOperator dense_operator(Mat a) {
    LinearOperator op;
    op.dimension = static_cast<int>(a.rows());
    auto m = std::make_shared<const Mat>(std::move(a));
    op.dense = m;
    op.apply = [m](const Vec& v, Vec& out) { out.noalias() = (*m) * v; };
    return op;
}

LinearOperator sparse_operator(SpMat a) {
    LinearOperator op;
    op.dimension = static_cast<int>(a.rows());
    auto m = std::make_shared<const SpMat>(std::move(a));
    op.sparse = m;
    op.apply = [m](const Vec& v, Vec& out) { out = (*m) * v; };
    return op;
}

const char* linear_mode_name(LinearMode mode) {
    switch (mode) {
    case LinearMode::Direct: return "direct";
    case LinearMode::Dense: return "dense";
    case LinearMode::Sparse: return "sparse";
    default: return "gmres";
    }
}

LinearMode parse_linear_mode(const std::string& name) {
    if (name == "direct" || name == "lu") return LinearMode::Direct;
    if (name == "dense") return LinearMode::Dense;
    if (name == "sparse") return LinearMode::Sparse;
    if (name == "gmres") return LinearMode::Gmres;
    throw Error(ErrorCode::InvalidArgument, "unknown linear solver mode '" + name + "'");
}

LuFactors::LuFactors(const Mat& a) {
    if (a.rows() != a.cols()) throw Error(ErrorCode::InvalidArgument, "matrix is not square");
    lu_.compute(a);
    const Mat& packed = lu_.matrixLU();
    const double scale = a.cwiseAbs().maxCoeff();
    const double tol = a.rows() * std::numeric_limits<double>::epsilon() * scale;
    for (int i = 0; i < packed.rows(); ++i) {
        if (!(std::fabs(packed(i, i)) > tol))
            throw SingularMatrixError(i, "matrix is singular at pivot column " + std::to_string(i));
    }
}

Vec LuFactors::solve(const Vec& b) const { return lu_.solve(b); }

LuFactors lu_factor(const Mat& a) { return LuFactors(a); }

GmresResult gmres(const LinearOperator& op, const Vec& b, const LinearSolveConfig& cfg,
                  const Vec& x0) {
    const int n = static_cast<int>(b.size());
    if (op.dimension != n) throw Error(ErrorCode::InvalidArgument, "operator and right-hand side sizes differ");
    GmresResult res;
    const double bnorm = b.norm();
    if (bnorm == 0.0) {
        res.x = Vec::Zero(n);
        res.converged = true;
        return res;
    }
    const double target = cfg.gmres_tol * bnorm;
    Vec x = x0.size() == n ? x0 : Vec::Zero(n);
    Vec r(n), w(n);
    const int restart = std::max(1, cfg.restart);

    while (true) {
        op.apply(x, w);
        r = b - w;
        double beta = r.norm();
        res.residual_norm = beta;
        if (beta <= target) {
            res.converged = true;
            break;
        }
        if (res.iterations >= cfg.max_iterations) break;

        const int m = std::min(restart, cfg.max_iterations - res.iterations);
        Mat v(n, m + 1);
        Mat h = Mat::Zero(m + 1, m);
        std::vector<double> cs(m), sn(m);
        Vec g = Vec::Zero(m + 1);
        g(0) = beta;
        v.col(0) = r / beta;
        int done = 0;
        bool breakdown = false;
        for (int j = 0; j < m; ++j) {
            op.apply(v.col(j), w);
            ++res.iterations;
            const double wnorm0 = w.norm();
            // Modified Gram-Schmidt with one reorthogonalization pass.
            for (int pass = 0; pass < 2; ++pass) {
                for (int i = 0; i <= j; ++i) {
                    double hij = v.col(i).dot(w);
                    h(i, j) += hij;
                    w -= hij * v.col(i);
                }
            }
            const double hnext = w.norm();
            h(j + 1, j) = hnext;
            for (int i = 0; i < j; ++i) {
                double t = cs[i] * h(i, j) + sn[i] * h(i + 1, j);
                h(i + 1, j) = -sn[i] * h(i, j) + cs[i] * h(i + 1, j);
                h(i, j) = t;
            }
            double denom = std::hypot(h(j, j), h(j + 1, j));
            if (denom == 0.0) {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = h(j, j) / denom;
                sn[j] = h(j + 1, j) / denom;
            }
            h(j, j) = cs[j] * h(j, j) + sn[j] * h(j + 1, j);
            h(j + 1, j) = 0.0;
            g(j + 1) = -sn[j] * g(j);
            g(j) = cs[j] * g(j);
            done = j + 1;
            breakdown = hnext <= 1e-14 * std::max(wnorm0, 1e-300);
            if (std::fabs(g(j + 1)) <= target || breakdown) break;
            v.col(j + 1) = w / hnext;
        }
        Vec y = g.head(done);
        for (int i = done - 1; i >= 0; --i) {
            for (int c = i + 1; c < done; ++c) y(i) -= h(i, c) * y(c);
            y(i) = h(i, i) != 0.0 ? y(i) / h(i, i) : 0.0;
        }
        x += v.leftCols(done) * y;
        if (breakdown) {
            op.apply(x, w);
            res.residual_norm = (b - w).norm();
            res.converged = res.residual_norm <= target * (1 + 1e-8) || res.residual_norm <= 1e-14 * bnorm;
            break;
        }
    }
    res.x = std::move(x);
    return res;
}

struct ShiftedSolver::Cache {
    std::uint64_t version;
    double h;
    double mu;
    std::optional<LuFactors> dense;
    std::unique_ptr<Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>>> sparse;
};

namespace {

Mat dense_from(const LinearOperator& op) {
    if (op.dense) return *op.dense;
    if (op.sparse) return Mat(*op.sparse);
    const int n = op.dimension;
    Mat a(n, n);
    Vec e = Vec::Zero(n), col(n);
    for (int j = 0; j < n; ++j) {
        e(j) = 1.0;
        op.apply(e, col);
        a.col(j) = col;
        e(j) = 0.0;
    }
    return a;
}

}  // namespace

Vec ShiftedSolver::solve(const LinearOperator& jacobian, std::uint64_t version, double h, double mu,
                         const Vec& rhs) {
    const int n = jacobian.dimension;
    if (rhs.size() != n) throw Error(ErrorCode::InvalidArgument, "right-hand side has the wrong size");
    const double gamma = h * mu;
    if (cfg_.mode == LinearMode::Gmres) {
        LinearOperator shifted;
        shifted.dimension = n;
        Vec tmp(n);
        shifted.apply = [&](const Vec& v, Vec& out) {
            jacobian.apply(v, tmp);
            out = v - gamma * tmp;
        };
        auto res = gmres(shifted, rhs, cfg_, rhs);
        gmres_iterations_ += res.iterations;
        if (!res.converged)
            throw Error(ErrorCode::ConvergenceFailure,
                        "GMRES did not converge in " + std::to_string(res.iterations) + " iterations");
        return res.x;
    }

    if (!cached_ || cached_->version != version || cached_->h != h || cached_->mu != mu) {
        auto cache = std::make_shared<Cache>();
        cache->version = version;
        cache->h = h;
        cache->mu = mu;
        bool use_sparse = cfg_.mode == LinearMode::Sparse ||
                          (cfg_.mode == LinearMode::Direct && jacobian.sparse && !jacobian.dense) ||
                          (cfg_.mode == LinearMode::Direct && jacobian.sparse && n > 256);
        if (use_sparse) {
            SpMat a = jacobian.sparse ? SpMat(*jacobian.sparse) : dense_from(jacobian).sparseView();
            SpMat eye(n, n);
            eye.setIdentity();
            SpMat m = eye - gamma * a;
            m.makeCompressed();
            cache->sparse = std::make_unique<Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>>>();
            cache->sparse->compute(m);
            if (cache->sparse->info() != Eigen::Success)
                throw SingularMatrixError(-1, "sparse factorization failed: " + cache->sparse->lastErrorMessage());
        } else {
            Mat m = -gamma * dense_from(jacobian);
            m.diagonal().array() += 1.0;
            cache->dense.emplace(m);
        }
        ++factorizations_;
        cached_ = std::move(cache);
    }
    Vec z = cached_->dense ? cached_->dense->solve(rhs) : Vec(cached_->sparse->solve(rhs));
    if (!z.allFinite()) throw Error(ErrorCode::SingularMatrix, "shifted solve produced non-finite values");
    return z;
}

Vec solve_shifted(const LinearOperator& jacobian, double h, double mu, const Vec& rhs,
                  const LinearSolveConfig& cfg) {
    ShiftedSolver solver(cfg);
    return solver.solve(jacobian, 0, h, mu, rhs);
}

}  // namespace limm
