#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace limm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;

/// A linear map given by its action, optionally with an explicit matrix.
struct LinearOperator {
    int dimension = 0;
    std::function<void(const Vec&, Vec&)> apply;
    std::shared_ptr<const Mat> dense;
    std::shared_ptr<const SpMat> sparse;
};

LinearOperator dense_operator(Mat a);
LinearOperator sparse_operator(SpMat a);

enum class LinearMode { Direct, Dense, Sparse, Gmres };

const char* linear_mode_name(LinearMode mode);
LinearMode parse_linear_mode(const std::string& name);

struct LinearSolveConfig {
    LinearMode mode = LinearMode::Direct;
    double gmres_tol = 1e-8;
    int restart = 30;
    int max_iterations = 100;
};

/// Partial-pivoting LU of a dense square matrix.
class LuFactors {
public:
    explicit LuFactors(const Mat& a);
    Vec solve(const Vec& b) const;
    const Eigen::PartialPivLU<Mat>& decomposition() const { return lu_; }

private:
    Eigen::PartialPivLU<Mat> lu_;
};

LuFactors lu_factor(const Mat& a);

struct GmresResult {
    Vec x;
    int iterations = 0;
    double residual_norm = 0;
    bool converged = false;
};

GmresResult gmres(const LinearOperator& op, const Vec& b, const LinearSolveConfig& cfg,
                  const Vec& x0);

/// Solves (I - h mu J) z = rhs. In the direct modes the factorization is cached
/// and reused while (h, mu, jacobian_version) are unchanged.
class ShiftedSolver {
public:
    explicit ShiftedSolver(LinearSolveConfig cfg = {}) : cfg_(cfg) {}

    Vec solve(const LinearOperator& jacobian, std::uint64_t jacobian_version, double h, double mu,
              const Vec& rhs);

    const LinearSolveConfig& config() const { return cfg_; }
    long factorizations() const { return factorizations_; }
    long gmres_iterations() const { return gmres_iterations_; }
    void invalidate() { cached_.reset(); }

private:
    struct Cache;
    LinearSolveConfig cfg_;
    std::shared_ptr<Cache> cached_;
    long factorizations_ = 0;
    long gmres_iterations_ = 0;
};

Vec solve_shifted(const LinearOperator& jacobian, double h, double mu, const Vec& rhs,
                  const LinearSolveConfig& cfg);

}  // namespace limm
