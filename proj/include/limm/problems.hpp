#pragma once

#include <functional>
#include <string>

#include "json.hpp"
#include "limm/linalg.hpp"

namespace limm {

using RhsFn = std::function<void(double t, const Vec& y, Vec& out)>;
using JacobianFn = std::function<void(double t, const Vec& y, Mat& out)>;
using SparseJacobianFn = std::function<void(double t, const Vec& y, SpMat& out)>;
using JacVecFn = std::function<void(double t, const Vec& y, const Vec& v, Vec& out)>;

struct OdeProblem {
    std::string name;
    int dimension = 0;
    double t0 = 0.0;
    double tf = 1.0;
    Vec y0;
    RhsFn rhs;
    JacobianFn jacobian;               // optional dense Jacobian
    SparseJacobianFn sparse_jacobian;  // optional sparse Jacobian
    JacVecFn jac_vec;                  // optional Jacobian-vector product
    RhsFn dfdt;                        // optional time partial of rhs
    bool autonomous = true;
    std::function<Vec(double)> exact;  // optional closed-form solution

    Vec eval(double t, const Vec& y) const {
        Vec out(dimension);
        rhs(t, y, out);
        return out;
    }
};

/// y' = lambda y, y(0) = 1. A complex lambda is realified as a 2x2 block.
OdeProblem dahlquist(double lambda_re, double lambda_im = 0.0, bool complex_form = false);

/// Cyclic Lorenz-96 with forcing 8 + 4 cos(3 pi t).
OdeProblem lorenz96(int n);

/// Gray-Scott on an n x n periodic grid of the unit square; state is [u; v].
OdeProblem gray_scott(int n);

/// Periodic 5-point Laplacian of an n x n field stored row-major.
void periodic_laplacian(int n, double spacing, const double* in, double* out);

/// Builds a registered problem by name with JSON parameters.
OdeProblem make_problem(const std::string& name, const nlohmann::json& params);

}  // namespace limm
