#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "limm/coeffs.hpp"

namespace limm {

/// Coefficients in descending powers of zeta.
struct CharacteristicPolynomials {
    std::vector<double> rho;
    std::vector<double> sigma;
    std::vector<double> upsilon;
};

CharacteristicPolynomials characteristic_polynomials(const MethodCoefficients& m);

struct LocusSample {
    double theta;
    std::complex<double> z;
    bool at_infinity;
};

std::vector<LocusSample> root_locus(const MethodCoefficients& m, int n_samples);

struct StabilityAngle {
    double phi_degrees;
    bool a_stable;
    bool wedge_empty;
};

/// A(phi) angle in degrees from 8192 locus samples refined by golden section.
StabilityAngle stability_angle(const MethodCoefficients& m, double resolution_degrees = 1e-4,
                               int n_samples = 8192);

struct ZeroStability {
    bool stable;
    std::vector<std::complex<double>> roots;
};

ZeroStability zero_stable(const MethodCoefficients& m);
/// Same test for an arbitrary polynomial in descending powers.
ZeroStability zero_stable_polynomial(const std::vector<double>& coefficients);

std::vector<std::complex<double>> polynomial_roots(const std::vector<double>& coefficients);

Eigen::MatrixXcd stability_matrix(const MethodCoefficients& m, std::complex<double> z);

double spectral_radius(const Eigen::MatrixXcd& a);

/// Running 2-norms of the products of per-step stability matrices for y' = lambda y
/// along a run. times holds t_0 and every accepted step end; orders[j] is the order
/// of the step ending at times[j+1]. Matrices are embedded at size k_max so that
/// order changes compose; coefficients are evaluated without the admissibility guard.
std::vector<double> product_norm(Family family, const std::vector<double>& times,
                                 const std::vector<int>& orders, double lambda, int k_max);

struct Objectives {
    double phi1;
    double phi2;
};

Objectives objectives(const MethodCoefficients& m);

}  // namespace limm
