#pragma once

#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace limm {

enum class Family { Limm, LimmW, Bdf };

const char* family_name(Family f);
Family parse_family(std::string_view name);

/// Coefficients of one k-step method. Arrays are stored with an offset of one
/// so that index -1 (the new point) comes first; use the accessors.
/// beta(-1) is the implicit weight, nonzero only for BDF. For BDF mu is zero.
struct MethodCoefficients {
    Family family = Family::Limm;
    int k = 1;
    std::vector<double> alpha_;
    std::vector<double> beta_;
    std::vector<double> mu_;

    double alpha(int i) const { return alpha_[i + 1]; }
    double beta(int i) const { return beta_[i + 1]; }
    double mu(int i) const { return mu_[i + 1]; }
    int order() const { return k; }
};

/// Past grid points as multiples of the next step: t_{n-i} = t_n - c_i h.
struct StepsizeFractions {
    std::vector<double> values;  // c_{-1}, c_0, c_1, ..., c_k

    double operator()(int i) const { return values[i + 1]; }
    int size() const { return static_cast<int>(values.size()) - 2; }  // k

    static StepsizeFractions uniform(int k);
    /// c_1..c_k given explicitly; c_{-1} = -1 and c_0 = 0 are prepended.
    static StepsizeFractions from_tail(const std::vector<double>& tail);
};

/// times are t_n, t_{n-1}, ..., strictly decreasing.
StepsizeFractions fractions_from_times(const std::vector<double>& times, double h_next);

/// Guard for the variable-step coefficient solve: |c_i - i| < i/2 and c strictly
/// increasing, checked for i = 1..upto.
bool fractions_admissible(const StepsizeFractions& c, int upto);

/// Uniform draw of c_1..c_k with c_i in (i - band*i, i + band*i), redrawn until
/// strictly increasing. band must lie in (0, 0.5).
StepsizeFractions random_admissible_fractions(std::mt19937_64& rng, int k, double band = 0.45);

MethodCoefficients fixed_coefficients(Family family, int k);

/// Coefficients of the order-k method of the family on the grid c. LIMM and
/// LIMM-W keep the optimized alpha (and for LIMM the leading beta) and solve the
/// order conditions for the rest; BDF solves the interpolation conditions.
/// With check_guard the admissibility band is enforced.
MethodCoefficients variable_coefficients(Family family, int k, const StepsizeFractions& c,
                                         bool check_guard = true);

/// rho_a = sum alpha c^l + l sum beta c^(l-1); rho_b = l sum mu c^(l-1).
std::pair<double, double> order_residuals(const MethodCoefficients& m, const StepsizeFractions& c,
                                          int ell);

/// Largest residual of the family's conditions at level ell (ell = 0 are the
/// consistency sums).
double condition_residual(const MethodCoefficients& m, const StepsizeFractions& c, int ell);

/// Maximum absolute residual over every condition up to the method order.
double verify_order_conditions(const MethodCoefficients& m, const StepsizeFractions& c);

/// Error constant in the convention of the characteristics table (BDF values
/// normalized by the implicit weight).
double error_constant(const MethodCoefficients& m, const StepsizeFractions& c);

/// Constant of the local error estimate, max(|rho_a|, |rho_a + rho_b|)/(k+1)!
/// at ell = k+1, for every family without normalization.
double local_error_constant(const MethodCoefficients& m, const StepsizeFractions& c);

struct TransformedCoefficients {
    std::vector<double> alpha_hat;
    std::vector<double> beta_hat;
    std::vector<double> mu_hat;
};

/// Coefficients acting on divided differences, index 0..k-1.
TransformedCoefficients transformed_coefficients(const MethodCoefficients& m,
                                                 const StepsizeFractions& c);

}  // namespace limm
