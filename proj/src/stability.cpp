#include "limm/stability.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "limm/errors.hpp"

namespace limm {

namespace {

std::complex<double> horner(const std::vector<double>& p, std::complex<double> x) {
    std::complex<double> r = 0;
    for (double a : p) r = r * x + a;
    return r;
}

double abs_sum(const std::vector<double>& p) {
    double s = 0;
    for (double a : p) s += std::fabs(a);
    return s;
}

constexpr double rad_to_deg = 180.0 / std::numbers::pi;

}  // namespace

CharacteristicPolynomials characteristic_polynomials(const MethodCoefficients& m) {
    CharacteristicPolynomials p;
    for (int i = -1; i < m.k; ++i) {
        p.rho.push_back(m.alpha(i));
        p.sigma.push_back(m.beta(i) + m.mu(i));
    }
    p.upsilon.assign(m.k, 0.0);
    return p;
}

std::vector<LocusSample> root_locus(const MethodCoefficients& m, int n_samples) {
    if (n_samples < 1) throw Error(ErrorCode::InvalidArgument, "sample count must be positive");
    auto p = characteristic_polynomials(m);
    const double tiny = 1e-14 * abs_sum(p.sigma);
    std::vector<LocusSample> out;
    out.reserve(n_samples);
    for (int j = 0; j < n_samples; ++j) {
        double theta = 2.0 * std::numbers::pi * j / n_samples;
        std::complex<double> zeta = std::polar(1.0, theta);
        std::complex<double> s = horner(p.sigma, zeta);
        if (std::abs(s) <= tiny) {
            out.push_back({theta, {0.0, 0.0}, true});
        } else {
            out.push_back({theta, horner(p.rho, zeta) / s, false});
        }
    }
    return out;
}

StabilityAngle stability_angle(const MethodCoefficients& m, double resolution_degrees,
                               int n_samples) {
    auto p = characteristic_polynomials(m);
    auto locus = root_locus(m, n_samples);
    const double zero_tol = 1e-12 * std::max(1.0, abs_sum(p.rho) / std::max(1e-300, abs_sum(p.sigma)));

    double min_re = INFINITY;
    for (auto& s : locus)
        if (!s.at_infinity) min_re = std::min(min_re, s.z.real());
    if (min_re >= -1e-9) return {90.0, true, false};

    auto angle_at = [&](double theta) {
        std::complex<double> zeta = std::polar(1.0, theta);
        std::complex<double> z = horner(p.rho, zeta) / horner(p.sigma, zeta);
        return std::fabs(std::arg(-z)) * rad_to_deg;
    };

    int best = -1;
    double best_val = INFINITY;
    for (int j = 0; j < n_samples; ++j) {
        const auto& s = locus[j];
        if (s.at_infinity || std::abs(s.z) <= zero_tol) continue;
        double v = std::fabs(std::arg(-s.z)) * rad_to_deg;
        if (v < best_val) {
            best_val = v;
            best = j;
        }
    }
    if (best < 0) return {0.0, false, true};

    // Golden-section refinement between the neighbouring samples.
    const double dtheta = 2.0 * std::numbers::pi / n_samples;
    double a = locus[best].theta - dtheta, b = locus[best].theta + dtheta;
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = angle_at(x1), f2 = angle_at(x2);
    for (int it = 0; it < 200; ++it) {
        if (std::fabs(f1 - f2) < 0.01 * resolution_degrees && b - a < 1e-12) break;
        if (b - a < 1e-14) break;
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = angle_at(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = angle_at(x2);
        }
    }
    double phi = std::min({best_val, f1, f2});
    if (phi >= 90.0) return {90.0, true, false};
    if (phi <= resolution_degrees) return {0.0, false, true};
    return {phi, false, false};
}

std::vector<std::complex<double>> polynomial_roots(const std::vector<double>& coefficients) {
    std::size_t lead = 0;
    while (lead < coefficients.size() && coefficients[lead] == 0.0) ++lead;
    if (lead + 1 >= coefficients.size()) return {};
    const int n = static_cast<int>(coefficients.size() - lead - 1);
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
    for (int j = 0; j < n; ++j) comp(0, j) = -coefficients[lead + 1 + j] / coefficients[lead];
    for (int i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
    Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
    std::vector<std::complex<double>> roots;
    for (int i = 0; i < n; ++i) roots.push_back(es.eigenvalues()[i]);
    std::sort(roots.begin(), roots.end(),
              [](auto x, auto y) { return std::abs(x) > std::abs(y); });
    return roots;
}

ZeroStability zero_stable_polynomial(const std::vector<double>& coefficients) {
    ZeroStability out;
    out.roots = polynomial_roots(coefficients);
    out.stable = true;
    for (std::size_t i = 0; i < out.roots.size(); ++i) {
        double r = std::abs(out.roots[i]);
        if (r > 1.0 + 1e-9) out.stable = false;
        if (r >= 1.0 - 1e-9) {
            for (std::size_t j = 0; j < out.roots.size(); ++j)
                if (j != i && std::abs(out.roots[i] - out.roots[j]) <= 1e-7) out.stable = false;
        }
    }
    return out;
}

ZeroStability zero_stable(const MethodCoefficients& m) {
    return zero_stable_polynomial(characteristic_polynomials(m).rho);
}

Eigen::MatrixXcd stability_matrix(const MethodCoefficients& m, std::complex<double> z) {
    const int k = m.k;
    std::complex<double> denom = m.alpha(-1) - z * (m.beta(-1) + m.mu(-1));
    if (std::abs(denom) <= 1e-14 * std::max(1.0, std::abs(z)))
        throw Error(ErrorCode::InvalidArgument, "stability matrix has a pole at this z");
    Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(k, k);
    for (int j = 0; j < k; ++j) a(0, j) = (-m.alpha(j) + z * (m.beta(j) + m.mu(j))) / denom;
    for (int i = 1; i < k; ++i) a(i, i - 1) = 1.0;
    return a;
}

double spectral_radius(const Eigen::MatrixXcd& a) {
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(a, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

std::vector<double> product_norm(Family family, const std::vector<double>& times,
                                 const std::vector<int>& orders, double lambda, int k_max) {
    if (times.size() != orders.size() + 1)
        throw Error(ErrorCode::InvalidArgument, "need one order per step");
    const int kk = std::max(k_max, orders.empty() ? 1 : *std::max_element(orders.begin(), orders.end()));
    Eigen::MatrixXcd prod = Eigen::MatrixXcd::Identity(kk, kk);
    std::vector<double> out;
    out.reserve(orders.size());
    for (std::size_t j = 0; j < orders.size(); ++j) {
        const int k = orders[j];
        const double h = times[j + 1] - times[j];
        if (!(h > 0)) throw Error(ErrorCode::InvalidHistory, "step times must increase");
        // Past grid of the step, or a uniform one before enough points exist.
        StepsizeFractions c = StepsizeFractions::uniform(k);
        if (static_cast<int>(j) + 1 >= k) {
            std::vector<double> past;
            for (int i = 0; i < k; ++i) past.push_back(times[j - i]);
            c = fractions_from_times(past, h);
        }
        auto m = variable_coefficients(family, k, c, false);
        auto step = stability_matrix(m, h * lambda);
        Eigen::MatrixXcd e = Eigen::MatrixXcd::Zero(kk, kk);
        e.row(0).head(k) = step.row(0);
        for (int i = 1; i < kk; ++i) e(i, i - 1) = 1.0;
        prod = e * prod;
        Eigen::JacobiSVD<Eigen::MatrixXcd> svd(prod);
        out.push_back(svd.singularValues()(0));
    }
    return out;
}

Objectives objectives(const MethodCoefficients& m) {
    double phi = stability_angle(m).phi_degrees;
    auto [ra, rb] = order_residuals(m, StepsizeFractions::uniform(m.k), m.k + 1);
    return {1.0 / (1.0 + phi), ra * ra + rb * rb};
}

}  // namespace limm
