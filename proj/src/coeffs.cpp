#include "limm/coeffs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <string>

#include "coeff_tables.hpp"
#include "limm/errors.hpp"

namespace limm {

namespace detail {

long double parse_rational(const char* text) {
    const char* slash = std::strchr(text, '/');
    if (!slash) return std::strtold(text, nullptr);
    std::string num(text, slash);
    return std::strtold(num.c_str(), nullptr) / std::strtold(slash + 1, nullptr);
}

}  // namespace detail

namespace {

long double ipow(long double x, int e) {
    long double r = 1;
    for (int i = 0; i < e; ++i) r *= x;
    return r;
}

double factorial(int n) {
    double r = 1;
    for (int i = 2; i <= n; ++i) r *= i;
    return r;
}

void check_k(int k) {
    if (k < 1 || k > 5) throw Error(ErrorCode::NotAvailable, "method order must be in 1..5");
}

struct TableLd {
    std::vector<long double> alpha, beta, mu;
};

TableLd table_ld(Family family, int k) {
    const auto& t = detail::rational_table(family, k);
    TableLd out;
    for (auto* s : t.alpha) out.alpha.push_back(detail::parse_rational(s));
    for (auto* s : t.beta) out.beta.push_back(detail::parse_rational(s));
    for (auto* s : t.mu) out.mu.push_back(detail::parse_rational(s));
    return out;
}

MethodCoefficients to_double(Family family, int k, const TableLd& t) {
    MethodCoefficients m;
    m.family = family;
    m.k = k;
    for (auto v : t.alpha) m.alpha_.push_back(static_cast<double>(v));
    for (auto v : t.beta) m.beta_.push_back(static_cast<double>(v));
    for (auto v : t.mu) m.mu_.push_back(static_cast<double>(v));
    return m;
}

// Dense solve with partial pivoting; returns false when a pivot is negligible.
bool solve_small(std::vector<std::vector<long double>>& a, std::vector<long double>& b) {
    const int n = static_cast<int>(b.size());
    long double scale = 0;
    for (auto& row : a)
        for (auto v : row) scale = std::max(scale, std::fabs(v));
    if (scale == 0) return n == 0;
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        if (std::fabs(a[piv][col]) <= 1e-14L * scale) return false;
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        for (int r = col + 1; r < n; ++r) {
            long double f = a[r][col] / a[col][col];
            if (f == 0) continue;
            for (int c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    for (int r = n - 1; r >= 0; --r) {
        long double s = b[r];
        for (int c = r + 1; c < n; ++c) s -= a[r][c] * b[c];
        b[r] = s / a[r][r];
    }
    return true;
}

// Slot layout for the linear order-condition system: alpha, beta, mu blocks,
// each indexed -1..k-1.
struct Slots {
    int k;
    int a(int i) const { return i + 1; }
    int b(int i) const { return (k + 1) + i + 1; }
    int m(int i) const { return 2 * (k + 1) + i + 1; }
    int count() const { return 3 * (k + 1); }
};

MethodCoefficients solve_limm_family(Family family, int k, const StepsizeFractions& c) {
    TableLd fixed = table_ld(family, k);
    Slots s{k};
    std::vector<long double> value(s.count(), 0.0L);
    std::vector<int> unknown(s.count(), -1);
    int n_unknown = 0;
    for (int i = -1; i < k; ++i) value[s.a(i)] = fixed.alpha[i + 1];
    // The LIMM family keeps its leading explicit weight at the table value.
    int first_free_beta = family == Family::Limm ? 1 : 0;
    if (family == Family::Limm) value[s.b(0)] = fixed.beta[1];
    for (int i = first_free_beta; i < k; ++i) unknown[s.b(i)] = n_unknown++;
    for (int i = -1; i < k; ++i) unknown[s.m(i)] = n_unknown++;

    auto cc = [&](int i) { return static_cast<long double>(c(i)); };
    std::vector<std::vector<long double>> rows;
    auto traditional = [&](int ell, bool with_mu) {
        std::vector<long double> r(s.count(), 0.0L);
        for (int i = -1; i < k; ++i) {
            r[s.a(i)] += ipow(cc(i), ell);
            r[s.b(i)] += ell * ipow(cc(i), ell - 1);
            if (with_mu) r[s.m(i)] += ell * ipow(cc(i), ell - 1);
        }
        rows.push_back(r);
    };
    auto mu_condition = [&](int ell) {
        std::vector<long double> r(s.count(), 0.0L);
        for (int i = -1; i < k; ++i) r[s.m(i)] = ipow(cc(i), ell - 1);
        rows.push_back(r);
    };

    mu_condition(1);
    for (int ell = 1; ell <= k; ++ell) traditional(ell, family == Family::Limm && ell == 2);
    for (int ell = family == Family::Limm ? 3 : 2; ell <= k; ++ell) mu_condition(ell);
    {
        std::vector<long double> r(s.count(), 0.0L);
        r[s.b(k - 1)] = 1;
        r[s.m(k - 1)] = 1;
        rows.push_back(r);
    }

    std::vector<std::vector<long double>> a;
    std::vector<long double> rhs;
    for (auto& r : rows) {
        std::vector<long double> row(n_unknown, 0.0L);
        long double known = 0;
        bool any = false;
        for (int j = 0; j < s.count(); ++j) {
            if (r[j] == 0) continue;
            if (unknown[j] >= 0) {
                row[unknown[j]] = r[j];
                any = true;
            } else {
                known += r[j] * value[j];
            }
        }
        if (!any) continue;
        a.push_back(row);
        rhs.push_back(-known);
    }
    if (static_cast<int>(a.size()) != n_unknown)
        throw Error(ErrorCode::InvalidArgument, "order-condition system is not square");
    if (!solve_small(a, rhs))
        throw Error(ErrorCode::DegenerateGrid, "order-condition system is singular for this grid");
    for (int j = 0; j < s.count(); ++j)
        if (unknown[j] >= 0) value[j] = rhs[unknown[j]];

    TableLd out;
    for (int i = -1; i < k; ++i) {
        out.alpha.push_back(value[s.a(i)]);
        out.beta.push_back(value[s.b(i)]);
        out.mu.push_back(value[s.m(i)]);
    }
    return to_double(family, k, out);
}

MethodCoefficients solve_bdf(int k, const StepsizeFractions& c) {
    // Unknowns alpha_0..alpha_{k-1} and the implicit weight; alpha_{-1} = 1.
    const int n = k + 1;
    std::vector<std::vector<long double>> a(n, std::vector<long double>(n, 0.0L));
    std::vector<long double> rhs(n, 0.0L);
    for (int ell = 0; ell <= k; ++ell) {
        for (int i = 0; i < k; ++i) a[ell][i] = ipow(static_cast<long double>(c(i)), ell);
        a[ell][k] = ell * ipow(-1.0L, ell - 1 < 0 ? 0 : ell - 1);
        rhs[ell] = -ipow(-1.0L, ell);
    }
    if (!solve_small(a, rhs))
        throw Error(ErrorCode::DegenerateGrid, "interpolation system is singular for this grid");
    MethodCoefficients m;
    m.family = Family::Bdf;
    m.k = k;
    m.alpha_.push_back(1.0);
    for (int i = 0; i < k; ++i) m.alpha_.push_back(static_cast<double>(rhs[i]));
    m.beta_.assign(k + 1, 0.0);
    m.beta_[0] = static_cast<double>(rhs[k]);
    m.mu_.assign(k + 1, 0.0);
    return m;
}

}  // namespace

const char* family_name(Family f) {
    switch (f) {
    case Family::Limm: return "limm";
    case Family::LimmW: return "limmw";
    default: return "bdf";
    }
}

Family parse_family(std::string_view name) {
    std::string s(name);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
    s.erase(std::remove(s.begin(), s.end(), '-'), s.end());
    s.erase(std::remove(s.begin(), s.end(), '_'), s.end());
    if (s == "limm") return Family::Limm;
    if (s == "limmw") return Family::LimmW;
    if (s == "bdf") return Family::Bdf;
    throw Error(ErrorCode::InvalidArgument, "unknown method family '" + std::string(name) + "'");
}

StepsizeFractions StepsizeFractions::uniform(int k) {
    StepsizeFractions c;
    for (int i = -1; i <= k; ++i) c.values.push_back(i);
    return c;
}

StepsizeFractions StepsizeFractions::from_tail(const std::vector<double>& tail) {
    StepsizeFractions c;
    c.values = {-1.0, 0.0};
    c.values.insert(c.values.end(), tail.begin(), tail.end());
    return c;
}

StepsizeFractions fractions_from_times(const std::vector<double>& times, double h_next) {
    if (times.empty()) throw Error(ErrorCode::InvalidHistory, "empty time history");
    if (!(h_next > 0)) throw Error(ErrorCode::InvalidArgument, "step size must be positive");
    StepsizeFractions c;
    c.values = {-1.0, 0.0};
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (!(times[i] < times[i - 1]))
            throw Error(ErrorCode::InvalidHistory, "time history is not strictly decreasing");
        c.values.push_back((times[0] - times[i]) / h_next);
    }
    return c;
}

bool fractions_admissible(const StepsizeFractions& c, int upto) {
    if (upto > c.size()) return false;
    for (int i = 1; i <= upto; ++i) {
        if (!(c(i) > c(i - 1))) return false;
        if (!(std::fabs(c(i) - i) < 0.5 * i)) return false;
    }
    return true;
}

StepsizeFractions random_admissible_fractions(std::mt19937_64& rng, int k, double band) {
    if (!(band > 0.0 && band < 0.5)) throw Error(ErrorCode::InvalidArgument, "band must lie in (0, 0.5)");
    std::uniform_real_distribution<double> u(-band, band);
    std::vector<double> tail(k);
    for (;;) {
        for (int i = 1; i <= k; ++i) tail[i - 1] = i * (1.0 + u(rng));
        if (std::adjacent_find(tail.begin(), tail.end(), std::greater_equal<>()) == tail.end())
            return StepsizeFractions::from_tail(tail);
    }
}

MethodCoefficients fixed_coefficients(Family family, int k) {
    check_k(k);
    return to_double(family, k, table_ld(family, k));
}

MethodCoefficients variable_coefficients(Family family, int k, const StepsizeFractions& c,
                                         bool check_guard) {
    check_k(k);
    if (c.size() < k - 1) throw Error(ErrorCode::InvalidArgument, "too few stepsize fractions");
    for (int i = 1; i < k; ++i)
        if (!(c(i) > c(i - 1)))
            throw Error(ErrorCode::DegenerateGrid, "stepsize fractions are not strictly increasing");
    if (check_guard && !fractions_admissible(c, k - 1))
        throw Error(ErrorCode::Inadmissible, "stepsize fractions outside the admissible band");
    if (family == Family::Bdf) return solve_bdf(k, c);
    return solve_limm_family(family, k, c);
}

std::pair<double, double> order_residuals(const MethodCoefficients& m, const StepsizeFractions& c,
                                          int ell) {
    long double ra = 0, rb = 0;
    for (int i = -1; i < m.k; ++i) {
        long double ci = c(i);
        ra += m.alpha(i) * ipow(ci, ell) + ell * m.beta(i) * ipow(ci, ell - 1);
        rb += ell * m.mu(i) * ipow(ci, ell - 1);
    }
    return {static_cast<double>(ra), static_cast<double>(rb)};
}

double condition_residual(const MethodCoefficients& m, const StepsizeFractions& c, int ell) {
    if (ell == 0) {
        long double sa = 0, sm = 0;
        for (int i = -1; i < m.k; ++i) {
            sa += m.alpha(i);
            sm += m.mu(i);
        }
        return static_cast<double>(std::max(std::fabs(sa), std::fabs(sm)));
    }
    auto [ra, rb] = order_residuals(m, c, ell);
    switch (m.family) {
    case Family::Bdf: return std::fabs(ra);
    case Family::Limm:
        if (ell == 2) return std::fabs(ra + rb);
        return std::max(std::fabs(ra), std::fabs(rb));
    default: return std::max(std::fabs(ra), std::fabs(rb));
    }
}

double verify_order_conditions(const MethodCoefficients& m, const StepsizeFractions& c) {
    double worst = 0;
    for (int ell = 0; ell <= m.k; ++ell) worst = std::max(worst, condition_residual(m, c, ell));
    return worst;
}

double local_error_constant(const MethodCoefficients& m, const StepsizeFractions& c) {
    auto [ra, rb] = order_residuals(m, c, m.k + 1);
    return std::max(std::fabs(ra), std::fabs(ra + rb)) / factorial(m.k + 1);
}

double error_constant(const MethodCoefficients& m, const StepsizeFractions& c) {
    double value = local_error_constant(m, c);
    if (m.family == Family::Bdf) value /= m.beta(-1);
    return value;
}

TransformedCoefficients transformed_coefficients(const MethodCoefficients& m,
                                                 const StepsizeFractions& c) {
    TransformedCoefficients t;
    const int k = m.k;
    t.alpha_hat.assign(k, 0.0);
    t.beta_hat.assign(k, 0.0);
    t.mu_hat.assign(k, 0.0);
    for (int i = 0; i < k; ++i) {
        double sign = (i % 2 == 0) ? 1.0 : -1.0;
        for (int j = i; j < k; ++j) {
            double prod = sign;
            for (int l = 0; l < i; ++l) prod *= c(j) - c(l);
            t.alpha_hat[i] += m.alpha(j) * prod;
            t.beta_hat[i] += m.beta(j) * prod;
            t.mu_hat[i] += m.mu(j) * prod;
        }
    }
    return t;
}

}  // namespace limm
