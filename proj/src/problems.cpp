#include "limm/problems.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "limm/errors.hpp"

namespace limm {

OdeProblem dahlquist(double a, double b, bool complex_form) {
    OdeProblem p;
    p.name = "dahlquist";
    p.t0 = 0.0;
    p.tf = 1.0;
    if (!complex_form && b == 0.0) {
        p.dimension = 1;
        p.y0 = Vec::Ones(1);
        p.rhs = [a](double, const Vec& y, Vec& out) { out(0) = a * y(0); };
        p.jacobian = [a](double, const Vec&, Mat& out) { out.resize(1, 1); out(0, 0) = a; };
        p.jac_vec = [a](double, const Vec&, const Vec& v, Vec& out) { out(0) = a * v(0); };
        p.exact = [a](double t) { return Vec::Constant(1, std::exp(a * t)); };
        return p;
    }
    p.dimension = 2;
    p.y0 = Vec::Zero(2);
    p.y0(0) = 1.0;
    p.rhs = [a, b](double, const Vec& y, Vec& out) {
        out(0) = a * y(0) - b * y(1);
        out(1) = b * y(0) + a * y(1);
    };
    p.jacobian = [a, b](double, const Vec&, Mat& out) {
        out.resize(2, 2);
        out << a, -b, b, a;
    };
    p.jac_vec = [a, b](double, const Vec&, const Vec& v, Vec& out) {
        out(0) = a * v(0) - b * v(1);
        out(1) = b * v(0) + a * v(1);
    };
    p.exact = [a, b](double t) {
        Vec y(2);
        y << std::exp(a * t) * std::cos(b * t), std::exp(a * t) * std::sin(b * t);
        return y;
    };
    return p;
}

OdeProblem lorenz96(int n) {
    if (n < 4) throw Error(ErrorCode::InvalidDimension, "Lorenz-96 needs at least 4 variables");
    OdeProblem p;
    p.name = "lorenz96";
    p.dimension = n;
    p.t0 = 0.0;
    p.tf = 0.5;
    p.autonomous = false;
    p.y0.resize(n);
    for (int i = 0; i < n; ++i) p.y0(i) = 8.0 + 3.0 * std::sin(2.0 * std::numbers::pi * i / n);
    auto idx = [n](int i) { return ((i % n) + n) % n; };
    p.rhs = [n, idx](double t, const Vec& x, Vec& out) {
        const double forcing = 8.0 + 4.0 * std::cos(3.0 * std::numbers::pi * t);
        for (int i = 0; i < n; ++i)
            out(i) = (x(idx(i + 1)) - x(idx(i - 2))) * x(idx(i - 1)) - x(i) + forcing;
    };
    p.jacobian = [n, idx](double, const Vec& x, Mat& out) {
        out.setZero(n, n);
        for (int i = 0; i < n; ++i) {
            out(i, i) -= 1.0;
            out(i, idx(i + 1)) += x(idx(i - 1));
            out(i, idx(i - 2)) -= x(idx(i - 1));
            out(i, idx(i - 1)) += x(idx(i + 1)) - x(idx(i - 2));
        }
    };
    p.jac_vec = [n, idx](double, const Vec& x, const Vec& v, Vec& out) {
        for (int i = 0; i < n; ++i)
            out(i) = -v(i) + x(idx(i - 1)) * (v(idx(i + 1)) - v(idx(i - 2))) +
                     (x(idx(i + 1)) - x(idx(i - 2))) * v(idx(i - 1));
    };
    p.dfdt = [n](double t, const Vec&, Vec& out) {
        out.setConstant(n, -12.0 * std::numbers::pi * std::sin(3.0 * std::numbers::pi * t));
    };
    return p;
}

void periodic_laplacian(int n, double spacing, const double* in, double* out) {
    const double s = 1.0 / (spacing * spacing);
    for (int i = 0; i < n; ++i) {
        const int ip = (i + 1) % n, im = (i + n - 1) % n;
        for (int j = 0; j < n; ++j) {
            const int jp = (j + 1) % n, jm = (j + n - 1) % n;
            out[i * n + j] = s * (in[ip * n + j] + in[im * n + j] + in[i * n + jp] + in[i * n + jm] -
                                  4.0 * in[i * n + j]);
        }
    }
}

namespace {

constexpr double gs_eps1 = 0.2;
constexpr double gs_eps2 = 0.1;
constexpr double gs_feed = 0.04;
constexpr double gs_kill = 0.06;

}  // namespace

OdeProblem gray_scott(int n) {
    if (n < 4) throw Error(ErrorCode::InvalidDimension, "Gray-Scott grid needs n >= 4");
    OdeProblem p;
    p.name = "grayscott";
    const int cells = n * n;
    p.dimension = 2 * cells;
    p.t0 = 0.0;
    p.tf = 2.0;
    const double dx = 1.0 / n;

    p.y0.resize(p.dimension);
    p.y0.head(cells).setOnes();
    p.y0.tail(cells).setZero();
    const int side = std::max(1, n / 4);
    const int start = (n - side) / 2;
    for (int i = start; i < start + side; ++i)
        for (int j = start; j < start + side; ++j) {
            p.y0(i * n + j) = 0.5;
            p.y0(cells + i * n + j) = 0.25;
        }

    p.rhs = [n, cells, dx](double, const Vec& y, Vec& out) {
        const double* u = y.data();
        const double* v = y.data() + cells;
        double* du = out.data();
        double* dv = out.data() + cells;
        periodic_laplacian(n, dx, u, du);
        periodic_laplacian(n, dx, v, dv);
        for (int c = 0; c < cells; ++c) {
            const double uvv = u[c] * v[c] * v[c];
            du[c] = gs_eps1 * du[c] - uvv + gs_feed * (1.0 - u[c]);
            dv[c] = gs_eps2 * dv[c] + uvv - (gs_feed + gs_kill) * v[c];
        }
    };
    p.jac_vec = [n, cells, dx](double, const Vec& y, const Vec& w, Vec& out) {
        const double* u = y.data();
        const double* v = y.data() + cells;
        const double* wu = w.data();
        const double* wv = w.data() + cells;
        double* ou = out.data();
        double* ov = out.data() + cells;
        periodic_laplacian(n, dx, wu, ou);
        periodic_laplacian(n, dx, wv, ov);
        for (int c = 0; c < cells; ++c) {
            const double vv = v[c] * v[c], uv2 = 2.0 * u[c] * v[c];
            const double a = gs_eps1 * ou[c] - (vv + gs_feed) * wu[c] - uv2 * wv[c];
            const double b = gs_eps2 * ov[c] + vv * wu[c] + (uv2 - gs_feed - gs_kill) * wv[c];
            ou[c] = a;
            ov[c] = b;
        }
    };
    p.sparse_jacobian = [n, cells, dx](double, const Vec& y, SpMat& out) {
        const double s = 1.0 / (dx * dx);
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(12 * cells);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const int c = i * n + j;
                const int nb[4] = {((i + 1) % n) * n + j, ((i + n - 1) % n) * n + j, i * n + (j + 1) % n,
                                   i * n + (j + n - 1) % n};
                const double u = y(c), v = y(cells + c);
                trip.emplace_back(c, c, -4.0 * gs_eps1 * s - v * v - gs_feed);
                trip.emplace_back(c, cells + c, -2.0 * u * v);
                trip.emplace_back(cells + c, c, v * v);
                trip.emplace_back(cells + c, cells + c, -4.0 * gs_eps2 * s + 2.0 * u * v - gs_feed - gs_kill);
                for (int q : nb) {
                    trip.emplace_back(c, q, gs_eps1 * s);
                    trip.emplace_back(cells + c, cells + q, gs_eps2 * s);
                }
            }
        }
        out.resize(2 * cells, 2 * cells);
        out.setFromTriplets(trip.begin(), trip.end());
    };
    if (n <= 64) {
        auto sparse = p.sparse_jacobian;
        p.jacobian = [sparse](double t, const Vec& y, Mat& out) {
            SpMat j;
            sparse(t, y, j);
            out = Mat(j);
        };
    }
    return p;
}

OdeProblem make_problem(const std::string& name, const nlohmann::json& params) {
    OdeProblem p;
    if (name == "dahlquist") {
        double re = -1.0, im = 0.0;
        bool complex_form = false;
        if (params.contains("lambda")) {
            const auto& l = params.at("lambda");
            if (l.is_array()) {
                re = l.at(0).get<double>();
                im = l.at(1).get<double>();
                complex_form = true;
            } else {
                re = l.get<double>();
            }
        }
        if (params.contains("lambda_re")) re = params.at("lambda_re").get<double>();
        if (params.contains("lambda_im")) {
            im = params.at("lambda_im").get<double>();
            complex_form = true;
        }
        p = dahlquist(re, im, complex_form);
    } else if (name == "lorenz96") {
        p = lorenz96(params.value("N", params.value("n", 40)));
    } else if (name == "grayscott" || name == "gray_scott") {
        p = gray_scott(params.value("n", 32));
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown problem '" + name + "'");
    }
    if (params.contains("t0")) p.t0 = params.at("t0").get<double>();
    if (params.contains("tf")) p.tf = params.at("tf").get<double>();
    if (!(p.t0 < p.tf)) throw Error(ErrorCode::InvalidArgument, "time span must satisfy t0 < tf");
    return p;
}

}  // namespace limm
