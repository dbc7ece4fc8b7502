#include "limm/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "limm/errors.hpp"

namespace limm {

namespace {

double factorial(int n) {
    double r = 1;
    for (int i = 2; i <= n; ++i) r *= i;
    return r;
}

bool is_step_failure(const Error& e) {
    return e.code() == ErrorCode::SingularMatrix || e.code() == ErrorCode::ConvergenceFailure ||
           e.code() == ErrorCode::StepFailure;
}

// Fractions c_1..c_{k-1} for an order-k step, or nullopt when the history
// cannot provide them inside the admissible band.
std::optional<StepsizeFractions> step_fractions(const std::vector<double>& times, int k, double h) {
    if (static_cast<int>(times.size()) < k) return std::nullopt;
    std::vector<double> head(times.begin(), times.begin() + k);
    for (int i = 1; i < k; ++i)
        if (!(head[i] < head[i - 1])) return std::nullopt;
    auto c = fractions_from_times(head, h);
    if (!fractions_admissible(c, k - 1)) return std::nullopt;
    return c;
}

}  // namespace

StepProposal propose_next(const ControllerState& ctrl, std::optional<double> err_km1, double err_k,
                          std::optional<double> err_kp1, const ControllerParams& params) {
    StepProposal out;
    const double h = ctrl.h;
    const int k = ctrl.k;
    auto h_opt = [h](double err, int q) {
        if (err <= 0.0) return h * std::numeric_limits<double>::infinity();
        return h * std::pow(err, -1.0 / (q + 1));
    };
    if (!(err_k <= 1.0)) {
        out.accept = false;
        double factor = std::isfinite(err_k) ? std::max(params.reject_floor, params.safety * std::pow(err_k, -1.0 / (k + 1)))
                                             : params.reject_floor;
        out.h_next = h * std::min(factor, 1.0);
        out.k_next = k;
        if (ctrl.consecutive_rejections + 1 >= params.rejections_before_order_drop)
            out.k_next = std::max(1, k - 1);
        if (out.h_next < ctrl.h_min)
            throw Error(ErrorCode::MinimumStepsize, "step size fell below the minimum");
        return out;
    }

    out.accept = true;
    int best_k = k;
    double best_h = h_opt(err_k, k);
    if (ctrl.steps_at_current_k + 1 >= k + 1) {
        if (err_km1 && k > 1) {
            double cand = h_opt(*err_km1, k - 1);
            if (cand >= best_h) {
                best_h = cand;
                best_k = k - 1;
            }
        }
        if (err_kp1 && k < ctrl.k_max) {
            double cand = h_opt(*err_kp1, k + 1);
            if (cand > best_h) {
                best_h = cand;
                best_k = k + 1;
            }
        }
    }
    double ratio = params.safety * best_h / h;
    if (!std::isfinite(ratio)) ratio = params.ratio_max;
    ratio = std::clamp(ratio, params.ratio_min, params.ratio_max);
    if (ratio > 1.0 && ctrl.steps_at_current_h + 1 < k) ratio = 1.0;
    out.h_next = std::clamp(h * ratio, ctrl.h_min, ctrl.h_max);
    out.k_next = best_k;
    return out;
}

void commit(ControllerState& ctrl, const StepProposal& p, const ControllerParams&) {
    if (p.accept) {
        ctrl.consecutive_rejections = 0;
        ctrl.steps_at_current_h = p.h_next == ctrl.h ? ctrl.steps_at_current_h + 1 : 0;
        ctrl.steps_at_current_k = p.k_next == ctrl.k ? ctrl.steps_at_current_k + 1 : 0;
    } else {
        ctrl.steps_at_current_h = 0;
        if (p.k_next != ctrl.k) {
            ctrl.consecutive_rejections = 0;
            ctrl.steps_at_current_k = 0;
        } else {
            ++ctrl.consecutive_rejections;
        }
    }
    ctrl.h = p.h_next;
    ctrl.k = p.k_next;
}

double wrms_norm(const Vec& v, const Vec& weights) {
    if (v.size() == 0) return 0.0;
    return std::sqrt((v.array() * weights.array()).square().mean());
}

Vec error_weights(const Vec& y_old, const Vec& y_new, double rtol, double atol) {
    return (atol + rtol * y_old.cwiseAbs().cwiseMax(y_new.cwiseAbs()).array()).inverse().matrix();
}

std::vector<Vec> prospective_differences(const DifferenceHistory& hist, double t_new, const Vec& y_new) {
    const auto& old = hist.y_diffs();
    const auto& times = hist.times();
    const std::size_t cap = hist.k_max() + 3;
    std::vector<Vec> nd;
    nd.push_back(y_new);
    for (std::size_t i = 1; i < std::min(old.size() + 1, cap); ++i)
        nd.push_back((nd[i - 1] - old[i - 1]) / (t_new - times[i - 1]));
    return nd;
}

std::optional<Vec> local_error_vector(const std::vector<Vec>& diffs, const std::vector<double>& times,
                                      Family family, int q, double h) {
    if (q < 1 || q > 5 || static_cast<int>(diffs.size()) < q + 2) return std::nullopt;
    double constant;
    if (auto c = step_fractions(times, q, h)) {
        constant = local_error_constant(variable_coefficients(family, q, *c), *c);
    } else {
        auto u = StepsizeFractions::uniform(q);
        constant = local_error_constant(fixed_coefficients(family, q), u);
    }
    return (factorial(q + 1) * constant * std::pow(h, q + 1)) * diffs[q + 1];
}

std::optional<double> estimate_error(const std::vector<Vec>& diffs, const std::vector<double>& times,
                                     Family family, int q, double h, const Vec& weights) {
    auto e = local_error_vector(diffs, times, family, q, h);
    if (!e) return std::nullopt;
    return wrms_norm(*e, weights);
}

JacobianSnapshot evaluate_jacobian(const OdeProblem& p, double t, const Vec& y, LinearMode mode,
                                   std::uint64_t version) {
    JacobianSnapshot snap;
    snap.version = version;
    const int n = p.dimension;
    const bool want_matrix = mode != LinearMode::Gmres;
    if (want_matrix && p.sparse_jacobian && mode != LinearMode::Dense) {
        SpMat j;
        p.sparse_jacobian(t, y, j);
        snap.op = sparse_operator(std::move(j));
    } else if (want_matrix && p.jacobian) {
        Mat j;
        p.jacobian(t, y, j);
        snap.op = dense_operator(std::move(j));
    } else if (want_matrix && p.sparse_jacobian) {
        SpMat j;
        p.sparse_jacobian(t, y, j);
        snap.op = dense_operator(Mat(j));
    } else if (p.jac_vec) {
        snap.op.dimension = n;
        auto fn = p.jac_vec;
        auto yy = std::make_shared<const Vec>(y);
        snap.op.apply = [fn, yy, t](const Vec& v, Vec& out) {
            out.resize(v.size());
            fn(t, *yy, v, out);
        };
    } else if (p.jacobian) {
        Mat j;
        p.jacobian(t, y, j);
        snap.op = dense_operator(std::move(j));
    } else if (p.sparse_jacobian) {
        SpMat j;
        p.sparse_jacobian(t, y, j);
        snap.op = sparse_operator(std::move(j));
    } else {
        // Finite-difference directional derivatives of the right-hand side.
        snap.op.dimension = n;
        auto yy = std::make_shared<const Vec>(y);
        auto f0 = std::make_shared<const Vec>(p.eval(t, y));
        auto rhs = p.rhs;
        snap.op.apply = [rhs, yy, f0, t, n](const Vec& v, Vec& out) {
            const double vn = v.norm();
            out.resize(n);
            if (vn == 0.0) {
                out.setZero();
                return;
            }
            const double eps = std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + yy->norm()) / vn;
            Vec f1(n);
            rhs(t, *yy + eps * v, f1);
            out = (f1 - *f0) / eps;
        };
    }
    return snap;
}

Vec limm_step(const DifferenceHistory& hist, const MethodCoefficients& m, const StepsizeFractions& c,
              double h, const JacobianSnapshot& jac, ShiftedSolver& solver, const Vec* f_t) {
    const int k = m.k;
    const auto& dy = hist.y_diffs();
    const auto& df = hist.f_diffs();
    if (static_cast<int>(dy.size()) < k || static_cast<int>(df.size()) < k)
        throw Error(ErrorCode::InvalidHistory, "history too short for this order");
    auto tc = transformed_coefficients(m, c);
    const double mu = m.mu(-1);
    // Solved for the increment y_{n+1} - y_n so that the cancelling sums only
    // involve O(h) terms. The y_n parts vanish by consistency (sum alpha = sum mu
    // = 0), which is used exactly rather than with the rounded table sums.
    Vec rhs = (h * tc.beta_hat[0]) * df[0];
    Vec shift = Vec::Zero(rhs.size());
    double hp = h;
    for (int i = 1; i < k; ++i) {
        rhs += (-tc.alpha_hat[i] * hp) * dy[i] + (h * tc.beta_hat[i] * hp) * df[i];
        shift += (tc.mu_hat[i] * hp / mu) * dy[i];
        hp *= h;
    }
    rhs += shift;
    if (f_t) {
        double s = 0;
        for (int i = -1; i < k; ++i) s += m.mu(i) * c(i);
        rhs += (-h * h * s) * (*f_t);
    }
    Vec w = solver.solve(jac.op, jac.version, h, mu, rhs);
    return dy[0] + (w - shift);
}

Vec limm_step_raw(const std::vector<double>& times, const std::vector<Vec>& ys,
                  const std::vector<Vec>& fs, const MethodCoefficients& m, double h,
                  const JacobianSnapshot& jac, ShiftedSolver& solver, const Vec* f_t) {
    const int k = m.k;
    if (static_cast<int>(ys.size()) < k || static_cast<int>(fs.size()) < k ||
        static_cast<int>(times.size()) < k)
        throw Error(ErrorCode::InvalidHistory, "history too short for this order");
    const double mu = m.mu(-1);
    // Increment form, as in limm_step.
    Vec rhs = Vec::Zero(ys[0].size());
    Vec shift = Vec::Zero(ys[0].size());
    for (int i = 0; i < k; ++i) {
        rhs += (h * m.beta(i)) * fs[i];
        if (i == 0) continue;
        const Vec d = ys[i] - ys[0];
        rhs -= m.alpha(i) * d;
        shift += (m.mu(i) / mu) * d;
    }
    rhs += shift;
    if (f_t) {
        double s = m.mu(-1) * h;
        for (int i = 0; i < k; ++i) s += m.mu(i) * (times[i] - times[0]);
        rhs += (h * s) * (*f_t);
    }
    Vec w = solver.solve(jac.op, jac.version, h, mu, rhs);
    return ys[0] + (w - shift);
}

NewtonResult bdf_newton(const OdeProblem& p, double t_new, const Vec& known, double gamma,
                        const Vec& predictor, const JacobianSnapshot& jac, double h_fact,
                        double mu_fact, ShiftedSolver& solver, const Vec& weights,
                        const NewtonParams& params, EvalCounters* counters) {
    NewtonResult res;
    res.y = predictor;
    Vec f(p.dimension);
    double prev = 0;
    for (int it = 0; it < params.max_iterations; ++it) {
        p.rhs(t_new, res.y, f);
        if (counters) ++counters->f_evals;
        Vec g = res.y + known - gamma * f;
        Vec delta = solver.solve(jac.op, jac.version, h_fact, mu_fact, -g);
        res.y += delta;
        ++res.iterations;
        if (!res.y.allFinite()) return res;
        const double dn = wrms_norm(delta, weights);
        if (dn <= params.tol) {
            res.converged = true;
            return res;
        }
        if (it > 0 && dn > 0.9 * prev) return res;
        prev = dn;
    }
    return res;
}

OdeProblem augment_time(const OdeProblem& p) {
    OdeProblem a;
    const int n = p.dimension;
    a.name = p.name;
    a.dimension = n + 1;
    a.t0 = p.t0;
    a.tf = p.tf;
    a.y0.resize(n + 1);
    a.y0.head(n) = p.y0;
    a.y0(n) = p.t0;
    a.autonomous = true;
    auto inner = p.rhs;
    auto dfdt = p.dfdt;
    a.rhs = [inner, n](double, const Vec& y, Vec& out) {
        Vec x = y.head(n), fx(n);
        inner(y(n), x, fx);
        out.head(n) = fx;
        out(n) = 1.0;
    };
    // Time partial: supplied or by central differences.
    auto time_partial = [inner, dfdt, n](double t, const Vec& x) {
        Vec ft(n);
        if (dfdt) {
            dfdt(t, x, ft);
            return ft;
        }
        const double d = std::cbrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, std::fabs(t));
        Vec fp(n), fm(n);
        inner(t + d, x, fp);
        inner(t - d, x, fm);
        return Vec((fp - fm) / (2.0 * d));
    };
    if (p.jacobian) {
        auto jac = p.jacobian;
        a.jacobian = [jac, time_partial, n](double, const Vec& y, Mat& out) {
            Vec x = y.head(n);
            Mat j;
            jac(y(n), x, j);
            out = Mat::Zero(n + 1, n + 1);
            out.topLeftCorner(n, n) = j;
            out.col(n).head(n) = time_partial(y(n), x);
        };
    }
    if (p.sparse_jacobian) {
        auto jac = p.sparse_jacobian;
        a.sparse_jacobian = [jac, time_partial, n](double, const Vec& y, SpMat& out) {
            Vec x = y.head(n);
            SpMat j;
            jac(y(n), x, j);
            Vec ft = time_partial(y(n), x);
            std::vector<Eigen::Triplet<double>> trip;
            for (int col = 0; col < j.outerSize(); ++col)
                for (SpMat::InnerIterator itr(j, col); itr; ++itr) trip.emplace_back(itr.row(), itr.col(), itr.value());
            for (int i = 0; i < n; ++i)
                if (ft(i) != 0.0) trip.emplace_back(i, n, ft(i));
            out.resize(n + 1, n + 1);
            out.setFromTriplets(trip.begin(), trip.end());
        };
    }
    if (p.jac_vec) {
        auto jv = p.jac_vec;
        a.jac_vec = [jv, time_partial, n](double, const Vec& y, const Vec& v, Vec& out) {
            Vec x = y.head(n), vx = v.head(n), o(n);
            jv(y(n), x, vx, o);
            out.resize(n + 1);
            out.head(n) = o + v(n) * time_partial(y(n), x);
            out(n) = 0.0;
        };
    }
    if (p.exact) {
        auto ex = p.exact;
        a.exact = [ex, n](double t) {
            Vec y(n + 1);
            y.head(n) = ex(t);
            y(n) = t;
            return y;
        };
    }
    return a;
}

bool uses_time_augmentation(const OdeProblem& p, Family family, TimeHandling mode) {
    if (p.autonomous || family == Family::Bdf) return false;
    return mode == TimeHandling::Augment || (mode == TimeHandling::Auto && !p.dfdt);
}

namespace {

struct PreparedProblem {
    OdeProblem problem;
    bool augmented = false;
    bool use_dfdt = false;
};

PreparedProblem prepare(const OdeProblem& problem, Family family, TimeHandling mode) {
    PreparedProblem out;
    if (problem.autonomous || family == Family::Bdf) {
        out.problem = problem;
        return out;
    }
    if (uses_time_augmentation(problem, family, mode)) {
        out.problem = augment_time(problem);
        out.augmented = true;
        return out;
    }
    if (!problem.dfdt)
        throw Error(ErrorCode::InvalidArgument, "time partial requested but the problem does not supply one");
    out.problem = problem;
    out.use_dfdt = true;
    return out;
}

// Newton-form extrapolation of the stored differences to t_new using order+1 terms.
Vec extrapolate(const DifferenceHistory& hist, double t_new, int terms) {
    const auto& dy = hist.y_diffs();
    const auto& times = hist.times();
    terms = std::min<int>(terms, static_cast<int>(dy.size()));
    Vec out = dy[0];
    double prod = 1.0;
    for (int i = 1; i < terms; ++i) {
        prod *= t_new - times[i - 1];
        out += prod * dy[i];
    }
    return out;
}

// Smallest h keeping c_1..c_{k-1} of the next step below 1.5 times their nominal values.
double admissible_lower(const std::vector<double>& times, int k) {
    double lo = 0.0;
    for (int i = 1; i < k && i < static_cast<int>(times.size()); ++i) lo = std::max(lo, (times[0] - times[i]) / (1.5 * i));
    return lo;
}

// Largest h keeping c_1..c_{k-1} of the next step above half their nominal values.
double admissible_upper(const std::vector<double>& times, int k) {
    double hi = std::numeric_limits<double>::infinity();
    for (int i = 1; i < k && i < static_cast<int>(times.size()); ++i) {
        const double d = times[0] - times[i];
        if (d > 0) hi = std::min(hi, d / (0.5 * i));
    }
    return hi;
}

}  // namespace

SolverReport integrate_adaptive(const OdeProblem& problem, const IntegratorOptions& opts) {
    if (!(opts.rtol > 0) || !(opts.atol > 0))
        throw Error(ErrorCode::InvalidArgument, "tolerances must be positive");
    if (opts.k_max < 1 || opts.k_max > 5) throw Error(ErrorCode::InvalidArgument, "k_max must be in 1..5");
    if (opts.jacobian_reuse < 1) throw Error(ErrorCode::InvalidArgument, "jacobian_reuse must be >= 1");

    auto prep = prepare(problem, opts.family, opts.time_handling);
    const OdeProblem& p = prep.problem;
    const int n = p.dimension;
    const double t0 = p.t0, tf = p.tf, span = tf - t0;
    const bool bdf = opts.family == Family::Bdf;

    LinearSolveConfig lin = opts.linear;
    if (lin.mode == LinearMode::Gmres && opts.gmres_tol_from_rtol) lin.gmres_tol = 0.1 * opts.rtol;
    ShiftedSolver solver(lin);

    SolverReport rep;
    EvalCounters ev;
    DifferenceHistory hist = bootstrap(p, t0, p.y0, opts.k_max, &ev);
    double t = t0;

    ControllerState ctrl;
    ctrl.rtol = opts.rtol;
    ctrl.atol = opts.atol;
    ctrl.k_max = opts.k_max;
    ctrl.h_max = opts.h_max.value_or(span);
    ctrl.h_min = opts.h_min.value_or(16.0 * std::numeric_limits<double>::epsilon() *
                                     std::max({std::fabs(t0), std::fabs(tf), span}));
    {
        Vec w = error_weights(p.y0, p.y0, opts.rtol, opts.atol);
        const double fn = wrms_norm(hist.y_diffs()[1], w);
        double h0 = span / 100.0;
        if (fn > 0) h0 = std::min(h0, 0.5 / fn);
        ctrl.h = std::clamp(opts.h0.value_or(h0), ctrl.h_min, ctrl.h_max);
    }
    ctrl.k = 1;

    auto record = [&](double tt, double hh, int kk, double err, bool acc, const Vec* yy) {
        if (!opts.trace) return;
        TraceRecord r{tt, hh, kk, err, acc, {}};
        if (yy) r.y = prep.augmented ? Vec(yy->head(problem.dimension)) : *yy;
        rep.trace.push_back(std::move(r));
    };
    record(t0, 0.0, 0, 0.0, true, &hist.y());

    JacobianSnapshot jac;
    bool have_jac = false;
    std::uint64_t version = 0;
    long accepted_since_refresh = 0;
    double gamma_fact = 0, h_fact = 0, mu_fact = 0;
    const double t_eps = 4.0 * std::numeric_limits<double>::epsilon() * std::max({std::fabs(t0), std::fabs(tf), 1.0});

    while (tf - t > t_eps) {
        // Step size for this attempt, shortened near the end of the interval.
        // Within four steps of tF the rest is split into equal steps, so the
        // final steps stay close to the previous ones.
        double h = ctrl.h;
        const double remaining = tf - t;
        bool last = false;
        if (h >= remaining * (1.0 - 1e-12)) {
            h = remaining;
            last = true;
        } else if (4.0 * h >= remaining) {
            double pieces = std::ceil(remaining / h * (1.0 - 1e-12));
            const int kk = std::min(ctrl.k, hist.real_points());
            // One piece fewer when equal pieces would fall below the band.
            if (remaining / pieces < admissible_lower(hist.times(), kk) * (1.0 + 1e-6) &&
                remaining / (pieces - 1) <= admissible_upper(hist.times(), kk) * (1.0 - 1e-6))
                pieces -= 1;
            h = remaining / pieces;
            last = pieces == 1;
            if (last) h = remaining;
        }
        if (h != ctrl.h) {
            ctrl.h = h;
            ctrl.steps_at_current_h = 0;
        }
        // Order for this attempt: the highest order not above ctrl.k whose grid is admissible.
        int k = std::min(ctrl.k, hist.real_points());
        std::optional<StepsizeFractions> c;
        for (; k >= 1; --k) {
            c = step_fractions(hist.times(), k, h);
            if (c) break;
        }
        if (k != ctrl.k) {
            ctrl.k = k;
            ctrl.steps_at_current_k = 0;
        }
        const double t_new = last ? tf : t + h;
        const auto m = variable_coefficients(opts.family, k, *c);

        Vec y_new;
        bool failed = false;
        try {
            if (!bdf) {
                const bool refresh = opts.family == Family::Limm || !have_jac ||
                                     accepted_since_refresh >= opts.jacobian_reuse;
                if (refresh) {
                    jac = evaluate_jacobian(p, t, hist.y(), lin.mode, ++version);
                    ++ev.jac_evals;
                    have_jac = true;
                    accepted_since_refresh = 0;
                }
                Vec ft;
                if (prep.use_dfdt) {
                    ft.resize(n);
                    p.dfdt(t, hist.y(), ft);
                }
                ++rep.n_linear_solves;
                y_new = limm_step(hist, m, *c, h, jac, solver, prep.use_dfdt ? &ft : nullptr);
            } else {
                auto tc = transformed_coefficients(m, *c);
                Vec known = Vec::Zero(n);
                double hp = 1.0;
                for (int i = 0; i < k; ++i) {
                    known += (tc.alpha_hat[i] * hp) * hist.y_diffs()[i];
                    hp *= h;
                }
                const double gamma = h * m.beta(-1);
                Vec pred = extrapolate(hist, t_new, k + 1);
                Vec w = error_weights(hist.y(), pred, opts.rtol, opts.atol);
                bool fresh = false;
                if (!have_jac || std::fabs(gamma / gamma_fact - 1.0) > opts.newton.refactor_change) {
                    jac = evaluate_jacobian(p, t_new, pred, lin.mode, ++version);
                    ++ev.jac_evals;
                    have_jac = true;
                    fresh = true;
                    gamma_fact = gamma;
                    h_fact = h;
                    mu_fact = m.beta(-1);
                }
                auto run = [&]() {
                    auto r = bdf_newton(p, t_new, known, gamma, pred, jac, h_fact, mu_fact, solver, w,
                                        opts.newton, &ev);
                    rep.n_newton_iters += r.iterations;
                    rep.n_linear_solves += r.iterations;
                    return r;
                };
                NewtonResult nr;
                try {
                    nr = run();
                } catch (const Error& e) {
                    if (!is_step_failure(e) || fresh) throw;
                }
                if (!nr.converged && !fresh) {
                    jac = evaluate_jacobian(p, t_new, pred, lin.mode, ++version);
                    ++ev.jac_evals;
                    gamma_fact = gamma;
                    h_fact = h;
                    mu_fact = m.beta(-1);
                    nr = run();
                }
                if (!nr.converged) throw Error(ErrorCode::StepFailure, "Newton iteration did not converge");
                y_new = std::move(nr.y);
            }
            if (!y_new.allFinite()) throw Error(ErrorCode::StepFailure, "step produced non-finite values");
        } catch (const Error& e) {
            if (!is_step_failure(e)) throw;
            failed = true;
        }

        if (failed) {
            ++rep.n_rejected;
            record(t_new, h, k, std::numeric_limits<double>::infinity(), false, nullptr);
            StepProposal prop{false, 0.5 * h, k};
            if (ctrl.consecutive_rejections + 1 >= opts.controller.rejections_before_order_drop)
                prop.k_next = std::max(1, k - 1);
            if (prop.h_next < ctrl.h_min)
                throw Error(ErrorCode::MinimumStepsize, "step size fell below the minimum at t = " + std::to_string(t));
            commit(ctrl, prop, opts.controller);
            if (bdf) have_jac = false;
            continue;
        }

        auto diffs = prospective_differences(hist, t_new, y_new);
        Vec w = error_weights(hist.y(), y_new, opts.rtol, opts.atol);
        const double err = estimate_error(diffs, hist.times(), opts.family, k, h, w).value();
        std::optional<double> err_lo, err_hi;
        if (err <= 1.0 && ctrl.steps_at_current_k + 1 >= k + 1) {
            if (k > 1) err_lo = estimate_error(diffs, hist.times(), opts.family, k - 1, h, w);
            if (k < opts.k_max) err_hi = estimate_error(diffs, hist.times(), opts.family, k + 1, h, w);
        }
        StepProposal prop = propose_next(ctrl, err_lo, err, err_hi, opts.controller);
        if (prop.accept) {
            Vec f_new = p.eval(t_new, y_new);
            ++ev.f_evals;
            hist.append(t_new, y_new, f_new);
            t = t_new;
            ++rep.n_accepted;
            ++accepted_since_refresh;
            record(t_new, h, k, err, true, &hist.y());
            // Keep the next grid inside the admissible band of the chosen order.
            if (prop.h_next > h) {
                const double hi = admissible_upper(hist.times(), prop.k_next) * (1.0 - 1e-6);
                if (prop.h_next >= hi) prop.h_next = std::max(h, std::min(prop.h_next, hi));
            } else {
                const double lo = admissible_lower(hist.times(), prop.k_next) * (1.0 + 1e-6);
                if (prop.h_next < lo) prop.h_next = std::min(h, lo);
            }
        } else {
            ++rep.n_rejected;
            record(t_new, h, k, err, false, nullptr);
            // A reduction below the band of order k needs a lower order; take the
            // order whose own estimate allows the largest step inside its band.
            if (k > 1 && prop.h_next < admissible_lower(hist.times(), k) * (1.0 + 1e-6)) {
                int best_q = 1;
                double best_h = -1.0;
                for (int q = std::min(k, prop.k_next); q >= 1; --q) {
                    const auto e = q == k ? std::optional<double>(err)
                                          : estimate_error(diffs, hist.times(), opts.family, q, h, w);
                    if (!e) continue;
                    const double factor = *e > 0 ? opts.controller.safety * std::pow(*e, -1.0 / (q + 1)) : 1.0;
                    double hq = h * std::clamp(factor, opts.controller.reject_floor, 1.0);
                    const double lo = admissible_lower(hist.times(), q) * (1.0 + 1e-6);
                    if (hq < lo) {
                        if (lo >= h || *e * std::pow(lo / h, q + 1) > 1.0) continue;
                        hq = lo;
                    }
                    if (hq > best_h) {
                        best_h = hq;
                        best_q = q;
                    }
                }
                if (best_h <= 0) best_h = h * opts.controller.reject_floor;
                prop.h_next = best_h;
                prop.k_next = best_q;
                if (prop.h_next < ctrl.h_min)
                    throw Error(ErrorCode::MinimumStepsize, "step size fell below the minimum at t = " + std::to_string(t));
            }
        }
        commit(ctrl, prop, opts.controller);
    }

    rep.final_time = t;
    rep.final_state = prep.augmented ? Vec(hist.y().head(problem.dimension)) : hist.y();
    rep.n_f_evals = ev.f_evals;
    rep.n_jac_evals = ev.jac_evals;
    rep.n_factorizations = solver.factorizations();
    rep.n_gmres_iters = solver.gmres_iterations();
    return rep;
}

Vec rk4_advance(const OdeProblem& p, double t, Vec y, double h, long n_steps) {
    const int n = p.dimension;
    Vec k1(n), k2(n), k3(n), k4(n);
    for (long s = 0; s < n_steps; ++s) {
        const double ts = t + s * h;
        p.rhs(ts, y, k1);
        p.rhs(ts + 0.5 * h, y + 0.5 * h * k1, k2);
        p.rhs(ts + 0.5 * h, y + 0.5 * h * k2, k3);
        p.rhs(ts + h, y + h * k3, k4);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return y;
}

Vec rk4_solve(const OdeProblem& p, long n_steps) {
    if (n_steps < 1) throw Error(ErrorCode::InvalidArgument, "RK4 needs at least one step");
    return rk4_advance(p, p.t0, p.y0, (p.tf - p.t0) / n_steps, n_steps);
}

FixedStepResult integrate_fixed(const OdeProblem& problem, Family family, int k, double h,
                                const FixedStepOptions& opts) {
    if (!(h > 0)) throw Error(ErrorCode::InvalidArgument, "step size must be positive");
    const double span = problem.tf - problem.t0;
    const long n_steps = std::lround(span / h);
    if (std::fabs(n_steps * h - span) > 1e-9 * span)
        throw Error(ErrorCode::InvalidArgument, "step size does not divide the time span");
    if (n_steps < k) throw Error(ErrorCode::InvalidArgument, "time span shorter than k steps");

    auto prep = prepare(problem, family, opts.time_handling);
    const OdeProblem& p = prep.problem;
    const int n = p.dimension;
    const auto m = fixed_coefficients(family, k);
    ShiftedSolver solver(opts.linear);
    FixedStepResult res;

    auto time_at = [&](long j) { return p.t0 + j * h; };
    // Most recent first.
    std::deque<double> ts;
    std::deque<Vec> ys, fs;
    auto push = [&](double t, const Vec& y) {
        ts.push_front(t);
        ys.push_front(y);
        fs.push_front(p.eval(t, y));
        ++res.n_f_evals;
        if (static_cast<int>(ts.size()) > k + 1) {
            ts.pop_back();
            ys.pop_back();
            fs.pop_back();
        }
        if (opts.keep_trajectory) {
            res.t.push_back(t);
            res.y.push_back(prep.augmented ? Vec(y.head(problem.dimension)) : y);
        }
    };
    push(time_at(0), p.y0);
    for (int j = 1; j < k; ++j)
        push(time_at(j), rk4_advance(p, time_at(j - 1), ys.front(), h / opts.starter_substeps, opts.starter_substeps));

    JacobianSnapshot jac;
    std::uint64_t version = 0;
    long since_refresh = opts.jacobian_reuse;
    for (long j = k - 1; j < n_steps; ++j) {
        const double t = time_at(j);
        const double t_new = time_at(j + 1);
        std::vector<double> tv(ts.begin(), ts.end());
        std::vector<Vec> yv(ys.begin(), ys.end()), fv(fs.begin(), fs.end());
        Vec y_new;
        if (family != Family::Bdf) {
            if (family == Family::Limm || since_refresh >= opts.jacobian_reuse) {
                jac = evaluate_jacobian(p, t, ys.front(), opts.linear.mode, ++version);
                since_refresh = 0;
            }
            Vec ft;
            if (prep.use_dfdt) {
                ft.resize(n);
                p.dfdt(t, ys.front(), ft);
            }
            y_new = limm_step_raw(tv, yv, fv, m, h, jac, solver, prep.use_dfdt ? &ft : nullptr);
            ++res.n_linear_solves;
            ++since_refresh;
        } else {
            Vec known = Vec::Zero(n);
            for (int i = 0; i < k; ++i) known += m.alpha(i) * yv[i];
            // Lagrange extrapolation through the stored points.
            Vec pred = Vec::Zero(n);
            for (std::size_t a = 0; a < tv.size(); ++a) {
                double l = 1.0;
                for (std::size_t b = 0; b < tv.size(); ++b)
                    if (b != a) l *= (t_new - tv[b]) / (tv[a] - tv[b]);
                pred += l * yv[a];
            }
            jac = evaluate_jacobian(p, t_new, pred, opts.linear.mode, ++version);
            Vec w = (1e-12 + 1e-12 * pred.cwiseAbs().array()).inverse().matrix();
            NewtonParams np;
            np.max_iterations = 50;
            np.tol = 1.0;
            EvalCounters ev;
            auto nr = bdf_newton(p, t_new, known, h * m.beta(-1), pred, jac, h, m.beta(-1), solver, w, np, &ev);
            res.n_linear_solves += nr.iterations;
            res.n_f_evals += ev.f_evals;
            if (!nr.converged) throw Error(ErrorCode::ConvergenceFailure, "Newton iteration did not converge");
            y_new = std::move(nr.y);
        }
        if (!y_new.allFinite()) throw Error(ErrorCode::StepFailure, "fixed step produced non-finite values");
        push(t_new, y_new);
    }
    res.n_steps = n_steps;
    res.final_state = prep.augmented ? Vec(ys.front().head(problem.dimension)) : ys.front();
    if (!opts.keep_trajectory) {
        res.t = {time_at(n_steps)};
        res.y = {res.final_state};
    }
    return res;
}

}  // namespace limm
