#include "limm/history.hpp"

#include <cmath>
#include <limits>

#include "limm/errors.hpp"

namespace limm {

Vec divided_difference(const std::vector<std::pair<double, Vec>>& points) {
    if (points.empty()) throw Error(ErrorCode::InvalidArgument, "no points");
    std::vector<Vec> level;
    for (auto& p : points) level.push_back(p.second);
    const std::size_t m = points.size();
    for (std::size_t order = 1; order < m; ++order) {
        for (std::size_t i = 0; i + order < m; ++i) {
            const double dt = points[i].first - points[i + order].first;
            if (dt == 0.0) throw Error(ErrorCode::DegenerateGrid, "repeated time in divided difference");
            level[i] = (level[i] - level[i + 1]) / dt;
        }
    }
    return level[0];
}

DifferenceHistory DifferenceHistory::from_point(double t0, const Vec& y0, const Vec& f0, int k_max) {
    DifferenceHistory h;
    h.k_max_ = k_max;
    h.points_ = 1;
    h.times_ = {t0};
    h.y_ = {y0};
    h.f_ = {f0};
    return h;
}

DifferenceHistory DifferenceHistory::seeded(double t0, const Vec& y0, const Vec& f0, const Vec& ypp0,
                                            int k_max) {
    DifferenceHistory h;
    h.k_max_ = k_max;
    h.points_ = 1;
    h.times_ = {t0, t0, t0};
    h.y_ = {y0, f0, 0.5 * ypp0};
    h.f_ = {f0};
    return h;
}

void DifferenceHistory::append(double t, const Vec& y, const Vec& f) {
    if (!(t > times_.front())) throw Error(ErrorCode::InvalidHistory, "appended time must increase");
    const std::size_t y_cap = k_max_ + 3;
    const std::size_t f_cap = std::max(1, k_max_);

    std::vector<Vec> ny;
    ny.reserve(std::min(y_.size() + 1, y_cap));
    ny.push_back(y);
    for (std::size_t i = 1; i < std::min(y_.size() + 1, y_cap); ++i)
        ny.push_back((ny[i - 1] - y_[i - 1]) / (t - times_[i - 1]));

    std::vector<Vec> nf;
    nf.push_back(f);
    for (std::size_t i = 1; i < std::min(f_.size() + 1, f_cap); ++i)
        nf.push_back((nf[i - 1] - f_[i - 1]) / (t - times_[i - 1]));

    times_.insert(times_.begin(), t);
    if (times_.size() > ny.size()) times_.resize(ny.size());
    y_ = std::move(ny);
    f_ = std::move(nf);
    ++points_;
}

DifferenceHistory bootstrap(const OdeProblem& p, double t0, const Vec& y0, int k_max,
                            EvalCounters* counters) {
    Vec f0 = p.eval(t0, y0);
    if (counters) ++counters->f_evals;
    Vec jf(p.dimension);
    if (p.jac_vec) {
        p.jac_vec(t0, y0, f0, jf);
    } else {
        const double fnorm = f0.norm();
        if (fnorm == 0.0) {
            jf.setZero();
        } else {
            const double eps = std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + y0.norm()) / fnorm;
            jf = (p.eval(t0, y0 + eps * f0) - f0) / eps;
            if (counters) ++counters->f_evals;
        }
    }
    if (p.dfdt) {
        Vec ft(p.dimension);
        p.dfdt(t0, y0, ft);
        jf += ft;
    }
    return DifferenceHistory::seeded(t0, y0, f0, jf, k_max);
}

}  // namespace limm
