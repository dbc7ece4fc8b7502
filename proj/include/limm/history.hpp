#pragma once

#include <utility>
#include <vector>

#include "limm/linalg.hpp"
#include "limm/problems.hpp"

namespace limm {

/// Divided difference of order points.size()-1 by the recursive definition.
Vec divided_difference(const std::vector<std::pair<double, Vec>>& points);

/// Newton divided differences over the most recent grid points.
/// y_diffs[i] = delta^i y[t_n, ..., t_{n-i}] and f_diffs[i] likewise for f.
class DifferenceHistory {
public:
    DifferenceHistory() = default;

    /// A single accepted point; higher differences appear as points are appended.
    static DifferenceHistory from_point(double t0, const Vec& y0, const Vec& f0, int k_max);

    /// Confluent start at t0: delta^1 y = f0 and delta^2 y = y''(t0)/2.
    static DifferenceHistory seeded(double t0, const Vec& y0, const Vec& f0, const Vec& ypp0,
                                    int k_max);

    void append(double t, const Vec& y, const Vec& f);

    const std::vector<double>& times() const { return times_; }
    const std::vector<Vec>& y_diffs() const { return y_; }
    const std::vector<Vec>& f_diffs() const { return f_; }
    double t() const { return times_.front(); }
    const Vec& y() const { return y_.front(); }
    /// Number of distinct accepted grid points currently represented.
    int real_points() const { return std::min<int>(points_, static_cast<int>(times_.size())); }
    long total_points() const { return points_; }
    int k_max() const { return k_max_; }

    int k_current = 1;

private:
    int k_max_ = 5;
    long points_ = 0;
    std::vector<double> times_;
    std::vector<Vec> y_;
    std::vector<Vec> f_;
};

struct EvalCounters {
    long f_evals = 0;
    long jac_evals = 0;
};

/// Seeded history at the problem's initial point; y'' uses J f0 (+ f_t).
DifferenceHistory bootstrap(const OdeProblem& p, double t0, const Vec& y0, int k_max,
                            EvalCounters* counters = nullptr);

}  // namespace limm
