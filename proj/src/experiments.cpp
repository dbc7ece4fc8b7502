#include "limm/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "limm/errors.hpp"
#include "limm/stability.hpp"

namespace limm {

namespace {

using nlohmann::json;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double positive_number(const json& j, const char* key) {
    if (!j.at(key).is_number()) throw Error(ErrorCode::Parse, std::string(key) + " must be a number");
    const double v = j.at(key).get<double>();
    if (!(v > 0)) throw Error(ErrorCode::InvalidArgument, std::string(key) + " must be positive");
    return v;
}

int integer(const json& j, const char* key) {
    if (!j.at(key).is_number_integer()) throw Error(ErrorCode::Parse, std::string(key) + " must be an integer");
    return j.at(key).get<int>();
}

TimeHandling parse_time_handling(const std::string& s) {
    if (s == "auto") return TimeHandling::Auto;
    if (s == "augment") return TimeHandling::Augment;
    if (s == "dfdt") return TimeHandling::Dfdt;
    throw Error(ErrorCode::InvalidArgument, "unknown time_handling '" + s + "'");
}

const char* time_handling_name(TimeHandling t) {
    switch (t) {
        case TimeHandling::Augment: return "augment";
        case TimeHandling::Dfdt: return "dfdt";
        default: return "auto";
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw Error(ErrorCode::Parse, "not a number: '" + s + "'");
    return v;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::Parse, "run configuration must be a JSON object");
    RunConfig cfg;
    try {
        if (j.contains("problem")) cfg.problem = j.at("problem").get<std::string>();
        if (j.contains("params")) {
            if (!j.at("params").is_object()) throw Error(ErrorCode::Parse, "params must be an object");
            cfg.params = j.at("params");
        }
        auto& o = cfg.options;
        if (j.contains("family")) o.family = parse_family(j.at("family").get<std::string>());
        if (j.contains("rtol")) o.rtol = positive_number(j, "rtol");
        if (j.contains("atol")) o.atol = positive_number(j, "atol");
        else if (j.contains("rtol")) o.atol = o.rtol;
        if (o.rtol >= 1 || o.atol >= 1) throw Error(ErrorCode::InvalidArgument, "tolerances must lie in (0, 1)");
        if (j.contains("h0") && !j.at("h0").is_null()) o.h0 = positive_number(j, "h0");
        if (j.contains("h_min") && !j.at("h_min").is_null()) o.h_min = positive_number(j, "h_min");
        if (j.contains("h_max") && !j.at("h_max").is_null()) o.h_max = positive_number(j, "h_max");
        if (j.contains("k_max")) o.k_max = integer(j, "k_max");
        if (o.k_max < 1 || o.k_max > 5) throw Error(ErrorCode::InvalidArgument, "k_max must be in 1..5");
        if (j.contains("jacobian_reuse")) o.jacobian_reuse = integer(j, "jacobian_reuse");
        if (o.jacobian_reuse < 1) throw Error(ErrorCode::InvalidArgument, "jacobian_reuse must be >= 1");
        if (j.contains("trace")) o.trace = j.at("trace").get<bool>();
        if (j.contains("time_handling")) o.time_handling = parse_time_handling(j.at("time_handling").get<std::string>());
        if (j.contains("linear")) {
            const auto& l = j.at("linear");
            if (!l.is_object()) throw Error(ErrorCode::Parse, "linear must be an object");
            if (l.contains("mode")) o.linear.mode = parse_linear_mode(l.at("mode").get<std::string>());
            if (l.contains("gmres_tol")) {
                o.linear.gmres_tol = positive_number(l, "gmres_tol");
                o.gmres_tol_from_rtol = false;
            }
            if (l.contains("restart")) o.linear.restart = integer(l, "restart");
            if (l.contains("max_iterations")) o.linear.max_iterations = integer(l, "max_iterations");
            if (o.linear.restart < 1 || o.linear.max_iterations < 1)
                throw Error(ErrorCode::InvalidArgument, "restart and max_iterations must be >= 1");
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, std::string("invalid run configuration: ") + e.what());
    }
    const auto& o = cfg.options;
    if (o.h_min && o.h_max && *o.h_min > *o.h_max) throw Error(ErrorCode::InvalidArgument, "h_min exceeds h_max");
    return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
    const auto& o = cfg.options;
    json j = {{"problem", cfg.problem},
              {"params", cfg.params},
              {"family", family_name(o.family)},
              {"rtol", o.rtol},
              {"atol", o.atol},
              {"k_max", o.k_max},
              {"jacobian_reuse", o.jacobian_reuse},
              {"trace", o.trace},
              {"time_handling", time_handling_name(o.time_handling)}};
    if (o.h0) j["h0"] = *o.h0;
    if (o.h_min) j["h_min"] = *o.h_min;
    if (o.h_max) j["h_max"] = *o.h_max;
    json lin = {{"mode", linear_mode_name(o.linear.mode)},
                {"restart", o.linear.restart},
                {"max_iterations", o.linear.max_iterations}};
    if (!o.gmres_tol_from_rtol) lin["gmres_tol"] = o.linear.gmres_tol;
    j["linear"] = lin;
    return j;
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace) {
    long n = 0;
    for (const auto& r : trace) n = std::max<long>(n, r.y.size());
    os << "t,h,k,err_norm,accepted";
    for (long i = 0; i < n; ++i) os << ",y" << i;
    os << '\n';
    for (const auto& r : trace) {
        os << fmt17(r.t) << ',' << fmt17(r.h) << ',' << r.k << ',' << fmt17(r.err_norm) << ',' << (r.accepted ? 1 : 0);
        for (long i = 0; i < n; ++i) {
            os << ',';
            if (i < r.y.size()) os << fmt17(r.y(i));
        }
        os << '\n';
    }
}

std::vector<TraceRecord> read_trace_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw Error(ErrorCode::Parse, "empty trace");
    auto header = split_csv_line(line);
    if (header.size() < 5 || header[0] != "t" || header[1] != "h" || header[2] != "k" || header[3] != "err_norm" ||
        header[4] != "accepted")
        throw Error(ErrorCode::Parse, "trace header must start with t,h,k,err_norm,accepted");
    const std::size_t n = header.size() - 5;
    std::vector<TraceRecord> out;
    long row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw Error(ErrorCode::Parse, "trace row " + std::to_string(row) + " has the wrong number of columns");
        TraceRecord r;
        r.t = parse_double(cells[0]);
        r.h = parse_double(cells[1]);
        r.k = static_cast<int>(parse_double(cells[2]));
        r.err_norm = parse_double(cells[3]);
        r.accepted = parse_double(cells[4]) != 0.0;
        if (n > 0 && !cells[5].empty()) {
            r.y.resize(n);
            for (std::size_t i = 0; i < n; ++i) r.y(i) = parse_double(cells[5 + i]);
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<double> replay_error_norms(const OdeProblem& problem, const IntegratorOptions& opts,
                                       const std::vector<TraceRecord>& trace) {
    const bool aug = uses_time_augmentation(problem, opts.family, opts.time_handling);
    const OdeProblem p = aug ? augment_time(problem) : problem;
    auto lift = [&](const TraceRecord& r) {
        if (!aug) return r.y;
        Vec y(r.y.size() + 1);
        y << r.y, r.t;
        return y;
    };
    std::vector<double> out(trace.size(), std::numeric_limits<double>::quiet_NaN());
    if (trace.empty()) return out;
    DifferenceHistory hist = bootstrap(p, p.t0, p.y0, opts.k_max);
    for (std::size_t i = 1; i < trace.size(); ++i) {
        const auto& r = trace[i];
        if (!r.accepted || r.y.size() == 0) continue;
        Vec y = lift(r);
        auto diffs = prospective_differences(hist, r.t, y);
        Vec w = error_weights(hist.y(), y, opts.rtol, opts.atol);
        if (auto e = estimate_error(diffs, hist.times(), opts.family, r.k, r.h, w)) out[i] = *e;
        hist.append(r.t, y, p.eval(r.t, y));
    }
    return out;
}

double relative_error(const Vec& y, const Vec& reference) {
    if (y.size() != reference.size()) throw Error(ErrorCode::InvalidDimension, "state sizes differ");
    const double rn = reference.norm();
    return (y - reference).norm() / (rn > 0 ? rn : 1.0);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
        if (!(x[i] > 0) || !(y[i] > 0) || !std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
    }
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!first) first = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

ConvergenceStudy convergence_study(const OdeProblem& problem, Family family, const std::vector<int>& orders,
                                   const std::vector<double>& h_list, const Vec& reference,
                                   const FixedStepOptions& opts, int threads) {
    ConvergenceStudy out;
    for (int k : orders)
        for (double h : h_list) out.rows.push_back({h, k, std::numeric_limits<double>::quiet_NaN()});
    parallel_for(out.rows.size(), threads, [&](std::size_t i) {
        auto& row = out.rows[i];
        try {
            row.error = relative_error(integrate_fixed(problem, family, row.order, row.h, opts).final_state, reference);
        } catch (const Error&) {
        }
    });
    for (int k : orders) {
        std::vector<double> hs, es;
        for (const auto& r : out.rows)
            if (r.order == k) {
                hs.push_back(r.h);
                es.push_back(r.error);
            }
        out.slopes.emplace_back(k, loglog_slope(hs, es));
    }
    return out;
}

std::uint64_t content_hash(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

namespace {

json vec_to_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vec json_to_vec(const json& j) {
    auto v = j.get<std::vector<double>>();
    return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

ReferenceSolution reference_solution(const std::string& problem_name, const json& params,
                                     const ReferenceSettings& settings) {
    const json key = {{"problem", problem_name}, {"params", params}, {"tol", settings.tol},
                      {"rk4_steps", settings.rk4_steps}, {"format", 1}};
    const std::string key_text = key.dump();
    ReferenceSolution ref;
    std::filesystem::path file;
    if (!settings.cache_dir.empty()) {
        char name[40];
        std::snprintf(name, sizeof name, "ref-%016llx.json", static_cast<unsigned long long>(content_hash(key_text)));
        file = std::filesystem::path(settings.cache_dir) / name;
        ref.cache_file = file.string();
        std::ifstream in(file);
        if (in) {
            try {
                json cached = json::parse(in);
                if (cached.at("key") == key) {
                    ref.state = json_to_vec(cached.at("state"));
                    ref.rk4_state = json_to_vec(cached.at("rk4_state"));
                    ref.discrepancy = cached.at("discrepancy").get<double>();
                    ref.from_cache = true;
                    return ref;
                }
            } catch (const json::exception&) {
                // Unreadable cache entries are recomputed and overwritten.
            }
        }
    }
    const OdeProblem p = make_problem(problem_name, params);
    IntegratorOptions opts;
    opts.family = Family::Limm;
    opts.rtol = opts.atol = settings.tol;
    ref.state = integrate_adaptive(p, opts).final_state;
    ref.rk4_state = rk4_solve(p, settings.rk4_steps);
    ref.discrepancy = relative_error(ref.rk4_state, ref.state);
    if (!file.empty()) {
        std::filesystem::create_directories(file.parent_path());
        const json out = {{"key", key}, {"state", vec_to_json(ref.state)}, {"rk4_state", vec_to_json(ref.rk4_state)},
                          {"discrepancy", ref.discrepancy}};
        std::ofstream os(file);
        if (!os) throw Error(ErrorCode::Io, "cannot write reference cache " + file.string());
        os << out.dump() << '\n';
    }
    return ref;
}

std::vector<WorkPrecisionRecord> work_precision(const OdeProblem& problem, const std::vector<Family>& families,
                                                const std::vector<double>& tolerances, const Vec& reference,
                                                const IntegratorOptions& base, int threads) {
    std::vector<WorkPrecisionRecord> out;
    for (Family f : families)
        for (double tol : tolerances) {
            WorkPrecisionRecord r;
            r.method = family_name(f);
            r.tolerance = tol;
            out.push_back(r);
        }
    parallel_for(out.size(), threads, [&](std::size_t i) {
        auto& r = out[i];
        IntegratorOptions opts = base;
        opts.family = parse_family(r.method);
        opts.rtol = opts.atol = r.tolerance;
        opts.trace = false;
        try {
            const auto start = std::chrono::steady_clock::now();
            auto rep = integrate_adaptive(problem, opts);
            r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            r.final_error = relative_error(rep.final_state, reference);
            r.n_accepted = rep.n_accepted;
            r.n_rejected = rep.n_rejected;
            r.n_f_evals = rep.n_f_evals;
            r.n_jac_evals = rep.n_jac_evals;
            r.n_linear_solves = rep.n_linear_solves;
            r.n_newton_iters = rep.n_newton_iters;
        } catch (const std::exception& e) {
            r.ok = false;
            r.failure = e.what();
            r.final_error = std::numeric_limits<double>::quiet_NaN();
        }
    });
    return out;
}

void write_work_precision_csv(std::ostream& os, const std::vector<WorkPrecisionRecord>& records) {
    os << "method,tolerance,final_error,n_accepted,n_rejected,n_f_evals,n_jac_evals,n_linear_solves,"
          "n_newton_iters,wall_seconds,status\n";
    for (const auto& r : records) {
        std::string status = r.ok ? "ok" : "failed: " + r.failure;
        for (char& ch : status)
            if (ch == ',' || ch == '\n') ch = ';';
        os << r.method << ',' << fmt17(r.tolerance) << ',' << fmt17(r.final_error) << ',' << r.n_accepted << ','
           << r.n_rejected << ',' << r.n_f_evals << ',' << r.n_jac_evals << ',' << r.n_linear_solves << ','
           << r.n_newton_iters << ',' << fmt17(r.wall_seconds) << ',' << status << '\n';
    }
}

std::vector<double> trace_product_norm(const std::vector<TraceRecord>& trace, Family family, double lambda,
                                       int k_max) {
    std::vector<double> times;
    std::vector<int> orders;
    for (const auto& r : trace) {
        if (!r.accepted) continue;
        if (times.empty()) {
            // The initial row carries k = 0; otherwise infer t0 from the first step.
            times.push_back(r.k == 0 ? r.t : r.t - r.h);
            if (r.k == 0) continue;
        }
        times.push_back(r.t);
        orders.push_back(r.k);
    }
    if (times.empty()) return {};
    return product_norm(family, times, orders, lambda, k_max);
}

}  // namespace limm
