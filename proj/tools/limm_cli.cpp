#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "limm/limm.h"

using nlohmann::json;

namespace {

struct Failure {
    limm_status status;
    std::string message;
};

void check(limm_status s) {
    if (s != LIMM_OK) throw Failure{s, limm_last_error()};
}

struct Text {
    char* p = nullptr;
    ~Text() { limm_string_free(p); }
    json parse() const { return p ? json::parse(p) : json::object(); }
};

using MethodPtr = std::unique_ptr<limm_method, decltype(&limm_method_destroy)>;

MethodPtr fixed_method(const std::string& family, int k) {
    limm_method* m = nullptr;
    check(limm_method_fixed(family.c_str(), k, &m));
    return {m, &limm_method_destroy};
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Output stream for --out, or stdout.
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_.open(path);
            if (!file_) throw Failure{LIMM_ERR_IO, "cannot open " + path + " for writing"};
        }
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

private:
    std::ofstream file_;
};

const std::vector<std::string> all_families = {"limm", "limmw", "bdf"};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Linearly implicit multistep integrators: verification, stability and experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_path;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    app.add_option("--config", config_path, "JSON configuration file");
    app.add_option("--out", out_path, "Output file (CSV); stdout when omitted");
    app.add_option("--seed", seed, "Seed for random grids");
    app.add_option("--threads", threads, "Worker threads for sweeps")->check(CLI::PositiveNumber);

    std::vector<std::string> families;
    std::vector<int> orders;

    auto* verify = app.add_subcommand("verify", "Check order conditions of all methods on uniform and random grids");
    int samples = 100;
    double band = 0.45, tol = 1e-8, perturb = 0.0;
    verify->add_option("--family", families, "limm, limmw or bdf (repeatable)");
    verify->add_option("--k", orders, "Orders to check (repeatable)");
    verify->add_option("--samples", samples, "Random grids per method");
    verify->add_option("--band", band, "Relative half-width of the random grid band, below 0.5");
    verify->add_option("--tol", tol, "Residual threshold");
    verify->add_option("--perturb-alpha0", perturb, "Add this to alpha_0 before checking");

    auto* stability = app.add_subcommand("stability", "Root locus samples theta,re_z,im_z");
    std::string family = "limm";
    int k = 1, n_samples = 8192;
    stability->add_option("--family,family", family)->required();
    stability->add_option("--k,k", k)->required();
    stability->add_option("--samples", n_samples);

    auto* angle = app.add_subcommand("angle", "Stability angle and error constant");
    std::string angle_family;
    int angle_k = 0;
    angle->add_option("family", angle_family, "Family (all when omitted)");
    angle->add_option("k", angle_k, "Order (all when omitted)");

    auto* matstab = app.add_subcommand("matstab", "Product norm of stability matrices along a trace");
    std::string trace_path, matstab_family = "limm";
    double lambda = -1.0;
    int k_max = 5;
    matstab->add_option("--trace", trace_path)->required()->check(CLI::ExistingFile);
    matstab->add_option("--lambda", lambda);
    matstab->add_option("--family", matstab_family);
    matstab->add_option("--k-max", k_max);

    auto* converge = app.add_subcommand("converge", "Fixed-step convergence study");
    std::string problem;
    std::vector<int> h_exponents;
    converge->add_option("--problem", problem);
    converge->add_option("--family", families);
    converge->add_option("--orders", orders)->delimiter(',');
    converge->add_option("--h-exponents", h_exponents, "lo,hi for h = 2^-lo .. 2^-hi")->delimiter(',')->expected(2);

    auto* solve = app.add_subcommand("solve", "Adaptive integration of one problem");
    std::optional<double> rtol, atol;
    std::string solve_family;
    bool trace = false;
    solve->add_option("--problem", problem);
    solve->add_option("--family", solve_family);
    solve->add_option("--rtol", rtol);
    solve->add_option("--atol", atol);
    solve->add_flag("--trace", trace, "Record the step trace (written to --out)");

    auto* wpd = app.add_subcommand("wpd", "Work-precision sweep against a cached reference");
    std::vector<double> tolerances;
    std::string cache_dir;
    wpd->add_option("--problem", problem);
    wpd->add_option("--methods", families)->delimiter(',');
    wpd->add_option("--tolerances", tolerances)->delimiter(',');
    wpd->add_option("--cache-dir", cache_dir);

    CLI11_PARSE(app, argc, argv);

    try {
        json cfg = json::object();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw Failure{LIMM_ERR_IO, "cannot open " + config_path};
            cfg = json::parse(in);
        }
        if (seed) cfg["seed"] = *seed;
        cfg["threads"] = cfg.value("threads", threads);
        if (app.count("--threads")) cfg["threads"] = threads;
        const char* out = out_path.empty() ? nullptr : out_path.c_str();
        // Summaries go to stdout unless the CSV already does.
        std::ostream& info = out ? std::cout : std::cerr;

        if (*verify) {
            if (!families.empty()) cfg["families"] = families;
            if (!orders.empty()) cfg["orders"] = orders;
            if (verify->count("--samples")) cfg["samples"] = samples;
            if (verify->count("--band")) cfg["band"] = band;
            if (verify->count("--tol")) cfg["tol"] = tol;
            if (verify->count("--perturb-alpha0")) cfg["perturb_alpha0"] = perturb;
            Text summary;
            check(limm_run_verify(cfg.dump().c_str(), out, &summary.p));
            json s = summary.parse();
            if (!s.at("ok").get<bool>()) {
                std::cerr << "verify: residual above tolerance: " << s.at("worst").dump() << '\n';
                return 1;
            }
            info << s.dump() << '\n';
        } else if (*stability) {
            auto m = fixed_method(family, k);
            std::vector<double> th(n_samples), re(n_samples), im(n_samples);
            check(limm_method_root_locus(m.get(), n_samples, th.data(), re.data(), im.data()));
            Output o(out_path);
            o.stream() << "theta,re_z,im_z\n";
            for (int i = 0; i < n_samples; ++i)
                o.stream() << fmt17(th[i]) << ',' << fmt17(re[i]) << ',' << fmt17(im[i]) << '\n';
        } else if (*angle) {
            std::vector<std::string> fams = angle_family.empty() ? all_families : std::vector<std::string>{angle_family};
            std::vector<int> ks = angle_k > 0 ? std::vector<int>{angle_k} : std::vector<int>{1, 2, 3, 4, 5};
            Output o(out_path);
            o.stream() << "family,k,phi_degrees,error_constant\n";
            for (const auto& f : fams)
                for (int kk : ks) {
                    auto m = fixed_method(f, kk);
                    double phi = 0, c = 0;
                    check(limm_method_stability_angle(m.get(), &phi, nullptr));
                    check(limm_method_error_constant(m.get(), &c));
                    char line[128];
                    std::snprintf(line, sizeof line, "%s,%d,%.4f,%.6f\n", f.c_str(), kk, phi, c);
                    o.stream() << line;
                }
        } else if (*matstab) {
            Text summary;
            check(limm_run_matstab(trace_path.c_str(), matstab_family.c_str(), lambda, k_max, out, &summary.p));
            info << summary.parse().dump() << '\n';
        } else if (*converge) {
            if (!problem.empty()) cfg["problem"] = problem;
            if (!families.empty()) cfg["families"] = families;
            if (!orders.empty()) cfg["orders"] = orders;
            if (!h_exponents.empty()) cfg["h_exponents"] = h_exponents;
            Text summary;
            check(limm_run_convergence(cfg.dump().c_str(), out, &summary.p));
            info << summary.parse().dump() << '\n';
        } else if (*solve) {
            if (!problem.empty()) cfg["problem"] = problem;
            if (!solve_family.empty()) cfg["family"] = solve_family;
            if (rtol) cfg["rtol"] = *rtol;
            if (atol) cfg["atol"] = *atol;
            if (trace) cfg["trace"] = true;
            const std::string name = cfg.value("problem", std::string("dahlquist"));
            const std::string params = cfg.value("params", json::object()).dump();
            limm_problem* p = nullptr;
            check(limm_problem_create(name.c_str(), params.c_str(), &p));
            std::unique_ptr<limm_problem, decltype(&limm_problem_destroy)> pp(p, &limm_problem_destroy);
            json opts = cfg;
            for (const char* key : {"problem", "params", "threads", "seed"}) opts.erase(key);
            limm_report* r = nullptr;
            check(limm_solve(p, opts.dump().c_str(), &r));
            std::unique_ptr<limm_report, decltype(&limm_report_destroy)> rr(r, &limm_report_destroy);
            if (cfg.value("trace", false)) check(limm_report_write_trace_csv(r, out));
            Text summary;
            check(limm_report_summary_json(r, &summary.p));
            (cfg.value("trace", false) ? info : std::cout) << summary.parse().dump() << '\n';
        } else if (*wpd) {
            if (!problem.empty()) cfg["problem"] = problem;
            if (!families.empty()) cfg["methods"] = families;
            if (!tolerances.empty()) cfg["tolerances"] = tolerances;
            if (!cache_dir.empty()) cfg["reference"]["cache_dir"] = cache_dir;
            if (!cfg.contains("problem")) cfg["problem"] = "grayscott";
            Text summary;
            check(limm_run_work_precision(cfg.dump().c_str(), out, &summary.p));
            info << summary.parse().dump() << '\n';
        }
    } catch (const Failure& f) {
        std::cerr << "error (" << limm_status_name(f.status) << "): " << f.message << '\n';
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "error (parse): " << e.what() << '\n';
        return 2;
    }
    return 0;
}
