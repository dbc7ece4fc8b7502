#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "limm/limm.h"

using nlohmann::json;

TEST_CASE("status names and errors") {
    CHECK(std::string(limm_status_name(LIMM_OK)) == "ok");
    limm_method* m = nullptr;
    CHECK(limm_method_fixed("limm", 9, &m) == LIMM_ERR_NOT_AVAILABLE);
    CHECK(m == nullptr);
    CHECK(std::strlen(limm_last_error()) > 0);
    CHECK(limm_method_fixed("nope", 2, &m) == LIMM_ERR_INVALID_ARGUMENT);
    CHECK(limm_method_fixed("limm", 2, nullptr) == LIMM_ERR_INVALID_ARGUMENT);
    limm_problem* p = nullptr;
    CHECK(limm_problem_create("lorenz96", "{\"n\": 2}", &p) == LIMM_ERR_INVALID_DIMENSION);
    CHECK(limm_problem_create("lorenz96", "{bad", &p) == LIMM_ERR_PARSE);
}

TEST_CASE("methods through the C interface") {
    limm_method* m = nullptr;
    REQUIRE(limm_method_fixed("limmw", 2, &m) == LIMM_OK);
    int k = 0;
    CHECK(limm_method_order(m, &k) == LIMM_OK);
    CHECK(k == 2);
    double a[3], b[3], mu[3];
    CHECK(limm_method_coefficients(m, a, b, mu) == LIMM_OK);
    CHECK(a[0] == 1.0);
    double r = 1;
    CHECK(limm_method_verify(m, nullptr, &r) == LIMM_OK);
    CHECK(r <= 1e-12);
    double phi = 0, c = 0;
    int a_stable = 0;
    CHECK(limm_method_stability_angle(m, &phi, &a_stable) == LIMM_OK);
    CHECK(a_stable == 1);
    CHECK(limm_method_error_constant(m, &c) == LIMM_OK);
    CHECK(c == doctest::Approx(0.424915).epsilon(1e-5));
    CHECK(limm_method_set_coefficient(m, 'a', 0, a[1] + 1e-3) == LIMM_OK);
    CHECK(limm_method_verify(m, nullptr, &r) == LIMM_OK);
    CHECK(r == doctest::Approx(1e-3).epsilon(1e-6));
    CHECK(limm_method_set_coefficient(m, 'q', 0, 0) == LIMM_ERR_INVALID_ARGUMENT);
    limm_method_destroy(m);

    const double cbad[] = {2.0};
    CHECK(limm_method_variable("limm", 2, cbad, 1, &m) == LIMM_ERR_INADMISSIBLE);
    const double cgood[] = {1.2};
    REQUIRE(limm_method_variable("limm", 2, cgood, 1, &m) == LIMM_OK);
    const double grid[] = {1.2, 2.5};
    CHECK(limm_method_verify(m, grid, &r) == LIMM_OK);
    CHECK(r <= 1e-10);
    limm_method_destroy(m);

    std::vector<double> draws(3 * 10);
    CHECK(limm_random_fractions(7, 3, 10, 0.45, draws.data()) == LIMM_OK);
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 3; ++j) CHECK(std::fabs(draws[3 * i + j] - (j + 1)) < 0.45 * (j + 1));
}

TEST_CASE("solving through the C interface") {
    limm_problem* p = nullptr;
    REQUIRE(limm_problem_create("dahlquist", "{\"lambda\": -1}", &p) == LIMM_OK);
    int n = 0;
    CHECK(limm_problem_dimension(p, &n) == LIMM_OK);
    CHECK(n == 1);
    limm_report* r = nullptr;
    REQUIRE(limm_solve(p, "{\"rtol\": 1e-8, \"family\": \"limm\"}", &r) == LIMM_OK);
    double t = 0, y = 0;
    CHECK(limm_report_final_state(r, &t, &y) == LIMM_OK);
    CHECK(t == 1.0);
    CHECK(std::fabs(y - std::exp(-1.0)) <= 1e-6);
    char* s = nullptr;
    REQUIRE(limm_report_summary_json(r, &s) == LIMM_OK);
    auto j = json::parse(s);
    limm_string_free(s);
    CHECK(j.at("n_linear_solves").get<long>() == j.at("n_accepted").get<long>() + j.at("n_rejected").get<long>());
    limm_report_destroy(r);

    CHECK(limm_solve(p, "{\"rtol\": 5}", &r) == LIMM_ERR_INVALID_ARGUMENT);
    double yf = 0;
    CHECK(limm_solve_fixed(p, "limm", 1, 0.1, &yf) == LIMM_OK);
    CHECK(yf == doctest::Approx(std::pow(1 / 1.1, 10)).epsilon(1e-14));
    limm_problem_destroy(p);
}

TEST_CASE("experiment runners through the C interface") {
    char* s = nullptr;
    const std::string csv = "capi_verify.csv";
    REQUIRE(limm_run_verify("{\"samples\": 5}", csv.c_str(), &s) == LIMM_OK);
    CHECK(json::parse(s).at("ok").get<bool>());
    limm_string_free(s);
    REQUIRE(limm_run_verify("{\"samples\": 2, \"perturb_alpha0\": 1e-3}", csv.c_str(), &s) == LIMM_OK);
    CHECK_FALSE(json::parse(s).at("ok").get<bool>());
    limm_string_free(s);
    std::remove(csv.c_str());

    REQUIRE(limm_run_convergence(R"({"problem": "dahlquist", "families": ["limm"], "orders": [1, 2],
        "h_exponents": [6, 8]})", "capi_conv.csv", &s) == LIMM_OK);
    auto j = json::parse(s);
    limm_string_free(s);
    CHECK(j.at("reference") == "exact");
    CHECK(j.at("slopes").size() == 2);
    std::remove("capi_conv.csv");

    CHECK(limm_run_matstab("does-not-exist.csv", "limm", -1, 5, nullptr, &s) == LIMM_ERR_IO);
}
