#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "droopnet/scenario.hpp"

using namespace droopnet;

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::filesystem::path repo_path(const char* relative) {
    return std::filesystem::path(DROOPNET_SOURCE_DIR) / relative;
}

std::filesystem::path temp_dir(const char* name) {
    const auto dir = std::filesystem::temp_directory_path() / "droopnet_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("scenario round trip") {
    const Scenario s = load_scenario(repo_path("scenarios/ieee9_three_vsc.json").string());
    CHECK(s.node_count == 3);
    CHECK(s.rho == doctest::Approx(1.02));
    CHECK(s.events.size() == 2);
    REQUIRE(s.tuning_s.has_value());
    CHECK(*s.tuning_s == doctest::Approx(1.66));

    const Scenario reparsed = parse_scenario(serialize_scenario(s));
    CHECK(s == reparsed);
    // serialization is a fixed point once parsed
    CHECK(serialize_scenario(s) == serialize_scenario(reparsed));
}

TEST_CASE("scenario validation failures") {
    const std::string base = read_file(repo_path("scenarios/two_node_smoke.json"));

    SUBCASE("unknown controller") {
        std::string text = base;
        const auto pos = text.find("projection_free");
        text.replace(pos, std::string("projection_free").size(), "mystery");
        CHECK_THROWS_AS(parse_scenario(text), ParseError);
    }
    SUBCASE("load sum above the capacity names the violated inequality") {
        Scenario s = parse_scenario(base);
        s.loads = Eigen::VectorXd::Constant(2, 5.0);
        try {
            validate_scenario(s);
            FAIL("expected a validation error");
        } catch (const ValidationError& err) {
            CHECK(std::string(err.what()).find("sum(P_L)") != std::string::npos);
        }
    }
    SUBCASE("events must be increasing and inside the horizon") {
        Scenario s = parse_scenario(base);
        LoadStep a{2.0, Eigen::VectorXd::Zero(2)};
        LoadStep b{1.0, Eigen::VectorXd::Zero(2)};
        s.events = {a, b};
        CHECK_THROWS_AS(validate_scenario(s), ValidationError);
        s.events = {LoadStep{99.0, Eigen::VectorXd::Zero(2)}};
        CHECK_THROWS_AS(validate_scenario(s), ValidationError);
    }
    SUBCASE("missing fields are parse errors") {
        CHECK_THROWS_AS(parse_scenario("{}"), ParseError);
        CHECK_THROWS_AS(parse_scenario("not json"), ParseError);
    }
}

TEST_CASE("decay fit") {
    SUBCASE("exact exponential") {
        std::vector<double> times, distances;
        for (int k = 0; k < 200; ++k) {
            const double t = 0.05 * k;
            times.push_back(t);
            distances.push_back(std::exp(-2.0 * t));
        }
        const DecayFit fit = fit_decay_rate(times, distances);
        CHECK(fit.beta_hat == doctest::Approx(2.0).epsilon(1e-6));
        CHECK(fit.r_squared >= 1.0 - 1e-9);
    }
    SUBCASE("flat trajectory at the optimum") {
        std::vector<double> times, distances;
        for (int k = 0; k < 100; ++k) {
            times.push_back(0.1 * k);
            distances.push_back(1e-14);
        }
        CHECK_THROWS_AS(fit_decay_rate(times, distances), InsufficientDecay);
    }
}

TEST_CASE("run writes the expected artifacts and is deterministic") {
    const Scenario s = load_scenario(repo_path("scenarios/two_node_smoke.json").string());
    const auto dir_a = temp_dir("run_a");
    const auto dir_b = temp_dir("run_b");
    const RunReport report = run_scenario(s, dir_a.string());
    run_scenario(s, dir_b.string());

    CHECK(std::filesystem::exists(dir_a / "trajectory.csv"));
    CHECK(std::filesystem::exists(dir_a / "report.json"));
    CHECK(std::filesystem::exists(dir_a / "plotdata" / "frequencies.csv"));
    CHECK(std::filesystem::exists(dir_a / "plotdata" / "powers.csv"));
    CHECK(std::filesystem::exists(dir_a / "plotdata" / "duals.csv"));
    CHECK(read_file(dir_a / "trajectory.csv") == read_file(dir_b / "trajectory.csv"));

    // the smoke scenario saturates node 0 at its upper limit
    CHECK(report.final_active_hi == std::vector<int>{0});
    CHECK(report.converged);
    CHECK(std::abs(report.omega_s_measured - report.omega_s_formula) <= 1e-4);
}

TEST_CASE("trajectory golden file") {
    const Scenario s = load_scenario(repo_path("scenarios/two_node_smoke.json").string());
    const auto dir = temp_dir("golden");
    run_scenario(s, dir.string());
    const std::string fresh = read_file(dir / "trajectory.csv");
    const std::string golden = read_file(repo_path("tests/data/golden_two_node.csv"));
    CHECK(fresh == golden);
}

TEST_CASE("controllers agree on the steady state") {
    Scenario s = load_scenario(repo_path("scenarios/two_node_smoke.json").string());
    s.sim.t_end = 40.0;
    const auto dir = temp_dir("compare");
    const CompareReport cmp = compare_scenario(s, dir.string());
    REQUIRE_FALSE(cmp.projection_free.final_active_hi.empty());
    CHECK(cmp.projection_free.final_active_hi == cmp.projection_based.final_active_hi);
    CHECK(cmp.projection_free.final_active_lo == cmp.projection_based.final_active_lo);
    CHECK(std::abs(cmp.projection_free.omega_s_measured -
                   cmp.projection_based.omega_s_measured) <= 1e-4);
    CHECK(std::filesystem::exists(dir / "trajectory_projection_free.csv"));
    CHECK(std::filesystem::exists(dir / "trajectory_projection_based.csv"));
    CHECK(std::filesystem::exists(dir / "compare.json"));
}

TEST_CASE("oracle and certificate documents") {
    const Scenario s = load_scenario(repo_path("scenarios/ieee9_three_vsc.json").string());
    const nlohmann::json oracle = oracle_scenario(s);
    CHECK(oracle["active_hi"] == std::vector<int>{1});
    CHECK(oracle["kkt_residual"].get<double>() <= 1e-8);

    const nlohmann::json cert = certify_scenario(s);
    CHECK(cert["certificate"]["rho"].get<double>() == doctest::Approx(1.02));
    CHECK(cert["certificate"]["beta"].get<double>() > 0.0);
    const std::string binding = cert["certificate"]["binding"].get<std::string>();
    CHECK((binding == "18a" || binding == "18b"));
    CHECK(cert.contains("rho_window"));
    CHECK(cert.contains("edge_advisories"));
    REQUIRE(cert.contains("tuning"));
    CHECK(cert["tuning"]["beta_after"].get<double>() >
          cert["tuning"]["beta_before"].get<double>());
}

TEST_CASE("uniform-weight scenario yields edge advisories") {
    const Scenario s = load_scenario(repo_path("scenarios/four_vsc_uniform.json").string());
    const nlohmann::json doc = certify_scenario(s);
    const auto& advisories = doc["edge_advisories"];
    REQUIRE(advisories.size() == 2);  // candidates (1,3) and (2,3)
    for (const auto& adv : advisories) {
        CHECK(adv["used_uniform_weight_rule"].get<bool>());
        CHECK(adv["rho_condition_holds"].get<bool>());
        CHECK(adv["alpha_after"].get<double>() >= adv["alpha_before"].get<double>());
        CHECK(adv["beta_after_model"].get<double>() >=
              adv["beta_before"].get<double>() - 1e-15);
    }
}

TEST_CASE("edge controller run writes edge-state columns") {
    Scenario s = load_scenario(repo_path("scenarios/two_node_smoke.json").string());
    s.sim.controller = Controller::kEdgePrimalDual;
    const auto dir = temp_dir("edge_run");
    const RunReport report = run_scenario(s, dir.string());
    const std::string csv = read_file(dir / "trajectory.csv");
    CHECK(csv.rfind("t,P_0,P_1,eta_0,mu_lo_0,mu_lo_1,mu_hi_0,mu_hi_1", 0) == 0);
    CHECK(report.final_active_hi == std::vector<int>{0});
}
