#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "droopnet/scenario.hpp"

namespace {

std::string default_out_dir() {
    if (const char* env = std::getenv("DROOPNET_OUT")) {
        return env;
    }
    return "out";
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path);
    out << doc.dump(2) << "\n";
}

struct CommonOptions {
    std::string file;
    std::string out_dir = default_out_dir();
    double dt = 0.0;
    std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("file", opts.file, "scenario JSON file")->required();
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--dt", opts.dt, "override the integration step");
    cmd->add_option("--seed", opts.seed, "seed recorded in the report");
}

droopnet::Scenario load(const CommonOptions& opts) {
    droopnet::Scenario s = droopnet::load_scenario(opts.file);
    if (opts.dt > 0.0) {
        s.sim.dt = opts.dt;
    }
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"simulation and rate certification for power-limiting droop control"};
    app.require_subcommand(1);

    CommonOptions run_opts, compare_opts, certify_opts, oracle_opts;
    bool tuned = false;
    bool with_certificate = false;

    CLI::App* cmd_run = app.add_subcommand("run", "simulate a scenario and write artifacts");
    add_common(cmd_run, run_opts);
    cmd_run->add_flag("--tuned", tuned, "apply the scenario's tuning scale to the gains");
    cmd_run->add_flag("--certify", with_certificate, "embed the rate certificate in the report");

    CLI::App* cmd_compare =
        app.add_subcommand("compare", "run both controllers from identical conditions");
    add_common(cmd_compare, compare_opts);

    CLI::App* cmd_certify =
        app.add_subcommand("certify", "emit the rate certificate, gain window and advisories");
    add_common(cmd_certify, certify_opts);

    CLI::App* cmd_oracle = app.add_subcommand("oracle", "solve and print the optimizer");
    add_common(cmd_oracle, oracle_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_run->parsed()) {
            const droopnet::Scenario s = load(run_opts);
            const droopnet::RunReport report = droopnet::run_scenario(
                s, run_opts.out_dir, tuned, run_opts.seed, with_certificate);
            std::cout << droopnet::report_to_json(report).dump(2) << "\n";
        } else if (cmd_compare->parsed()) {
            const droopnet::Scenario s = load(compare_opts);
            const droopnet::CompareReport cmp =
                droopnet::compare_scenario(s, compare_opts.out_dir);
            std::cout << nlohmann::json{
                             {"projection_free", droopnet::report_to_json(cmp.projection_free)},
                             {"projection_based",
                              droopnet::report_to_json(cmp.projection_based)}}
                             .dump(2)
                      << "\n";
        } else if (cmd_certify->parsed()) {
            const droopnet::Scenario s = load(certify_opts);
            const nlohmann::json doc = droopnet::certify_scenario(s);
            write_json_file(std::filesystem::path(certify_opts.out_dir) / "certificate.json",
                            doc);
            std::cout << doc.dump(2) << "\n";
        } else if (cmd_oracle->parsed()) {
            const droopnet::Scenario s = load(oracle_opts);
            const nlohmann::json doc = droopnet::oracle_scenario(s);
            write_json_file(std::filesystem::path(oracle_opts.out_dir) / "oracle.json", doc);
            std::cout << doc.dump(2) << "\n";
        }
    } catch (const droopnet::ParseError& err) {
        std::cerr << "parse error: " << err.what() << "\n";
        return 2;
    } catch (const droopnet::ValidationError& err) {
        std::cerr << "validation error: " << err.what() << "\n";
        return 2;
    } catch (const droopnet::Error& err) {
        std::cerr << "numerical error: " << err.what() << "\n";
        return 3;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 3;
    }
    return 0;
}
