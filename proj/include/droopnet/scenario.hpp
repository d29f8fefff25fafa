#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "droopnet/dynamics.hpp"
#include "droopnet/rates.hpp"

namespace droopnet {

struct SimSettings {
    double t_end = 10.0;
    double dt = 1e-3;
    int record_every = 10;
    Controller controller = Controller::kProjectionFree;
};

/// One study as described by a scenario file. Power quantities (loads,
/// setpoints, limits, event deltas) are stored exactly as entered and divided
/// by base_mva when the per-unit problem is built, so megawatt tables can be
/// entered directly with base_mva = 100. Gains are per-unit as entered.
struct Scenario {
    double base_mva = 100.0;
    int node_count = 0;
    std::vector<Edge> edges;
    Eigen::VectorXd loads, setpoints, p_lo, p_hi;
    Eigen::VectorXd droop, k_i, k_p;
    double rho = 1.0;
    std::vector<LoadStep> events;  ///< deltas in entered units
    SimSettings sim;
    std::optional<double> tuning_s;
    std::optional<NodalState> initial;  ///< defaults to all zeros

    [[nodiscard]] PowerNetwork network() const;
    [[nodiscard]] FlowProblem problem() const;
    [[nodiscard]] std::vector<LoadStep> events_pu() const;
    [[nodiscard]] NodalState initial_state() const;
};

bool operator==(const Scenario& a, const Scenario& b);

std::string controller_name(Controller c);
Controller controller_from_name(const std::string& name);

Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::string& path);
std::string serialize_scenario(const Scenario& s);

/// Structural checks plus the feasibility assumptions for the initial loads
/// and for the loads after every event. Throws ValidationError.
void validate_scenario(const Scenario& s);

/// Least-squares slope of log distance against time over the tail window
/// (the last 80% of the samples above the 1e-10 noise floor).
struct DecayFit {
    double beta_hat = 0.0;
    double r_squared = 0.0;
    int samples_used = 0;
};

DecayFit fit_decay_rate(const std::vector<double>& times, const std::vector<double>& distances);

struct SegmentSettling {
    double segment_start = 0.0;
    std::optional<double> settle_time;  ///< absolute time; empty if never settled
};

struct RunReport {
    std::string trajectory_file;
    std::vector<int> final_active_lo, final_active_hi;
    double omega_s_measured = 0.0;
    double omega_s_formula = 0.0;
    bool converged = false;
    std::optional<DecayFit> decay;
    std::vector<SegmentSettling> settling;
    std::optional<RateCertificate> certificate;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
};

nlohmann::json report_to_json(const RunReport& report);
nlohmann::json certificate_to_json(const RateCertificate& cert);

/// Integrates the scenario (one segment per load event), writes
/// trajectory.csv, report.json and the plotdata/*.csv panels into out_dir,
/// and returns the report. With apply_tuning the scenario's tuning scale is
/// applied to the gains before simulating; with_certificate embeds the rate
/// certificate of the (possibly tuned) initial problem in the report.
RunReport run_scenario(const Scenario& s, const std::string& out_dir,
                       bool apply_tuning = false, std::uint64_t seed = 0,
                       bool with_certificate = false);

struct CompareReport {
    RunReport projection_free;
    RunReport projection_based;
};

/// Runs both controllers from identical initial conditions and events and
/// writes paired trajectory CSVs plus compare.json.
CompareReport compare_scenario(const Scenario& s, const std::string& out_dir);

/// Rate certificate, penalty-gain window and edge-addition advisories for the
/// scenario's initial problem; written to certificate.json by the CLI.
nlohmann::json certify_scenario(const Scenario& s);

/// The optimizer of the scenario's initial problem as JSON.
nlohmann::json oracle_scenario(const Scenario& s);

}  // namespace droopnet
