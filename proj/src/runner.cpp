#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "droopnet/scenario.hpp"

namespace droopnet {

namespace {

using nlohmann::json;

constexpr double kActiveTol = 1e-6;      // trajectory active-set detection
constexpr double kSettleTol = 1e-6;      // stationarity residual threshold
constexpr double kSettleWindow = 0.5;    // seconds the residual must stay below
constexpr double kConvergedTol = 1e-9;   // steady state: this residual for 100 samples
constexpr int kConvergedSamples = 100;
constexpr double kNoiseFloor = 1e-10;

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write '" + path.string() + "'");
    }
    out << content;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json arr = json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) arr.push_back(v(k));
    return arr;
}

/// Load vector in effect at each sample, reproducing the integrator's rule of
/// applying an event at the first step boundary at or after its time.
std::vector<Eigen::VectorXd> loads_by_sample(const FlowProblem& fp,
                                             const std::vector<LoadStep>& events_pu,
                                             const std::vector<double>& times,
                                             double dt) {
    std::vector<double> snapped;
    snapped.reserve(events_pu.size());
    for (const LoadStep& ev : events_pu) {
        snapped.push_back(std::ceil(ev.t / dt - 1e-9) * dt);
    }
    std::vector<Eigen::VectorXd> out;
    out.reserve(times.size());
    Eigen::VectorXd load = fp.load();
    size_t next = 0;
    for (double t : times) {
        while (next < events_pu.size() && snapped[next] <= t + 1e-12) {
            load += events_pu[next].delta_load;
            ++next;
        }
        out.push_back(load);
    }
    return out;
}

void write_trajectory_csv(const std::filesystem::path& path,
                          const Simulator& sim,
                          const Trajectory& traj,
                          const std::vector<Eigen::VectorXd>& loads) {
    const FlowProblem& fp = sim.problem();
    const int n = fp.node_count();
    const int e = fp.net().edge_count();
    std::ostringstream out;

    auto emit_header_block = [&out](const char* stem, int count) {
        for (int k = 0; k < count; ++k) out << ',' << stem << '_' << k;
    };
    out << 't';
    if (sim.controller() == Controller::kEdgePrimalDual) {
        emit_header_block("P", n);
        emit_header_block("eta", e);
        emit_header_block("mu_lo", n);
        emit_header_block("mu_hi", n);
    } else {
        emit_header_block("theta", n);
        emit_header_block("omega", n);
        emit_header_block("P", n);
        emit_header_block("lambda_lo", n);
        emit_header_block("lambda_hi", n);
    }
    out << '\n';

    auto emit_vector = [&out](const Eigen::VectorXd& v) {
        for (Eigen::Index k = 0; k < v.size(); ++k) out << ',' << format_value(v(k));
    };
    for (size_t s = 0; s < traj.size(); ++s) {
        out << format_value(traj.times[s]);
        if (sim.controller() == Controller::kEdgePrimalDual) {
            const EdgeState st = sim.unpack_edge(traj.states[s]);
            const Eigen::VectorXd p = fp.net().weighted_incidence() * st.eta + loads[s];
            emit_vector(p);
            emit_vector(st.eta);
            emit_vector(st.mu_lo);
            emit_vector(st.mu_hi);
        } else {
            const NodalState st = sim.unpack_nodal(traj.states[s]);
            const Eigen::VectorXd p = fp.net().laplacian() * st.theta + loads[s];
            emit_vector(st.theta);
            emit_vector(traj.omegas[s]);
            emit_vector(p);
            emit_vector(st.lambda_lo);
            emit_vector(st.lambda_hi);
        }
        out << '\n';
    }
    write_text_file(path, out.str());
}

void write_plotdata(const std::filesystem::path& dir,
                    const Simulator& sim,
                    const Trajectory& traj,
                    const std::vector<Eigen::VectorXd>& loads) {
    const FlowProblem& fp = sim.problem();
    const int n = fp.node_count();
    const bool edge_run = sim.controller() == Controller::kEdgePrimalDual;

    std::ostringstream freq, power, dual;
    freq << 't';
    power << 't';
    dual << 't';
    for (int k = 0; k < n; ++k) freq << ",omega_" << k;
    for (int k = 0; k < n; ++k) power << ",P_" << k << ",P_hi_" << k;
    for (int k = 0; k < n; ++k) dual << ",lambda_lo_" << k << ",lambda_hi_" << k;
    freq << '\n';
    power << '\n';
    dual << '\n';

    for (size_t s = 0; s < traj.size(); ++s) {
        Eigen::VectorXd p;
        Eigen::VectorXd dual_lo, dual_hi;
        if (edge_run) {
            const EdgeState st = sim.unpack_edge(traj.states[s]);
            p = fp.net().weighted_incidence() * st.eta + loads[s];
            dual_lo = st.mu_lo;
            dual_hi = st.mu_hi;
        } else {
            const NodalState st = sim.unpack_nodal(traj.states[s]);
            p = fp.net().laplacian() * st.theta + loads[s];
            dual_lo = st.lambda_lo;
            dual_hi = st.lambda_hi;
        }
        if (!edge_run) {
            freq << format_value(traj.times[s]);
            for (int k = 0; k < n; ++k) freq << ',' << format_value(traj.omegas[s](k));
            freq << '\n';
        }
        power << format_value(traj.times[s]);
        for (int k = 0; k < n; ++k) {
            power << ',' << format_value(p(k)) << ',' << format_value(fp.p_hi()(k));
        }
        power << '\n';
        dual << format_value(traj.times[s]);
        for (int k = 0; k < n; ++k) {
            dual << ',' << format_value(dual_lo(k)) << ',' << format_value(dual_hi(k));
        }
        dual << '\n';
    }
    if (!edge_run) {
        write_text_file(dir / "frequencies.csv", freq.str());
    }
    write_text_file(dir / "powers.csv", power.str());
    write_text_file(dir / "duals.csv", dual.str());
}

std::vector<SegmentSettling> settling_times(const Trajectory& traj,
                                            const std::vector<LoadStep>& events_pu,
                                            double dt) {
    std::vector<double> boundaries{0.0};
    for (const LoadStep& ev : events_pu) {
        boundaries.push_back(std::ceil(ev.t / dt - 1e-9) * dt);
    }
    boundaries.push_back(std::numeric_limits<double>::infinity());

    std::vector<SegmentSettling> out;
    for (size_t seg = 0; seg + 1 < boundaries.size(); ++seg) {
        SegmentSettling entry;
        entry.segment_start = boundaries[seg];
        size_t first = 0, last = traj.size();
        while (first < traj.size() && traj.times[first] < boundaries[seg] - 1e-12) ++first;
        // the sample on the boundary itself still reflects the old load
        while (seg > 0 && first < traj.size() && traj.times[first] <= boundaries[seg] + 1e-12) {
            ++first;
        }
        while (last > first && traj.times[last - 1] >= boundaries[seg + 1] - 1e-12) --last;
        for (size_t idx = first; idx < last; ++idx) {
            if (traj.residuals[idx] >= kSettleTol) continue;
            bool sustained = true;
            for (size_t w = idx; w < last && traj.times[w] <= traj.times[idx] + kSettleWindow;
                 ++w) {
                if (traj.residuals[w] >= kSettleTol) {
                    sustained = false;
                    break;
                }
            }
            if (sustained) {
                entry.settle_time = traj.times[idx];
                break;
            }
        }
        out.push_back(entry);
    }
    return out;
}

struct ActiveSets {
    std::vector<int> lo, hi;
};

ActiveSets trajectory_active_sets(const FlowProblem& fp, const Eigen::VectorXd& p) {
    ActiveSets sets;
    for (int i = 0; i < fp.node_count(); ++i) {
        if (std::abs(p(i) - fp.p_lo()(i)) <= kActiveTol) sets.lo.push_back(i);
        if (std::abs(p(i) - fp.p_hi()(i)) <= kActiveTol) sets.hi.push_back(i);
    }
    return sets;
}

RunReport run_one(const Scenario& scenario,
                  Controller controller,
                  const std::filesystem::path& out_dir,
                  const std::string& csv_name,
                  bool apply_tuning,
                  std::uint64_t seed,
                  bool with_plotdata) {
    FlowProblem fp = scenario.problem();
    if (apply_tuning && scenario.tuning_s) {
        fp = fp.scaled_gains(*scenario.tuning_s);
    }
    const std::vector<LoadStep> events = scenario.events_pu();
    const Simulator sim(fp, controller);

    Eigen::VectorXd x0;
    if (controller == Controller::kEdgePrimalDual) {
        x0 = sim.pack(map_to_edge(fp, scenario.initial_state()));
    } else {
        x0 = sim.pack(scenario.initial_state());
    }

    const auto t_start = std::chrono::steady_clock::now();
    Trajectory traj;
    try {
        traj = sim.integrate(x0, scenario.sim.t_end, scenario.sim.dt, events,
                             scenario.sim.record_every);
    } catch (const NonFiniteState& err) {
        throw SimulationDiverged(err.what());
    }
    const auto t_stop = std::chrono::steady_clock::now();
    traj.distances.reserve(traj.size());

    FlowProblem fp_final = fp;
    for (const LoadStep& ev : events) {
        fp_final = fp_final.with_load(fp_final.load() + ev.delta_load);
    }
    const KktPoint oracle = solve_kkt_oracle(fp_final);

    RunReport report;
    report.seed = seed;
    report.wall_seconds = std::chrono::duration<double>(t_stop - t_start).count();
    report.omega_s_formula = oracle.omega_s;

    const Eigen::VectorXd& x_final = traj.states.back();
    Eigen::VectorXd p_final;
    if (controller == Controller::kEdgePrimalDual) {
        p_final = fp_final.net().weighted_incidence() * sim.unpack_edge(x_final).eta +
                  fp_final.load();
    } else {
        p_final = fp_final.net().laplacian() * sim.unpack_nodal(x_final).theta + fp_final.load();
    }
    const ActiveSets sets = trajectory_active_sets(fp_final, p_final);
    report.final_active_lo = sets.lo;
    report.final_active_hi = sets.hi;

    if (controller == Controller::kEdgePrimalDual) {
        // droop relation at the unsaturated nodes recovers the frequency
        double acc = 0.0;
        int count = 0;
        for (int i = 0; i < fp_final.node_count(); ++i) {
            const bool saturated =
                std::abs(p_final(i) - fp_final.p_lo()(i)) <= kActiveTol ||
                std::abs(p_final(i) - fp_final.p_hi()(i)) <= kActiveTol;
            if (!saturated) {
                acc += fp_final.droop()(i) * (fp_final.setpoint()(i) - p_final(i));
                ++count;
            }
        }
        report.omega_s_measured = count > 0 ? acc / count
                                            : std::numeric_limits<double>::quiet_NaN();
    } else {
        report.omega_s_measured = traj.omegas.back().mean();
    }

    int quiet_tail = 0;
    for (size_t s = traj.size(); s-- > 0 && traj.residuals[s] < kConvergedTol;) {
        ++quiet_tail;
    }
    report.converged = quiet_tail >= kConvergedSamples;

    report.settling = settling_times(traj, events, scenario.sim.dt);

    // tail decay fit against the final-segment optimizer
    const double fit_start = events.empty()
                                 ? 0.0
                                 : std::ceil(events.back().t / scenario.sim.dt - 1e-9) *
                                       scenario.sim.dt;
    const Simulator sim_final(fp_final, controller);
    const KktSetDistance distance(fp_final, oracle);
    std::vector<double> fit_times;
    std::vector<double> fit_distances;
    for (size_t s = 0; s < traj.size(); ++s) {
        traj.distances.push_back(distance.packed_distance(sim_final, traj.states[s]));
        if (traj.times[s] >= fit_start - 1e-12) {
            fit_times.push_back(traj.times[s]);
            fit_distances.push_back(traj.distances.back());
        }
    }
    try {
        report.decay = fit_decay_rate(fit_times, fit_distances);
    } catch (const InsufficientDecay&) {
        report.decay.reset();
    }

    const auto loads = loads_by_sample(fp, events, traj.times, scenario.sim.dt);
    write_trajectory_csv(out_dir / csv_name, sim, traj, loads);
    if (with_plotdata) {
        write_plotdata(out_dir / "plotdata", sim, traj, loads);
    }
    report.trajectory_file = (out_dir / csv_name).string();
    return report;
}

json settling_to_json(const std::vector<SegmentSettling>& settling) {
    json arr = json::array();
    for (const SegmentSettling& s : settling) {
        json entry = {{"segment_start", s.segment_start}};
        if (s.settle_time) {
            entry["settle_time"] = *s.settle_time;
            entry["settle_after"] = *s.settle_time - s.segment_start;
        } else {
            entry["settle_time"] = nullptr;
        }
        arr.push_back(entry);
    }
    return arr;
}

}  // namespace

DecayFit fit_decay_rate(const std::vector<double>& times, const std::vector<double>& distances) {
    if (times.size() != distances.size()) {
        throw DimensionMismatch("times and distances must have equal length");
    }
    std::vector<size_t> above;
    for (size_t k = 0; k < distances.size(); ++k) {
        if (distances[k] > kNoiseFloor) above.push_back(k);
    }
    if (above.size() < 20) {
        throw InsufficientDecay("fewer than 20 samples above the noise floor");
    }
    const size_t start = above.size() / 5;  // last 80% of the usable samples
    double sum_t = 0.0, sum_y = 0.0, sum_tt = 0.0, sum_ty = 0.0, sum_yy = 0.0;
    const size_t m = above.size() - start;
    for (size_t k = start; k < above.size(); ++k) {
        const double t = times[above[k]];
        const double y = std::log(distances[above[k]]);
        sum_t += t;
        sum_y += y;
        sum_tt += t * t;
        sum_ty += t * y;
        sum_yy += y * y;
    }
    const double denom = m * sum_tt - sum_t * sum_t;
    if (std::abs(denom) < 1e-300) {
        throw InsufficientDecay("degenerate time window");
    }
    const double slope = (m * sum_ty - sum_t * sum_y) / denom;
    DecayFit fit;
    fit.beta_hat = -slope;
    fit.samples_used = static_cast<int>(m);
    const double ss_tot = sum_yy - sum_y * sum_y / m;
    const double ss_res = ss_tot - slope * (sum_ty - sum_t * sum_y / m);
    fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

json certificate_to_json(const RateCertificate& cert) {
    return json{{"M_g", cert.m_g},
                {"L_g", cert.l_g},
                {"M_theta", cert.m_theta},
                {"alpha", cert.alpha},
                {"gamma", cert.gamma},
                {"alpha_lower", cert.alpha_lower},
                {"gamma_upper", cert.gamma_upper},
                {"kappa", cert.kappa},
                {"delta_min", cert.delta_min},
                {"d_0", cert.d0},
                {"mu_star_norm", cert.mu_star_norm},
                {"rho", cert.rho},
                {"beta", cert.beta},
                {"beta_rate_cap", cert.beta_rate_cap},
                {"beta_curvature_root", cert.beta_curvature_root},
                {"binding", binding_constraint_tag(cert.binding)}};
}

json report_to_json(const RunReport& report) {
    json doc{{"trajectory_file", report.trajectory_file},
             {"final_active_lo", report.final_active_lo},
             {"final_active_hi", report.final_active_hi},
             {"omega_s_measured", report.omega_s_measured},
             {"omega_s_formula", report.omega_s_formula},
             {"converged", report.converged},
             {"settling", settling_to_json(report.settling)},
             {"wall_seconds", report.wall_seconds},
             {"seed", report.seed}};
    if (report.decay) {
        doc["decay_fit"] = {{"beta_hat", report.decay->beta_hat},
                            {"r_squared", report.decay->r_squared},
                            {"samples_used", report.decay->samples_used}};
    } else {
        doc["decay_fit"] = nullptr;
    }
    if (report.certificate) {
        doc["certificate"] = certificate_to_json(*report.certificate);
    }
    return doc;
}

RunReport run_scenario(const Scenario& s, const std::string& out_dir, bool apply_tuning,
                       std::uint64_t seed, bool with_certificate) {
    validate_scenario(s);
    const std::filesystem::path dir(out_dir);
    RunReport report =
        run_one(s, s.sim.controller, dir, "trajectory.csv", apply_tuning, seed, true);
    if (with_certificate) {
        FlowProblem fp = s.problem();
        if (apply_tuning && s.tuning_s) {
            fp = fp.scaled_gains(*s.tuning_s);
        }
        const KktPoint kkt = solve_kkt_oracle(fp);
        const KktSetDistance distance(fp, kkt);
        const double d0 =
            distance.nodal_distance(fp, Controller::kProjectionFree, s.initial_state());
        if (!(d0 > 0.0)) {
            throw NonpositiveD0("the initial state coincides with the optimizer set");
        }
        report.certificate = certify_beta(fp, kkt, d0);
    }
    write_text_file(dir / "report.json", report_to_json(report).dump(2) + "\n");
    return report;
}

CompareReport compare_scenario(const Scenario& s, const std::string& out_dir) {
    validate_scenario(s);
    const std::filesystem::path dir(out_dir);
    CompareReport cmp{
        run_one(s, Controller::kProjectionFree, dir, "trajectory_projection_free.csv", false, 0,
                false),
        run_one(s, Controller::kProjectionBased, dir, "trajectory_projection_based.csv", false,
                0, false)};
    json doc{{"projection_free", report_to_json(cmp.projection_free)},
             {"projection_based", report_to_json(cmp.projection_based)}};
    write_text_file(dir / "compare.json", doc.dump(2) + "\n");
    return cmp;
}

json certify_scenario(const Scenario& s) {
    validate_scenario(s);
    const FlowProblem fp = s.problem();
    const KktPoint kkt = solve_kkt_oracle(fp);

    const KktSetDistance distance(fp, kkt);
    const double d0 = distance.nodal_distance(fp, Controller::kProjectionFree, s.initial_state());
    if (!(d0 > 0.0)) {
        throw NonpositiveD0("the initial state coincides with the optimizer set");
    }

    json doc;
    const RateCertificate cert = certify_beta(fp, kkt, d0);
    doc["certificate"] = certificate_to_json(cert);

    const RhoWindow window = rho_window(fp, kkt, d0);
    doc["rho_window"] = {{"lower", window.lower},
                         {"upper", window.upper},
                         {"grid_argmax", window.grid_argmax},
                         {"grid_max_beta", window.grid_max_beta},
                         {"argmax_interior", window.argmax_interior}};

    json advisories = json::array();
    const PowerNetwork net = fp.net();
    const int d_max = net.max_degree();
    for (int i = 0; i < net.node_count(); ++i) {
        for (int j = i + 1; j < net.node_count(); ++j) {
            if (net.has_edge(i, j) || net.degree(i) >= d_max || net.degree(j) >= d_max) {
                continue;
            }
            const EdgeAdvisory adv =
                edge_addition_advisor(fp, kkt, d0, i, j, net.weight_max());
            json entry{{"i", adv.i},
                       {"j", adv.j},
                       {"weight", adv.weight},
                       {"binding", binding_constraint_tag(adv.binding)},
                       {"rho_condition_holds", adv.rho_condition_holds},
                       {"used_uniform_weight_rule", adv.used_uniform_weight_rule},
                       {"alpha_before", adv.alpha_before},
                       {"alpha_after", adv.alpha_after},
                       {"beta_before", adv.beta_before},
                       {"beta_after_model", adv.beta_after_model}};
            if (adv.recertified) {
                entry["recertified"] = certificate_to_json(*adv.recertified);
            }
            advisories.push_back(entry);
        }
    }
    doc["edge_advisories"] = advisories;

    if (s.tuning_s) {
        const TuningPlan plan = tune_gains(fp, kkt, d0, *s.tuning_s);
        doc["tuning"] = {{"s", plan.s},
                         {"rho_new", plan.rho_new},
                         {"k_i_new", vector_to_json(plan.k_i_new)},
                         {"beta_before", plan.before.beta},
                         {"beta_after", plan.after.beta}};
    }
    return doc;
}

json oracle_scenario(const Scenario& s) {
    validate_scenario(s);
    const FlowProblem fp = s.problem();
    const KktPoint kkt = solve_kkt_oracle(fp);
    return json{{"theta", vector_to_json(kkt.theta)},
                {"eta", vector_to_json(kkt.eta)},
                {"p", vector_to_json(kkt.p)},
                {"mu_lo", vector_to_json(kkt.mu_lo)},
                {"mu_hi", vector_to_json(kkt.mu_hi)},
                {"active_lo", kkt.active_lo},
                {"active_hi", kkt.active_hi},
                {"omega_s", kkt.omega_s},
                {"kkt_residual", kkt.kkt_residual}};
}

}  // namespace droopnet
