#include "droopnet/scenario.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace droopnet {

namespace {

using nlohmann::json;

Eigen::VectorXd vector_from_json(const json& node, const char* name, int expected = -1) {
    if (!node.is_array()) {
        std::ostringstream msg;
        msg << "field '" << name << "' must be an array";
        throw ParseError(msg.str());
    }
    Eigen::VectorXd v(node.size());
    for (size_t k = 0; k < node.size(); ++k) {
        if (!node[k].is_number()) {
            std::ostringstream msg;
            msg << "field '" << name << "' must contain numbers";
            throw ParseError(msg.str());
        }
        v(static_cast<Eigen::Index>(k)) = node[k].get<double>();
    }
    if (expected >= 0 && v.size() != expected) {
        std::ostringstream msg;
        msg << "field '" << name << "' has length " << v.size() << ", expected " << expected;
        throw ParseError(msg.str());
    }
    return v;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json arr = json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) arr.push_back(v(k));
    return arr;
}

const json& require_field(const json& node, const char* name) {
    auto it = node.find(name);
    if (it == node.end()) {
        std::ostringstream msg;
        msg << "missing field '" << name << "'";
        throw ParseError(msg.str());
    }
    return *it;
}

}  // namespace

std::string controller_name(Controller c) {
    switch (c) {
        case Controller::kProjectionFree: return "projection_free";
        case Controller::kProjectionBased: return "projection_based";
        case Controller::kEdgePrimalDual: return "edge_primal_dual";
    }
    throw Error("unknown controller");
}

Controller controller_from_name(const std::string& name) {
    if (name == "projection_free") return Controller::kProjectionFree;
    if (name == "projection_based") return Controller::kProjectionBased;
    if (name == "edge_primal_dual") return Controller::kEdgePrimalDual;
    throw ParseError("unknown controller name '" + name + "'");
}

PowerNetwork Scenario::network() const {
    return PowerNetwork(node_count, edges);
}

FlowProblem Scenario::problem() const {
    return FlowProblem(network(), loads / base_mva, setpoints / base_mva, p_lo / base_mva,
                       p_hi / base_mva, droop, k_i, k_p, rho);
}

std::vector<LoadStep> Scenario::events_pu() const {
    std::vector<LoadStep> out = events;
    for (LoadStep& ev : out) ev.delta_load /= base_mva;
    return out;
}

NodalState Scenario::initial_state() const {
    if (initial) return *initial;
    NodalState zero;
    zero.theta = Eigen::VectorXd::Zero(node_count);
    zero.lambda_lo = Eigen::VectorXd::Zero(node_count);
    zero.lambda_hi = Eigen::VectorXd::Zero(node_count);
    return zero;
}

bool operator==(const Scenario& a, const Scenario& b) {
    auto vec_eq = [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
        return x.size() == y.size() && x == y;
    };
    if (a.base_mva != b.base_mva || a.node_count != b.node_count || a.rho != b.rho) return false;
    if (a.edges.size() != b.edges.size()) return false;
    for (size_t k = 0; k < a.edges.size(); ++k) {
        if (a.edges[k].i != b.edges[k].i || a.edges[k].j != b.edges[k].j ||
            a.edges[k].weight != b.edges[k].weight) {
            return false;
        }
    }
    if (!vec_eq(a.loads, b.loads) || !vec_eq(a.setpoints, b.setpoints) ||
        !vec_eq(a.p_lo, b.p_lo) || !vec_eq(a.p_hi, b.p_hi) || !vec_eq(a.droop, b.droop) ||
        !vec_eq(a.k_i, b.k_i) || !vec_eq(a.k_p, b.k_p)) {
        return false;
    }
    if (a.events.size() != b.events.size()) return false;
    for (size_t k = 0; k < a.events.size(); ++k) {
        if (a.events[k].t != b.events[k].t ||
            !vec_eq(a.events[k].delta_load, b.events[k].delta_load)) {
            return false;
        }
    }
    if (a.sim.t_end != b.sim.t_end || a.sim.dt != b.sim.dt ||
        a.sim.record_every != b.sim.record_every || a.sim.controller != b.sim.controller) {
        return false;
    }
    if (a.tuning_s != b.tuning_s) return false;
    if (a.initial.has_value() != b.initial.has_value()) return false;
    if (a.initial && (!vec_eq(a.initial->theta, b.initial->theta) ||
                      !vec_eq(a.initial->lambda_lo, b.initial->lambda_lo) ||
                      !vec_eq(a.initial->lambda_hi, b.initial->lambda_hi))) {
        return false;
    }
    return true;
}

Scenario parse_scenario(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& err) {
        throw ParseError(std::string("invalid JSON: ") + err.what());
    }

    Scenario s;
    s.base_mva = require_field(doc, "base_mva").get<double>();
    const json& net = require_field(doc, "network");
    s.node_count = require_field(net, "n").get<int>();
    const json& edge_list = require_field(net, "edges");
    if (!edge_list.is_array()) throw ParseError("network.edges must be an array");
    for (const json& row : edge_list) {
        if (!row.is_array() || row.size() != 3) {
            throw ParseError("each edge must be [i, j, weight]");
        }
        s.edges.push_back({row[0].get<int>(), row[1].get<int>(), row[2].get<double>()});
    }

    const json& prob = require_field(doc, "problem");
    const int n = s.node_count;
    s.loads = vector_from_json(require_field(prob, "loads"), "loads", n);
    s.setpoints = vector_from_json(require_field(prob, "setpoints"), "setpoints", n);
    s.p_lo = vector_from_json(require_field(prob, "p_lo"), "p_lo", n);
    s.p_hi = vector_from_json(require_field(prob, "p_hi"), "p_hi", n);
    s.droop = vector_from_json(require_field(prob, "droop"), "droop", n);
    s.k_i = vector_from_json(require_field(prob, "k_i"), "k_i", n);
    s.k_p = prob.contains("k_p") ? vector_from_json(prob["k_p"], "k_p", n) : s.k_i;
    s.rho = require_field(prob, "rho").get<double>();

    if (doc.contains("events")) {
        for (const json& ev : doc["events"]) {
            LoadStep step;
            step.t = require_field(ev, "t").get<double>();
            step.delta_load = vector_from_json(require_field(ev, "delta_p_l"), "delta_p_l", n);
            s.events.push_back(std::move(step));
        }
    }

    const json& sim = require_field(doc, "sim");
    s.sim.t_end = require_field(sim, "t_end").get<double>();
    s.sim.dt = require_field(sim, "dt").get<double>();
    s.sim.record_every = sim.contains("record_every") ? sim["record_every"].get<int>() : 1;
    s.sim.controller = controller_from_name(require_field(sim, "controller").get<std::string>());

    if (doc.contains("tuning")) {
        s.tuning_s = require_field(doc["tuning"], "s").get<double>();
    }
    if (doc.contains("initial")) {
        const json& init = doc["initial"];
        NodalState state;
        state.theta = vector_from_json(require_field(init, "theta"), "initial.theta", n);
        state.lambda_lo =
            vector_from_json(require_field(init, "lambda_lo"), "initial.lambda_lo", n);
        state.lambda_hi =
            vector_from_json(require_field(init, "lambda_hi"), "initial.lambda_hi", n);
        s.initial = std::move(state);
    }
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open scenario file '" + path + "'");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_scenario(buffer.str());
}

std::string serialize_scenario(const Scenario& s) {
    json doc;
    doc["base_mva"] = s.base_mva;
    json edge_list = json::array();
    for (const Edge& e : s.edges) {
        edge_list.push_back(json::array({e.i, e.j, e.weight}));
    }
    doc["network"] = {{"n", s.node_count}, {"edges", edge_list}};
    doc["problem"] = {{"loads", vector_to_json(s.loads)},
                      {"setpoints", vector_to_json(s.setpoints)},
                      {"p_lo", vector_to_json(s.p_lo)},
                      {"p_hi", vector_to_json(s.p_hi)},
                      {"droop", vector_to_json(s.droop)},
                      {"k_i", vector_to_json(s.k_i)},
                      {"k_p", vector_to_json(s.k_p)},
                      {"rho", s.rho}};
    if (!s.events.empty()) {
        json events = json::array();
        for (const LoadStep& ev : s.events) {
            events.push_back({{"t", ev.t}, {"delta_p_l", vector_to_json(ev.delta_load)}});
        }
        doc["events"] = events;
    }
    doc["sim"] = {{"t_end", s.sim.t_end},
                  {"dt", s.sim.dt},
                  {"record_every", s.sim.record_every},
                  {"controller", controller_name(s.sim.controller)}};
    if (s.tuning_s) {
        doc["tuning"] = {{"s", *s.tuning_s}};
    }
    if (s.initial) {
        doc["initial"] = {{"theta", vector_to_json(s.initial->theta)},
                          {"lambda_lo", vector_to_json(s.initial->lambda_lo)},
                          {"lambda_hi", vector_to_json(s.initial->lambda_hi)}};
    }
    return doc.dump(2);
}

void validate_scenario(const Scenario& s) {
    if (!(s.base_mva > 0.0)) {
        throw ValidationError("base_mva must be positive");
    }
    if (!(s.sim.t_end > 0.0) || !(s.sim.dt > 0.0)) {
        throw ValidationError("t_end and dt must be positive");
    }
    if (s.sim.record_every < 1) {
        throw ValidationError("record_every must be >= 1");
    }
    for (size_t k = 0; k < s.events.size(); ++k) {
        const double t = s.events[k].t;
        if (t < 0.0 || t > s.sim.t_end) {
            throw ValidationError("event times must lie within [0, t_end]");
        }
        if (k > 0 && !(t > s.events[k - 1].t)) {
            throw ValidationError("event times must be strictly increasing");
        }
    }
    if (s.tuning_s && !(*s.tuning_s >= 1.0)) {
        throw ValidationError("tuning scale must be >= 1");
    }

    FlowProblem fp = s.problem();  // also validates dims/gains/network
    auto check_segment = [](const FlowProblem& segment_fp, size_t segment_index) {
        const FeasibilityReport report = check_feasibility(segment_fp);
        if (!report.feasible()) {
            std::ostringstream msg;
            msg << "segment " << segment_index << " infeasible: ";
            for (size_t v = 0; v < report.violations.size(); ++v) {
                if (v) msg << "; ";
                msg << report.violations[v];
            }
            throw ValidationError(msg.str());
        }
    };
    check_segment(fp, 0);
    size_t idx = 1;
    for (const LoadStep& ev : s.events_pu()) {
        fp = fp.with_load(fp.load() + ev.delta_load);
        check_segment(fp, idx++);
    }

    if (s.initial &&
        ((s.initial->lambda_lo.array() < 0.0).any() || (s.initial->lambda_hi.array() < 0.0).any())) {
        throw ValidationError("initial integrator states must be nonnegative");
    }
}

}  // namespace droopnet
