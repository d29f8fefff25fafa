#pragma once

#include <algorithm>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "droopnet/dynamics.hpp"
#include "droopnet/flowproblem.hpp"

namespace testsupport {

using droopnet::Controller;
using droopnet::Edge;
using droopnet::FlowProblem;
using droopnet::KktPoint;
using droopnet::NodalState;
using droopnet::PowerNetwork;

inline PowerNetwork random_connected_network(std::mt19937_64& rng, int n_min, int n_max,
                                             double w_min, double w_max,
                                             double extra_edge_prob = 0.3) {
    std::uniform_int_distribution<int> n_dist(n_min, n_max);
    std::uniform_real_distribution<double> w_dist(w_min, w_max);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = n_dist(rng);
    std::vector<Edge> edges;
    for (int v = 1; v < n; ++v) {
        std::uniform_int_distribution<int> parent(0, v - 1);
        edges.push_back({parent(rng), v, w_dist(rng)});
    }
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const bool present = std::any_of(edges.begin(), edges.end(), [&](const Edge& e) {
                return e.i == i && e.j == j;
            });
            if (!present && u(rng) < extra_edge_prob) {
                edges.push_back({i, j, w_dist(rng)});
            }
        }
    }
    return PowerNetwork(n, std::move(edges));
}

struct ProblemOptions {
    int n_min = 2;
    int n_max = 5;
    double w_min = 0.5;
    double w_max = 3.0;
    double m_min = 0.5;
    double m_max = 2.0;
    double k_min = 0.5;
    double k_max = 3.0;
    double rho_min = 0.5;
    double rho_max = 1.5;
    double load_fraction_min = 0.2;
    double load_fraction_max = 0.8;
    double margin_min = 0.2;
    double margin_max = 1.2;
};

inline FlowProblem random_problem(std::mt19937_64& rng, const ProblemOptions& opts) {
    PowerNetwork net =
        random_connected_network(rng, opts.n_min, opts.n_max, opts.w_min, opts.w_max);
    const int n = net.node_count();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uniform_vec = [&](double lo, double hi) {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v(i) = lo + (hi - lo) * u(rng);
        return v;
    };
    const Eigen::VectorXd setpoint = uniform_vec(-0.5, 0.5);
    const Eigen::VectorXd p_lo = setpoint - uniform_vec(opts.margin_min, opts.margin_max);
    const Eigen::VectorXd p_hi = setpoint + uniform_vec(opts.margin_min, opts.margin_max);

    const double fraction = opts.load_fraction_min +
                            (opts.load_fraction_max - opts.load_fraction_min) * u(rng);
    const double target_sum = p_lo.sum() + fraction * (p_hi.sum() - p_lo.sum());
    Eigen::VectorXd shares = uniform_vec(0.1, 1.0);
    const Eigen::VectorXd load = shares / shares.sum() * target_sum;

    return FlowProblem(std::move(net), load, setpoint, p_lo, p_hi,
                       uniform_vec(opts.m_min, opts.m_max), uniform_vec(opts.k_min, opts.k_max),
                       uniform_vec(opts.k_min, opts.k_max),
                       opts.rho_min + (opts.rho_max - opts.rho_min) * u(rng));
}

/// Problem whose optimizer saturates at least one limit while keeping at
/// least one node free, with LICQ intact; retries generation until found.
inline std::pair<FlowProblem, KktPoint> random_problem_with_active_optimum(
    std::mt19937_64& rng, ProblemOptions opts) {
    opts.load_fraction_min = 0.72;
    opts.load_fraction_max = 0.92;
    for (int attempt = 0; attempt < 400; ++attempt) {
        FlowProblem fp = random_problem(rng, opts);
        try {
            KktPoint kkt = droopnet::solve_kkt_oracle(fp);
            const size_t active = kkt.active_union().size();
            if (active >= 1 && active < static_cast<size_t>(fp.node_count()) &&
                droopnet::check_licq(fp, kkt)) {
                return {std::move(fp), std::move(kkt)};
            }
        } catch (const droopnet::Error&) {
            // degenerate draw, try again
        }
    }
    throw std::runtime_error("could not generate a saturated instance");
}

/// Steady state of each controller at a given optimizer. The projection-free
/// integrators store K_I^{-1} mu; the projection-based ones store mu itself.
inline NodalState steady_nodal_state(const FlowProblem& fp, const KktPoint& kkt,
                                     Controller controller) {
    NodalState s;
    s.theta = kkt.theta;
    if (controller == Controller::kProjectionBased) {
        s.lambda_lo = kkt.mu_lo;
        s.lambda_hi = kkt.mu_hi;
    } else {
        s.lambda_lo = kkt.mu_lo.cwiseQuotient(fp.k_i_sqrt());
        s.lambda_hi = kkt.mu_hi.cwiseQuotient(fp.k_i_sqrt());
    }
    return s;
}

inline NodalState random_nodal_state(std::mt19937_64& rng, int n, double scale) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    NodalState s;
    s.theta.resize(n);
    s.lambda_lo.resize(n);
    s.lambda_hi.resize(n);
    for (int i = 0; i < n; ++i) {
        s.theta(i) = scale * u(rng);
        s.lambda_lo(i) = scale * std::abs(u(rng));
        s.lambda_hi(i) = scale * std::abs(u(rng));
    }
    return s;
}

}  // namespace testsupport
