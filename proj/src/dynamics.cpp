#include "droopnet/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace droopnet {

namespace {

constexpr double kBoundaryTol = 1e-12;  // lambda treated as on the orthant boundary

void require_length(const Eigen::VectorXd& v, Eigen::Index len, const char* name) {
    if (v.size() != len) {
        std::ostringstream msg;
        msg << name << " has length " << v.size() << ", expected " << len;
        throw DimensionMismatch(msg.str());
    }
}

}  // namespace

Eigen::VectorXd project_nonneg(const Eigen::VectorXd& v) {
    return v.cwiseMax(0.0);
}

LimitGaps limit_gaps(const FlowProblem& fp, const Eigen::VectorXd& injections) {
    return {fp.p_lo() - injections, injections - fp.p_hi()};
}

NodalState rhs_projection_free_nodal(const FlowProblem& fp, const NodalState& state) {
    const int n = fp.node_count();
    require_length(state.theta, n, "theta");
    require_length(state.lambda_lo, n, "lambda_lo");
    require_length(state.lambda_hi, n, "lambda_hi");

    const Eigen::VectorXd p = fp.injections(state.theta);
    const LimitGaps g = limit_gaps(fp, p);
    const Eigen::VectorXd pushed_lo = project_nonneg(fp.rho() * g.lower + state.lambda_lo);
    const Eigen::VectorXd pushed_hi = project_nonneg(fp.rho() * g.upper + state.lambda_hi);

    NodalState d;
    d.theta = fp.droop().cwiseProduct(fp.setpoint() - p) +
              fp.k_i().cwiseProduct(pushed_lo - pushed_hi);
    d.lambda_lo = (pushed_lo - state.lambda_lo) / fp.rho();
    d.lambda_hi = (pushed_hi - state.lambda_hi) / fp.rho();
    return d;
}

NodalState rhs_projection_based_nodal(const FlowProblem& fp, const NodalState& state) {
    const int n = fp.node_count();
    require_length(state.theta, n, "theta");
    require_length(state.lambda_lo, n, "lambda_lo");
    require_length(state.lambda_hi, n, "lambda_hi");
    if ((state.lambda_lo.array() < -kBoundaryTol).any() ||
        (state.lambda_hi.array() < -kBoundaryTol).any()) {
        throw NegativeDualState("projection-based integrator states must stay nonnegative");
    }

    const Eigen::VectorXd p = fp.injections(state.theta);
    const LimitGaps g = limit_gaps(fp, p);

    NodalState d;
    d.theta = fp.droop().cwiseProduct(fp.setpoint() - p) +
              fp.k_i_sqrt().cwiseProduct(state.lambda_lo - state.lambda_hi) +
              fp.k_p().cwiseProduct(project_nonneg(g.lower) - project_nonneg(g.upper));
    d.lambda_lo.resize(n);
    d.lambda_hi.resize(n);
    for (int i = 0; i < n; ++i) {
        const double rate_lo = fp.k_i_sqrt()(i) * g.lower(i);
        const double rate_hi = fp.k_i_sqrt()(i) * g.upper(i);
        // tangent cone of the orthant: interior components pass, boundary
        // components keep only inward directions
        d.lambda_lo(i) = state.lambda_lo(i) > kBoundaryTol ? rate_lo : std::max(rate_lo, 0.0);
        d.lambda_hi(i) = state.lambda_hi(i) > kBoundaryTol ? rate_hi : std::max(rate_hi, 0.0);
    }
    return d;
}

EdgeState rhs_primal_dual_edge(const FlowProblem& fp, const EdgeState& state) {
    const int n = fp.node_count();
    const int e = fp.net().edge_count();
    require_length(state.eta, e, "eta");
    require_length(state.mu_lo, n, "mu_lo");
    require_length(state.mu_hi, n, "mu_hi");

    const Eigen::MatrixXd bv = fp.net().weighted_incidence();
    const Eigen::VectorXd p = fp.injections_edge(state.eta);
    const LimitGaps g = limit_gaps(fp, p);
    const Eigen::VectorXd scaled_lo = fp.k_i_sqrt().cwiseProduct(g.lower);
    const Eigen::VectorXd scaled_hi = fp.k_i_sqrt().cwiseProduct(g.upper);
    const Eigen::VectorXd pushed_lo = project_nonneg(fp.rho() * scaled_lo + state.mu_lo);
    const Eigen::VectorXd pushed_hi = project_nonneg(fp.rho() * scaled_hi + state.mu_hi);

    EdgeState d;
    d.eta = bv.transpose() * (fp.droop().cwiseProduct(fp.setpoint() - p) +
                              fp.k_i_sqrt().cwiseProduct(pushed_lo - pushed_hi));
    d.mu_lo = (pushed_lo - state.mu_lo) / fp.rho();
    d.mu_hi = (pushed_hi - state.mu_hi) / fp.rho();
    return d;
}

namespace {

/// Two-branch penalty term: quadratic where the shifted constraint pushes the
/// dual upward, a negative quadratic in the dual elsewhere.
double penalty_term(double constraint_value, double mu, double rho) {
    if (rho * constraint_value + mu >= 0.0) {
        return constraint_value * mu + 0.5 * rho * constraint_value * constraint_value;
    }
    return -0.5 * mu * mu / rho;
}

}  // namespace

double augmented_lagrangian_value(const FlowProblem& fp,
                                  const Eigen::VectorXd& eta,
                                  const Eigen::VectorXd& mu_lo,
                                  const Eigen::VectorXd& mu_hi) {
    const Eigen::MatrixXd bv = fp.net().weighted_incidence();
    const Eigen::VectorXd flow = bv * eta;
    double value = 0.5 * flow.dot(fp.droop().cwiseProduct(flow)) +
                   (fp.load() - fp.setpoint()).dot(fp.droop().cwiseProduct(flow));

    const Eigen::VectorXd p = flow + fp.load();
    const LimitGaps g = limit_gaps(fp, p);
    for (int i = 0; i < fp.node_count(); ++i) {
        const double sk = fp.k_i_sqrt()(i);
        value += penalty_term(sk * g.lower(i), mu_lo(i), fp.rho());
        value += penalty_term(sk * g.upper(i), mu_hi(i), fp.rho());
    }
    return value;
}

Eigen::VectorXd augmented_lagrangian_gradient(const FlowProblem& fp,
                                              const Eigen::VectorXd& eta,
                                              const Eigen::VectorXd& mu_lo,
                                              const Eigen::VectorXd& mu_hi) {
    EdgeState state{eta, mu_lo, mu_hi};
    return -rhs_primal_dual_edge(fp, state).eta;
}

EdgeState map_to_edge(const FlowProblem& fp, const NodalState& state) {
    const int n = fp.node_count();
    require_length(state.theta, n, "theta");
    require_length(state.lambda_lo, n, "lambda_lo");
    require_length(state.lambda_hi, n, "lambda_hi");
    EdgeState edge;
    edge.eta = fp.net().weighted_incidence().transpose() * state.theta;
    edge.mu_lo = fp.k_i_sqrt().cwiseProduct(state.lambda_lo);
    edge.mu_hi = fp.k_i_sqrt().cwiseProduct(state.lambda_hi);
    return edge;
}

Simulator::Simulator(FlowProblem fp, Controller controller)
    : fp_(std::move(fp)), controller_(controller) {}

int Simulator::state_dim() const {
    const int n = fp_.node_count();
    return controller_ == Controller::kEdgePrimalDual ? fp_.net().edge_count() + 2 * n : 3 * n;
}

Eigen::VectorXd Simulator::pack(const NodalState& s) const {
    Eigen::VectorXd x(s.theta.size() + s.lambda_lo.size() + s.lambda_hi.size());
    x << s.theta, s.lambda_lo, s.lambda_hi;
    return x;
}

Eigen::VectorXd Simulator::pack(const EdgeState& s) const {
    Eigen::VectorXd x(s.eta.size() + s.mu_lo.size() + s.mu_hi.size());
    x << s.eta, s.mu_lo, s.mu_hi;
    return x;
}

NodalState Simulator::unpack_nodal(const Eigen::VectorXd& x) const {
    const int n = fp_.node_count();
    require_length(x, 3 * n, "packed nodal state");
    return {x.segment(0, n), x.segment(n, n), x.segment(2 * n, n)};
}

EdgeState Simulator::unpack_edge(const Eigen::VectorXd& x) const {
    const int n = fp_.node_count();
    const int e = fp_.net().edge_count();
    require_length(x, e + 2 * n, "packed edge state");
    return {x.segment(0, e), x.segment(e, n), x.segment(e + n, n)};
}

namespace {

Eigen::VectorXd rhs_packed(const FlowProblem& fp, Controller controller,
                           const Eigen::VectorXd& x) {
    const int n = fp.node_count();
    switch (controller) {
        case Controller::kProjectionFree: {
            NodalState s{x.segment(0, n), x.segment(n, n), x.segment(2 * n, n)};
            const NodalState d = rhs_projection_free_nodal(fp, s);
            Eigen::VectorXd out(3 * n);
            out << d.theta, d.lambda_lo, d.lambda_hi;
            return out;
        }
        case Controller::kProjectionBased: {
            NodalState s{x.segment(0, n), x.segment(n, n), x.segment(2 * n, n)};
            const NodalState d = rhs_projection_based_nodal(fp, s);
            Eigen::VectorXd out(3 * n);
            out << d.theta, d.lambda_lo, d.lambda_hi;
            return out;
        }
        case Controller::kEdgePrimalDual: {
            const int e = fp.net().edge_count();
            EdgeState s{x.segment(0, e), x.segment(e, n), x.segment(e + n, n)};
            const EdgeState d = rhs_primal_dual_edge(fp, s);
            Eigen::VectorXd out(e + 2 * n);
            out << d.eta, d.mu_lo, d.mu_hi;
            return out;
        }
    }
    throw Error("unknown controller");
}

}  // namespace

Eigen::VectorXd Simulator::rhs(const Eigen::VectorXd& x) const {
    return rhs_packed(fp_, controller_, x);
}

Eigen::VectorXd Simulator::frequencies(const Eigen::VectorXd& x) const {
    if (controller_ == Controller::kEdgePrimalDual) {
        return Eigen::VectorXd();
    }
    const int n = fp_.node_count();
    return rhs(x).segment(0, n);
}

double Simulator::stationarity_residual(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd d = rhs(x);
    if (controller_ == Controller::kEdgePrimalDual) {
        return d.norm();
    }
    const int n = fp_.node_count();
    const Eigen::VectorXd edge_drift =
        fp_.net().weighted_incidence().transpose() * d.segment(0, n);
    const double dual_part = d.segment(n, 2 * n).squaredNorm();
    return std::sqrt(edge_drift.squaredNorm() + dual_part);
}

Trajectory Simulator::integrate(const Eigen::VectorXd& x0,
                                double t_end,
                                double dt,
                                const std::vector<LoadStep>& events,
                                int record_every) const {
    if (!(dt > 0.0)) {
        throw ValidationError("dt must be positive");
    }
    if (record_every < 1) {
        throw ValidationError("record_every must be >= 1");
    }
    require_length(x0, state_dim(), "initial state");
    const int n = fp_.node_count();
    const int dual_offset = controller_ == Controller::kEdgePrimalDual ? fp_.net().edge_count() : n;
    if ((x0.segment(dual_offset, 2 * n).array() < 0.0).any()) {
        throw NegativeDualState("initial dual/integrator states must be nonnegative");
    }
    for (size_t k = 1; k < events.size(); ++k) {
        if (!(events[k].t > events[k - 1].t)) {
            throw ValidationError("event times must be strictly increasing");
        }
    }

    const long total_steps = std::lround(t_end / dt);
    // events fire at step boundaries, never mid-step
    std::vector<long> event_steps;
    event_steps.reserve(events.size());
    for (const LoadStep& ev : events) {
        event_steps.push_back(std::lround(std::ceil(ev.t / dt - 1e-9)));
    }

    FlowProblem current = fp_;
    Simulator stepper(current, controller_);
    auto field = [&stepper](const Eigen::VectorXd& v) { return stepper.rhs(v); };

    Trajectory traj;
    Eigen::VectorXd x = x0;
    auto record = [&](double t) {
        traj.times.push_back(t);
        traj.states.push_back(x);
        traj.omegas.push_back(stepper.frequencies(x));
        traj.residuals.push_back(stepper.stationarity_residual(x));
    };
    record(0.0);

    size_t next_event = 0;
    for (long step = 0; step < total_steps; ++step) {
        while (next_event < events.size() && event_steps[next_event] == step) {
            current = current.with_load(current.load() + events[next_event].delta_load);
            stepper = Simulator(current, controller_);
            ++next_event;
        }
        if (controller_ == Controller::kProjectionBased) {
            x = x + dt * stepper.rhs(x);
            x.segment(dual_offset, 2 * n) = x.segment(dual_offset, 2 * n).cwiseMax(0.0);
        } else {
            x = rk4_step(field, x, dt);
        }
        if (!x.allFinite()) {
            std::ostringstream msg;
            msg << "state became non-finite at t=" << (static_cast<double>(step + 1) * dt);
            throw NonFiniteState(msg.str());
        }
        if ((step + 1) % record_every == 0 || step + 1 == total_steps) {
            record(static_cast<double>(step + 1) * dt);
        }
    }
    return traj;
}

double verify_coinciding(const FlowProblem& fp,
                         const NodalState& state0,
                         double t_end,
                         double dt) {
    if ((state0.lambda_lo.array() < 0.0).any() || (state0.lambda_hi.array() < 0.0).any()) {
        throw NegativeDualState("initial integrator states must be nonnegative");
    }
    const Simulator nodal(fp, Controller::kProjectionFree);
    const Simulator edge(fp, Controller::kEdgePrimalDual);
    Eigen::VectorXd x_nodal = nodal.pack(state0);
    Eigen::VectorXd x_edge = edge.pack(map_to_edge(fp, state0));

    auto f_nodal = [&nodal](const Eigen::VectorXd& v) { return nodal.rhs(v); };
    auto f_edge = [&edge](const Eigen::VectorXd& v) { return edge.rhs(v); };

    const long steps = std::lround(t_end / dt);
    double max_deviation = 0.0;
    for (long s = 0; s <= steps; ++s) {
        const Eigen::VectorXd mapped = edge.pack(map_to_edge(fp, nodal.unpack_nodal(x_nodal)));
        max_deviation = std::max(max_deviation, (mapped - x_edge).norm());
        if (s == steps) break;
        x_nodal = rk4_step(f_nodal, x_nodal, dt);
        x_edge = rk4_step(f_edge, x_edge, dt);
        if (!x_nodal.allFinite() || !x_edge.allFinite()) {
            throw NonFiniteState("trajectory diverged during the coincidence check");
        }
    }
    return max_deviation;
}

KktSetDistance::KktSetDistance(const FlowProblem& fp, const KktPoint& kkt)
    : eta_star_(kkt.eta), mu_lo_star_(kkt.mu_lo), mu_hi_star_(kkt.mu_hi) {
    const Eigen::MatrixXd bv = fp.net().weighted_incidence();
    const Eigen::MatrixXd form = bv.transpose() * fp.droop().asDiagonal() * bv;
    const SymmetricEigen eig = symmetric_eigendecomposition(form);
    const double zero_tol = 1e-9 * std::max(1.0, eig.values.cwiseAbs().maxCoeff());
    std::vector<Eigen::Index> positive;
    for (Eigen::Index k = 0; k < eig.values.size(); ++k) {
        if (eig.values(k) > zero_tol) positive.push_back(k);
    }
    gamma_plus_.resize(form.rows(), static_cast<Eigen::Index>(positive.size()));
    for (size_t c = 0; c < positive.size(); ++c) {
        gamma_plus_.col(static_cast<Eigen::Index>(c)) = eig.vectors.col(positive[c]);
    }
}

double KktSetDistance::edge_distance(const EdgeState& state) const {
    const double primal = (gamma_plus_.transpose() * (state.eta - eta_star_)).squaredNorm();
    const double dual = (state.mu_lo - mu_lo_star_).squaredNorm() +
                        (state.mu_hi - mu_hi_star_).squaredNorm();
    return std::sqrt(primal + dual);
}

double KktSetDistance::nodal_distance(const FlowProblem& fp,
                                      Controller controller,
                                      const NodalState& state) const {
    EdgeState edge;
    edge.eta = fp.net().weighted_incidence().transpose() * state.theta;
    if (controller == Controller::kProjectionBased) {
        edge.mu_lo = state.lambda_lo;
        edge.mu_hi = state.lambda_hi;
    } else {
        edge.mu_lo = fp.k_i_sqrt().cwiseProduct(state.lambda_lo);
        edge.mu_hi = fp.k_i_sqrt().cwiseProduct(state.lambda_hi);
    }
    return edge_distance(edge);
}

double KktSetDistance::packed_distance(const Simulator& sim, const Eigen::VectorXd& x) const {
    if (sim.controller() == Controller::kEdgePrimalDual) {
        return edge_distance(sim.unpack_edge(x));
    }
    return nodal_distance(sim.problem(), sim.controller(), sim.unpack_nodal(x));
}

}  // namespace droopnet
