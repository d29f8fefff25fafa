#pragma once

#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "droopnet/errors.hpp"
#include "droopnet/flowproblem.hpp"

namespace droopnet {

/// Which closed-loop system is being simulated.
enum class Controller {
    kProjectionFree,   ///< Lipschitz-continuous dynamics with penalty-smoothed duals
    kProjectionBased,  ///< tangent-cone projected integrators plus proportional channel
    kEdgePrimalDual,   ///< primal-dual flow of the penalized problem in edge coordinates
};

/// Node-coordinate state: angles plus the two integrator banks.
struct NodalState {
    Eigen::VectorXd theta;
    Eigen::VectorXd lambda_lo;
    Eigen::VectorXd lambda_hi;
};

/// Edge-coordinate state: weighted angle differences plus dual multipliers.
struct EdgeState {
    Eigen::VectorXd eta;
    Eigen::VectorXd mu_lo;
    Eigen::VectorXd mu_hi;
};

/// Elementwise projection onto the nonnegative orthant.
Eigen::VectorXd project_nonneg(const Eigen::VectorXd& v);

/// Limit violation functions g_lo = P_lo - P and g_hi = P - P_hi evaluated at
/// the injections P. Their sum is the constant P_lo - P_hi.
struct LimitGaps {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

LimitGaps limit_gaps(const FlowProblem& fp, const Eigen::VectorXd& injections);

NodalState rhs_projection_free_nodal(const FlowProblem& fp, const NodalState& state);
NodalState rhs_projection_based_nodal(const FlowProblem& fp, const NodalState& state);
EdgeState rhs_primal_dual_edge(const FlowProblem& fp, const EdgeState& state);

/// Penalized Lagrangian of the edge-coordinate problem; its negative eta
/// gradient is the primal direction of rhs_primal_dual_edge.
double augmented_lagrangian_value(const FlowProblem& fp,
                                  const Eigen::VectorXd& eta,
                                  const Eigen::VectorXd& mu_lo,
                                  const Eigen::VectorXd& mu_hi);

/// Analytic eta-gradient of the penalized Lagrangian (exposed for the
/// finite-difference checks).
Eigen::VectorXd augmented_lagrangian_gradient(const FlowProblem& fp,
                                              const Eigen::VectorXd& eta,
                                              const Eigen::VectorXd& mu_lo,
                                              const Eigen::VectorXd& mu_hi);

/// Coordinate map (theta, lambda) -> (eta, mu) = (V B^T theta, K_I lambda)
/// with K_I = diag(sqrt(k_i)).
EdgeState map_to_edge(const FlowProblem& fp, const NodalState& state);

/// Single classical Runge-Kutta step of dx/dt = f(x).
template <class F>
Eigen::VectorXd rk4_step(F&& f, const Eigen::VectorXd& x, double dt) {
    const Eigen::VectorXd k1 = f(x);
    const Eigen::VectorXd k2 = f(x + 0.5 * dt * k1);
    const Eigen::VectorXd k3 = f(x + 0.5 * dt * k2);
    const Eigen::VectorXd k4 = f(x + dt * k3);
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Piecewise-constant load change applied at time t (snapped to the next step
/// boundary, never mid-step).
struct LoadStep {
    double t = 0.0;
    Eigen::VectorXd delta_load;
};

/// Sampled solution of one closed-loop run.
struct Trajectory {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> states;   ///< packed states, one per sample
    std::vector<Eigen::VectorXd> omegas;   ///< per-node d theta/dt (empty for edge runs)
    std::vector<double> residuals;         ///< stationarity residual per sample
    std::vector<double> distances;         ///< optional distance to a reference optimizer

    [[nodiscard]] size_t size() const { return times.size(); }
};

/// Fixed-step simulator for one controller on one problem. RK4 drives the two
/// Lipschitz systems; the projection-based system has a discontinuous dual
/// field and uses explicit Euler with an orthant clamp after each step.
class Simulator {
public:
    Simulator(FlowProblem fp, Controller controller);

    [[nodiscard]] const FlowProblem& problem() const { return fp_; }
    [[nodiscard]] Controller controller() const { return controller_; }
    [[nodiscard]] int state_dim() const;

    [[nodiscard]] Eigen::VectorXd pack(const NodalState& s) const;
    [[nodiscard]] Eigen::VectorXd pack(const EdgeState& s) const;
    [[nodiscard]] NodalState unpack_nodal(const Eigen::VectorXd& x) const;
    [[nodiscard]] EdgeState unpack_edge(const Eigen::VectorXd& x) const;

    [[nodiscard]] Eigen::VectorXd rhs(const Eigen::VectorXd& x) const;
    /// Per-node frequencies d theta/dt; empty for the edge system.
    [[nodiscard]] Eigen::VectorXd frequencies(const Eigen::VectorXd& x) const;
    /// Norm of the state derivative with the uniform angle drift projected
    /// out: ||(V B^T dtheta, dlambda)|| for nodal systems, the full derivative
    /// norm for the edge system. Vanishes exactly on the steady-state set even
    /// when the synchronous frequency is nonzero.
    [[nodiscard]] double stationarity_residual(const Eigen::VectorXd& x) const;

    Trajectory integrate(const Eigen::VectorXd& x0,
                         double t_end,
                         double dt,
                         const std::vector<LoadStep>& events = {},
                         int record_every = 1) const;

private:
    FlowProblem fp_;
    Controller controller_;
};

/// Simulates the projection-free nodal system and the edge primal-dual system
/// from matched initial conditions with identical steps and returns the
/// maximum over samples of the deviation between the mapped nodal trajectory
/// and the edge trajectory.
double verify_coinciding(const FlowProblem& fp,
                         const NodalState& state0,
                         double t_end,
                         double dt);

/// Distance to the optimizer set in edge coordinates. The primal part of the
/// set is an affine subspace (the optimizer plus the null space of B V), so
/// the distance projects the primal deviation onto the positive eigenspace of
/// V B^T M B V before taking norms.
class KktSetDistance {
public:
    KktSetDistance(const FlowProblem& fp, const KktPoint& kkt);

    [[nodiscard]] double edge_distance(const EdgeState& state) const;
    /// Maps a nodal state to edge coordinates first. The dual correspondence
    /// differs per controller: the projection-free integrators carry
    /// lambda = K_I^{-1} mu while the projection-based ones carry the dual
    /// itself.
    [[nodiscard]] double nodal_distance(const FlowProblem& fp,
                                        Controller controller,
                                        const NodalState& state) const;
    [[nodiscard]] double packed_distance(const Simulator& sim, const Eigen::VectorXd& x) const;

private:
    Eigen::MatrixXd gamma_plus_;
    Eigen::VectorXd eta_star_, mu_lo_star_, mu_hi_star_;
};

}  // namespace droopnet
