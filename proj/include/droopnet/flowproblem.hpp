#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "droopnet/errors.hpp"
#include "droopnet/graph.hpp"

namespace droopnet {

/// Data of the constrained flow problem
///
///   min_theta  1/2 || L theta + P_L - P* ||^2_M
///   s.t.       P_lo <= L theta + P_L <= P_hi
///
/// together with the controller gains acting on it: droop gains m_i, integral
/// gains k_i (the constraint scaling uses their square roots), proportional
/// gains k_p (projection-based controller only), and the penalty gain rho.
/// All power quantities are per-unit. Immutable once constructed.
class FlowProblem {
public:
    FlowProblem(PowerNetwork net,
                Eigen::VectorXd load,
                Eigen::VectorXd setpoint,
                Eigen::VectorXd p_lo,
                Eigen::VectorXd p_hi,
                Eigen::VectorXd droop,
                Eigen::VectorXd k_i,
                Eigen::VectorXd k_p,
                double rho);

    [[nodiscard]] const PowerNetwork& net() const { return net_; }
    [[nodiscard]] int node_count() const { return net_.node_count(); }
    [[nodiscard]] const Eigen::VectorXd& load() const { return load_; }
    [[nodiscard]] const Eigen::VectorXd& setpoint() const { return setpoint_; }
    [[nodiscard]] const Eigen::VectorXd& p_lo() const { return p_lo_; }
    [[nodiscard]] const Eigen::VectorXd& p_hi() const { return p_hi_; }
    [[nodiscard]] const Eigen::VectorXd& droop() const { return droop_; }
    [[nodiscard]] const Eigen::VectorXd& k_i() const { return k_i_; }
    [[nodiscard]] const Eigen::VectorXd& k_i_sqrt() const { return k_i_sqrt_; }
    [[nodiscard]] const Eigen::VectorXd& k_p() const { return k_p_; }
    [[nodiscard]] double rho() const { return rho_; }

    /// Injections for a given angle vector: P = L theta + P_L.
    [[nodiscard]] Eigen::VectorXd injections(const Eigen::VectorXd& theta) const;
    /// Injections in edge coordinates: P = B V eta + P_L.
    [[nodiscard]] Eigen::VectorXd injections_edge(const Eigen::VectorXd& eta) const;

    [[nodiscard]] FlowProblem with_load(Eigen::VectorXd new_load) const;
    [[nodiscard]] FlowProblem with_network(PowerNetwork new_net) const;
    [[nodiscard]] FlowProblem with_rho(double new_rho) const;
    /// Gain scaling k_i' = s k_i, rho' = rho / sqrt(s).
    [[nodiscard]] FlowProblem scaled_gains(double s) const;

private:
    PowerNetwork net_;
    Eigen::VectorXd load_, setpoint_, p_lo_, p_hi_, droop_, k_i_, k_i_sqrt_, k_p_;
    double rho_;
};

/// Clause-by-clause status of the feasibility assumptions. The sum conditions
/// on the limits are equivalent to the existence of strictly feasible angles.
struct FeasibilityReport {
    bool limits_ordered = false;        ///< P_lo,i < P_hi,i for all i
    bool load_above_lower_sum = false;  ///< sum P_lo < sum P_L
    bool load_below_upper_sum = false;  ///< sum P_L < sum P_hi
    bool setpoints_within_limits = false;

    std::vector<std::string> violations;

    [[nodiscard]] bool feasible_limits_and_loads() const {
        return limits_ordered && load_above_lower_sum && load_below_upper_sum;
    }
    [[nodiscard]] bool feasible_setpoints() const { return setpoints_within_limits; }
    /// Existence of theta with strict limit satisfaction; equivalent to the
    /// sum conditions above.
    [[nodiscard]] bool strictly_feasible_angles_exist() const {
        return feasible_limits_and_loads();
    }
    [[nodiscard]] bool feasible() const {
        return feasible_limits_and_loads() && feasible_setpoints();
    }
};

FeasibilityReport check_feasibility(const FlowProblem& fp);

/// Optimal primal-dual pair of the flow problem. Angles are pinned to
/// theta_0 = 0 (the problem only determines them up to a uniform shift);
/// eta = V B^T theta; the multipliers belong to the constraint rows scaled by
/// sqrt(k_i). omega_s is the common steady-state frequency deviation.
struct KktPoint {
    Eigen::VectorXd theta;
    Eigen::VectorXd eta;
    Eigen::VectorXd p;
    Eigen::VectorXd mu_lo;
    Eigen::VectorXd mu_hi;
    std::vector<int> active_lo;
    std::vector<int> active_hi;
    double omega_s = 0.0;
    double kkt_residual = 0.0;

    [[nodiscard]] std::vector<int> active_union() const;
    [[nodiscard]] Eigen::VectorXd mu_stacked() const;  ///< (mu_lo, mu_hi)
};

/// Exact brute-force solver: enumerates every assignment of each node to
/// {at-lower, free, at-upper}, solves the induced equality-constrained QP,
/// recovers multipliers from stationarity, and returns the unique assignment
/// passing primal/dual feasibility and complementarity.
///
/// Throws EnumerationTooLarge when 3^n > 10^6, NoKktPointFound when no
/// assignment passes (assumption violation or numerical failure), and
/// AmbiguousActiveSet when several pass (degenerate problem).
KktPoint solve_kkt_oracle(const FlowProblem& fp);

/// Synchronous frequency from lossless power balance and droop stationarity
/// at the free nodes, given the active sets of the optimizer.
double synchronous_frequency(const FlowProblem& fp,
                             const std::vector<int>& active_lo,
                             const std::vector<int>& active_hi);

struct KappaRoutes {
    double from_jacobian = 0.0;         ///< lambda_min of the active constraint-Jacobian Gram matrix
    double from_active_laplacian = 0.0; ///< lambda_min of K_I L_I K_I with per-node sqrt(k_i)
};

/// Both computations of kappa; they agree to 1e-10 for any active set.
KappaRoutes kappa_routes(const FlowProblem& fp, const std::vector<int>& active);

/// Smallest eigenvalue of the active constraint-Jacobian Gram matrix,
/// cross-checked against the scaled active-graph Laplacian route.
double kappa(const FlowProblem& fp, const std::vector<int>& active);

/// True when the active constraint rows are linearly independent
/// (smallest singular value > 1e-8 * largest). Vacuously true when no
/// constraint is active.
bool check_licq(const FlowProblem& fp, const KktPoint& kkt);

/// Matrices of the flow problem in edge coordinates:
///   min 1/2 eta^T Q eta + q^T eta   s.t.  lower <= A eta <= upper
/// with Q = (BV)^T M (BV), q = V B^T M (P_L - P*), and A = K_I B V.
struct EdgeProblemData {
    Eigen::MatrixXd quadratic;
    Eigen::VectorXd linear;
    Eigen::MatrixXd constraint_rows;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

EdgeProblemData edge_problem_data(const FlowProblem& fp);

/// Full KKT residual (stationarity, primal/dual feasibility, complementarity)
/// of a candidate point; used by tests and the oracle's final self-check.
double kkt_residual(const FlowProblem& fp, const KktPoint& point);

}  // namespace droopnet
