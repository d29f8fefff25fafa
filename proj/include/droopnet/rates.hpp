#pragma once

#include <optional>
#include <string>

#include <Eigen/Dense>

#include "droopnet/errors.hpp"
#include "droopnet/flowproblem.hpp"

namespace droopnet {

/// Which of the two rate inequalities determines the certified decay rate.
/// Serialized as "18a" (the linear cap kappa delta / (46 rho L_g^2)) and
/// "18b" (the curvature condition solved for its largest feasible rate).
enum class BindingConstraint { kRateCap, kCurvature };

[[nodiscard]] std::string binding_constraint_tag(BindingConstraint b);

/// Norm bounds of the scaled constraint Jacobian K_I B V together with the
/// directly measured norms (always <= the bounds).
struct JacobianNormBounds {
    double m_g = 0.0;                 ///< spectral-norm bound sqrt(2 k_max w_max d_max)
    double l_g = 0.0;                 ///< Frobenius-norm bound sqrt(2 d_max k_max w_sigma)
    double measured_spectral = 0.0;
    double measured_frobenius = 0.0;
};

JacobianNormBounds jacobian_norm_bounds(const FlowProblem& fp);

/// Curvature constants of the edge-coordinate objective: alpha is the smallest
/// positive eigenvalue of V B^T M B V (strong convexity on the positive
/// eigenspace), gamma the largest (gradient Lipschitz constant), bracketed by
/// m_min lambda_min_plus(L) and 2 w_max m_max d_max.
struct ConvexityConstants {
    double alpha = 0.0;
    double gamma = 0.0;
    double alpha_lower = 0.0;
    double gamma_upper = 0.0;
};

ConvexityConstants strong_convexity_constants(const FlowProblem& fp);

/// 1 - [1 + rho max_i sqrt(k_i) g_i(eta*) / d_0]_+^2 over the inactive nodes,
/// where g_i is the less negative of the node's two limit gaps at the
/// optimizer. Returns 0 when an inactive node has zero slack (degenerate
/// certificate).
double delta_min(const FlowProblem& fp, const KktPoint& kkt, double d0);

/// Everything that enters the certified decay rate, plus the rate itself.
struct RateCertificate {
    double m_g = 0.0;
    double l_g = 0.0;
    double m_theta = 0.0;
    double alpha = 0.0;
    double gamma = 0.0;
    double alpha_lower = 0.0;
    double gamma_upper = 0.0;
    double kappa = 0.0;
    double delta_min = 0.0;
    double d0 = 0.0;
    double mu_star_norm = 0.0;
    double rho = 0.0;
    double beta = 0.0;
    double beta_rate_cap = 0.0;         ///< value of the linear cap
    double beta_curvature_root = 0.0;   ///< largest rate satisfying the curvature condition
    BindingConstraint binding = BindingConstraint::kRateCap;
};

/// Certifies a decay rate for the problem at the given optimizer: the rate is
/// the minimum of the linear cap and the unique positive root of the
/// curvature equality (found by bisection; the left side is strictly
/// decreasing). Both inequalities are re-verified at the returned rate.
RateCertificate certify_beta(const FlowProblem& fp, const KktPoint& kkt, double d0);

/// Gain scaling plan k_i' = s k_i, rho' = rho / sqrt(s); re-certifies and
/// checks that the rate strictly improves for s > 1.
struct TuningPlan {
    double s = 1.0;
    Eigen::VectorXd k_i_new;
    double rho_new = 0.0;
    RateCertificate before;
    RateCertificate after;
};

TuningPlan tune_gains(const FlowProblem& fp, const KktPoint& kkt, double d0, double s);

/// Bracketing interval for the rate-maximizing penalty gain, plus a grid
/// search over it confirming an interior maximizer.
struct RhoWindow {
    double lower = 0.0;
    double upper = 0.0;
    double grid_argmax = 0.0;
    double grid_max_beta = 0.0;
    bool argmax_interior = false;
};

RhoWindow rho_window(const FlowProblem& fp, const KktPoint& kkt, double d0,
                     int grid_points = 200);

/// Pointwise sandwich for the certified rate at a given rho: the lower end is
/// min(linear cap, Cardano root of the worst-case cubic), the upper end is
/// 1/(46 rho).
struct BetaSandwich {
    double lower = 0.0;
    double upper = 0.0;
    double cardano_root = 0.0;
};

BetaSandwich beta_sandwich(const FlowProblem& fp, const KktPoint& kkt, double d0, double rho);

/// Effect of adding one edge on the certified rate. The post-edge rate is
/// evaluated under the perturbation model of the topology result: only the
/// curvature constant alpha (which the new edge can only increase) is updated;
/// the norm bounds, kappa, delta_min and M_theta keep their pre-edge values.
/// A full re-certification on the extended network is attached for reference.
struct EdgeAdvisory {
    int i = 0;
    int j = 0;
    double weight = 0.0;
    BindingConstraint binding = BindingConstraint::kRateCap;
    bool rho_condition_holds = false;
    bool used_uniform_weight_rule = false;
    double alpha_before = 0.0;
    double alpha_after = 0.0;
    double beta_before = 0.0;
    double beta_after_model = 0.0;
    std::optional<RateCertificate> recertified;
};

EdgeAdvisory edge_addition_advisor(const FlowProblem& fp, const KktPoint& kkt, double d0,
                                   int i, int j, double weight);

}  // namespace droopnet
