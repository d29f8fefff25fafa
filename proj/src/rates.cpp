#include "droopnet/rates.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "droopnet/graph.hpp"

namespace droopnet {

namespace {

double curvature_lhs(double kappa_alpha, double beta) {
    return kappa_alpha / (4.0 * beta) - 4.0 * beta * beta;
}

/// Unique positive root of kappa*alpha/(4 beta) - 4 beta^2 = rhs for rhs > 0.
/// The left side decreases strictly from +inf to -inf, so bisection from a
/// bracket around the crossing converges unconditionally.
double solve_curvature_root(double kappa_alpha, double rhs) {
    double hi = std::cbrt(kappa_alpha);  // lhs(hi) < 0 <= rhs by construction
    double lo = hi;
    int guard = 0;
    while (curvature_lhs(kappa_alpha, lo) < rhs) {
        lo *= 0.5;
        if (++guard > 4000 || lo <= 0.0) {
            throw NoPositiveBeta("curvature condition infeasible for every positive rate");
        }
    }
    while ((hi - lo) > 1e-12 * hi) {
        const double mid = 0.5 * (lo + hi);
        if (curvature_lhs(kappa_alpha, mid) >= rhs) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return lo;  // feasible side of the crossing
}

double m_theta_value(double rho, double l_g, double m_g, double d0, double mu_star_norm) {
    return rho * l_g * l_g + m_g * (rho * l_g * d0 + d0 + mu_star_norm);
}

double curvature_rhs(double l_g, double kappa, double gamma, double alpha, double m_theta,
                     double rho) {
    return l_g * l_g + kappa / 4.0 + (gamma + m_theta) * (alpha + m_theta + 1.0 / rho) +
           1.0 / (2.0 * rho * rho);
}

}  // namespace

std::string binding_constraint_tag(BindingConstraint b) {
    return b == BindingConstraint::kRateCap ? "18a" : "18b";
}

JacobianNormBounds jacobian_norm_bounds(const FlowProblem& fp) {
    JacobianNormBounds out;
    const double k_max = fp.k_i().maxCoeff();
    const double d_max = fp.net().max_degree();
    const double w_max = fp.net().weight_max();
    const double w_sum = fp.net().weight_sum();
    out.m_g = std::sqrt(2.0 * k_max * w_max * d_max);
    out.l_g = std::sqrt(2.0 * d_max * k_max * w_sum);

    const Eigen::MatrixXd jac = fp.k_i_sqrt().asDiagonal() * fp.net().weighted_incidence();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
    out.measured_spectral = svd.singularValues()(0);
    out.measured_frobenius = jac.norm();

    const double slack = 1e-9 * std::max(1.0, out.l_g);
    if (out.measured_spectral > out.m_g + slack || out.measured_frobenius > out.l_g + slack) {
        throw Error("measured Jacobian norms exceed their closed-form bounds");
    }
    return out;
}

ConvexityConstants strong_convexity_constants(const FlowProblem& fp) {
    const Eigen::MatrixXd bv = fp.net().weighted_incidence();
    const Eigen::MatrixXd form = bv.transpose() * fp.droop().asDiagonal() * bv;
    const SymmetricEigen eig = symmetric_eigendecomposition(form);

    ConvexityConstants out;
    out.alpha = smallest_positive_eigenvalue(eig.values);
    out.gamma = eig.values(eig.values.size() - 1);

    const SymmetricEigen lap_eig = symmetric_eigendecomposition(fp.net().laplacian());
    out.alpha_lower = fp.droop().minCoeff() * smallest_positive_eigenvalue(lap_eig.values);
    out.gamma_upper =
        2.0 * fp.net().weight_max() * fp.droop().maxCoeff() * fp.net().max_degree();

    const double slack = 1e-9 * std::max(1.0, out.gamma_upper);
    if (out.alpha_lower > out.alpha + slack || out.alpha > out.gamma + slack ||
        out.gamma > out.gamma_upper + slack) {
        throw Error("curvature constant chain violated");
    }
    return out;
}

double delta_min(const FlowProblem& fp, const KktPoint& kkt, double d0) {
    if (!(d0 > 0.0)) {
        throw NonpositiveD0("d0 must be strictly positive");
    }
    const std::vector<int> active = kkt.active_union();
    std::vector<bool> is_active(static_cast<size_t>(fp.node_count()), false);
    for (int i : active) is_active[static_cast<size_t>(i)] = true;

    bool any_inactive = false;
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < fp.node_count(); ++i) {
        if (is_active[static_cast<size_t>(i)]) continue;
        any_inactive = true;
        // less negative of the two limit gaps at the optimizer
        const double gap = std::max(fp.p_lo()(i) - kkt.p(i), kkt.p(i) - fp.p_hi()(i));
        worst = std::max(worst, fp.k_i_sqrt()(i) * gap);
    }
    if (!any_inactive) {
        throw AllNodesActive("delta_min needs at least one inactive node");
    }
    const double bracket = std::max(1.0 + fp.rho() * worst / d0, 0.0);
    return 1.0 - bracket * bracket;
}

RateCertificate certify_beta(const FlowProblem& fp, const KktPoint& kkt, double d0) {
    const std::vector<int> active = kkt.active_union();
    if (active.empty()) {
        throw EmptyActiveSet(
            "rate certification needs an optimizer with at least one active limit");
    }
    if (!check_licq(fp, kkt)) {
        throw LicqViolated("active constraint rows are linearly dependent");
    }

    RateCertificate cert;
    cert.kappa = kappa(fp, active);
    if (!(cert.kappa > 0.0)) {
        throw LicqViolated("kappa is not strictly positive");
    }
    const JacobianNormBounds norms = jacobian_norm_bounds(fp);
    const ConvexityConstants conv = strong_convexity_constants(fp);
    cert.m_g = norms.m_g;
    cert.l_g = norms.l_g;
    cert.alpha = conv.alpha;
    cert.gamma = conv.gamma;
    cert.alpha_lower = conv.alpha_lower;
    cert.gamma_upper = conv.gamma_upper;
    cert.d0 = d0;
    cert.rho = fp.rho();
    cert.mu_star_norm = kkt.mu_stacked().norm();
    cert.m_theta = m_theta_value(cert.rho, cert.l_g, cert.m_g, d0, cert.mu_star_norm);
    cert.delta_min = delta_min(fp, kkt, d0);
    if (!(cert.delta_min > 0.0)) {
        std::ostringstream msg;
        msg << "delta_min=" << cert.delta_min
            << " is degenerate (an inactive node has zero limit slack)";
        throw NoPositiveBeta(msg.str());
    }

    cert.beta_rate_cap =
        cert.kappa * cert.delta_min / (46.0 * cert.rho * cert.l_g * cert.l_g);
    const double rhs =
        curvature_rhs(cert.l_g, cert.kappa, cert.gamma, cert.alpha, cert.m_theta, cert.rho);
    cert.beta_curvature_root = solve_curvature_root(cert.kappa * cert.alpha, rhs);
    cert.beta = std::min(cert.beta_rate_cap, cert.beta_curvature_root);
    cert.binding = cert.beta_rate_cap <= cert.beta_curvature_root
                       ? BindingConstraint::kRateCap
                       : BindingConstraint::kCurvature;

    // re-verify both inequalities at the certified rate
    if (cert.beta > cert.beta_rate_cap * (1.0 + 1e-12) ||
        curvature_lhs(cert.kappa * cert.alpha, cert.beta) < rhs * (1.0 - 1e-9)) {
        throw Error("certified rate fails its own inequalities");
    }
    return cert;
}

TuningPlan tune_gains(const FlowProblem& fp, const KktPoint& kkt, double d0, double s) {
    if (!(s >= 1.0)) {
        throw ValidationError("gain scaling factor must be >= 1");
    }
    TuningPlan plan;
    plan.s = s;
    plan.before = certify_beta(fp, kkt, d0);
    const FlowProblem scaled = fp.scaled_gains(s);
    plan.k_i_new = scaled.k_i();
    plan.rho_new = scaled.rho();
    if (s == 1.0) {
        plan.after = plan.before;
        return plan;
    }
    const KktPoint scaled_kkt = solve_kkt_oracle(scaled);
    plan.after = certify_beta(scaled, scaled_kkt, d0);
    if (!(plan.after.beta > plan.before.beta)) {
        std::ostringstream msg;
        msg << "scaled certificate did not improve: " << plan.after.beta
            << " <= " << plan.before.beta;
        throw Error(msg.str());
    }
    return plan;
}

RhoWindow rho_window(const FlowProblem& fp, const KktPoint& kkt, double d0, int grid_points) {
    if (grid_points < 3) {
        throw ValidationError("rho window grid needs at least 3 points");
    }
    const std::vector<int> active = kkt.active_union();
    if (active.empty()) {
        throw EmptyActiveSet("rho window needs an optimizer with active limits");
    }
    const double kap = kappa(fp, active);
    if (!(kap > 0.0)) {
        throw LicqViolated("kappa is not strictly positive");
    }
    const ConvexityConstants conv = strong_convexity_constants(fp);
    const JacobianNormBounds norms = jacobian_norm_bounds(fp);
    const double c1 = norms.l_g * norms.l_g + kap / 4.0 + conv.gamma * conv.alpha;
    const double denom = 23.0 * kap * conv.alpha;

    RhoWindow window;
    window.lower = 2.0 * c1 / denom;
    window.upper = 1.0 + std::max({2.0 * c1, 2.0 * conv.gamma, 1062.0 / 1058.0}) / denom;

    window.grid_max_beta = -1.0;
    int argmax_index = 0;
    for (int g = 0; g < grid_points; ++g) {
        const double rho = window.lower + (window.upper - window.lower) * g /
                                              static_cast<double>(grid_points - 1);
        const RateCertificate cert = certify_beta(fp.with_rho(rho), kkt, d0);
        if (cert.beta > window.grid_max_beta) {
            window.grid_max_beta = cert.beta;
            window.grid_argmax = rho;
            argmax_index = g;
        }
    }
    window.argmax_interior = argmax_index > 0 && argmax_index < grid_points - 1;
    return window;
}

BetaSandwich beta_sandwich(const FlowProblem& fp, const KktPoint& kkt, double d0, double rho) {
    const FlowProblem at_rho = fp.with_rho(rho);
    const RateCertificate cert = certify_beta(at_rho, kkt, d0);

    const double c = 1.25 * cert.l_g * cert.l_g +
                     (cert.gamma_upper + cert.m_theta) *
                         (cert.gamma_upper + cert.m_theta + 1.0 / rho) +
                     1.0 / (2.0 * rho * rho);
    const double p = c / 4.0;
    const double q = -cert.kappa * cert.alpha_lower / 16.0;
    const double disc = q * q / 4.0 + p * p * p / 27.0;  // positive: p > 0
    const double root_disc = std::sqrt(disc);
    const double cardano = std::cbrt(-q / 2.0 + root_disc) + std::cbrt(-q / 2.0 - root_disc);

    BetaSandwich s;
    s.cardano_root = cardano;
    s.lower = std::min(cert.beta_rate_cap, cardano);
    s.upper = 1.0 / (46.0 * rho);
    return s;
}

EdgeAdvisory edge_addition_advisor(const FlowProblem& fp, const KktPoint& kkt, double d0,
                                   int i, int j, double weight) {
    const PowerNetwork& net = fp.net();
    if (i == j || i < 0 || j < 0 || i >= net.node_count() || j >= net.node_count()) {
        throw ValidationError("candidate edge endpoints are invalid");
    }
    if (net.has_edge(i, j)) {
        std::ostringstream msg;
        msg << "edge (" << i << ", " << j << ") already exists";
        throw EdgeExists(msg.str());
    }
    if (weight > net.weight_max() * (1.0 + 1e-12)) {
        throw WeightTooLarge("candidate weight exceeds the current maximum edge weight");
    }
    const int d_max = net.max_degree();
    if (net.degree(i) >= d_max || net.degree(j) >= d_max) {
        throw DegreeCapViolated("both endpoints must have degree below the maximum");
    }

    EdgeAdvisory adv;
    adv.i = i;
    adv.j = j;
    adv.weight = weight;

    const RateCertificate before = certify_beta(fp, kkt, d0);
    adv.binding = before.binding;
    adv.beta_before = before.beta;
    adv.alpha_before = before.alpha;

    // penalty-gain condition under which the curvature route is guaranteed to
    // benefit from the added edge
    const double k_max = fp.k_i().maxCoeff();
    const double m_max = fp.droop().maxCoeff();
    const double w_max = net.weight_max();
    const double w_sum = net.weight_sum();
    const bool uniform = (w_max - net.weight_min()) <= 1e-12 * w_max;
    const double s_m = k_max / m_max;
    if (uniform && s_m > 1.0 && net.node_count() >= 3) {
        adv.used_uniform_weight_rule = true;
        const double e = net.edge_count();
        const double lhs = (21.0 * e - 2.0 * std::sqrt(e) * d0) * fp.rho();
        const double rhs = 2.0 / s_m + (d0 + before.mu_star_norm) / std::sqrt(k_max * w_max);
        adv.rho_condition_holds = lhs >= rhs;
    } else {
        const double c = std::sqrt(w_max / w_sum);
        const double lhs = (21.0 / 2.0 - c * d0) * fp.rho();
        const double rhs = (m_max / k_max) * c * c +
                           (d0 + before.mu_star_norm) * c / before.l_g;
        adv.rho_condition_holds = lhs >= rhs;
    }

    // perturbation model: the added edge only raises alpha
    const PowerNetwork extended = net.with_edge(i, j, weight);
    const FlowProblem fp_extended = fp.with_network(extended);
    const ConvexityConstants conv_after = strong_convexity_constants(fp_extended);
    adv.alpha_after = conv_after.alpha;

    const double rhs_after = curvature_rhs(before.l_g, before.kappa, before.gamma,
                                           adv.alpha_after, before.m_theta, before.rho);
    const double root_after = solve_curvature_root(before.kappa * adv.alpha_after, rhs_after);
    adv.beta_after_model = std::min(before.beta_rate_cap, root_after);

    if (adv.rho_condition_holds) {
        if (adv.binding == BindingConstraint::kRateCap &&
            std::abs(adv.beta_after_model - adv.beta_before) > 1e-12) {
            throw Error("rate-cap-bound certificate changed under an edge addition");
        }
        if (adv.binding == BindingConstraint::kCurvature &&
            adv.beta_after_model < adv.beta_before - 1e-15) {
            throw Error("curvature-bound certificate decreased under an edge addition");
        }
    }

    try {
        const KktPoint kkt_after = solve_kkt_oracle(fp_extended);
        adv.recertified = certify_beta(fp_extended, kkt_after, d0);
    } catch (const Error&) {
        adv.recertified.reset();  // informational only
    }
    return adv;
}

}  // namespace droopnet
