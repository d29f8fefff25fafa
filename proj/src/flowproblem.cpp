#include "droopnet/flowproblem.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <utility>

namespace droopnet {

namespace {

constexpr double kPrimalTol = 1e-8;
constexpr double kDualTol = 1e-9;
constexpr double kSolveTol = 1e-9;

void require_positive(const Eigen::VectorXd& v, const char* name) {
    if ((v.array() <= 0.0).any()) {
        std::ostringstream msg;
        msg << name << " must be strictly positive";
        throw ValidationError(msg.str());
    }
}

void require_size(const Eigen::VectorXd& v, int n, const char* name) {
    if (v.size() != n) {
        std::ostringstream msg;
        msg << name << " has length " << v.size() << ", expected " << n;
        throw ValidationError(msg.str());
    }
}

}  // namespace

FlowProblem::FlowProblem(PowerNetwork net,
                         Eigen::VectorXd load,
                         Eigen::VectorXd setpoint,
                         Eigen::VectorXd p_lo,
                         Eigen::VectorXd p_hi,
                         Eigen::VectorXd droop,
                         Eigen::VectorXd k_i,
                         Eigen::VectorXd k_p,
                         double rho)
    : net_(std::move(net)),
      load_(std::move(load)),
      setpoint_(std::move(setpoint)),
      p_lo_(std::move(p_lo)),
      p_hi_(std::move(p_hi)),
      droop_(std::move(droop)),
      k_i_(std::move(k_i)),
      k_p_(std::move(k_p)),
      rho_(rho) {
    const int n = net_.node_count();
    require_size(load_, n, "loads");
    require_size(setpoint_, n, "setpoints");
    require_size(p_lo_, n, "p_lo");
    require_size(p_hi_, n, "p_hi");
    require_size(droop_, n, "droop");
    require_size(k_i_, n, "k_i");
    require_size(k_p_, n, "k_p");
    require_positive(droop_, "droop gains");
    require_positive(k_i_, "integral gains");
    require_positive(k_p_, "proportional gains");
    if (!(rho_ > 0.0)) {
        throw ValidationError("rho must be strictly positive");
    }
    k_i_sqrt_ = k_i_.cwiseSqrt();
}

Eigen::VectorXd FlowProblem::injections(const Eigen::VectorXd& theta) const {
    return net_.laplacian() * theta + load_;
}

Eigen::VectorXd FlowProblem::injections_edge(const Eigen::VectorXd& eta) const {
    return net_.weighted_incidence() * eta + load_;
}

FlowProblem FlowProblem::with_load(Eigen::VectorXd new_load) const {
    return FlowProblem(net_, std::move(new_load), setpoint_, p_lo_, p_hi_, droop_, k_i_, k_p_, rho_);
}

FlowProblem FlowProblem::with_network(PowerNetwork new_net) const {
    return FlowProblem(std::move(new_net), load_, setpoint_, p_lo_, p_hi_, droop_, k_i_, k_p_, rho_);
}

FlowProblem FlowProblem::with_rho(double new_rho) const {
    return FlowProblem(net_, load_, setpoint_, p_lo_, p_hi_, droop_, k_i_, k_p_, new_rho);
}

FlowProblem FlowProblem::scaled_gains(double s) const {
    if (!(s > 0.0)) {
        throw ValidationError("gain scaling factor must be positive");
    }
    return FlowProblem(net_, load_, setpoint_, p_lo_, p_hi_, droop_, k_i_ * s, k_p_,
                       rho_ / std::sqrt(s));
}

FeasibilityReport check_feasibility(const FlowProblem& fp) {
    FeasibilityReport report;
    report.limits_ordered = true;
    report.setpoints_within_limits = true;
    const int n = fp.node_count();
    for (int i = 0; i < n; ++i) {
        if (!(fp.p_lo()(i) < fp.p_hi()(i))) {
            report.limits_ordered = false;
            std::ostringstream msg;
            msg << "limits not ordered at node " << i << ": p_lo=" << fp.p_lo()(i)
                << " >= p_hi=" << fp.p_hi()(i);
            report.violations.push_back(msg.str());
        }
        if (!(fp.p_lo()(i) < fp.setpoint()(i) && fp.setpoint()(i) < fp.p_hi()(i))) {
            report.setpoints_within_limits = false;
            std::ostringstream msg;
            msg << "setpoint outside open limit interval at node " << i;
            report.violations.push_back(msg.str());
        }
    }
    const double sum_lo = fp.p_lo().sum();
    const double sum_hi = fp.p_hi().sum();
    const double sum_load = fp.load().sum();
    report.load_above_lower_sum = sum_lo < sum_load;
    if (!report.load_above_lower_sum) {
        std::ostringstream msg;
        msg << "sum(P_lo)=" << sum_lo << " >= sum(P_L)=" << sum_load;
        report.violations.push_back(msg.str());
    }
    report.load_below_upper_sum = sum_load < sum_hi;
    if (!report.load_below_upper_sum) {
        std::ostringstream msg;
        msg << "sum(P_L)=" << sum_load << " >= sum(P_hi)=" << sum_hi;
        report.violations.push_back(msg.str());
    }
    return report;
}

std::vector<int> KktPoint::active_union() const {
    std::vector<int> all = active_lo;
    all.insert(all.end(), active_hi.begin(), active_hi.end());
    std::sort(all.begin(), all.end());
    return all;
}

Eigen::VectorXd KktPoint::mu_stacked() const {
    Eigen::VectorXd mu(mu_lo.size() + mu_hi.size());
    mu << mu_lo, mu_hi;
    return mu;
}

double synchronous_frequency(const FlowProblem& fp,
                             const std::vector<int>& active_lo,
                             const std::vector<int>& active_hi) {
    const int n = fp.node_count();
    std::vector<bool> is_active(static_cast<size_t>(n), false);
    double fixed_sum = 0.0;
    for (int i : active_lo) {
        is_active[static_cast<size_t>(i)] = true;
        fixed_sum += fp.p_lo()(i);
    }
    for (int i : active_hi) {
        is_active[static_cast<size_t>(i)] = true;
        fixed_sum += fp.p_hi()(i);
    }
    double setpoint_sum = 0.0;
    double inverse_droop_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!is_active[static_cast<size_t>(i)]) {
            setpoint_sum += fp.setpoint()(i);
            inverse_droop_sum += 1.0 / fp.droop()(i);
        }
    }
    if (inverse_droop_sum == 0.0) {
        throw AllNodesActive("synchronous frequency needs at least one free node");
    }
    return (setpoint_sum + fixed_sum - fp.load().sum()) / inverse_droop_sum;
}

double kkt_residual(const FlowProblem& fp, const KktPoint& point) {
    const Eigen::MatrixXd bv = fp.net().weighted_incidence();
    const Eigen::VectorXd stat =
        bv.transpose() * (fp.droop().asDiagonal() * (point.p - fp.setpoint()) +
                          fp.k_i_sqrt().asDiagonal() * (point.mu_hi - point.mu_lo));
    double residual = stat.lpNorm<Eigen::Infinity>();
    const int n = fp.node_count();
    for (int i = 0; i < n; ++i) {
        residual = std::max(residual, point.p(i) - fp.p_hi()(i));
        residual = std::max(residual, fp.p_lo()(i) - point.p(i));
        residual = std::max(residual, -point.mu_lo(i));
        residual = std::max(residual, -point.mu_hi(i));
        residual = std::max(residual, std::abs(point.mu_lo(i) * (fp.p_lo()(i) - point.p(i))));
        residual = std::max(residual, std::abs(point.mu_hi(i) * (point.p(i) - fp.p_hi()(i))));
    }
    return residual;
}

namespace {

enum class NodeRole : int { kAtLower = 0, kFree = 1, kAtUpper = 2 };

struct CandidateSolution {
    KktPoint point;
    std::vector<NodeRole> roles;
};

struct OracleWorkspace {
    Eigen::MatrixXd hessian;   // L M L
    Eigen::VectorXd gradient;  // L M (P_L - P*)

    explicit OracleWorkspace(const FlowProblem& fp) {
        const Eigen::MatrixXd& lap = fp.net().laplacian();
        hessian = lap * fp.droop().asDiagonal() * lap;
        gradient = lap * (fp.droop().asDiagonal() * (fp.load() - fp.setpoint()));
    }
};

/// Equality-constrained QP for one role assignment. Angles are pinned to
/// theta_0 = 0, which together with connectedness makes the reduced Hessian
/// positive definite; the saddle system is solved by full-pivot LU with a
/// least-squares fallback for rank-deficient constraint rows.
std::optional<Eigen::VectorXd> solve_assignment_theta(const FlowProblem& fp,
                                                      const OracleWorkspace& ws,
                                                      const std::vector<int>& active_nodes,
                                                      const Eigen::VectorXd& fixed_values) {
    const int n = fp.node_count();
    const int m = static_cast<int>(active_nodes.size());
    const Eigen::MatrixXd& lap = fp.net().laplacian();
    const Eigen::MatrixXd& hess = ws.hessian;
    const Eigen::VectorXd& grad0 = ws.gradient;

    const int dim = n - 1 + m;
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
    kkt.topLeftCorner(n - 1, n - 1) = hess.bottomRightCorner(n - 1, n - 1);
    rhs.head(n - 1) = -grad0.tail(n - 1);
    for (int r = 0; r < m; ++r) {
        const int node = active_nodes[static_cast<size_t>(r)];
        kkt.block(n - 1 + r, 0, 1, n - 1) = lap.row(node).tail(n - 1);
        kkt.block(0, n - 1 + r, n - 1, 1) = lap.row(node).tail(n - 1).transpose();
        rhs(n - 1 + r) = fixed_values(r) - fp.load()(node);
    }

    const double scale = std::max(1.0, kkt.norm());
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    Eigen::VectorXd sol;
    if (lu.isInvertible()) {
        sol = lu.solve(rhs);
    } else {
        sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    }
    if ((kkt * sol - rhs).norm() > kSolveTol * scale * std::max(1.0, rhs.norm())) {
        return std::nullopt;  // assignment has no consistent equality solution
    }
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
    theta.tail(n - 1) = sol.head(n - 1);
    return theta;
}

std::optional<CandidateSolution> evaluate_assignment(const FlowProblem& fp,
                                                     const OracleWorkspace& ws,
                                                     const std::vector<NodeRole>& roles) {
    const int n = fp.node_count();
    std::vector<int> active_nodes;
    Eigen::VectorXd fixed_values(n);
    int m = 0;
    bool any_free = false;
    for (int i = 0; i < n; ++i) {
        switch (roles[static_cast<size_t>(i)]) {
            case NodeRole::kAtLower:
                active_nodes.push_back(i);
                fixed_values(m++) = fp.p_lo()(i);
                break;
            case NodeRole::kAtUpper:
                active_nodes.push_back(i);
                fixed_values(m++) = fp.p_hi()(i);
                break;
            case NodeRole::kFree:
                any_free = true;
                break;
        }
    }
    if (!any_free) {
        return std::nullopt;  // cannot balance load against all-fixed injections
    }

    const auto theta = solve_assignment_theta(fp, ws, active_nodes, fixed_values.head(m));
    if (!theta) {
        return std::nullopt;
    }
    const Eigen::VectorXd p = fp.injections(*theta);

    // Stationarity restricted to the free nodes forces a common value of
    // m_i (P_i - P*_i); its negative is the synchronous frequency.
    double c_sum = 0.0;
    int free_count = 0;
    for (int i = 0; i < n; ++i) {
        if (roles[static_cast<size_t>(i)] == NodeRole::kFree) {
            c_sum += fp.droop()(i) * (p(i) - fp.setpoint()(i));
            ++free_count;
        }
    }
    const double c = c_sum / free_count;
    for (int i = 0; i < n; ++i) {
        if (roles[static_cast<size_t>(i)] == NodeRole::kFree &&
            std::abs(fp.droop()(i) * (p(i) - fp.setpoint()(i)) - c) > kPrimalTol) {
            return std::nullopt;
        }
    }
    const double omega_s = -c;

    KktPoint point;
    point.theta = *theta;
    point.eta = fp.net().weighted_incidence().transpose() * (*theta);
    point.p = p;
    point.mu_lo = Eigen::VectorXd::Zero(n);
    point.mu_hi = Eigen::VectorXd::Zero(n);
    point.omega_s = omega_s;

    for (int i = 0; i < n; ++i) {
        const double droop_term = fp.droop()(i) * (p(i) - fp.setpoint()(i));
        switch (roles[static_cast<size_t>(i)]) {
            case NodeRole::kAtLower: {
                const double mu = (c - droop_term) / -fp.k_i_sqrt()(i);
                if (mu < -kDualTol) return std::nullopt;
                point.mu_lo(i) = std::max(mu, 0.0);
                point.active_lo.push_back(i);
                break;
            }
            case NodeRole::kAtUpper: {
                const double mu = (c - droop_term) / fp.k_i_sqrt()(i);
                if (mu < -kDualTol) return std::nullopt;
                point.mu_hi(i) = std::max(mu, 0.0);
                point.active_hi.push_back(i);
                break;
            }
            case NodeRole::kFree:
                if (p(i) < fp.p_lo()(i) - kPrimalTol || p(i) > fp.p_hi()(i) + kPrimalTol) {
                    return std::nullopt;
                }
                break;
        }
    }

    point.kkt_residual = kkt_residual(fp, point);
    if (point.kkt_residual > kPrimalTol) {
        return std::nullopt;
    }
    return CandidateSolution{std::move(point), roles};
}

}  // namespace

KktPoint solve_kkt_oracle(const FlowProblem& fp) {
    const int n = fp.node_count();
    double combinations = std::pow(3.0, n);
    if (combinations > 1e6) {
        std::ostringstream msg;
        msg << "3^" << n << " assignments exceed the enumeration guard of 1e6";
        throw EnumerationTooLarge(msg.str());
    }

    const OracleWorkspace ws(fp);
    std::vector<CandidateSolution> passing;
    std::vector<NodeRole> roles(static_cast<size_t>(n), NodeRole::kAtLower);
    const long total = static_cast<long>(combinations);
    for (long code = 0; code < total; ++code) {
        long rest = code;
        for (int i = 0; i < n; ++i) {
            roles[static_cast<size_t>(i)] = static_cast<NodeRole>(rest % 3);
            rest /= 3;
        }
        auto candidate = evaluate_assignment(fp, ws, roles);
        if (candidate) {
            passing.push_back(std::move(*candidate));
            if (passing.size() > 1) {
                throw AmbiguousActiveSet(
                    "two distinct active sets satisfy the optimality conditions; "
                    "the problem is degenerate");
            }
        }
    }
    if (passing.empty()) {
        throw NoKktPointFound(
            "no role assignment satisfies the optimality conditions; check the "
            "feasibility assumptions");
    }

    KktPoint point = std::move(passing.front().point);
    // the balance identity provides the returned frequency; the free-node
    // droop value recovered during the solve must agree
    const double balance_omega = synchronous_frequency(fp, point.active_lo, point.active_hi);
    if (std::abs(balance_omega - point.omega_s) > 1e-7 * std::max(1.0, std::abs(point.omega_s))) {
        throw NoKktPointFound("synchronous frequency balance identity failed at the optimizer");
    }
    point.omega_s = balance_omega;
    return point;
}

KappaRoutes kappa_routes(const FlowProblem& fp, const std::vector<int>& active) {
    if (active.empty()) {
        throw EmptyActiveSet("kappa needs a nonempty active set");
    }
    const Eigen::MatrixXd jac =
        fp.k_i_sqrt().asDiagonal() * fp.net().weighted_incidence();  // K_I B V
    const int m = static_cast<int>(active.size());
    Eigen::MatrixXd jac_active(m, jac.cols());
    for (int r = 0; r < m; ++r) {
        jac_active.row(r) = jac.row(active[static_cast<size_t>(r)]);
    }
    const Eigen::MatrixXd gram = jac_active * jac_active.transpose();
    KappaRoutes routes;
    routes.from_jacobian = symmetric_eigendecomposition(gram).values(0);

    const ActiveGraph ag = active_graph(fp.net(), active);
    Eigen::VectorXd k_sqrt_active(m);
    for (int r = 0; r < m; ++r) {
        k_sqrt_active(r) = fp.k_i_sqrt()(ag.active_nodes[static_cast<size_t>(r)]);
    }
    const Eigen::MatrixXd scaled =
        k_sqrt_active.asDiagonal() * ag.laplacian * k_sqrt_active.asDiagonal();
    routes.from_active_laplacian = symmetric_eigendecomposition(scaled).values(0);
    return routes;
}

double kappa(const FlowProblem& fp, const std::vector<int>& active) {
    const KappaRoutes routes = kappa_routes(fp, active);
    if (std::abs(routes.from_jacobian - routes.from_active_laplacian) >
        1e-10 * std::max(1.0, std::abs(routes.from_jacobian))) {
        throw EigensolverFailure("kappa routes disagree beyond tolerance");
    }
    return routes.from_jacobian;
}

bool check_licq(const FlowProblem& fp, const KktPoint& kkt) {
    const std::vector<int> active = kkt.active_union();
    if (active.empty()) {
        return true;
    }
    const Eigen::MatrixXd jac = fp.k_i_sqrt().asDiagonal() * fp.net().weighted_incidence();
    Eigen::MatrixXd jac_active(static_cast<int>(active.size()), jac.cols());
    for (size_t r = 0; r < active.size(); ++r) {
        jac_active.row(static_cast<int>(r)) = jac.row(active[r]);
    }
    if (jac_active.rows() > jac_active.cols()) {
        return false;  // more active rows than edge coordinates cannot be independent
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac_active);
    const auto& sv = svd.singularValues();
    return sv(sv.size() - 1) > 1e-8 * sv(0);
}

EdgeProblemData edge_problem_data(const FlowProblem& fp) {
    EdgeProblemData data;
    const Eigen::MatrixXd bv = fp.net().weighted_incidence();
    data.quadratic = bv.transpose() * fp.droop().asDiagonal() * bv;
    data.linear = bv.transpose() * (fp.droop().asDiagonal() * (fp.load() - fp.setpoint()));
    data.constraint_rows = fp.k_i_sqrt().asDiagonal() * bv;
    data.lower = fp.k_i_sqrt().cwiseProduct(fp.p_lo() - fp.load());
    data.upper = fp.k_i_sqrt().cwiseProduct(fp.p_hi() - fp.load());
    return data;
}

}  // namespace droopnet
