#include <doctest.h>

#include <cmath>
#include <random>

#include "droopnet/dynamics.hpp"
#include "test_support.hpp"

using namespace droopnet;

namespace {

Eigen::VectorXd vecn(std::initializer_list<double> vals) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
    Eigen::Index k = 0;
    for (double x : vals) v(k++) = x;
    return v;
}

FlowProblem wide_two_node() {
    PowerNetwork net(2, {{0, 1, 1.0}});
    return FlowProblem(net, vecn({0.4, 0.1}), vecn({0.1, 0.1}), vecn({-5, -5}), vecn({5, 5}),
                       vecn({1.0, 1.5}), vecn({1.0, 2.0}), vecn({1.0, 2.0}), 1.0);
}

}  // namespace

TEST_CASE("orthant projection") {
    CHECK(project_nonneg(vecn({-2.0}))(0) == 0.0);
    const Eigen::VectorXd v = project_nonneg(vecn({3.0, -1.0, 0.0}));
    CHECK(v(0) == 3.0);
    CHECK(v(1) == 0.0);
    CHECK(v(2) == 0.0);
    const Eigen::VectorXd w = vecn({0.5, 2.0});
    CHECK((project_nonneg(w) - w).norm() == 0.0);
}

TEST_CASE("limit gap sum is constant") {
    const FlowProblem fp = wide_two_node();
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::VectorXd p = vecn({u(rng), u(rng)});
        const LimitGaps g = limit_gaps(fp, p);
        CHECK(((g.lower + g.upper) - (fp.p_lo() - fp.p_hi())).norm() == 0.0);
    }
}

TEST_CASE("smoothed controller in the interior is pure droop") {
    const FlowProblem fp = wide_two_node();
    NodalState s{vecn({0.2, -0.1}), Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)};
    const NodalState d = rhs_projection_free_nodal(fp, s);
    const Eigen::VectorXd droop_only =
        fp.droop().cwiseProduct(fp.setpoint() - fp.injections(s.theta));
    CHECK((d.theta - droop_only).norm() <= 1e-14);
    CHECK(d.lambda_lo.norm() == 0.0);
    CHECK(d.lambda_hi.norm() == 0.0);
}

TEST_CASE("dimension guards") {
    const FlowProblem fp = wide_two_node();
    NodalState bad{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)};
    CHECK_THROWS_AS(rhs_projection_free_nodal(fp, bad), DimensionMismatch);
    EdgeState bad_edge{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2),
                       Eigen::VectorXd::Zero(2)};
    CHECK_THROWS_AS(rhs_primal_dual_edge(fp, bad_edge), DimensionMismatch);
}

TEST_CASE("projected integrator cone behavior") {
    const FlowProblem fp = wide_two_node();
    NodalState s{vecn({0.0, 0.0}), vecn({0.0, 0.5}), Eigen::VectorXd::Zero(2)};
    // injections are strictly inside the limits: lower gaps are negative
    const NodalState d = rhs_projection_based_nodal(fp, s);
    CHECK(d.lambda_lo(0) == 0.0);  // boundary component clips the outward rate
    const LimitGaps g = limit_gaps(fp, fp.injections(s.theta));
    CHECK(d.lambda_lo(1) ==
          doctest::Approx(fp.k_i_sqrt()(1) * g.lower(1)).epsilon(1e-14));  // interior passes

    NodalState negative{vecn({0.0, 0.0}), vecn({-0.1, 0.0}), Eigen::VectorXd::Zero(2)};
    CHECK_THROWS_AS(rhs_projection_based_nodal(fp, negative), NegativeDualState);
}

TEST_CASE("optimizers are rest points of all three systems") {
    std::mt19937_64 rng(20240813);
    testsupport::ProblemOptions opts;
    for (int trial = 0; trial < 50; ++trial) {
        auto [fp, kkt] = testsupport::random_problem_with_active_optimum(rng, opts);

        const Simulator free_sim(fp, Controller::kProjectionFree);
        const Eigen::VectorXd x_free =
            free_sim.pack(testsupport::steady_nodal_state(fp, kkt, Controller::kProjectionFree));
        CHECK(free_sim.stationarity_residual(x_free) <= 1e-8);
        // angle rates equal the synchronous frequency at every node
        const Eigen::VectorXd omega = free_sim.frequencies(x_free);
        CHECK((omega.array() - kkt.omega_s).abs().maxCoeff() <= 1e-8);

        const Simulator based_sim(fp, Controller::kProjectionBased);
        const Eigen::VectorXd x_based = based_sim.pack(
            testsupport::steady_nodal_state(fp, kkt, Controller::kProjectionBased));
        CHECK(based_sim.stationarity_residual(x_based) <= 1e-8);

        const Simulator edge_sim(fp, Controller::kEdgePrimalDual);
        EdgeState edge_state{kkt.eta, kkt.mu_lo, kkt.mu_hi};
        CHECK(edge_sim.stationarity_residual(edge_sim.pack(edge_state)) <= 1e-8);
    }
}

TEST_CASE("edge velocity stays in the flow subspace") {
    std::mt19937_64 rng(5);
    testsupport::ProblemOptions opts;
    opts.n_min = 4;
    opts.n_max = 6;
    const FlowProblem fp = testsupport::random_problem(rng, opts);
    const Eigen::MatrixXd bv = fp.net().weighted_incidence();
    // orthonormal basis of the orthogonal complement of range(V B^T)
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(bv.transpose(), Eigen::ComputeFullU);
    const int rank = fp.node_count() - 1;
    const Eigen::MatrixXd null_basis = svd.matrixU().rightCols(bv.cols() - rank);

    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        EdgeState state;
        state.eta = bv.transpose() * Eigen::VectorXd::NullaryExpr(fp.node_count(),
                                                                  [&](Eigen::Index) { return u(rng); });
        state.mu_lo = Eigen::VectorXd::NullaryExpr(fp.node_count(), [&](Eigen::Index) {
                          return std::abs(u(rng));
                      });
        state.mu_hi = Eigen::VectorXd::NullaryExpr(fp.node_count(), [&](Eigen::Index) {
                          return std::abs(u(rng));
                      });
        const EdgeState d = rhs_primal_dual_edge(fp, state);
        CHECK((null_basis.transpose() * d.eta).norm() <= 1e-12 * std::max(1.0, d.eta.norm()));
    }
}

TEST_CASE("edge trajectories started in the flow subspace remain in it") {
    std::mt19937_64 rng(29);
    testsupport::ProblemOptions opts;
    opts.n_min = 4;
    opts.n_max = 6;
    const FlowProblem fp = testsupport::random_problem(rng, opts);
    const Eigen::MatrixXd bv = fp.net().weighted_incidence();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(bv.transpose(), Eigen::ComputeFullU);
    const Eigen::MatrixXd null_basis =
        svd.matrixU().rightCols(bv.cols() - (fp.node_count() - 1));

    const Simulator sim(fp, Controller::kEdgePrimalDual);
    const NodalState s0 = testsupport::random_nodal_state(rng, fp.node_count(), 1.5);
    const Trajectory traj = sim.integrate(sim.pack(map_to_edge(fp, s0)), 5.0, 1e-3, {}, 100);
    for (const Eigen::VectorXd& x : traj.states) {
        const EdgeState st = sim.unpack_edge(x);
        CHECK((null_basis.transpose() * st.eta).norm() <= 1e-10 * std::max(1.0, st.eta.norm()));
    }
}

TEST_CASE("coordinate map") {
    const FlowProblem fp = wide_two_node();
    SUBCASE("uniform angles are in the kernel") {
        NodalState s{vecn({3.7, 3.7}), Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)};
        CHECK(map_to_edge(fp, s).eta.norm() <= 1e-14);
    }
    SUBCASE("zero integrators map to zero duals") {
        NodalState s{vecn({1.0, 0.0}), Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)};
        const EdgeState e = map_to_edge(fp, s);
        CHECK(e.mu_lo.norm() == 0.0);
        CHECK(e.mu_hi.norm() == 0.0);
    }
    SUBCASE("orientation fixes the sign") {
        NodalState s{vecn({1.0, 0.0}), Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)};
        CHECK(map_to_edge(fp, s).eta(0) == doctest::Approx(-1.0).epsilon(1e-14));
    }
}

TEST_CASE("runge-kutta step on a scalar decay") {
    auto f = [](const Eigen::VectorXd& x) { return Eigen::VectorXd(-x); };
    Eigen::VectorXd x(1);
    x << 1.0;
    const Eigen::VectorXd next = rk4_step(f, x, 0.1);
    CHECK(next(0) == doctest::Approx(0.9048375).epsilon(1e-12));
}

TEST_CASE("integration basics") {
    std::mt19937_64 rng(11);
    testsupport::ProblemOptions opts;
    auto [fp, kkt] = testsupport::random_problem_with_active_optimum(rng, opts);

    SUBCASE("rest point stays put") {
        const Simulator sim(fp, Controller::kEdgePrimalDual);
        const Eigen::VectorXd x0 = sim.pack(EdgeState{kkt.eta, kkt.mu_lo, kkt.mu_hi});
        const Trajectory traj = sim.integrate(x0, 0.5, 1e-3, {}, 100);
        for (const Eigen::VectorXd& x : traj.states) {
            CHECK((x - x0).norm() <= 1e-9);
        }
    }
    SUBCASE("negative initial duals are rejected") {
        const Simulator sim(fp, Controller::kProjectionFree);
        Eigen::VectorXd x0 = Eigen::VectorXd::Zero(sim.state_dim());
        x0(fp.node_count()) = -0.1;
        CHECK_THROWS_AS(sim.integrate(x0, 0.1, 1e-3), NegativeDualState);
    }
    SUBCASE("divergence is detected") {
        PowerNetwork net(2, {{0, 1, 1.0}});
        Eigen::VectorXd ones = Eigen::VectorXd::Ones(2);
        // gains far beyond the step-size stability limit
        FlowProblem stiff(net, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), -ones, ones,
                          ones, Eigen::VectorXd::Constant(2, 1e7), ones, 1.0);
        const Simulator sim(stiff, Controller::kProjectionFree);
        Eigen::VectorXd x0 = Eigen::VectorXd::Zero(sim.state_dim());
        x0(0) = 2.0;  // injections beyond the limits engage the penalty channel
        CHECK_THROWS_AS(sim.integrate(x0, 10.0, 0.1), NonFiniteState);
    }
    SUBCASE("load steps change the vector field between steps") {
        const Simulator sim(fp, Controller::kProjectionFree);
        const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(sim.state_dim());
        LoadStep ev{0.05, Eigen::VectorXd::Constant(fp.node_count(), 0.01)};
        const Trajectory traj = sim.integrate(x0, 0.1, 1e-3, {ev}, 1);
        CHECK(traj.size() == 101);
        CHECK(traj.times.back() == doctest::Approx(0.1));
    }
}

TEST_CASE("mapped trajectories coincide") {
    std::mt19937_64 rng(20240814);
    testsupport::ProblemOptions opts;

    SUBCASE("rest point maps to rest point") {
        auto [fp, kkt] = testsupport::random_problem_with_active_optimum(rng, opts);
        const NodalState rest =
            testsupport::steady_nodal_state(fp, kkt, Controller::kProjectionFree);
        CHECK(verify_coinciding(fp, rest, 1.0, 1e-3) <= 1e-10);
    }
    SUBCASE("random four-node start") {
        opts.n_min = 4;
        opts.n_max = 4;
        const FlowProblem fp = testsupport::random_problem(rng, opts);
        const NodalState s0 = testsupport::random_nodal_state(rng, 4, 2.0);
        CHECK(verify_coinciding(fp, s0, 10.0, 1e-3) <= 1e-6);
    }
    SUBCASE("negative integrator start is rejected") {
        const FlowProblem fp = wide_two_node();
        NodalState s0{vecn({0.0, 0.0}), vecn({-1.0, 0.0}), Eigen::VectorXd::Zero(2)};
        CHECK_THROWS_AS(verify_coinciding(fp, s0, 1.0, 1e-3), NegativeDualState);
    }
}

TEST_CASE("penalized lagrangian") {
    std::mt19937_64 rng(21);
    testsupport::ProblemOptions opts;
    auto [fp, kkt] = testsupport::random_problem_with_active_optimum(rng, opts);
    const int e = fp.net().edge_count();

    SUBCASE("slack interior with zero duals has no penalty") {
        const FlowProblem wide = wide_two_node();
        const Eigen::VectorXd eta = Eigen::VectorXd::Constant(1, 0.05);
        const double value = augmented_lagrangian_value(wide, eta, Eigen::VectorXd::Zero(2),
                                                        Eigen::VectorXd::Zero(2));
        const Eigen::MatrixXd bv = wide.net().weighted_incidence();
        const Eigen::VectorXd flow = bv * eta;
        const double objective = 0.5 * flow.dot(wide.droop().cwiseProduct(flow)) +
                                 (wide.load() - wide.setpoint())
                                     .dot(wide.droop().cwiseProduct(flow));
        CHECK(value == doctest::Approx(objective).epsilon(1e-12));
    }
    SUBCASE("violated constraint with zero dual pays the quadratic penalty") {
        PowerNetwork net(2, {{0, 1, 1.0}});
        FlowProblem tight(net, vecn({1.0, 1.0}), vecn({0.0, 0.0}), vecn({-0.5, -0.5}),
                          vecn({0.5, 0.5}), vecn({1.0, 1.0}), vecn({1.0, 1.0}),
                          vecn({1.0, 1.0}), 2.0);
        // eta = 0 leaves P = P_L = 1 which violates both upper limits by 0.5
        const double value = augmented_lagrangian_value(tight, Eigen::VectorXd::Zero(1),
                                                        Eigen::VectorXd::Zero(2),
                                                        Eigen::VectorXd::Zero(2));
        CHECK(value == doctest::Approx(2.0 * (tight.rho() / 2.0) * 0.25).epsilon(1e-12));
    }
    SUBCASE("gradient vanishes at the optimizer") {
        const Eigen::VectorXd grad =
            augmented_lagrangian_gradient(fp, kkt.eta, kkt.mu_lo, kkt.mu_hi);
        CHECK(grad.norm() <= 1e-8);
        // central differences agree
        Eigen::VectorXd fd(e);
        const double h = 1e-6;
        for (int k = 0; k < e; ++k) {
            Eigen::VectorXd up = kkt.eta, dn = kkt.eta;
            up(k) += h;
            dn(k) -= h;
            fd(k) = (augmented_lagrangian_value(fp, up, kkt.mu_lo, kkt.mu_hi) -
                     augmented_lagrangian_value(fp, dn, kkt.mu_lo, kkt.mu_hi)) /
                    (2 * h);
        }
        CHECK(fd.norm() <= 1e-6);
    }
    SUBCASE("finite differences match the analytic gradient at random points") {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int trial = 0; trial < 25; ++trial) {
            Eigen::VectorXd eta(e);
            for (int k = 0; k < e; ++k) eta(k) = u(rng);
            Eigen::VectorXd mu_lo(fp.node_count()), mu_hi(fp.node_count());
            for (int k = 0; k < fp.node_count(); ++k) {
                mu_lo(k) = std::abs(u(rng));
                mu_hi(k) = std::abs(u(rng));
            }
            const Eigen::VectorXd grad = augmented_lagrangian_gradient(fp, eta, mu_lo, mu_hi);
            Eigen::VectorXd fd(e);
            const double h = 1e-7;
            for (int k = 0; k < e; ++k) {
                Eigen::VectorXd up = eta, dn = eta;
                up(k) += h;
                dn(k) -= h;
                fd(k) = (augmented_lagrangian_value(fp, up, mu_lo, mu_hi) -
                         augmented_lagrangian_value(fp, dn, mu_lo, mu_hi)) /
                        (2 * h);
            }
            CHECK((fd - grad).norm() <= 1e-5 * std::max(1.0, grad.norm()));
        }
    }
}

TEST_CASE("trajectory duals stay in the orthant and frequencies synchronize") {
    std::mt19937_64 rng(20240815);
    testsupport::ProblemOptions opts;
    auto [fp, kkt] = testsupport::random_problem_with_active_optimum(rng, opts);
    const Simulator sim(fp, Controller::kProjectionFree);
    const NodalState s0 = testsupport::random_nodal_state(rng, fp.node_count(), 1.0);
    const Eigen::VectorXd x0 = sim.pack(s0);

    Trajectory traj = sim.integrate(x0, 120.0, 1e-3, {}, 100);
    const int n = fp.node_count();
    for (const Eigen::VectorXd& x : traj.states) {
        CHECK(x.segment(n, 2 * n).minCoeff() >= -1e-9);
    }
    REQUIRE(traj.residuals.back() <= 1e-9);
    const Eigen::VectorXd omega_final = traj.omegas.back();
    CHECK((omega_final.array() - kkt.omega_s).abs().maxCoeff() <= 1e-5);
}
