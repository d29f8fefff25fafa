#include "droopnet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <utility>

namespace droopnet {

namespace {

void check_connected(int n, const std::vector<Edge>& edges) {
    // union-find over nodes
    std::vector<int> parent(static_cast<size_t>(n));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&parent](int x) {
        while (parent[static_cast<size_t>(x)] != x) {
            parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
            x = parent[static_cast<size_t>(x)];
        }
        return x;
    };
    for (const Edge& e : edges) {
        parent[static_cast<size_t>(find(e.i))] = find(e.j);
    }
    const int root = find(0);
    for (int v = 1; v < n; ++v) {
        if (find(v) != root) {
            std::ostringstream msg;
            msg << "graph is not connected: node " << v << " is unreachable from node 0";
            throw DisconnectedGraph(msg.str());
        }
    }
}

}  // namespace

PowerNetwork::PowerNetwork(int node_count, std::vector<Edge> edges)
    : n_(node_count), edges_(std::move(edges)) {
    if (n_ < 2) {
        throw DisconnectedGraph("a connected multi-node network needs at least 2 nodes");
    }
    std::set<std::pair<int, int>> seen;
    for (Edge& e : edges_) {
        if (e.i > e.j) std::swap(e.i, e.j);
        if (e.i < 0 || e.j >= n_ || e.i == e.j) {
            std::ostringstream msg;
            msg << "edge (" << e.i << ", " << e.j << ") is out of range for " << n_ << " nodes";
            throw DisconnectedGraph(msg.str());
        }
        if (!(e.weight > 0.0)) {
            std::ostringstream msg;
            msg << "edge (" << e.i << ", " << e.j << ") has nonpositive weight " << e.weight;
            throw NonpositiveWeight(msg.str());
        }
        if (!seen.insert({e.i, e.j}).second) {
            std::ostringstream msg;
            msg << "duplicate edge (" << e.i << ", " << e.j << ")";
            throw DuplicateEdge(msg.str());
        }
    }
    check_connected(n_, edges_);

    const int e = edge_count();
    degrees_.assign(static_cast<size_t>(n_), 0);
    incidence_ = Eigen::MatrixXd::Zero(n_, e);
    weights_ = Eigen::VectorXd::Zero(e);
    weights_sqrt_ = Eigen::VectorXd::Zero(e);
    for (int k = 0; k < e; ++k) {
        const Edge& ed = edges_[static_cast<size_t>(k)];
        incidence_(ed.i, k) = -1.0;  // tail (low index)
        incidence_(ed.j, k) = 1.0;   // head
        weights_(k) = ed.weight;
        weights_sqrt_(k) = std::sqrt(ed.weight);
        ++degrees_[static_cast<size_t>(ed.i)];
        ++degrees_[static_cast<size_t>(ed.j)];
    }
    laplacian_ = incidence_ * weights_.asDiagonal() * incidence_.transpose();
}

Eigen::MatrixXd PowerNetwork::weighted_incidence() const {
    return incidence_ * weights_sqrt_.asDiagonal();
}

Eigen::MatrixXd PowerNetwork::edge_laplacian() const {
    const Eigen::MatrixXd bv = weighted_incidence();
    return bv.transpose() * bv;
}

int PowerNetwork::max_degree() const {
    return *std::max_element(degrees_.begin(), degrees_.end());
}

double PowerNetwork::weight_min() const { return weights_.minCoeff(); }
double PowerNetwork::weight_max() const { return weights_.maxCoeff(); }
double PowerNetwork::weight_sum() const { return weights_.sum(); }

bool PowerNetwork::has_edge(int i, int j) const {
    if (i > j) std::swap(i, j);
    return std::any_of(edges_.begin(), edges_.end(),
                       [&](const Edge& e) { return e.i == i && e.j == j; });
}

PowerNetwork PowerNetwork::with_edge(int i, int j, double weight) const {
    std::vector<Edge> extended = edges_;
    extended.push_back({i, j, weight});
    return PowerNetwork(n_, std::move(extended));
}

SymmetricEigen symmetric_eigendecomposition(const Eigen::MatrixXd& matrix) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(matrix);
    if (solver.info() != Eigen::Success) {
        throw EigensolverFailure("symmetric eigensolver did not converge");
    }
    SymmetricEigen result{solver.eigenvalues(), solver.eigenvectors()};
    if (matrix.rows() > 0) {
        const double scale = matrix.norm();
        const double tol = 1e-10 * std::max(scale, 1.0);
        for (Eigen::Index k = 0; k < result.values.size(); ++k) {
            const double residual =
                (matrix * result.vectors.col(k) - result.values(k) * result.vectors.col(k)).norm();
            if (residual > tol) {
                throw EigensolverFailure("eigenpair residual exceeds tolerance");
            }
        }
    }
    return result;
}

double smallest_positive_eigenvalue(const Eigen::VectorXd& ascending_eigenvalues) {
    if (ascending_eigenvalues.size() == 0) {
        throw EigensolverFailure("empty eigenvalue list");
    }
    const double scale = ascending_eigenvalues.cwiseAbs().maxCoeff();
    const double zero_tol = 1e-9 * scale;
    for (Eigen::Index k = 0; k < ascending_eigenvalues.size(); ++k) {
        if (ascending_eigenvalues(k) > zero_tol) {
            return ascending_eigenvalues(k);
        }
    }
    throw EigensolverFailure("no positive eigenvalue above the zero threshold");
}

SpectralSummary spectral_summary(const PowerNetwork& net) {
    const SymmetricEigen eig = symmetric_eigendecomposition(net.laplacian());
    SpectralSummary s;
    s.lambda_max = eig.values(eig.values.size() - 1);
    s.lambda_min_plus = smallest_positive_eigenvalue(eig.values);
    s.d_max = net.max_degree();
    s.w_min = net.weight_min();
    s.w_max = net.weight_max();
    s.w_sigma = net.weight_sum();

    const double lower = s.w_min * (1.0 + s.d_max);
    const double upper = 2.0 * s.w_max * s.d_max;
    const double slack = 1e-9 * std::max(1.0, s.lambda_max);
    if (s.lambda_max < lower - slack || s.lambda_max > upper + slack) {
        std::ostringstream msg;
        msg << "laplacian eigenvalue bound violated: " << lower << " <= " << s.lambda_max
            << " <= " << upper;
        throw EigensolverFailure(msg.str());
    }
    return s;
}

ActiveGraph active_graph(const PowerNetwork& net, const std::vector<int>& active) {
    ActiveGraph result;
    result.active_nodes = active;
    std::sort(result.active_nodes.begin(), result.active_nodes.end());
    const int rows = static_cast<int>(result.active_nodes.size());
    result.incidence_rows = Eigen::MatrixXd::Zero(rows, net.edge_count());
    for (int r = 0; r < rows; ++r) {
        result.incidence_rows.row(r) = net.incidence().row(result.active_nodes[static_cast<size_t>(r)]);
    }
    result.laplacian = result.incidence_rows * net.edge_weights().asDiagonal() *
                       result.incidence_rows.transpose();
    return result;
}

}  // namespace droopnet
