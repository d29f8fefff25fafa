#pragma once

#include <vector>

#include <Eigen/Dense>

#include "droopnet/errors.hpp"

namespace droopnet {

/// Undirected weighted edge; nodes are stored with i < j and the edge is
/// oriented from the low index to the high index.
struct Edge {
    int i = 0;
    int j = 0;
    double weight = 0.0;
};

/// Lossless transmission network: a simple, connected, undirected graph with
/// strictly positive edge weights (per-unit susceptances). Construction builds
/// the oriented incidence matrix B (tail entry -1, head entry +1), the diagonal
/// weight matrix W, its square root V, the Laplacian L = B W B^T, and the edge
/// Laplacian L_e = V B^T B V. Instances are immutable after construction and
/// safe to share between threads.
class PowerNetwork {
public:
    PowerNetwork(int node_count, std::vector<Edge> edges);

    [[nodiscard]] int node_count() const { return n_; }
    [[nodiscard]] int edge_count() const { return static_cast<int>(edges_.size()); }
    [[nodiscard]] const std::vector<Edge>& edges() const { return edges_; }

    [[nodiscard]] const Eigen::MatrixXd& incidence() const { return incidence_; }
    [[nodiscard]] const Eigen::VectorXd& edge_weights() const { return weights_; }
    [[nodiscard]] const Eigen::VectorXd& edge_weights_sqrt() const { return weights_sqrt_; }
    [[nodiscard]] const Eigen::MatrixXd& laplacian() const { return laplacian_; }

    /// B V, the weighted incidence factor with L = (BV)(BV)^T.
    [[nodiscard]] Eigen::MatrixXd weighted_incidence() const;
    /// Edge Laplacian V B^T B V; shares its nonzero spectrum with L.
    [[nodiscard]] Eigen::MatrixXd edge_laplacian() const;

    [[nodiscard]] int degree(int node) const { return degrees_[static_cast<size_t>(node)]; }
    [[nodiscard]] int max_degree() const;
    [[nodiscard]] double weight_min() const;
    [[nodiscard]] double weight_max() const;
    [[nodiscard]] double weight_sum() const;
    [[nodiscard]] bool has_edge(int i, int j) const;

    /// Copy of this network with one extra edge (used by topology advisories).
    [[nodiscard]] PowerNetwork with_edge(int i, int j, double weight) const;

private:
    int n_;
    std::vector<Edge> edges_;
    std::vector<int> degrees_;
    Eigen::MatrixXd incidence_;
    Eigen::VectorXd weights_;
    Eigen::VectorXd weights_sqrt_;
    Eigen::MatrixXd laplacian_;
};

/// Spectral quantities of the network Laplacian together with the degree/weight
/// extremes that bound them.
struct SpectralSummary {
    double lambda_max = 0.0;       ///< largest Laplacian eigenvalue
    double lambda_min_plus = 0.0;  ///< algebraic connectivity (smallest nonzero eigenvalue)
    int d_max = 0;                 ///< maximum node degree (edge count, unweighted)
    double w_min = 0.0;
    double w_max = 0.0;
    double w_sigma = 0.0;          ///< sum of all edge weights
};

/// Computes the Laplacian spectrum and asserts the degree/weight eigenvalue
/// bounds w_min (1 + d_max) <= lambda_max <= 2 w_max d_max.
SpectralSummary spectral_summary(const PowerNetwork& net);

/// Subgraph induced by a set of limit-saturated nodes. Edges between two
/// active nodes keep both incidence entries; edges from an active node to an
/// inactive one keep a single entry and therefore act as self-loops in the
/// reduced Laplacian L_I = B_I W B_I^T.
struct ActiveGraph {
    std::vector<int> active_nodes;
    Eigen::MatrixXd incidence_rows;  ///< B_I, |I| x e
    Eigen::MatrixXd laplacian;       ///< L_I, |I| x |I|
};

ActiveGraph active_graph(const PowerNetwork& net, const std::vector<int>& active);

/// Dense symmetric eigendecomposition (ascending eigenvalues). Verifies the
/// per-pair residual ||A v - lambda v|| <= 1e-10 ||A|| and throws
/// EigensolverFailure otherwise.
struct SymmetricEigen {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
};

SymmetricEigen symmetric_eigendecomposition(const Eigen::MatrixXd& matrix);

/// Smallest eigenvalue above the zero threshold 1e-9 * max(|eigenvalue|).
/// Eigenvalues below the threshold are treated as exact zeros.
double smallest_positive_eigenvalue(const Eigen::VectorXd& ascending_eigenvalues);

}  // namespace droopnet
