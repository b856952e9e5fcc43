#pragma once

// Activation-clustering backdoor detection: project last-hidden-layer
// activations of benign-predicted rows onto their top principal directions,
// cluster with k-means over a range of k, score each clustering by mean
// silhouette, and tabulate how rows carrying injected triggers distribute
// across the clusters.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "poisoncap/model.hpp"

namespace poisoncap {

class DefenseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Dense row-major matrix, just enough for the numerics in this module.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
};

// Eigen decomposition of a symmetric matrix by cyclic Jacobi rotations.
// Eigenvalues are returned in descending order; `vectors` holds the matching
// unit-length eigenvectors as columns, each with its largest-magnitude entry
// made positive so the result is sign-deterministic.
struct EigenResult {
    std::vector<double> values;
    Matrix vectors; // dim x dim; column j pairs with values[j]
};
EigenResult symmetric_eigen(Matrix a);

// Result of the deterministic principal-direction projection.
struct Reduction {
    std::vector<double> mean;          // column means removed before projecting
    Matrix axes;                       // target_dim x dim, one direction per row
    std::vector<double> axis_variance; // data variance captured by each axis
    Matrix points;                     // n x target_dim coordinates
};

// Project rows of `x` onto the top `target_dim` principal directions of their
// covariance (population normalization, 1/n). Zero-variance input produces
// all-zero coordinates and a warning on stderr. If `x` has fewer columns than
// `target_dim` the extra coordinates are zero.
Reduction reduce(const Matrix& x, std::size_t target_dim);

// Optional stochastic-neighbor embedding for visual inspection. Exact
// O(n^2) formulation, seeded and deterministic. Not used by the clustering
// defaults; it exists for plotting parity only.
struct SneConfig {
    double perplexity = 30.0;
    int iterations = 500;
    double learning_rate = 200.0;
    std::size_t max_points = 2000; // refuse larger inputs (quadratic cost)
};
Matrix sne_reduce(const Matrix& x, std::size_t target_dim, const SneConfig& cfg,
                  std::uint64_t seed);

struct KMeansResult {
    std::size_t k = 0;
    std::vector<int> assignment; // one cluster id per row
    Matrix centers;              // k x dim
    double inertia = 0.0;        // sum of squared distances to assigned centers
    int iterations = 0;
};

// Seeded k-means: the first center is a uniformly drawn row, the rest are
// chosen greedily as the point farthest from its nearest chosen center (ties
// -> lowest row index); then standard alternating assignment/update until the
// largest center shift drops below 1e-9 or 300 iterations pass. An empty
// cluster is re-seeded with the point currently farthest from its assigned
// center. Deterministic per seed.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed);

// Mean over all points of (b - a) / max(a, b), with a = mean Euclidean
// distance to the point's own cluster (excluding itself) and b = the smallest
// mean distance to any other cluster. Points in singleton clusters contribute
// 0, as does a 0/0 cell. Requires at least two non-empty clusters.
double silhouette(const Matrix& points, const std::vector<int>& assignment);

struct ClusterAnalysis {
    std::size_t rows_total = 0; // rows offered by the caller
    std::size_t target_dim = 2;
    bool used_sne = false;
    std::vector<std::size_t> row_ids; // analyzed rows, as caller indices
    Matrix reduced;                   // coordinates per analyzed row
    std::vector<bool> triggered;      // ground-truth tag per analyzed row

    struct PerK {
        std::size_t k = 0;
        std::vector<int> assignment;
        double silhouette = 0.0;
        double inertia = 0.0;
        std::vector<std::size_t> clean_count;     // per-cluster tag counts
        std::vector<std::size_t> triggered_count;
    };
    std::vector<PerK> by_k; // k ascending
    std::size_t best_k = 0; // argmax silhouette, smaller k on ties

    const PerK& for_k(std::size_t k) const;
    std::string to_text() const;
    // Coordinates + per-k assignments + tag, tab-separated, for external plots.
    void write_points_tsv(const std::string& path) const;
};

struct DefenseConfig {
    std::size_t target_dim = 2; // 2 or 3
    std::size_t k_min = 2;
    std::size_t k_max = 7;
    std::size_t max_rows = 4000; // seeded row subsample above this
    std::uint64_t seed = 1;
    bool use_sne = false;
    SneConfig sne{};
};

// Cluster the given activation rows (one row per benign-predicted sample).
// `triggered[i]` says whether row i is ground-truth trigger-carrying. Fewer
// than 8 rows is refused. When the input exceeds cfg.max_rows a seeded
// subsample (original order preserved) is analyzed instead.
ClusterAnalysis analyze_activations(const Matrix& activations,
                                    const std::vector<bool>& triggered,
                                    const DefenseConfig& cfg);

// Convenience wrapper: take the model's last hidden activations of
// `benign_predicted` (rows the model classified as benign) and analyze them.
ClusterAnalysis analyze(const IdsModel& model, const Dataset& benign_predicted,
                        const std::vector<bool>& triggered,
                        const DefenseConfig& cfg);

} // namespace poisoncap
