#include "poisoncap/defense.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "poisoncap/rng.hpp"

namespace poisoncap {

namespace {

double sqdist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

} // namespace

// ---------------------------------------------------------------------------
// Symmetric eigen decomposition (cyclic Jacobi)

EigenResult symmetric_eigen(Matrix a) {
    if (a.rows != a.cols) throw DefenseError("symmetric_eigen: matrix not square");
    const std::size_t n = a.rows;
    Matrix v(n, n);
    for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

    double frob = 0.0;
    for (double x : a.data) frob += x * x;
    const double stop = 1e-28 * std::max(frob, 1e-300);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                off += a.at(p, q) * a.at(p, q);
            }
        }
        if (off <= stop) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (apq == 0.0) continue;
                const double tau = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t =
                    tau >= 0.0 ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                               : -1.0 / (-tau + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p);
                    const double akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k);
                    const double aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                a.at(p, q) = 0.0;
                a.at(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v.at(k, p);
                    const double vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return a.at(i, i) > a.at(j, j);
    });

    EigenResult out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.values[j] = a.at(src, src);
        // Sign canonicalization: largest-magnitude entry positive.
        std::size_t arg = 0;
        double best = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double mag = std::fabs(v.at(i, src));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        const double sign = v.at(arg, src) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            out.vectors.at(i, j) = sign * v.at(i, src);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Principal-direction projection

Reduction reduce(const Matrix& x, std::size_t target_dim) {
    if (target_dim == 0) throw std::invalid_argument("reduce: target_dim must be >= 1");
    if (x.rows < target_dim) {
        throw DefenseError("reduce: need at least " + std::to_string(target_dim) +
                           " rows, got " + std::to_string(x.rows));
    }
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;

    Reduction out;
    out.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x.row(i);
        for (std::size_t j = 0; j < d; ++j) out.mean[j] += row[j];
    }
    for (double& m : out.mean) m /= static_cast<double>(n);

    Matrix centered(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x.row(i);
        double* crow = centered.row(i);
        for (std::size_t j = 0; j < d; ++j) crow[j] = row[j] - out.mean[j];
    }

    Matrix cov(d, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* crow = centered.row(i);
        for (std::size_t a = 0; a < d; ++a) {
            const double ca = crow[a];
            if (ca == 0.0) continue;
            for (std::size_t b = a; b < d; ++b) {
                cov.at(a, b) += ca * crow[b];
            }
        }
    }
    double total_var = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = a; b < d; ++b) {
            cov.at(a, b) /= static_cast<double>(n);
            cov.at(b, a) = cov.at(a, b);
        }
        total_var += cov.at(a, a);
    }

    out.axes = Matrix(target_dim, d);
    out.axis_variance.assign(target_dim, 0.0);
    out.points = Matrix(n, target_dim);

    if (!(total_var > 1e-30)) {
        std::cerr << "reduce: zero-variance input, returning all-zero coordinates\n";
        return out;
    }

    const EigenResult eig = symmetric_eigen(cov);
    const std::size_t keep = std::min(target_dim, d);
    for (std::size_t j = 0; j < keep; ++j) {
        out.axis_variance[j] = std::max(eig.values[j], 0.0);
        for (std::size_t c = 0; c < d; ++c) {
            out.axes.at(j, c) = eig.vectors.at(c, j);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double* crow = centered.row(i);
        double* prow = out.points.row(i);
        for (std::size_t j = 0; j < keep; ++j) {
            double s = 0.0;
            const double* axis = out.axes.row(j);
            for (std::size_t c = 0; c < d; ++c) s += crow[c] * axis[c];
            prow[j] = s;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stochastic neighbor embedding (optional, seeded, exact O(n^2))

Matrix sne_reduce(const Matrix& x, std::size_t target_dim, const SneConfig& cfg,
                  std::uint64_t seed) {
    const std::size_t n = x.rows;
    if (n < 2) throw DefenseError("sne_reduce: need at least 2 rows");
    if (n > cfg.max_points) {
        throw DefenseError("sne_reduce: " + std::to_string(n) + " rows exceeds cap of " +
                           std::to_string(cfg.max_points) + " (quadratic cost)");
    }
    const std::size_t d = x.cols;

    std::vector<double> dist2(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = sqdist(x.row(i), x.row(j), d);
            dist2[i * n + j] = v;
            dist2[j * n + i] = v;
        }
    }

    // Per-row precision search so each conditional distribution hits the
    // requested perplexity (clamped so it stays feasible for small n).
    const double perp = std::min(cfg.perplexity, static_cast<double>(n - 1) / 3.0);
    const double target_entropy = std::log(std::max(perp, 1.0 + 1e-9));
    std::vector<double> p(n * n, 0.0);
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
        double beta = 1.0;
        double lo = -std::numeric_limits<double>::infinity();
        double hi = std::numeric_limits<double>::infinity();
        double sum = 0.0;
        for (int iter = 0; iter < 64; ++iter) {
            sum = 0.0;
            double weighted = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) {
                    row[j] = 0.0;
                    continue;
                }
                row[j] = std::exp(-beta * dist2[i * n + j]);
                sum += row[j];
                weighted += dist2[i * n + j] * row[j];
            }
            const double entropy =
                sum > 0.0 ? std::log(sum) + beta * weighted / sum : 0.0;
            const double diff = entropy - target_entropy;
            if (std::fabs(diff) < 1e-7) break;
            if (diff > 0.0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
            } else {
                hi = beta;
                beta = std::isinf(lo) ? beta / 2.0 : (beta + lo) / 2.0;
            }
        }
        if (sum <= 0.0) sum = 1.0;
        for (std::size_t j = 0; j < n; ++j) p[i * n + j] = row[j] / sum;
    }
    // Symmetrize.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v =
                std::max((p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n)),
                         1e-12);
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
        p[i * n + i] = 0.0;
    }

    Rng rng(seed);
    Matrix y(n, target_dim);
    for (double& v : y.data) {
        const double u1 = 1.0 - rng.uniform();
        const double u2 = rng.uniform();
        v = 1e-4 * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    Matrix velocity(n, target_dim);
    std::vector<double> q(n * n, 0.0);
    Matrix grad(n, target_dim);
    const int exaggerate_until = std::min(cfg.iterations / 2, 100);

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double num =
                    1.0 / (1.0 + sqdist(y.row(i), y.row(j), target_dim));
                q[i * n + j] = num;
                q[j * n + i] = num;
                z += 2.0 * num;
            }
        }
        if (z <= 0.0) z = 1e-12;

        const double exaggeration = iter < exaggerate_until ? 12.0 : 1.0;
        std::fill(grad.data.begin(), grad.data.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double* grow = grad.row(i);
            const double* yi = y.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double num = q[i * n + j];
                const double coeff =
                    4.0 * (exaggeration * p[i * n + j] - num / z) * num;
                const double* yj = y.row(j);
                for (std::size_t c = 0; c < target_dim; ++c) {
                    grow[c] += coeff * (yi[c] - yj[c]);
                }
            }
        }

        const double momentum = iter < 250 ? 0.5 : 0.8;
        for (std::size_t idx = 0; idx < y.data.size(); ++idx) {
            velocity.data[idx] =
                momentum * velocity.data[idx] - cfg.learning_rate * grad.data[idx];
            y.data[idx] += velocity.data[idx];
        }
        // Re-center to keep the embedding from drifting.
        for (std::size_t c = 0; c < target_dim; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += y.at(i, c);
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) y.at(i, c) -= mean;
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// k-means

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
    const std::size_t n = points.rows;
    const std::size_t d = points.cols;
    if (n < k) {
        throw DefenseError("kmeans: " + std::to_string(n) + " points for k=" +
                           std::to_string(k));
    }

    KMeansResult out;
    out.k = k;
    out.centers = Matrix(k, d);

    Rng rng(seed);
    const std::size_t first = static_cast<std::size_t>(rng.below(n));
    std::copy_n(points.row(first), d, out.centers.row(0));

    // Greedy farthest-point seeding for the remaining centers.
    std::vector<double> nearest(n);
    for (std::size_t i = 0; i < n; ++i) {
        nearest[i] = sqdist(points.row(i), out.centers.row(0), d);
    }
    for (std::size_t c = 1; c < k; ++c) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < n; ++i) {
            if (nearest[i] > nearest[arg]) arg = i;
        }
        std::copy_n(points.row(arg), d, out.centers.row(c));
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], sqdist(points.row(i), out.centers.row(c), d));
        }
    }

    out.assignment.assign(n, 0);
    auto assign_all = [&]() {
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = points.row(i);
            int best = 0;
            double best_d = sqdist(row, out.centers.row(0), d);
            for (std::size_t c = 1; c < k; ++c) {
                const double dd = sqdist(row, out.centers.row(c), d);
                if (dd < best_d) {
                    best_d = dd;
                    best = static_cast<int>(c);
                }
            }
            out.assignment[i] = best;
        }
    };

    std::vector<std::size_t> counts(k);
    Matrix next(k, d);
    int iter = 0;
    for (; iter < 300; ++iter) {
        assign_all();

        std::fill(counts.begin(), counts.end(), 0);
        for (int a : out.assignment) counts[static_cast<std::size_t>(a)]++;
        bool reseeded = false;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            // Re-seed the empty cluster with the point farthest from its
            // current center (lowest index on ties).
            std::size_t arg = 0;
            double best = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto own = static_cast<std::size_t>(out.assignment[i]);
                if (counts[own] <= 1) continue; // don't orphan another cluster
                const double dd = sqdist(points.row(i), out.centers.row(own), d);
                if (dd > best) {
                    best = dd;
                    arg = i;
                }
            }
            counts[static_cast<std::size_t>(out.assignment[arg])]--;
            out.assignment[arg] = static_cast<int>(c);
            counts[c] = 1;
            std::copy_n(points.row(arg), d, out.centers.row(c));
            reseeded = true;
        }
        if (reseeded) continue;

        std::fill(next.data.begin(), next.data.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(out.assignment[i]);
            const double* row = points.row(i);
            double* crow = next.row(c);
            for (std::size_t j = 0; j < d; ++j) crow[j] += row[j];
        }
        double shift2 = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            double* crow = next.row(c);
            for (std::size_t j = 0; j < d; ++j) {
                crow[j] /= static_cast<double>(counts[c]);
            }
            shift2 = std::max(shift2, sqdist(crow, out.centers.row(c), d));
        }
        std::copy(next.data.begin(), next.data.end(), out.centers.data.begin());
        if (shift2 < 1e-9 * 1e-9) {
            ++iter;
            break;
        }
    }
    out.iterations = iter;

    assign_all();
    out.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out.inertia += sqdist(points.row(i),
                              out.centers.row(static_cast<std::size_t>(out.assignment[i])), d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Silhouette

double silhouette(const Matrix& points, const std::vector<int>& assignment) {
    const std::size_t n = points.rows;
    if (assignment.size() != n) {
        throw DefenseError("silhouette: assignment size mismatch");
    }
    if (n == 0) throw DefenseError("silhouette: no points");

    // Compact the cluster ids that actually occur.
    std::vector<int> ids(assignment);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    const std::size_t m = ids.size();
    if (m < 2) throw DefenseError("silhouette: needs at least two clusters");

    std::vector<std::size_t> compact(n);
    std::vector<std::size_t> size(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto it = std::lower_bound(ids.begin(), ids.end(), assignment[i]);
        compact[i] = static_cast<std::size_t>(it - ids.begin());
        size[compact[i]]++;
    }

    const std::size_t d = points.cols;
    double total = 0.0;
    std::vector<double> sum(m);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t own = compact[i];
        if (size[own] == 1) continue; // singleton contributes 0
        std::fill(sum.begin(), sum.end(), 0.0);
        const double* ri = points.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            sum[compact[j]] += std::sqrt(sqdist(ri, points.row(j), d));
        }
        const double a = sum[own] / static_cast<double>(size[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < m; ++c) {
            if (c == own || size[c] == 0) continue;
            b = std::min(b, sum[c] / static_cast<double>(size[c]));
        }
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Analysis driver

const ClusterAnalysis::PerK& ClusterAnalysis::for_k(std::size_t k) const {
    for (const PerK& e : by_k) {
        if (e.k == k) return e;
    }
    throw DefenseError("analysis has no entry for k=" + std::to_string(k));
}

ClusterAnalysis analyze_activations(const Matrix& activations,
                                    const std::vector<bool>& triggered,
                                    const DefenseConfig& cfg) {
    const std::size_t n = activations.rows;
    if (n < 8) {
        throw DefenseError("activation clustering needs at least 8 rows, got " +
                           std::to_string(n));
    }
    if (triggered.size() != n) {
        throw DefenseError("analyze: tag count " + std::to_string(triggered.size()) +
                           " != row count " + std::to_string(n));
    }
    if (cfg.target_dim != 2 && cfg.target_dim != 3) {
        throw DefenseError("analyze: target_dim must be 2 or 3");
    }
    if (cfg.k_min < 2 || cfg.k_min > cfg.k_max) {
        throw DefenseError("analyze: invalid k range");
    }

    ClusterAnalysis out;
    out.rows_total = n;
    out.target_dim = cfg.target_dim;
    out.used_sne = cfg.use_sne;

    out.row_ids.resize(n);
    std::iota(out.row_ids.begin(), out.row_ids.end(), 0);
    if (cfg.max_rows > 0 && n > cfg.max_rows) {
        Rng rng(derive_seed(cfg.seed, "defense.sample"));
        for (std::size_t i = 0; i < cfg.max_rows; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
            std::swap(out.row_ids[i], out.row_ids[j]);
        }
        out.row_ids.resize(cfg.max_rows);
        std::sort(out.row_ids.begin(), out.row_ids.end());
    }

    const std::size_t m = out.row_ids.size();
    Matrix subset(m, activations.cols);
    out.triggered.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(activations.row(out.row_ids[i]), activations.cols, subset.row(i));
        out.triggered[i] = triggered[out.row_ids[i]];
    }

    if (cfg.use_sne) {
        out.reduced =
            sne_reduce(subset, cfg.target_dim, cfg.sne, derive_seed(cfg.seed, "defense.sne"));
    } else {
        out.reduced = reduce(subset, cfg.target_dim).points;
    }

    for (std::size_t k = cfg.k_min; k <= cfg.k_max; ++k) {
        ClusterAnalysis::PerK entry;
        entry.k = k;
        KMeansResult km = kmeans(out.reduced, k, derive_seed(cfg.seed, "defense.kmeans", k));
        entry.silhouette = silhouette(out.reduced, km.assignment);
        entry.inertia = km.inertia;
        entry.clean_count.assign(k, 0);
        entry.triggered_count.assign(k, 0);
        for (std::size_t i = 0; i < m; ++i) {
            const auto c = static_cast<std::size_t>(km.assignment[i]);
            if (out.triggered[i]) {
                entry.triggered_count[c]++;
            } else {
                entry.clean_count[c]++;
            }
        }
        entry.assignment = std::move(km.assignment);
        out.by_k.push_back(std::move(entry));
    }

    out.best_k = out.by_k.front().k;
    double best = out.by_k.front().silhouette;
    for (const ClusterAnalysis::PerK& e : out.by_k) {
        if (e.silhouette > best) {
            best = e.silhouette;
            out.best_k = e.k;
        }
    }
    return out;
}

ClusterAnalysis analyze(const IdsModel& model, const Dataset& benign_predicted,
                        const std::vector<bool>& triggered,
                        const DefenseConfig& cfg) {
    Matrix acts(benign_predicted.size(), model.last_hidden_width());
    acts.data = model.hidden_activations(benign_predicted);
    return analyze_activations(acts, triggered, cfg);
}

std::string ClusterAnalysis::to_text() const {
    std::ostringstream os;
    std::size_t triggered_rows = 0;
    for (bool t : triggered) triggered_rows += t ? 1 : 0;

    os << "activation clustering report\n";
    os << "rows analyzed\t" << row_ids.size() << " of " << rows_total;
    if (row_ids.size() < rows_total) os << " (seeded subsample)";
    os << "\n";
    os << "reduction\t"
       << (used_sne ? "stochastic neighbor embedding" : "principal-direction projection")
       << " to " << target_dim << " dimensions\n";
    os << "triggered rows among analyzed\t" << triggered_rows << "\n\n";
    os << "k\tsilhouette\tinertia\tper-cluster composition (clean+triggered)\n";
    char buf[64];
    for (const PerK& e : by_k) {
        std::snprintf(buf, sizeof buf, "%.6f", e.silhouette);
        os << e.k << "\t" << buf << "\t";
        std::snprintf(buf, sizeof buf, "%.6f", e.inertia);
        os << buf << "\t";
        for (std::size_t c = 0; c < e.k; ++c) {
            if (c) os << "  ";
            os << "[" << c << "] " << e.clean_count[c] << "+" << e.triggered_count[c];
        }
        os << "\n";
    }
    os << "\nbest silhouette at k=" << best_k << "\n";
    return os.str();
}

void ClusterAnalysis::write_points_tsv(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DefenseError("cannot open " + path + " for writing");
    f << "row_id";
    for (std::size_t c = 0; c < target_dim; ++c) f << "\tx" << c;
    f << "\ttriggered";
    for (const PerK& e : by_k) f << "\tcluster_k" << e.k;
    f << "\n";
    char buf[40];
    for (std::size_t i = 0; i < row_ids.size(); ++i) {
        f << row_ids[i];
        for (std::size_t c = 0; c < target_dim; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", reduced.at(i, c));
            f << "\t" << buf;
        }
        f << "\t" << (triggered[i] ? 1 : 0);
        for (const PerK& e : by_k) f << "\t" << e.assignment[i];
        f << "\n";
    }
    if (!f) throw DefenseError("short write to " + path);
}

} // namespace poisoncap
