#include "bnmm/sbm.hpp"

#include <cmath>
#include <future>
#include <limits>
#include <numbers>

#include "bnmm/rng.hpp"

namespace bnmm {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)
constexpr double kVarFloor = 1e-12;
}  // namespace

double edge_loglik(double a, double m, double sigma2) {
    if (!(sigma2 > 0.0)) throw DataError("edge_loglik: variance must be positive");
    const double resid = a - m;
    return -0.5 * (kLog2Pi + std::log(sigma2)) - 0.5 * resid * resid / sigma2;
}

double complete_loglik(const Dataset& dataset, const Allocation& alloc,
                       const std::vector<std::vector<BlockPairTable>>& m_meas,
                       const BlockPairTable& sigma_qr) {
    const int V = dataset.V;
    const int Q = alloc.block_count();
    double total = 0.0;
    for (int i = 0; i < dataset.n_subjects(); ++i) {
        const auto& subj = dataset.subjects[static_cast<std::size_t>(i)];
        for (int k = 0; k < subj.n_measurements(); ++k) {
            const auto& A = subj.connectomes[static_cast<std::size_t>(k)];
            const auto& table = m_meas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
            for (int j = 0; j < V; ++j) {
                const int qj = alloc.label(j);
                for (int l = j + 1; l < V; ++l) {
                    const int s = pair_index(qj, alloc.label(l), Q);
                    total += edge_loglik(A(j, l), table.flat(s), sigma_qr.flat(s));
                }
            }
        }
    }
    return total;
}

Eigen::MatrixXd pooled_adjacency(const Dataset& dataset) {
    const int V = dataset.V;
    Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(V, V);
    int count = 0;
    for (const auto& subj : dataset.subjects) {
        for (const auto& A : subj.connectomes) {
            pooled += A;
            ++count;
        }
    }
    if (count == 0) throw DataError("pooled_adjacency: dataset has no measurements");
    return pooled / count;
}

namespace {

struct PooledFit {
    std::vector<int> labels;     // 1-based
    double complete_loglik = -std::numeric_limits<double>::infinity();
    bool converged = false;
};

struct PooledParams {
    Eigen::VectorXd mean;      // per flat pair
    Eigen::VectorXd var;       // per flat pair
    Eigen::VectorXd log_pi;    // per block, -inf for empty blocks
};

// ML parameters for fixed labels. Pairs with fewer than two edges (or a
// degenerate variance) fall back to the global off-diagonal moments.
PooledParams pooled_ml_params(const Eigen::MatrixXd& pooled, const std::vector<int>& labels,
                              int Q) {
    const int V = static_cast<int>(pooled.rows());
    const int S = pair_count(Q);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(S);
    Eigen::VectorXd sum2 = Eigen::VectorXd::Zero(S);
    Eigen::VectorXi n = Eigen::VectorXi::Zero(S);

    double gsum = 0.0, gsum2 = 0.0;
    int gcount = 0;
    for (int j = 0; j < V; ++j) {
        for (int l = j + 1; l < V; ++l) {
            const int s = pair_index(labels[static_cast<std::size_t>(j)],
                                     labels[static_cast<std::size_t>(l)], Q);
            const double a = pooled(j, l);
            sum[s] += a;
            sum2[s] += a * a;
            n[s] += 1;
            gsum += a;
            gsum2 += a * a;
            ++gcount;
        }
    }
    const double gmean = gsum / gcount;
    const double gvar = std::max(gsum2 / gcount - gmean * gmean, kVarFloor);

    PooledParams params;
    params.mean.resize(S);
    params.var.resize(S);
    for (int s = 0; s < S; ++s) {
        if (n[s] == 0) {
            params.mean[s] = gmean;
            params.var[s] = gvar;
            continue;
        }
        params.mean[s] = sum[s] / n[s];
        if (n[s] < 2) {
            params.var[s] = gvar;
        } else {
            const double mse = sum2[s] / n[s] - params.mean[s] * params.mean[s];
            params.var[s] = mse > kVarFloor ? mse : gvar;
        }
    }

    params.log_pi.resize(Q);
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(Q);
    for (int lab : labels) counts[lab - 1] += 1;
    for (int q = 0; q < Q; ++q) {
        params.log_pi[q] = counts[q] > 0 ? std::log(static_cast<double>(counts[q]) / V)
                                         : -std::numeric_limits<double>::infinity();
    }
    return params;
}

double pooled_complete_loglik(const Eigen::MatrixXd& pooled, const std::vector<int>& labels,
                              int Q, const PooledParams& params) {
    const int V = static_cast<int>(pooled.rows());
    double total = 0.0;
    for (int lab : labels) total += params.log_pi[lab - 1];
    for (int j = 0; j < V; ++j) {
        for (int l = j + 1; l < V; ++l) {
            const int s = pair_index(labels[static_cast<std::size_t>(j)],
                                     labels[static_cast<std::size_t>(l)], Q);
            total += edge_loglik(pooled(j, l), params.mean[s], params.var[s]);
        }
    }
    return total;
}

// Lloyd's algorithm with k-means++ seeding on the pooled row profiles. Random
// single-label restarts alone get stuck merging blocks whose profiles differ
// in many coordinates by a little; distances over whole rows pick that up.
std::vector<int> kmeans_labels(const Eigen::MatrixXd& rows, int Q, Rng& rng) {
    const int V = static_cast<int>(rows.rows());
    Eigen::MatrixXd centers(Q, rows.cols());
    centers.row(0) = rows.row(rng.uniform_int(0, V - 1));
    Eigen::VectorXd d2 = Eigen::VectorXd::Constant(V, std::numeric_limits<double>::infinity());
    for (int c = 1; c < Q; ++c) {
        for (int v = 0; v < V; ++v) {
            d2[v] = std::min(d2[v], (rows.row(v) - centers.row(c - 1)).squaredNorm());
        }
        const double total = d2.sum();
        int pick = rng.uniform_int(0, V - 1);
        if (total > 0.0) {
            double u = rng.uniform() * total;
            for (int v = 0; v < V; ++v) {
                u -= d2[v];
                if (u <= 0.0) {
                    pick = v;
                    break;
                }
            }
        }
        centers.row(c) = rows.row(pick);
    }

    std::vector<int> labels(static_cast<std::size_t>(V), 1);
    for (int iter = 0; iter < 30; ++iter) {
        bool changed = false;
        for (int v = 0; v < V; ++v) {
            int best = labels[static_cast<std::size_t>(v)];
            double best_d = std::numeric_limits<double>::infinity();
            for (int q = 0; q < Q; ++q) {
                const double d = (rows.row(v) - centers.row(q)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = q + 1;
                }
            }
            if (best != labels[static_cast<std::size_t>(v)]) {
                labels[static_cast<std::size_t>(v)] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
        centers.setZero();
        Eigen::VectorXi counts = Eigen::VectorXi::Zero(Q);
        for (int v = 0; v < V; ++v) {
            centers.row(labels[static_cast<std::size_t>(v)] - 1) += rows.row(v);
            counts[labels[static_cast<std::size_t>(v)] - 1] += 1;
        }
        for (int q = 0; q < Q; ++q) {
            if (counts[q] > 0) {
                centers.row(q) /= counts[q];
            } else {
                centers.row(q) = rows.row(rng.uniform_int(0, V - 1));
            }
        }
    }
    return labels;
}

PooledFit greedy_pooled_fit(const Eigen::MatrixXd& pooled, int Q, Rng& rng, bool kmeans_init) {
    const int V = static_cast<int>(pooled.rows());
    std::vector<int> labels(static_cast<std::size_t>(V));
    if (kmeans_init) {
        labels = kmeans_labels(pooled, Q, rng);
    } else {
        for (auto& lab : labels) lab = rng.uniform_int(1, Q);
    }

    constexpr int kMaxIters = 200;
    PooledFit fit;
    double prev_loglik = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < kMaxIters; ++iter) {
        const PooledParams params = pooled_ml_params(pooled, labels, Q);
        bool changed = false;
        for (int v = 0; v < V; ++v) {
            int best_q = labels[static_cast<std::size_t>(v)];
            double best_score = -std::numeric_limits<double>::infinity();
            for (int q = 1; q <= Q; ++q) {
                double score = params.log_pi[q - 1];
                if (!std::isfinite(score)) continue;  // empty block stays empty here
                for (int l = 0; l < V; ++l) {
                    if (l == v) continue;
                    const int s = pair_index(q, labels[static_cast<std::size_t>(l)], Q);
                    score += edge_loglik(pooled(v, l), params.mean[s], params.var[s]);
                }
                if (score > best_score) {
                    best_score = score;
                    best_q = q;
                }
            }
            if (best_q != labels[static_cast<std::size_t>(v)]) {
                labels[static_cast<std::size_t>(v)] = best_q;
                changed = true;
            }
        }
        const PooledParams refreshed = pooled_ml_params(pooled, labels, Q);
        const double loglik = pooled_complete_loglik(pooled, labels, Q, refreshed);
        if (!changed || std::abs(loglik - prev_loglik) < 1e-10) {
            fit.labels = labels;
            fit.complete_loglik = loglik;
            fit.converged = true;
            return fit;
        }
        prev_loglik = loglik;
        fit.labels = labels;
        fit.complete_loglik = loglik;
    }
    fit.converged = false;  // best-found labels/score still reported
    return fit;
}

}  // namespace

IclResult fit_pooled_sbm(const Eigen::MatrixXd& pooled, int Q, std::uint64_t seed, int restarts) {
    const int V = static_cast<int>(pooled.rows());
    PooledFit best;
    for (int t = 0; t < restarts; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(Q), static_cast<std::uint64_t>(t)));
        PooledFit fit = greedy_pooled_fit(pooled, Q, rng, t % 2 == 0);
        if (fit.complete_loglik > best.complete_loglik) best = fit;
    }
    const double E = static_cast<double>(V) * (V - 1) / 2.0;
    const double penalty = pair_count(Q) * std::log(E) + 0.5 * (Q - 1) * std::log(double(V));
    IclResult result;
    result.Q = Q;
    result.icl_score = best.complete_loglik - penalty;
    result.allocation = Allocation(best.labels, Q);
    result.converged = best.converged;
    return result;
}

SelectQResult select_q(const Dataset& dataset, int q_min, int q_max, std::uint64_t seed,
                       int restarts) {
    if (q_min < 1 || q_min > q_max || q_max > dataset.V) {
        throw DataError("select_q: need 1 <= q_min <= q_max <= V");
    }
    const Eigen::MatrixXd pooled = pooled_adjacency(dataset);

    std::vector<std::future<IclResult>> futures;
    for (int Q = q_min; Q <= q_max; ++Q) {
        futures.push_back(std::async(std::launch::async, [&pooled, Q, seed, restarts] {
            return fit_pooled_sbm(pooled, Q, seed, restarts);
        }));
    }
    SelectQResult out;
    double best_score = -std::numeric_limits<double>::infinity();
    for (auto& f : futures) {
        IclResult r = f.get();
        if (r.icl_score > best_score) {
            best_score = r.icl_score;
            out.best_q = r.Q;
        }
        out.candidates.push_back(std::move(r));
    }
    return out;
}

BlockAverages block_averages(const Dataset& dataset, const Allocation& alloc) {
    const int V = dataset.V;
    const int Q = alloc.block_count();
    const int S = pair_count(Q);

    // Pair edge counts depend only on the allocation.
    Eigen::VectorXi n_edges = Eigen::VectorXi::Zero(S);
    for (int j = 0; j < V; ++j) {
        for (int l = j + 1; l < V; ++l) {
            n_edges[pair_index(alloc.label(j), alloc.label(l), Q)] += 1;
        }
    }

    BlockAverages out;
    out.fallback = BlockPairIndicators(Q, 0);
    for (int s = 0; s < S; ++s) {
        if (n_edges[s] == 0) out.fallback.flat(s) = 1;
    }

    Eigen::VectorXd ss = Eigen::VectorXd::Zero(S);  // squared deviations from per-(i,k) means
    double global_sum = 0.0, global_ss = 0.0;
    long global_n = 0;

    out.m_meas.resize(static_cast<std::size_t>(dataset.n_subjects()));
    for (int i = 0; i < dataset.n_subjects(); ++i) {
        const auto& subj = dataset.subjects[static_cast<std::size_t>(i)];
        auto& tables = out.m_meas[static_cast<std::size_t>(i)];
        tables.reserve(subj.connectomes.size());
        for (const auto& A : subj.connectomes) {
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(S);
            double msum = 0.0;
            for (int j = 0; j < V; ++j) {
                for (int l = j + 1; l < V; ++l) {
                    const int s = pair_index(alloc.label(j), alloc.label(l), Q);
                    sum[s] += A(j, l);
                    msum += A(j, l);
                }
            }
            const double total_edges = static_cast<double>(V) * (V - 1) / 2.0;
            const double matrix_mean = msum / total_edges;
            BlockPairTable table(Q);
            for (int s = 0; s < S; ++s) {
                table.flat(s) = n_edges[s] > 0 ? sum[s] / n_edges[s] : matrix_mean;
            }
            for (int j = 0; j < V; ++j) {
                for (int l = j + 1; l < V; ++l) {
                    const int s = pair_index(alloc.label(j), alloc.label(l), Q);
                    const double d = A(j, l) - table.flat(s);
                    ss[s] += d * d;
                    global_sum += A(j, l);
                    global_ss += A(j, l) * A(j, l);
                    ++global_n;
                }
            }
            tables.push_back(std::move(table));
        }
    }

    const double gmean = global_sum / static_cast<double>(global_n);
    out.global_mean = gmean;
    const double gvar =
        std::max((global_ss - global_n * gmean * gmean) / std::max<long>(global_n - 1, 1),
                 kVarFloor);

    const int n_groups = dataset.total_measurements();
    out.pooled_variance = BlockPairTable(Q);
    for (int s = 0; s < S; ++s) {
        const long df = static_cast<long>(n_edges[s] - 1) * n_groups;
        if (df < 1) {
            out.pooled_variance.flat(s) = gvar;
            if (n_edges[s] > 0) out.fallback.flat(s) = 1;
        } else {
            out.pooled_variance.flat(s) = std::max(ss[s] / df, kVarFloor);
        }
    }
    return out;
}

}  // namespace bnmm
