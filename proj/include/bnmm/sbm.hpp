#ifndef BNMM_SBM_HPP
#define BNMM_SBM_HPP

#include <vector>

#include <Eigen/Dense>

#include "bnmm/core_types.hpp"

namespace bnmm {

/// log N(a; m, sigma2). Throws DataError on non-positive variance.
double edge_loglik(double a, double m, double sigma2);

/// Complete-data log-likelihood of every edge: sum of edge_loglik over
/// subjects, measurements, and unordered node pairs j < l (diagonal ignored).
double complete_loglik(const Dataset& dataset, const Allocation& alloc,
                       const std::vector<std::vector<BlockPairTable>>& m_meas,
                       const BlockPairTable& sigma_qr);

struct IclResult {
    int Q = 0;
    double icl_score = 0.0;
    Allocation allocation;   // complete-data clustering used in scoring
    bool converged = true;   // greedy search reached a fixed point
};

struct SelectQResult {
    std::vector<IclResult> candidates;
    int best_q = 0;
};

/// Grand average of all connectome matrices across subjects and measurements.
Eigen::MatrixXd pooled_adjacency(const Dataset& dataset);

/// ICL model selection over candidate block counts. Each candidate is fit on
/// the pooled adjacency by greedy label swaps (`restarts` random starts,
/// deterministic in `seed`), then scored as
///   complete-data loglik - S * ln(E) - 0.5 * (Q-1) * ln(V)
/// with S = Q(Q+1)/2 pairs (two parameters each at 0.5*ln(E)) and
/// E = V(V-1)/2 scored edges.
SelectQResult select_q(const Dataset& dataset, int q_min, int q_max, std::uint64_t seed,
                       int restarts = 10);

/// Greedy Gaussian-SBM fit of a single candidate Q on a pooled matrix.
IclResult fit_pooled_sbm(const Eigen::MatrixXd& pooled, int Q, std::uint64_t seed,
                         int restarts = 10);

struct BlockAverages {
    std::vector<std::vector<BlockPairTable>> m_meas;  // per subject, per measurement means
    BlockPairTable pooled_variance;                   // edge variance around the per-(i,k) means
    BlockPairIndicators fallback;                     // 1 where the global-mean fallback fired
    double global_mean = 0.0;
};

/// Per-measurement block means plus pooled per-pair sample variances. Block
/// pairs with no contributing edge fall back to the measurement's global off-
/// diagonal mean (variances to the global variance) and are flagged.
BlockAverages block_averages(const Dataset& dataset, const Allocation& alloc);

}  // namespace bnmm

#endif  // BNMM_SBM_HPP
