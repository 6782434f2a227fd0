#ifndef BNMM_EFFECTS_HPP
#define BNMM_EFFECTS_HPP

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bnmm/core_types.hpp"

namespace bnmm {

/// Natural direct/indirect/total effects of moving the exposure from z_star
/// to z. Invariants: te == nde + nie and nie == nie_pos + nie_neg exactly
/// (nie and te are defined as those sums, never recomputed another way).
struct EffectDraw {
    double nde = 0.0;
    double nie = 0.0;
    double te = 0.0;
    double nie_pos = 0.0;   // >= 0
    double nie_neg = 0.0;   // <= 0
    double z = 1.0;
    double z_star = 0.0;
};

/// Effect computation from raw draw components (flat pair layout).
EffectDraw effects_from_parts(double beta_z, const Eigen::VectorXd& alpha_z,
                              const Eigen::VectorXd& beta_m, const std::vector<int>& tau,
                              const std::vector<int>& gamma, double z, double z_star);

EffectDraw effects_from_draw(const ModelState& state, double z, double z_star);

/// Marginal inclusion probabilities pooled across chains, plus the pairs that
/// clear the 0.5 threshold (inclusive) on BOTH tau and gamma.
struct MedianModel {
    BlockPairTable inclusion_tau;
    BlockPairTable inclusion_gamma;
    BlockPairIndicators active;                     // 1 where jointly selected
    std::vector<std::pair<int, int>> active_pairs;  // (q, r), q <= r, 1-based
};

MedianModel posterior_median_model(const PosteriorDraws& draws);

struct EffectSummary {
    struct Stats {
        double mean = 0.0;
        double median = 0.0;
        double ci_low = 0.0;   // 2.5% quantile
        double ci_high = 0.0;  // 97.5% quantile
    };
    Stats nde, nie, te, nie_pos, nie_neg;
    std::vector<std::pair<int, int>> active_pairs;
    BlockPairTable inclusion_tau;
    BlockPairTable inclusion_gamma;
    double z = 1.0;
    double z_star = 0.0;
    int n_draws = 0;
};

/// Per-draw effects at the requested contrast, summarized with mean, median,
/// and the 95% equal-tailed interval (linear interpolation between order
/// statistics). Needs at least two stored draws.
EffectSummary summarize_effects(const PosteriorDraws& draws, double z, double z_star);

/// Quantile with linear interpolation between order statistics (R type 7).
double quantile(std::vector<double> values, double p);

struct AllocationSummary {
    Allocation consensus;
    Eigen::MatrixXd label_freq;   // V x Q aligned label frequencies
};

/// Modal allocation after aligning every stored draw to the first stored draw
/// of the first chain by greedy confusion-matrix matching.
AllocationSummary allocation_summary(const PosteriorDraws& draws);

/// V x V binary symmetric mask: (j,l) = 1 iff the block pair of their labels
/// is active. Diagonal stays 0.
Eigen::MatrixXi edge_mask(const std::vector<std::pair<int, int>>& active_pairs,
                          const Allocation& alloc);

}  // namespace bnmm

#endif  // BNMM_EFFECTS_HPP
