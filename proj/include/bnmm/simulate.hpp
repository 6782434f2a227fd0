#ifndef BNMM_SIMULATE_HPP
#define BNMM_SIMULATE_HPP

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bnmm/core_types.hpp"
#include "bnmm/effects.hpp"
#include "bnmm/rng.hpp"

namespace bnmm {

struct SimConfig {
    int N = 50;     // subjects
    int K = 6;      // measurements per subject
    int V = 100;    // nodes
    int Q = 10;     // blocks
    int scenario = 1;
    enum class Noise { low, high };
    Noise noise = Noise::low;
    enum class Exposure { continuous, binary };
    Exposure exposure = Exposure::continuous;
    std::uint64_t seed = 0;

    double active_prob = 0.15;   // scenario 1: per-pair activation probability
    int n_active_tau = 8;        // scenario 2 set sizes and overlap
    int n_active_gamma = 8;
    int n_overlap = 6;

    // Standard-deviation overrides (0 allowed, for degenerate-noise debugging).
    std::optional<double> sigma1;
    std::optional<double> sigma2;
    std::optional<double> sigma_edge;
    std::optional<double> omega;

    void validate() const;
};

/// Scaled-down design for quick replicate studies: N=50, V=60, Q=6, K=4.
SimConfig scaled_config(int scenario, SimConfig::Noise noise, std::uint64_t seed);

struct GroundTruth {
    ModelState state;             // every generating value
    SimConfig config;
    double contrast_z = 1.0;
    double contrast_z_star = 0.0;
    double nde = 0.0, nie = 0.0, te = 0.0, nie_pos = 0.0, nie_neg = 0.0;
    std::vector<std::pair<int, int>> active_pairs;   // tau AND gamma
    Eigen::MatrixXi mask;         // true edge-level mediator mask
};

/// Synthetic dataset plus its full generating truth. Deterministic in
/// config.seed. Exposure is standard normal (continuous) or Bernoulli(0.5)
/// (binary); one standard-normal covariate plus intercept; the block
/// allocation comes from a Dirichlet(3,...,3)-multinomial.
std::pair<Dataset, GroundTruth> generate(const SimConfig& config);

/// Regenerates the modeled data (outcomes and connectomes) in place from a
/// complete state, leaving exposures/covariates untouched.
void sample_dataset_given_state(Dataset& dataset, const ModelState& state, Rng& rng);

struct SelectionRates {
    double sensitivity = 0.0;
    double specificity = 0.0;
    bool sensitivity_defined = false;   // false when there are no true positives to find
    bool specificity_defined = false;
};

/// Edge-level selection rates over unordered off-diagonal node pairs.
SelectionRates selection_metrics(const Eigen::MatrixXi& truth_mask,
                                 const Eigen::MatrixXi& estimated_mask);

struct BiasReport {
    struct Item {
        double value = 0.0;
        bool relative = true;   // false: truth is 0, absolute bias reported
    };
    Item nde, nie, te;
};

/// Percent bias of the posterior means against the generating truth
/// (100 * (estimate - truth) / truth; absolute when the truth is 0).
BiasReport effect_bias(const EffectSummary& estimate, const GroundTruth& truth);

}  // namespace bnmm

#endif  // BNMM_SIMULATE_HPP
