#ifndef BNMM_SAMPLER_HPP
#define BNMM_SAMPLER_HPP

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "bnmm/core_types.hpp"
#include "bnmm/rng.hpp"

namespace bnmm {

struct ChainConfig {
    int n_iter = 5000;
    int burn_in = 2000;
    int thin = 1;
    int n_chains = 3;
    std::uint64_t seed = 0;
    int Q = 0;
    enum class Init { random, block_average };
    Init init_mode = Init::block_average;
    double contrast_z = 1.0;        // contrast used for the stored effect draws
    double contrast_z_star = 0.0;

    void validate() const;   // throws DataError
};

/// One Gibbs sweep visits each step exactly once, in plan order.
enum class UpdateStep {
    BetaM,
    AlphaZ,
    Indicators,        // tau then gamma
    Nuisance,          // beta_x and alpha_x
    BetaZ,
    LatentMediators,   // subject-level M, then measurement-level m_ik
    Allocation,        // node labels, then pi
    Variances,
};

struct SweepPlan {
    std::vector<UpdateStep> steps;

    static SweepPlan standard();
    void validate() const;   // every step exactly once
};

struct NormalParams {
    double mean = 0.0;
    double variance = 0.0;
};

struct MvnParams {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

struct IgParams {
    double shape = 0.0;
    double scale = 0.0;
};

// Analytic full-conditional parameters, exposed so tests can pin each update
// against an independent oracle. The update_* functions draw from exactly
// these distributions.

/// Joint posterior of the selected (tau=1) outcome coefficients, in flat pair
/// order. Empty mean when nothing is selected.
MvnParams beta_m_selected_posterior(const ModelState& state, const Dataset& dataset,
                                    const Hyperparams& hyper);

/// Posterior of alpha_z for pair s when gamma_s = 1.
NormalParams alpha_z_pair_posterior(const ModelState& state, const Dataset& dataset,
                                    const Hyperparams& hyper, int s);

/// P(tau_s = 1 | rest) and P(gamma_s = 1 | rest), log-space stable.
double tau_inclusion_prob(const ModelState& state, const Dataset& dataset,
                          const Hyperparams& hyper, int s);
double gamma_inclusion_prob(const ModelState& state, const Dataset& dataset,
                            const Hyperparams& hyper, int s);

MvnParams beta_x_posterior(const ModelState& state, const Dataset& dataset,
                           const Hyperparams& hyper);
MvnParams alpha_x_pair_posterior(const ModelState& state, const Dataset& dataset,
                                 const Hyperparams& hyper, int s);
NormalParams beta_z_posterior(const ModelState& state, const Dataset& dataset,
                              const Hyperparams& hyper);

/// Joint posterior over all pairs of subject i's latent mediator vector M_i.
MvnParams latent_mediator_posterior(const ModelState& state, const Dataset& dataset,
                                    const Hyperparams& hyper, int i);

/// Posterior of m_ik for pair s of subject i, measurement k.
NormalParams m_meas_posterior(const ModelState& state, const Dataset& dataset,
                              const Hyperparams& hyper, int i, int k, int s);

/// Unnormalized log conditional over candidate blocks 1..Q for node v
/// (reference implementation; update_allocation matches it via sufficient
/// statistics). Entry q-1 corresponds to block q.
Eigen::VectorXd allocation_log_conditional(const ModelState& state, const Dataset& dataset,
                                           int v);

IgParams sigma2_1_posterior(const ModelState& state, const Dataset& dataset,
                            const Hyperparams& hyper);
IgParams sigma2_2_posterior(const ModelState& state, const Dataset& dataset,
                            const Hyperparams& hyper);
IgParams omega_qr_posterior(const ModelState& state, const Dataset& dataset,
                            const Hyperparams& hyper, int s);
IgParams sigma_qr_posterior(const ModelState& state, const Dataset& dataset,
                            const Hyperparams& hyper, int s);
IgParams sigma2_zm_posterior(const ModelState& state, const Hyperparams& hyper);
IgParams sigma2_my_posterior(const ModelState& state, const Hyperparams& hyper);

// In-place Gibbs updates. Each replaces its block of ModelState with a draw
// from the full conditional given everything else.

void update_beta_m(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                   Rng& rng);
void update_alpha_z(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                    Rng& rng);
void update_tau(ModelState& state, const Dataset& dataset, const Hyperparams& hyper, Rng& rng);
void update_gamma(ModelState& state, const Dataset& dataset, const Hyperparams& hyper, Rng& rng);
void update_nuisance(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                     Rng& rng);
void update_beta_z(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                   Rng& rng);
void update_latent_M(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                     Rng& rng);
void update_m_meas(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                   Rng& rng);
void update_allocation(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                       Rng& rng);
void update_pi(ModelState& state, const Hyperparams& hyper, Rng& rng);
void update_variances(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                      Rng& rng);

/// One full sweep in plan order.
void sweep(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
           const SweepPlan& plan, Rng& rng);

/// Complete state drawn from the prior. Uses only the dataset's design side
/// (V, covariates, exposures, measurement counts), never y or the matrices.
ModelState draw_state_from_prior(const Dataset& dataset, int Q, const Hyperparams& hyper,
                                 Rng& rng);

/// Initialization per config.init_mode. block_average clusters the pooled
/// adjacency (clustering seed depends only on the data shape, so every chain
/// of a fit starts from the same labeling) and seeds mediators/variances
/// empirically; random draws from the prior.
ModelState initial_state(const Dataset& dataset, const ChainConfig& config,
                         const Hyperparams& hyper, Rng& rng);

/// Single chain, deterministic given (dataset, config, hyper). Stores thinned
/// post-burn-in draws; the chain seed is config.seed.
PosteriorDraws run_chain(const Dataset& dataset, const ChainConfig& config,
                         const Hyperparams& hyper);

/// n_chains independent chains with per-chain seed = config.seed + index.
/// Chains run concurrently (BNMM_THREADS caps the worker count).
PosteriorDraws run_chains(const Dataset& dataset, const ChainConfig& config,
                          const Hyperparams& hyper);

}  // namespace bnmm

#endif  // BNMM_SAMPLER_HPP
