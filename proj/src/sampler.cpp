#include "bnmm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <thread>

#include "bnmm/effects.hpp"
#include "bnmm/sbm.hpp"

namespace bnmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

struct Design {
    Eigen::MatrixXd X;   // N x (P+1)
    Eigen::VectorXd y;
    Eigen::VectorXd z;
};

Design design_of(const Dataset& d) {
    const int N = d.n_subjects();
    Design out;
    out.X.resize(N, d.P + 1);
    out.y.resize(N);
    out.z.resize(N);
    for (int i = 0; i < N; ++i) {
        const auto& s = d.subjects[static_cast<std::size_t>(i)];
        out.X.row(i) = s.covariates.transpose();
        out.y[i] = s.outcome;
        out.z[i] = s.exposure;
    }
    return out;
}

// N x S matrix of subject-level mediators m_{i,s}.
Eigen::MatrixXd mediator_matrix(const ModelState& st, int N) {
    const int S = st.n_pairs();
    Eigen::MatrixXd M(N, S);
    for (int i = 0; i < N; ++i) {
        for (int s = 0; s < S; ++s) M(i, s) = st.M[static_cast<std::size_t>(i)].flat(s);
    }
    return M;
}

Eigen::VectorXd beta_m_tilde(const ModelState& st) {
    const int S = st.n_pairs();
    Eigen::VectorXd bt(S);
    for (int s = 0; s < S; ++s) bt[s] = st.beta_m.flat(s) * st.tau.flat(s);
    return bt;
}

// Regression mean of m_{i,s} for every subject: X alpha_x[s] + z alpha_z[s] gamma[s].
Eigen::VectorXd mediator_regression_mean(const ModelState& st, const Design& d, int s) {
    Eigen::VectorXd mu = d.X * st.alpha_x[static_cast<std::size_t>(s)];
    if (st.gamma.flat(s) == 1) mu += d.z * st.alpha_z.flat(s);
    return mu;
}

}  // namespace

void ChainConfig::validate() const {
    if (n_iter < 1) throw DataError("ChainConfig: n_iter must be at least 1");
    if (burn_in < 0 || burn_in >= n_iter) throw DataError("ChainConfig: need 0 <= burn_in < n_iter");
    if (thin < 1) throw DataError("ChainConfig: thin must be at least 1");
    if (n_chains < 1) throw DataError("ChainConfig: n_chains must be at least 1");
    if (Q < 1) throw DataError("ChainConfig: block count Q not set");
}

SweepPlan SweepPlan::standard() {
    return SweepPlan{{UpdateStep::BetaM, UpdateStep::AlphaZ, UpdateStep::Indicators,
                      UpdateStep::Nuisance, UpdateStep::BetaZ, UpdateStep::LatentMediators,
                      UpdateStep::Allocation, UpdateStep::Variances}};
}

void SweepPlan::validate() const {
    int seen[8] = {0};
    for (UpdateStep s : steps) seen[static_cast<int>(s)] += 1;
    for (int i = 0; i < 8; ++i) {
        if (seen[i] != 1) throw DataError("SweepPlan: every update step must appear exactly once");
    }
}

MvnParams beta_m_selected_posterior(const ModelState& state, const Dataset& dataset,
                                    const Hyperparams&) {
    const Design d = design_of(dataset);
    const int S = state.n_pairs();
    std::vector<int> sel;
    for (int s = 0; s < S; ++s) {
        if (state.tau.flat(s) == 1) sel.push_back(s);
    }
    MvnParams out;
    if (sel.empty()) return out;

    const Eigen::MatrixXd M = mediator_matrix(state, dataset.n_subjects());
    Eigen::MatrixXd M1(dataset.n_subjects(), sel.size());
    for (std::size_t c = 0; c < sel.size(); ++c) M1.col(static_cast<Eigen::Index>(c)) = M.col(sel[c]);

    const Eigen::VectorXd resp = d.y - d.X * state.beta_x - d.z * state.beta_z;
    Eigen::MatrixXd prec = M1.transpose() * M1 / state.sigma2_1;
    prec.diagonal().array() += 1.0 / state.sigma2_my;
    const Eigen::VectorXd ptm = M1.transpose() * resp / state.sigma2_1;

    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) {
        throw NumericError("beta_m posterior precision not positive definite");
    }
    out.mean = llt.solve(ptm);
    out.covariance = llt.solve(Eigen::MatrixXd::Identity(prec.rows(), prec.cols()));
    return out;
}

void update_beta_m(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                   Rng& rng) {
    const Design d = design_of(dataset);
    const int S = state.n_pairs();
    std::vector<int> sel;
    for (int s = 0; s < S; ++s) {
        if (state.tau.flat(s) == 1) sel.push_back(s);
    }
    if (!sel.empty()) {
        const Eigen::MatrixXd M = mediator_matrix(state, dataset.n_subjects());
        Eigen::MatrixXd M1(dataset.n_subjects(), sel.size());
        for (std::size_t c = 0; c < sel.size(); ++c)
            M1.col(static_cast<Eigen::Index>(c)) = M.col(sel[c]);
        const Eigen::VectorXd resp = d.y - d.X * state.beta_x - d.z * state.beta_z;
        Eigen::MatrixXd prec = M1.transpose() * M1 / state.sigma2_1;
        prec.diagonal().array() += 1.0 / state.sigma2_my;
        const Eigen::VectorXd ptm = M1.transpose() * resp / state.sigma2_1;
        const Eigen::VectorXd draw = rng.mvn_from_precision(ptm, prec);
        for (std::size_t c = 0; c < sel.size(); ++c) {
            state.beta_m.flat(sel[c]) = draw[static_cast<Eigen::Index>(c)];
        }
    }
    const double sd = std::sqrt(state.sigma2_my);
    for (int s = 0; s < S; ++s) {
        if (state.tau.flat(s) == 0) state.beta_m.flat(s) = rng.normal(0.0, sd);
    }
    (void)hyper;
}

NormalParams alpha_z_pair_posterior(const ModelState& state, const Dataset& dataset,
                                    const Hyperparams& hyper, int s) {
    const Design d = design_of(dataset);
    const Eigen::MatrixXd M = mediator_matrix(state, dataset.n_subjects());
    const Eigen::VectorXd resid = M.col(s) - d.X * state.alpha_x[static_cast<std::size_t>(s)];
    const double prec = d.z.squaredNorm() / state.sigma2_2 + 1.0 / state.sigma2_zm;
    NormalParams out;
    out.mean = (d.z.dot(resid) / state.sigma2_2) / prec;
    out.variance = 1.0 / prec;
    (void)hyper;
    return out;
}

void update_alpha_z(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                    Rng& rng) {
    const int S = state.n_pairs();
    const double prior_sd = std::sqrt(state.sigma2_zm);
    for (int s = 0; s < S; ++s) {
        if (state.gamma.flat(s) == 1) {
            const NormalParams p = alpha_z_pair_posterior(state, dataset, hyper, s);
            state.alpha_z.flat(s) = rng.normal(p.mean, std::sqrt(p.variance));
        } else {
            state.alpha_z.flat(s) = rng.normal(0.0, prior_sd);
        }
    }
}

double tau_inclusion_prob(const ModelState& state, const Dataset& dataset,
                          const Hyperparams& hyper, int s) {
    const Design d = design_of(dataset);
    const Eigen::MatrixXd M = mediator_matrix(state, dataset.n_subjects());
    const Eigen::VectorXd bt = beta_m_tilde(state);
    // residual with pair s excluded from the fit
    Eigen::VectorXd r0 = d.y - d.X * state.beta_x - d.z * state.beta_z - M * bt;
    if (state.tau.flat(s) == 1) r0 += state.beta_m.flat(s) * M.col(s);
    const Eigen::VectorXd r1 = r0 - state.beta_m.flat(s) * M.col(s);
    const double delta =
        logit(hyper.p_tau) + (r0.squaredNorm() - r1.squaredNorm()) / (2.0 * state.sigma2_1);
    return logistic(delta);
}

void update_tau(ModelState& state, const Dataset& dataset, const Hyperparams& hyper, Rng& rng) {
    const int S = state.n_pairs();
    for (int s = 0; s < S; ++s) {
        const double p = tau_inclusion_prob(state, dataset, hyper, s);
        state.tau.flat(s) = rng.bernoulli(p) ? 1 : 0;
    }
}

double gamma_inclusion_prob(const ModelState& state, const Dataset& dataset,
                            const Hyperparams& hyper, int s) {
    const Design d = design_of(dataset);
    const Eigen::MatrixXd M = mediator_matrix(state, dataset.n_subjects());
    const Eigen::VectorXd r0 = M.col(s) - d.X * state.alpha_x[static_cast<std::size_t>(s)];
    const Eigen::VectorXd r1 = r0 - d.z * state.alpha_z.flat(s);
    const double delta =
        logit(hyper.p_gamma) + (r0.squaredNorm() - r1.squaredNorm()) / (2.0 * state.sigma2_2);
    return logistic(delta);
}

void update_gamma(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                  Rng& rng) {
    const int S = state.n_pairs();
    for (int s = 0; s < S; ++s) {
        const double p = gamma_inclusion_prob(state, dataset, hyper, s);
        state.gamma.flat(s) = rng.bernoulli(p) ? 1 : 0;
    }
}

MvnParams beta_x_posterior(const ModelState& state, const Dataset& dataset,
                           const Hyperparams& hyper) {
    const Design d = design_of(dataset);
    const Eigen::MatrixXd M = mediator_matrix(state, dataset.n_subjects());
    const Eigen::VectorXd resp = d.y - M * beta_m_tilde(state) - d.z * state.beta_z;
    Eigen::MatrixXd prec = d.X.transpose() * d.X / state.sigma2_1;
    prec.diagonal().array() += 1.0 / hyper.sigma2_xy;
    const Eigen::VectorXd ptm = d.X.transpose() * resp / state.sigma2_1;
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) {
        throw NumericError("beta_x posterior precision not positive definite");
    }
    MvnParams out;
    out.mean = llt.solve(ptm);
    out.covariance = llt.solve(Eigen::MatrixXd::Identity(prec.rows(), prec.cols()));
    return out;
}

MvnParams alpha_x_pair_posterior(const ModelState& state, const Dataset& dataset,
                                 const Hyperparams& hyper, int s) {
    const Design d = design_of(dataset);
    const Eigen::MatrixXd M = mediator_matrix(state, dataset.n_subjects());
    Eigen::VectorXd resp = M.col(s);
    if (state.gamma.flat(s) == 1) resp -= d.z * state.alpha_z.flat(s);
    Eigen::MatrixXd prec = d.X.transpose() * d.X / state.sigma2_2;
    prec.diagonal().array() += 1.0 / hyper.sigma2_xm;
    const Eigen::VectorXd ptm = d.X.transpose() * resp / state.sigma2_2;
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) {
        throw NumericError("alpha_x posterior precision not positive definite");
    }
    MvnParams out;
    out.mean = llt.solve(ptm);
    out.covariance = llt.solve(Eigen::MatrixXd::Identity(prec.rows(), prec.cols()));
    return out;
}

void update_nuisance(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                     Rng& rng) {
    const Design d = design_of(dataset);
    const Eigen::MatrixXd M = mediator_matrix(state, dataset.n_subjects());

    {
        const Eigen::VectorXd resp = d.y - M * beta_m_tilde(state) - d.z * state.beta_z;
        Eigen::MatrixXd prec = d.X.transpose() * d.X / state.sigma2_1;
        prec.diagonal().array() += 1.0 / hyper.sigma2_xy;
        const Eigen::VectorXd ptm = d.X.transpose() * resp / state.sigma2_1;
        state.beta_x = rng.mvn_from_precision(ptm, prec);
    }

    Eigen::MatrixXd prec = d.X.transpose() * d.X / state.sigma2_2;
    prec.diagonal().array() += 1.0 / hyper.sigma2_xm;
    const int S = state.n_pairs();
    for (int s = 0; s < S; ++s) {
        Eigen::VectorXd resp = M.col(s);
        if (state.gamma.flat(s) == 1) resp -= d.z * state.alpha_z.flat(s);
        const Eigen::VectorXd ptm = d.X.transpose() * resp / state.sigma2_2;
        state.alpha_x[static_cast<std::size_t>(s)] = rng.mvn_from_precision(ptm, prec);
    }
}

NormalParams beta_z_posterior(const ModelState& state, const Dataset& dataset,
                              const Hyperparams& hyper) {
    const Design d = design_of(dataset);
    const Eigen::MatrixXd M = mediator_matrix(state, dataset.n_subjects());
    const Eigen::VectorXd resp = d.y - d.X * state.beta_x - M * beta_m_tilde(state);
    const double prec = d.z.squaredNorm() / state.sigma2_1 + 1.0 / hyper.sigma2_zy;
    NormalParams out;
    out.mean = (d.z.dot(resp) / state.sigma2_1) / prec;
    out.variance = 1.0 / prec;
    return out;
}

void update_beta_z(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                   Rng& rng) {
    const NormalParams p = beta_z_posterior(state, dataset, hyper);
    state.beta_z = rng.normal(p.mean, std::sqrt(p.variance));
}

namespace {

// Precision and precision*mean of the joint conditional of M_i, combining the
// outcome likelihood (rank-one), the K_i measurement-level means, and the
// mediator regression.
void latent_mediator_system(const ModelState& state, const Dataset& dataset, int i,
                            Eigen::VectorXd& ptm, Eigen::MatrixXd& prec) {
    const int S = state.n_pairs();
    const auto& subj = dataset.subjects[static_cast<std::size_t>(i)];
    const int K = subj.n_measurements();
    const Eigen::VectorXd bt = beta_m_tilde(state);

    prec = bt * bt.transpose() / state.sigma2_1;
    ptm.resize(S);
    const double resid_y =
        subj.outcome - subj.covariates.dot(state.beta_x) - subj.exposure * state.beta_z;
    ptm = bt * (resid_y / state.sigma2_1);

    for (int s = 0; s < S; ++s) {
        const double omega2 = state.omega_qr.flat(s);
        double msum = 0.0;
        for (int k = 0; k < K; ++k) {
            msum += state.m_meas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].flat(s);
        }
        double mu = subj.covariates.dot(state.alpha_x[static_cast<std::size_t>(s)]);
        if (state.gamma.flat(s) == 1) mu += subj.exposure * state.alpha_z.flat(s);
        prec(s, s) += K / omega2 + 1.0 / state.sigma2_2;
        ptm[s] += msum / omega2 + mu / state.sigma2_2;
    }
}

}  // namespace

MvnParams latent_mediator_posterior(const ModelState& state, const Dataset& dataset,
                                    const Hyperparams& hyper, int i) {
    Eigen::VectorXd ptm;
    Eigen::MatrixXd prec;
    latent_mediator_system(state, dataset, i, ptm, prec);
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) {
        throw NumericError("latent mediator posterior precision not positive definite");
    }
    MvnParams out;
    out.mean = llt.solve(ptm);
    out.covariance = llt.solve(Eigen::MatrixXd::Identity(prec.rows(), prec.cols()));
    (void)hyper;
    return out;
}

void update_latent_M(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                     Rng& rng) {
    const int N = dataset.n_subjects();
    const int S = state.n_pairs();
    Eigen::VectorXd ptm;
    Eigen::MatrixXd prec;
    for (int i = 0; i < N; ++i) {
        latent_mediator_system(state, dataset, i, ptm, prec);
        const Eigen::VectorXd draw = rng.mvn_from_precision(ptm, prec);
        for (int s = 0; s < S; ++s) state.M[static_cast<std::size_t>(i)].flat(s) = draw[s];
    }
    (void)hyper;
}

NormalParams m_meas_posterior(const ModelState& state, const Dataset& dataset,
                              const Hyperparams& hyper, int i, int k, int s) {
    const int V = dataset.V;
    const int Q = state.block_count();
    const auto& A =
        dataset.subjects[static_cast<std::size_t>(i)].connectomes[static_cast<std::size_t>(k)];
    double sum = 0.0;
    int n = 0;
    for (int j = 0; j < V; ++j) {
        for (int l = j + 1; l < V; ++l) {
            if (pair_index(state.allocation.label(j), state.allocation.label(l), Q) != s) continue;
            sum += A(j, l);
            ++n;
        }
    }
    const double sigma2 = state.sigma_qr.flat(s);
    const double omega2 = state.omega_qr.flat(s);
    const double prec = n / sigma2 + 1.0 / omega2;
    NormalParams out;
    out.mean = (sum / sigma2 + state.M[static_cast<std::size_t>(i)].flat(s) / omega2) / prec;
    out.variance = 1.0 / prec;
    (void)hyper;
    return out;
}

void update_m_meas(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                   Rng& rng) {
    const int V = dataset.V;
    const int Q = state.block_count();
    const int S = state.n_pairs();

    // Node-pair membership is fixed for the whole update.
    std::vector<int> pair_of(static_cast<std::size_t>(V * V), -1);
    Eigen::VectorXi n_edges = Eigen::VectorXi::Zero(S);
    for (int j = 0; j < V; ++j) {
        for (int l = j + 1; l < V; ++l) {
            const int s = pair_index(state.allocation.label(j), state.allocation.label(l), Q);
            pair_of[static_cast<std::size_t>(j * V + l)] = s;
            n_edges[s] += 1;
        }
    }

    Eigen::VectorXd sums(S);
    for (int i = 0; i < dataset.n_subjects(); ++i) {
        const auto& subj = dataset.subjects[static_cast<std::size_t>(i)];
        for (int k = 0; k < subj.n_measurements(); ++k) {
            const auto& A = subj.connectomes[static_cast<std::size_t>(k)];
            sums.setZero();
            for (int j = 0; j < V; ++j) {
                for (int l = j + 1; l < V; ++l) {
                    sums[pair_of[static_cast<std::size_t>(j * V + l)]] += A(j, l);
                }
            }
            auto& table =
                state.m_meas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
            for (int s = 0; s < S; ++s) {
                const double sigma2 = state.sigma_qr.flat(s);
                const double omega2 = state.omega_qr.flat(s);
                const double prec = n_edges[s] / sigma2 + 1.0 / omega2;
                const double mean =
                    (sums[s] / sigma2 + state.M[static_cast<std::size_t>(i)].flat(s) / omega2) /
                    prec;
                table.flat(s) = rng.normal(mean, std::sqrt(1.0 / prec));
            }
        }
    }
    (void)hyper;
}

Eigen::VectorXd allocation_log_conditional(const ModelState& state, const Dataset& dataset,
                                           int v) {
    const int V = dataset.V;
    const int Q = state.block_count();
    Eigen::VectorXd scores(Q);
    for (int q = 1; q <= Q; ++q) {
        double sc = state.pi[q - 1] > 0.0 ? std::log(state.pi[q - 1])
                                          : -std::numeric_limits<double>::infinity();
        for (int l = 0; l < V; ++l) {
            if (l == v) continue;
            const int s = pair_index(q, state.allocation.label(l), Q);
            const double sigma2 = state.sigma_qr.flat(s);
            for (int i = 0; i < dataset.n_subjects(); ++i) {
                const auto& subj = dataset.subjects[static_cast<std::size_t>(i)];
                for (int k = 0; k < subj.n_measurements(); ++k) {
                    const double a = subj.connectomes[static_cast<std::size_t>(k)](v, l);
                    const double m =
                        state.m_meas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]
                            .flat(s);
                    sc += -0.5 * (kLog2Pi + std::log(sigma2)) - (a - m) * (a - m) / (2.0 * sigma2);
                }
            }
        }
        scores[q - 1] = sc;
    }
    return scores;
}

void update_allocation(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                       Rng& rng) {
    const int V = dataset.V;
    const int Q = state.block_count();
    const int S = state.n_pairs();
    const int NK = dataset.total_measurements();

    std::vector<int> labels = state.allocation.labels();
    std::vector<int> n(static_cast<std::size_t>(Q), 0);
    for (int lab : labels) n[static_cast<std::size_t>(lab - 1)] += 1;

    // Stacked m_{ik,s} values: row t = measurement (i,k) in dataset order.
    Eigen::MatrixXd m_stack(NK, S);
    {
        int t = 0;
        for (int i = 0; i < dataset.n_subjects(); ++i) {
            const auto& tables = state.m_meas[static_cast<std::size_t>(i)];
            for (const auto& table : tables) {
                for (int s = 0; s < S; ++s) m_stack(t, s) = table.flat(s);
                ++t;
            }
        }
    }
    const Eigen::VectorXd Qm2 = m_stack.colwise().squaredNorm();

    // ta(v,l) = sum over measurements of a_{ik,vl}^2.
    Eigen::MatrixXd ta = Eigen::MatrixXd::Zero(V, V);
    for (const auto& subj : dataset.subjects) {
        for (const auto& A : subj.connectomes) {
            for (int j = 0; j < V; ++j) {
                for (int l = j + 1; l < V; ++l) {
                    const double a2 = A(j, l) * A(j, l);
                    ta(j, l) += a2;
                    ta(l, j) += a2;
                }
            }
        }
    }

    // S1(t, v*Q + r-1) = sum over l != v currently in block r of a_{ik,vl}.
    // T2(v, r-1) = matching sum of squares. Both maintained as labels move.
    Eigen::MatrixXd S1 = Eigen::MatrixXd::Zero(NK, V * Q);
    {
        int t = 0;
        for (const auto& subj : dataset.subjects) {
            for (const auto& A : subj.connectomes) {
                for (int v = 0; v < V; ++v) {
                    const int base = v * Q;
                    for (int l = 0; l < V; ++l) {
                        if (l == v) continue;
                        S1(t, base + labels[static_cast<std::size_t>(l)] - 1) += A(l, v);
                    }
                }
                ++t;
            }
        }
    }
    Eigen::MatrixXd T2 = Eigen::MatrixXd::Zero(V, Q);
    for (int v = 0; v < V; ++v) {
        for (int l = 0; l < V; ++l) {
            if (l == v) continue;
            T2(v, labels[static_cast<std::size_t>(l)] - 1) += ta(v, l);
        }
    }

    Eigen::VectorXd log_pi(Q), log_norm(S), inv2sig(S);
    for (int q = 0; q < Q; ++q) {
        log_pi[q] = state.pi[q] > 0.0 ? std::log(state.pi[q])
                                      : -std::numeric_limits<double>::infinity();
    }
    for (int s = 0; s < S; ++s) {
        const double sigma2 = state.sigma_qr.flat(s);
        log_norm[s] = kLog2Pi + std::log(sigma2);
        inv2sig[s] = 1.0 / (2.0 * sigma2);
    }

    Eigen::VectorXd scores(Q);
    for (int v = 0; v < V; ++v) {
        const int old_lab = labels[static_cast<std::size_t>(v)];
        for (int q = 1; q <= Q; ++q) {
            double sc = log_pi[q - 1];
            for (int r = 1; r <= Q; ++r) {
                const int nr = n[static_cast<std::size_t>(r - 1)] - (old_lab == r ? 1 : 0);
                if (nr == 0) continue;
                const int s = pair_index(q, r, Q);
                const double cross = m_stack.col(s).dot(S1.col(v * Q + r - 1));
                sc += -0.5 * nr * NK * log_norm[s] -
                      inv2sig[s] * (T2(v, r - 1) - 2.0 * cross + nr * Qm2[s]);
            }
            scores[q - 1] = sc;
        }
        const int new_lab = rng.categorical_from_log(scores) + 1;
        if (new_lab != old_lab) {
            n[static_cast<std::size_t>(old_lab - 1)] -= 1;
            n[static_cast<std::size_t>(new_lab - 1)] += 1;
            labels[static_cast<std::size_t>(v)] = new_lab;
            int t = 0;
            for (const auto& subj : dataset.subjects) {
                for (const auto& A : subj.connectomes) {
                    for (int u = 0; u < V; ++u) {
                        if (u == v) continue;
                        const double a = A(u, v);
                        S1(t, u * Q + old_lab - 1) -= a;
                        S1(t, u * Q + new_lab - 1) += a;
                    }
                    ++t;
                }
            }
            for (int u = 0; u < V; ++u) {
                if (u == v) continue;
                T2(u, old_lab - 1) -= ta(u, v);
                T2(u, new_lab - 1) += ta(u, v);
            }
        }
    }
    state.allocation = Allocation(std::move(labels), Q);
    (void)hyper;
}

void update_pi(ModelState& state, const Hyperparams& hyper, Rng& rng) {
    const int Q = state.block_count();
    Eigen::VectorXd conc = hyper.concentration(Q);
    const std::vector<int> counts = state.allocation.block_sizes();
    for (int q = 0; q < Q; ++q) conc[q] += counts[static_cast<std::size_t>(q)];
    state.pi = rng.dirichlet(conc);
}

IgParams sigma2_1_posterior(const ModelState& state, const Dataset& dataset,
                            const Hyperparams& hyper) {
    const Design d = design_of(dataset);
    const Eigen::MatrixXd M = mediator_matrix(state, dataset.n_subjects());
    const Eigen::VectorXd r =
        d.y - d.X * state.beta_x - M * beta_m_tilde(state) - d.z * state.beta_z;
    return IgParams{hyper.ig_noninf_shape + dataset.n_subjects() / 2.0,
                    hyper.ig_noninf_scale + r.squaredNorm() / 2.0};
}

IgParams sigma2_2_posterior(const ModelState& state, const Dataset& dataset,
                            const Hyperparams& hyper) {
    const Design d = design_of(dataset);
    const Eigen::MatrixXd M = mediator_matrix(state, dataset.n_subjects());
    const int S = state.n_pairs();
    double ssr = 0.0;
    for (int s = 0; s < S; ++s) {
        ssr += (M.col(s) - mediator_regression_mean(state, d, s)).squaredNorm();
    }
    return IgParams{hyper.ig_noninf_shape + dataset.n_subjects() * S / 2.0,
                    hyper.ig_noninf_scale + ssr / 2.0};
}

IgParams omega_qr_posterior(const ModelState& state, const Dataset& dataset,
                            const Hyperparams& hyper, int s) {
    double ssr = 0.0;
    int count = 0;
    for (int i = 0; i < dataset.n_subjects(); ++i) {
        const double center = state.M[static_cast<std::size_t>(i)].flat(s);
        for (const auto& table : state.m_meas[static_cast<std::size_t>(i)]) {
            const double dev = table.flat(s) - center;
            ssr += dev * dev;
            ++count;
        }
    }
    return IgParams{hyper.a2 + count / 2.0, hyper.b2 + ssr / 2.0};
}

IgParams sigma_qr_posterior(const ModelState& state, const Dataset& dataset,
                            const Hyperparams& hyper, int s) {
    const int V = dataset.V;
    const int Q = state.block_count();
    double ssr = 0.0;
    long count = 0;
    for (int i = 0; i < dataset.n_subjects(); ++i) {
        const auto& subj = dataset.subjects[static_cast<std::size_t>(i)];
        for (int k = 0; k < subj.n_measurements(); ++k) {
            const auto& A = subj.connectomes[static_cast<std::size_t>(k)];
            const double m =
                state.m_meas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].flat(s);
            for (int j = 0; j < V; ++j) {
                for (int l = j + 1; l < V; ++l) {
                    if (pair_index(state.allocation.label(j), state.allocation.label(l), Q) != s)
                        continue;
                    const double dev = A(j, l) - m;
                    ssr += dev * dev;
                    ++count;
                }
            }
        }
    }
    return IgParams{hyper.a1 + count / 2.0, hyper.b1 + ssr / 2.0};
}

IgParams sigma2_zm_posterior(const ModelState& state, const Hyperparams& hyper) {
    double ss = 0.0;
    for (double v : state.alpha_z.values()) ss += v * v;
    return IgParams{hyper.ig_noninf_shape + state.n_pairs() / 2.0,
                    hyper.ig_noninf_scale + ss / 2.0};
}

IgParams sigma2_my_posterior(const ModelState& state, const Hyperparams& hyper) {
    double ss = 0.0;
    for (double v : state.beta_m.values()) ss += v * v;
    return IgParams{hyper.ig_noninf_shape + state.n_pairs() / 2.0,
                    hyper.ig_noninf_scale + ss / 2.0};
}

void update_variances(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
                      Rng& rng) {
    const int V = dataset.V;
    const int Q = state.block_count();
    const int S = state.n_pairs();

    {
        const IgParams p = sigma2_1_posterior(state, dataset, hyper);
        state.sigma2_1 = rng.inverse_gamma(p.shape, p.scale);
    }
    {
        const IgParams p = sigma2_2_posterior(state, dataset, hyper);
        state.sigma2_2 = rng.inverse_gamma(p.shape, p.scale);
    }

    // omega^2 per pair: deviations of m_ik around m_i.
    {
        Eigen::VectorXd ssr = Eigen::VectorXd::Zero(S);
        int count = 0;
        for (int i = 0; i < dataset.n_subjects(); ++i) {
            for (const auto& table : state.m_meas[static_cast<std::size_t>(i)]) {
                for (int s = 0; s < S; ++s) {
                    const double dev = table.flat(s) - state.M[static_cast<std::size_t>(i)].flat(s);
                    ssr[s] += dev * dev;
                }
                ++count;
            }
        }
        for (int s = 0; s < S; ++s) {
            state.omega_qr.flat(s) =
                rng.inverse_gamma(hyper.a2 + count / 2.0, hyper.b2 + ssr[s] / 2.0);
        }
    }

    // sigma^2 per pair: edge deviations around m_ik, single pass over edges.
    {
        std::vector<int> pair_of(static_cast<std::size_t>(V * V), -1);
        Eigen::VectorXi n_edges = Eigen::VectorXi::Zero(S);
        for (int j = 0; j < V; ++j) {
            for (int l = j + 1; l < V; ++l) {
                const int s = pair_index(state.allocation.label(j), state.allocation.label(l), Q);
                pair_of[static_cast<std::size_t>(j * V + l)] = s;
                n_edges[s] += 1;
            }
        }
        Eigen::VectorXd ssr = Eigen::VectorXd::Zero(S);
        long counts_factor = 0;
        for (int i = 0; i < dataset.n_subjects(); ++i) {
            const auto& subj = dataset.subjects[static_cast<std::size_t>(i)];
            for (int k = 0; k < subj.n_measurements(); ++k) {
                const auto& A = subj.connectomes[static_cast<std::size_t>(k)];
                const auto& table =
                    state.m_meas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
                for (int j = 0; j < V; ++j) {
                    for (int l = j + 1; l < V; ++l) {
                        const int s = pair_of[static_cast<std::size_t>(j * V + l)];
                        const double dev = A(j, l) - table.flat(s);
                        ssr[s] += dev * dev;
                    }
                }
                ++counts_factor;
            }
        }
        for (int s = 0; s < S; ++s) {
            const double shape = hyper.a1 + counts_factor * static_cast<double>(n_edges[s]) / 2.0;
            state.sigma_qr.flat(s) = rng.inverse_gamma(shape, hyper.b1 + ssr[s] / 2.0);
        }
    }

    {
        const IgParams p = sigma2_zm_posterior(state, hyper);
        state.sigma2_zm = rng.inverse_gamma(p.shape, p.scale);
    }
    {
        const IgParams p = sigma2_my_posterior(state, hyper);
        state.sigma2_my = rng.inverse_gamma(p.shape, p.scale);
    }
}

void sweep(ModelState& state, const Dataset& dataset, const Hyperparams& hyper,
           const SweepPlan& plan, Rng& rng) {
    for (UpdateStep step : plan.steps) {
        switch (step) {
            case UpdateStep::BetaM:
                update_beta_m(state, dataset, hyper, rng);
                break;
            case UpdateStep::AlphaZ:
                update_alpha_z(state, dataset, hyper, rng);
                break;
            case UpdateStep::Indicators:
                update_tau(state, dataset, hyper, rng);
                update_gamma(state, dataset, hyper, rng);
                break;
            case UpdateStep::Nuisance:
                update_nuisance(state, dataset, hyper, rng);
                break;
            case UpdateStep::BetaZ:
                update_beta_z(state, dataset, hyper, rng);
                break;
            case UpdateStep::LatentMediators:
                update_latent_M(state, dataset, hyper, rng);
                update_m_meas(state, dataset, hyper, rng);
                break;
            case UpdateStep::Allocation:
                update_allocation(state, dataset, hyper, rng);
                update_pi(state, hyper, rng);
                break;
            case UpdateStep::Variances:
                update_variances(state, dataset, hyper, rng);
                break;
        }
    }
}

ModelState draw_state_from_prior(const Dataset& dataset, int Q, const Hyperparams& hyper,
                                 Rng& rng) {
    const int V = dataset.V;
    const int N = dataset.n_subjects();
    const int S = pair_count(Q);
    const int P1 = dataset.P + 1;

    ModelState st;
    st.sigma2_1 = rng.inverse_gamma(hyper.ig_noninf_shape, hyper.ig_noninf_scale);
    st.sigma2_2 = rng.inverse_gamma(hyper.ig_noninf_shape, hyper.ig_noninf_scale);
    st.sigma2_zm = rng.inverse_gamma(hyper.ig_noninf_shape, hyper.ig_noninf_scale);
    st.sigma2_my = rng.inverse_gamma(hyper.ig_noninf_shape, hyper.ig_noninf_scale);

    st.sigma_qr = BlockPairTable(Q);
    st.omega_qr = BlockPairTable(Q);
    for (int s = 0; s < S; ++s) {
        st.sigma_qr.flat(s) = rng.inverse_gamma(hyper.a1, hyper.b1);
        st.omega_qr.flat(s) = rng.inverse_gamma(hyper.a2, hyper.b2);
    }

    st.pi = rng.dirichlet(hyper.concentration(Q));
    std::vector<int> labels(static_cast<std::size_t>(V), 1);
    for (int v = 0; v < V; ++v) {
        double u = rng.uniform();
        int lab = Q;
        double cum = 0.0;
        for (int q = 0; q < Q; ++q) {
            cum += st.pi[q];
            if (u <= cum) {
                lab = q + 1;
                break;
            }
        }
        labels[static_cast<std::size_t>(v)] = lab;
    }
    st.allocation = Allocation(std::move(labels), Q);

    st.tau = BlockPairIndicators(Q);
    st.gamma = BlockPairIndicators(Q);
    for (int s = 0; s < S; ++s) st.tau.flat(s) = rng.bernoulli(hyper.p_tau) ? 1 : 0;
    for (int s = 0; s < S; ++s) st.gamma.flat(s) = rng.bernoulli(hyper.p_gamma) ? 1 : 0;

    st.beta_x.resize(P1);
    const double sd_xy = std::sqrt(hyper.sigma2_xy);
    for (int p = 0; p < P1; ++p) st.beta_x[p] = rng.normal(0.0, sd_xy);
    st.beta_z = rng.normal(0.0, std::sqrt(hyper.sigma2_zy));

    st.alpha_x.assign(static_cast<std::size_t>(S), Eigen::VectorXd());
    const double sd_xm = std::sqrt(hyper.sigma2_xm);
    for (int s = 0; s < S; ++s) {
        Eigen::VectorXd a(P1);
        for (int p = 0; p < P1; ++p) a[p] = rng.normal(0.0, sd_xm);
        st.alpha_x[static_cast<std::size_t>(s)] = std::move(a);
    }
    st.alpha_z = BlockPairTable(Q);
    st.beta_m = BlockPairTable(Q);
    const double sd_zm = std::sqrt(st.sigma2_zm);
    const double sd_my = std::sqrt(st.sigma2_my);
    for (int s = 0; s < S; ++s) st.alpha_z.flat(s) = rng.normal(0.0, sd_zm);
    for (int s = 0; s < S; ++s) st.beta_m.flat(s) = rng.normal(0.0, sd_my);

    st.M.assign(static_cast<std::size_t>(N), BlockPairTable(Q));
    st.m_meas.resize(static_cast<std::size_t>(N));
    const double sd_2 = std::sqrt(st.sigma2_2);
    for (int i = 0; i < N; ++i) {
        const auto& subj = dataset.subjects[static_cast<std::size_t>(i)];
        for (int s = 0; s < S; ++s) {
            double mu = subj.covariates.dot(st.alpha_x[static_cast<std::size_t>(s)]);
            if (st.gamma.flat(s) == 1) mu += subj.exposure * st.alpha_z.flat(s);
            st.M[static_cast<std::size_t>(i)].flat(s) = rng.normal(mu, sd_2);
        }
        auto& tables = st.m_meas[static_cast<std::size_t>(i)];
        tables.assign(static_cast<std::size_t>(subj.n_measurements()), BlockPairTable(Q));
        for (int k = 0; k < subj.n_measurements(); ++k) {
            for (int s = 0; s < S; ++s) {
                tables[static_cast<std::size_t>(k)].flat(s) =
                    rng.normal(st.M[static_cast<std::size_t>(i)].flat(s),
                               std::sqrt(st.omega_qr.flat(s)));
            }
        }
    }
    return st;
}

namespace {

ModelState block_average_state(const Dataset& dataset, const ChainConfig& config,
                               const Hyperparams& hyper) {
    const int Q = config.Q;
    const int S = pair_count(Q);
    const int N = dataset.n_subjects();
    constexpr double kFloor = 1e-6;

    // Clustering seed depends on the data shape only, so every chain of a fit
    // (whatever its own seed) starts from the same block labeling.
    const Eigen::MatrixXd pooled = pooled_adjacency(dataset);
    const IclResult cluster = fit_pooled_sbm(pooled, Q, derive_seed(0xB10C, Q), 10);
    const BlockAverages ba = block_averages(dataset, cluster.allocation);

    ModelState st;
    st.allocation = cluster.allocation;
    st.m_meas = ba.m_meas;

    st.M.assign(static_cast<std::size_t>(N), BlockPairTable(Q));
    for (int i = 0; i < N; ++i) {
        const auto& tables = st.m_meas[static_cast<std::size_t>(i)];
        for (int s = 0; s < S; ++s) {
            double sum = 0.0;
            for (const auto& t : tables) sum += t.flat(s);
            st.M[static_cast<std::size_t>(i)].flat(s) = sum / static_cast<double>(tables.size());
        }
    }

    st.sigma_qr = ba.pooled_variance;
    for (double& v : st.sigma_qr.values()) v = std::max(v, kFloor);

    st.omega_qr = BlockPairTable(Q);
    const int NK = dataset.total_measurements();
    for (int s = 0; s < S; ++s) {
        double ssr = 0.0;
        for (int i = 0; i < N; ++i) {
            const double center = st.M[static_cast<std::size_t>(i)].flat(s);
            for (const auto& t : st.m_meas[static_cast<std::size_t>(i)]) {
                const double dev = t.flat(s) - center;
                ssr += dev * dev;
            }
        }
        st.omega_qr.flat(s) = std::max(ssr / std::max(NK - N, 1), kFloor);
    }

    const Design d = design_of(dataset);
    const double y_mean = d.y.mean();
    st.sigma2_1 = std::max((d.y.array() - y_mean).square().sum() / std::max(N - 1, 1), kFloor);
    {
        double acc = 0.0;
        for (int s = 0; s < S; ++s) {
            double mean = 0.0;
            for (int i = 0; i < N; ++i) mean += st.M[static_cast<std::size_t>(i)].flat(s);
            mean /= N;
            for (int i = 0; i < N; ++i) {
                const double dev = st.M[static_cast<std::size_t>(i)].flat(s) - mean;
                acc += dev * dev;
            }
        }
        st.sigma2_2 = std::max(acc / std::max(N * S - S, 1), kFloor);
    }
    st.sigma2_zm = 1.0;
    st.sigma2_my = 1.0;

    st.beta_x = Eigen::VectorXd::Zero(dataset.P + 1);
    st.beta_z = 0.0;
    st.alpha_x.assign(static_cast<std::size_t>(S), Eigen::VectorXd::Zero(dataset.P + 1));
    st.alpha_z = BlockPairTable(Q);
    st.beta_m = BlockPairTable(Q);
    st.tau = BlockPairIndicators(Q, 1);
    st.gamma = BlockPairIndicators(Q, 1);

    const std::vector<int> counts = st.allocation.block_sizes();
    st.pi.resize(Q);
    for (int q = 0; q < Q; ++q) {
        st.pi[q] = (counts[static_cast<std::size_t>(q)] + 1.0) / (dataset.V + Q);
    }
    (void)hyper;
    return st;
}

}  // namespace

ModelState initial_state(const Dataset& dataset, const ChainConfig& config,
                         const Hyperparams& hyper, Rng& rng) {
    if (config.init_mode == ChainConfig::Init::random) {
        return draw_state_from_prior(dataset, config.Q, hyper, rng);
    }
    return block_average_state(dataset, config, hyper);
}

PosteriorDraws run_chain(const Dataset& dataset, const ChainConfig& config,
                         const Hyperparams& hyper) {
    config.validate();
    hyper.validate();

    Rng rng(config.seed);
    ModelState state = initial_state(dataset, config, hyper, rng);
    const SweepPlan plan = SweepPlan::standard();

    PosteriorDraws out;
    out.n_iter = config.n_iter;
    out.burn_in = config.burn_in;
    out.thin = config.thin;
    out.Q = config.Q;
    out.V = dataset.V;
    out.master_seed = config.seed;
    out.contrast_z = config.contrast_z;
    out.contrast_z_star = config.contrast_z_star;

    PosteriorDraws::Chain chain;
    chain.seed = config.seed;
    const int S = pair_count(config.Q);

    for (int iter = 1; iter <= config.n_iter; ++iter) {
        try {
            sweep(state, dataset, hyper, plan, rng);
        } catch (const NumericError& e) {
            throw NumericError("iteration " + std::to_string(iter) + ": " + e.what());
        }
        if (iter <= config.burn_in) continue;
        if ((iter - config.burn_in - 1) % config.thin != 0) continue;

        try {
            state.check_invariants();
        } catch (const NumericError& e) {
            throw NumericError("iteration " + std::to_string(iter) + ": " + e.what());
        }

        chain.iteration.push_back(iter);
        chain.beta_z.push_back(state.beta_z);
        chain.sigma2_1.push_back(state.sigma2_1);
        chain.sigma2_2.push_back(state.sigma2_2);
        chain.sigma2_zm.push_back(state.sigma2_zm);
        chain.sigma2_my.push_back(state.sigma2_my);
        chain.tau.push_back(state.tau.values());
        chain.gamma.push_back(state.gamma.values());
        Eigen::VectorXd az(S), bm(S);
        for (int s = 0; s < S; ++s) {
            az[s] = state.alpha_z.flat(s);
            bm[s] = state.beta_m.flat(s);
        }
        chain.alpha_z.push_back(std::move(az));
        chain.beta_m.push_back(std::move(bm));
        chain.labels.push_back(state.allocation.labels());
        const EffectDraw e =
            effects_from_draw(state, config.contrast_z, config.contrast_z_star);
        chain.nde.push_back(e.nde);
        chain.nie.push_back(e.nie);
        chain.te.push_back(e.te);
        chain.nie_pos.push_back(e.nie_pos);
        chain.nie_neg.push_back(e.nie_neg);
    }

    out.chains.push_back(std::move(chain));
    return out;
}

PosteriorDraws run_chains(const Dataset& dataset, const ChainConfig& config,
                          const Hyperparams& hyper) {
    config.validate();
    if (config.n_chains == 1) return run_chain(dataset, config, hyper);

    int max_workers = static_cast<int>(std::thread::hardware_concurrency());
    if (max_workers < 1) max_workers = 1;
    if (const char* env = std::getenv("BNMM_THREADS")) {
        const int requested = std::atoi(env);
        if (requested >= 1) max_workers = requested;
    }

    std::vector<PosteriorDraws> results(static_cast<std::size_t>(config.n_chains));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.n_chains));

    for (int start = 0; start < config.n_chains; start += max_workers) {
        const int stop = std::min(start + max_workers, config.n_chains);
        std::vector<std::thread> workers;
        for (int idx = start; idx < stop; ++idx) {
            workers.emplace_back([&, idx] {
                try {
                    ChainConfig c = config;
                    c.seed = config.seed + static_cast<std::uint64_t>(idx);
                    c.n_chains = 1;
                    results[static_cast<std::size_t>(idx)] = run_chain(dataset, c, hyper);
                } catch (...) {
                    errors[static_cast<std::size_t>(idx)] = std::current_exception();
                }
            });
        }
        for (auto& w : workers) w.join();
    }
    for (const auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }

    PosteriorDraws out = std::move(results.front());
    out.master_seed = config.seed;
    for (std::size_t idx = 1; idx < results.size(); ++idx) {
        out.chains.push_back(std::move(results[idx].chains.front()));
    }
    return out;
}

}  // namespace bnmm
