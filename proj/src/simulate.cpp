#include "bnmm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bnmm {

void SimConfig::validate() const {
    if (N < 1 || K < 1 || V < 1 || Q < 1) throw DataError("SimConfig: counts must be positive");
    if (Q > V) throw DataError("SimConfig: Q cannot exceed V");
    if (scenario != 1 && scenario != 2) throw DataError("SimConfig: scenario must be 1 or 2");
    if (!(active_prob >= 0.0 && active_prob <= 1.0)) {
        throw DataError("SimConfig: active_prob outside [0,1]");
    }
    const int S = pair_count(Q);
    if (scenario == 2) {
        if (n_active_tau < 1 || n_active_gamma < 1 || n_overlap < 0) {
            throw DataError("SimConfig: scenario 2 set sizes must be positive");
        }
        if (n_overlap > std::min(n_active_tau, n_active_gamma)) {
            throw DataError("SimConfig: overlap exceeds a set size");
        }
        if (n_active_gamma + (n_active_tau - n_overlap) > S) {
            throw DataError("SimConfig: active sets need more block pairs than Q provides");
        }
    }
    for (const auto& ov : {sigma1, sigma2, sigma_edge, omega}) {
        if (ov && (*ov < 0.0 || !std::isfinite(*ov))) {
            throw DataError("SimConfig: noise override must be a finite nonnegative sd");
        }
    }
}

SimConfig scaled_config(int scenario, SimConfig::Noise noise, std::uint64_t seed) {
    SimConfig c;
    c.N = 50;
    c.V = 60;
    c.Q = 6;
    c.K = 4;
    c.scenario = scenario;
    c.noise = noise;
    c.seed = seed;
    return c;
}

void sample_dataset_given_state(Dataset& dataset, const ModelState& state, Rng& rng) {
    const int V = dataset.V;
    const int Q = state.block_count();
    const double sd_y = std::sqrt(state.sigma2_1);
    const Eigen::VectorXd bt = [&] {
        const int S = state.n_pairs();
        Eigen::VectorXd v(S);
        for (int s = 0; s < S; ++s) v[s] = state.beta_m.flat(s) * state.tau.flat(s);
        return v;
    }();

    for (int i = 0; i < dataset.n_subjects(); ++i) {
        auto& subj = dataset.subjects[static_cast<std::size_t>(i)];
        double fit = subj.covariates.dot(state.beta_x) + subj.exposure * state.beta_z;
        for (int s = 0; s < state.n_pairs(); ++s) {
            fit += state.M[static_cast<std::size_t>(i)].flat(s) * bt[s];
        }
        subj.outcome = rng.normal(fit, sd_y);

        for (int k = 0; k < subj.n_measurements(); ++k) {
            auto& A = subj.connectomes[static_cast<std::size_t>(k)];
            const auto& table =
                state.m_meas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
            A.setZero();
            for (int j = 0; j < V; ++j) {
                for (int l = j + 1; l < V; ++l) {
                    const int s =
                        pair_index(state.allocation.label(j), state.allocation.label(l), Q);
                    const double a = rng.normal(table.flat(s), std::sqrt(state.sigma_qr.flat(s)));
                    A(j, l) = a;
                    A(l, j) = a;
                }
            }
        }
    }
}

namespace {

struct NoiseSd {
    double sigma1, sigma2, sigma_edge, omega;
};

NoiseSd resolve_noise(const SimConfig& c) {
    NoiseSd n;
    if (c.noise == SimConfig::Noise::low) {
        n.sigma1 = 0.1;
        n.sigma2 = 0.1;
        n.sigma_edge = 0.1;
    } else {
        n.sigma1 = 1.0;
        n.sigma2 = 0.5;
        n.sigma_edge = 0.5;
    }
    n.omega = 0.1;
    if (c.sigma1) n.sigma1 = *c.sigma1;
    if (c.sigma2) n.sigma2 = *c.sigma2;
    if (c.sigma_edge) n.sigma_edge = *c.sigma_edge;
    if (c.omega) n.omega = *c.omega;
    return n;
}

}  // namespace

std::pair<Dataset, GroundTruth> generate(const SimConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const int N = config.N, K = config.K, V = config.V, Q = config.Q;
    const int S = pair_count(Q);
    const NoiseSd sd = resolve_noise(config);

    Dataset data;
    data.V = V;
    data.P = 1;
    data.subjects.resize(static_cast<std::size_t>(N));
    for (auto& subj : data.subjects) {
        subj.exposure = config.exposure == SimConfig::Exposure::continuous
                            ? rng.normal()
                            : (rng.bernoulli(0.5) ? 1.0 : 0.0);
        subj.covariates.resize(2);
        subj.covariates[0] = 1.0;
        subj.covariates[1] = rng.normal();
        subj.connectomes.assign(static_cast<std::size_t>(K), Eigen::MatrixXd::Zero(V, V));
    }

    ModelState truth;
    truth.pi = rng.dirichlet(Eigen::VectorXd::Constant(Q, 3.0));
    {
        std::vector<int> labels(static_cast<std::size_t>(V), 1);
        for (int v = 0; v < V; ++v) {
            double u = rng.uniform();
            int lab = Q;
            double cum = 0.0;
            for (int q = 0; q < Q; ++q) {
                cum += truth.pi[q];
                if (u <= cum) {
                    lab = q + 1;
                    break;
                }
            }
            labels[static_cast<std::size_t>(v)] = lab;
        }
        truth.allocation = Allocation(std::move(labels), Q);
    }

    truth.tau = BlockPairIndicators(Q, 0);
    truth.gamma = BlockPairIndicators(Q, 0);
    if (config.scenario == 1) {
        // identical sets; redrawn until at least one pair is active
        // (active_prob = 0 asks for the mediator-free design, no redraw)
        int n_active = 0;
        do {
            n_active = 0;
            for (int s = 0; s < S; ++s) {
                const int on = rng.bernoulli(config.active_prob) ? 1 : 0;
                truth.tau.flat(s) = on;
                truth.gamma.flat(s) = on;
                n_active += on;
            }
        } while (n_active == 0 && config.active_prob > 0.0);
    } else {
        std::vector<int> order(static_cast<std::size_t>(S));
        std::iota(order.begin(), order.end(), 0);
        for (int s = S - 1; s > 0; --s) {
            std::swap(order[static_cast<std::size_t>(s)],
                      order[static_cast<std::size_t>(rng.uniform_int(0, s))]);
        }
        for (int j = 0; j < config.n_active_gamma; ++j) {
            truth.gamma.flat(order[static_cast<std::size_t>(j)]) = 1;
        }
        for (int j = 0; j < config.n_overlap; ++j) {
            truth.tau.flat(order[static_cast<std::size_t>(j)]) = 1;
        }
        for (int j = 0; j < config.n_active_tau - config.n_overlap; ++j) {
            truth.tau.flat(order[static_cast<std::size_t>(config.n_active_gamma + j)]) = 1;
        }
    }

    truth.beta_z = 1.5;
    truth.beta_x = Eigen::VectorXd::Ones(2);
    truth.beta_m = BlockPairTable(Q, 2.0);
    truth.alpha_x.assign(static_cast<std::size_t>(S), Eigen::VectorXd::Constant(2, 0.3));
    truth.alpha_z = BlockPairTable(Q, 0.0);
    {
        std::vector<int> gamma_active;
        for (int s = 0; s < S; ++s) {
            if (truth.gamma.flat(s) == 1) gamma_active.push_back(s);
        }
        const int n = static_cast<int>(gamma_active.size());
        const Eigen::VectorXd values = Eigen::VectorXd::LinSpaced(std::max(n, 1), 1.5, 2.5);
        for (int j = 0; j < n; ++j) {
            truth.alpha_z.flat(gamma_active[static_cast<std::size_t>(j)]) = values[j];
        }
    }

    truth.sigma2_1 = sd.sigma1 * sd.sigma1;
    truth.sigma2_2 = sd.sigma2 * sd.sigma2;
    truth.sigma_qr = BlockPairTable(Q, sd.sigma_edge * sd.sigma_edge);
    truth.omega_qr = BlockPairTable(Q, sd.omega * sd.omega);
    truth.sigma2_zm = 1.0;
    truth.sigma2_my = 1.0;

    truth.M.assign(static_cast<std::size_t>(N), BlockPairTable(Q));
    truth.m_meas.resize(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        const auto& subj = data.subjects[static_cast<std::size_t>(i)];
        for (int s = 0; s < S; ++s) {
            double mu = subj.covariates.dot(truth.alpha_x[static_cast<std::size_t>(s)]);
            if (truth.gamma.flat(s) == 1) mu += subj.exposure * truth.alpha_z.flat(s);
            truth.M[static_cast<std::size_t>(i)].flat(s) = rng.normal(mu, sd.sigma2);
        }
        auto& tables = truth.m_meas[static_cast<std::size_t>(i)];
        tables.assign(static_cast<std::size_t>(K), BlockPairTable(Q));
        for (int k = 0; k < K; ++k) {
            for (int s = 0; s < S; ++s) {
                tables[static_cast<std::size_t>(k)].flat(s) =
                    rng.normal(truth.M[static_cast<std::size_t>(i)].flat(s), sd.omega);
            }
        }
    }

    sample_dataset_given_state(data, truth, rng);

    GroundTruth gt;
    gt.config = config;
    const EffectDraw e = effects_from_draw(truth, gt.contrast_z, gt.contrast_z_star);
    gt.nde = e.nde;
    gt.nie = e.nie;
    gt.te = e.te;
    gt.nie_pos = e.nie_pos;
    gt.nie_neg = e.nie_neg;
    for (int s = 0; s < S; ++s) {
        if (truth.tau.flat(s) == 1 && truth.gamma.flat(s) == 1) {
            gt.active_pairs.push_back(pair_from_index(s, Q));
        }
    }
    gt.mask = edge_mask(gt.active_pairs, truth.allocation);
    gt.state = std::move(truth);
    return {std::move(data), std::move(gt)};
}

SelectionRates selection_metrics(const Eigen::MatrixXi& truth_mask,
                                 const Eigen::MatrixXi& estimated_mask) {
    if (truth_mask.rows() != estimated_mask.rows() ||
        truth_mask.cols() != estimated_mask.cols() || truth_mask.rows() != truth_mask.cols()) {
        throw DataError("selection_metrics: mask shapes differ or are not square");
    }
    const int V = static_cast<int>(truth_mask.rows());
    long tp = 0, fn = 0, fp = 0, tn = 0;
    for (int j = 0; j < V; ++j) {
        for (int l = j + 1; l < V; ++l) {
            const bool t = truth_mask(j, l) != 0;
            const bool e = estimated_mask(j, l) != 0;
            if (t && e) ++tp;
            else if (t && !e) ++fn;
            else if (!t && e) ++fp;
            else ++tn;
        }
    }
    SelectionRates out;
    if (tp + fn > 0) {
        out.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
        out.sensitivity_defined = true;
    }
    if (tn + fp > 0) {
        out.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
        out.specificity_defined = true;
    }
    return out;
}

BiasReport effect_bias(const EffectSummary& estimate, const GroundTruth& truth) {
    auto item = [](double est, double tr) {
        BiasReport::Item it;
        if (tr != 0.0) {
            it.value = 100.0 * (est - tr) / tr;
            it.relative = true;
        } else {
            it.value = est - tr;
            it.relative = false;
        }
        return it;
    };
    BiasReport out;
    out.nde = item(estimate.nde.mean, truth.nde);
    out.nie = item(estimate.nie.mean, truth.nie);
    out.te = item(estimate.te.mean, truth.te);
    return out;
}

}  // namespace bnmm
