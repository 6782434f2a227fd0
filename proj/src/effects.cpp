#include "bnmm/effects.hpp"

#include <algorithm>
#include <cmath>

namespace bnmm {

EffectDraw effects_from_parts(double beta_z, const Eigen::VectorXd& alpha_z,
                              const Eigen::VectorXd& beta_m, const std::vector<int>& tau,
                              const std::vector<int>& gamma, double z, double z_star) {
    const double dz = z - z_star;
    EffectDraw out;
    out.z = z;
    out.z_star = z_star;
    out.nde = beta_z * dz;
    const int S = static_cast<int>(alpha_z.size());
    for (int s = 0; s < S; ++s) {
        if (tau[static_cast<std::size_t>(s)] == 0 || gamma[static_cast<std::size_t>(s)] == 0)
            continue;
        const double c = alpha_z[s] * beta_m[s] * dz;
        if (c >= 0.0) {
            out.nie_pos += c;
        } else {
            out.nie_neg += c;
        }
    }
    out.nie = out.nie_pos + out.nie_neg;
    out.te = out.nde + out.nie;
    return out;
}

EffectDraw effects_from_draw(const ModelState& state, double z, double z_star) {
    const int S = state.n_pairs();
    Eigen::VectorXd alpha_z(S), beta_m(S);
    std::vector<int> tau(static_cast<std::size_t>(S)), gamma(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) {
        alpha_z[s] = state.alpha_z.flat(s);
        beta_m[s] = state.beta_m.flat(s);
        tau[static_cast<std::size_t>(s)] = state.tau.flat(s);
        gamma[static_cast<std::size_t>(s)] = state.gamma.flat(s);
    }
    return effects_from_parts(state.beta_z, alpha_z, beta_m, tau, gamma, z, z_star);
}

namespace {

// Permutation perm[a] = b mapping draw label a+1 onto reference label b+1,
// chosen greedily by largest confusion-matrix agreement.
std::vector<int> greedy_match(const Eigen::MatrixXi& confusion) {
    const int Q = static_cast<int>(confusion.rows());
    std::vector<int> perm(static_cast<std::size_t>(Q), 0);
    std::vector<bool> row_used(static_cast<std::size_t>(Q), false);
    std::vector<bool> col_used(static_cast<std::size_t>(Q), false);
    for (int step = 0; step < Q; ++step) {
        int best_a = -1, best_b = -1, best = -1;
        for (int a = 0; a < Q; ++a) {
            if (row_used[static_cast<std::size_t>(a)]) continue;
            for (int b = 0; b < Q; ++b) {
                if (col_used[static_cast<std::size_t>(b)]) continue;
                if (confusion(a, b) > best) {
                    best = confusion(a, b);
                    best_a = a;
                    best_b = b;
                }
            }
        }
        perm[static_cast<std::size_t>(best_a)] = best_b + 1;
        row_used[static_cast<std::size_t>(best_a)] = true;
        col_used[static_cast<std::size_t>(best_b)] = true;
    }
    return perm;
}

std::vector<int> label_permutation(const std::vector<int>& labels, const std::vector<int>& ref,
                                   int Q) {
    Eigen::MatrixXi confusion = Eigen::MatrixXi::Zero(Q, Q);
    for (std::size_t v = 0; v < labels.size(); ++v) {
        confusion(labels[v] - 1, ref[v] - 1) += 1;
    }
    return greedy_match(confusion);
}

}  // namespace

MedianModel posterior_median_model(const PosteriorDraws& draws) {
    if (draws.total_draws() < 1) throw DataError("posterior_median_model: no stored draws");
    const int Q = draws.Q;
    const int S = draws.n_pairs();
    // Chains can settle into different block labelings; align every stored
    // draw to the first one before pooling, or inclusion dilutes to noise.
    const std::vector<int>& ref = draws.chains.front().labels.front();
    std::vector<long> tau_count(static_cast<std::size_t>(S), 0);
    std::vector<long> gamma_count(static_cast<std::size_t>(S), 0);
    long n = 0;
    for (const auto& chain : draws.chains) {
        for (int d = 0; d < chain.n_draws(); ++d) {
            const auto di = static_cast<std::size_t>(d);
            const std::vector<int> perm = label_permutation(chain.labels[di], ref, Q);
            for (int s = 0; s < S; ++s) {
                const auto [q, r] = pair_from_index(s, Q);
                const int aligned = pair_index(perm[static_cast<std::size_t>(q - 1)],
                                               perm[static_cast<std::size_t>(r - 1)], Q);
                tau_count[static_cast<std::size_t>(aligned)] += chain.tau[di][static_cast<std::size_t>(s)];
                gamma_count[static_cast<std::size_t>(aligned)] += chain.gamma[di][static_cast<std::size_t>(s)];
            }
            ++n;
        }
    }
    MedianModel out;
    out.inclusion_tau = BlockPairTable(Q);
    out.inclusion_gamma = BlockPairTable(Q);
    out.active = BlockPairIndicators(Q, 0);
    for (int s = 0; s < S; ++s) {
        const double pt = static_cast<double>(tau_count[static_cast<std::size_t>(s)]) / n;
        const double pg = static_cast<double>(gamma_count[static_cast<std::size_t>(s)]) / n;
        out.inclusion_tau.flat(s) = pt;
        out.inclusion_gamma.flat(s) = pg;
        if (pt >= 0.5 && pg >= 0.5) {
            out.active.flat(s) = 1;
            out.active_pairs.push_back(pair_from_index(s, Q));
        }
    }
    return out;
}

double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw DataError("quantile: empty sample");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n == 1) return values[0];
    const double h = p * static_cast<double>(n - 1);
    const double lo = std::floor(h);
    const std::size_t i = static_cast<std::size_t>(lo);
    if (i + 1 >= n) return values[n - 1];
    return values[i] + (h - lo) * (values[i + 1] - values[i]);
}

namespace {

EffectSummary::Stats summarize_component(const std::vector<double>& v) {
    EffectSummary::Stats st;
    double sum = 0.0;
    for (double x : v) sum += x;
    st.mean = sum / static_cast<double>(v.size());
    st.median = quantile(v, 0.5);
    st.ci_low = quantile(v, 0.025);
    st.ci_high = quantile(v, 0.975);
    return st;
}

}  // namespace

EffectSummary summarize_effects(const PosteriorDraws& draws, double z, double z_star) {
    const int total = draws.total_draws();
    if (total < 2) throw DataError("summarize_effects: need at least two stored draws");

    std::vector<double> nde, nie, te, pos, neg;
    nde.reserve(static_cast<std::size_t>(total));
    for (const auto& chain : draws.chains) {
        for (int d = 0; d < chain.n_draws(); ++d) {
            const auto di = static_cast<std::size_t>(d);
            const EffectDraw e =
                effects_from_parts(chain.beta_z[di], chain.alpha_z[di], chain.beta_m[di],
                                   chain.tau[di], chain.gamma[di], z, z_star);
            nde.push_back(e.nde);
            nie.push_back(e.nie);
            te.push_back(e.te);
            pos.push_back(e.nie_pos);
            neg.push_back(e.nie_neg);
        }
    }

    EffectSummary out;
    out.nde = summarize_component(nde);
    out.nie = summarize_component(nie);
    out.te = summarize_component(te);
    out.nie_pos = summarize_component(pos);
    out.nie_neg = summarize_component(neg);
    const MedianModel mm = posterior_median_model(draws);
    out.active_pairs = mm.active_pairs;
    out.inclusion_tau = mm.inclusion_tau;
    out.inclusion_gamma = mm.inclusion_gamma;
    out.z = z;
    out.z_star = z_star;
    out.n_draws = total;
    return out;
}

AllocationSummary allocation_summary(const PosteriorDraws& draws) {
    if (draws.total_draws() < 1) throw DataError("allocation_summary: no stored draws");
    const int Q = draws.Q;
    const int V = draws.V;
    const std::vector<int>& ref = draws.chains.front().labels.front();

    Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(V, Q);
    for (const auto& chain : draws.chains) {
        for (const auto& labels : chain.labels) {
            const std::vector<int> perm = label_permutation(labels, ref, Q);
            for (int v = 0; v < V; ++v) {
                const int aligned =
                    perm[static_cast<std::size_t>(labels[static_cast<std::size_t>(v)] - 1)];
                freq(v, aligned - 1) += 1.0;
            }
        }
    }
    freq /= static_cast<double>(draws.total_draws());

    std::vector<int> consensus(static_cast<std::size_t>(V), 1);
    for (int v = 0; v < V; ++v) {
        int best = 0;
        for (int q = 1; q < Q; ++q) {
            if (freq(v, q) > freq(v, best)) best = q;
        }
        consensus[static_cast<std::size_t>(v)] = best + 1;
    }
    return AllocationSummary{Allocation(std::move(consensus), Q), std::move(freq)};
}

Eigen::MatrixXi edge_mask(const std::vector<std::pair<int, int>>& active_pairs,
                          const Allocation& alloc) {
    const int V = alloc.node_count();
    const int Q = alloc.block_count();
    std::vector<char> active(static_cast<std::size_t>(pair_count(Q)), 0);
    for (const auto& [q, r] : active_pairs) {
        active[static_cast<std::size_t>(pair_index(q, r, Q))] = 1;
    }
    Eigen::MatrixXi mask = Eigen::MatrixXi::Zero(V, V);
    for (int j = 0; j < V; ++j) {
        for (int l = j + 1; l < V; ++l) {
            const int s = pair_index(alloc.label(j), alloc.label(l), Q);
            if (active[static_cast<std::size_t>(s)]) {
                mask(j, l) = 1;
                mask(l, j) = 1;
            }
        }
    }
    return mask;
}

}  // namespace bnmm
