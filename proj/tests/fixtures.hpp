#ifndef BNMM_TESTS_FIXTURES_HPP
#define BNMM_TESTS_FIXTURES_HPP

#include <vector>

#include <Eigen/Dense>

#include "bnmm/core_types.hpp"
#include "bnmm/rng.hpp"

namespace fixtures {

/// Random valid dataset: symmetric connectomes, standard-normal everything.
inline bnmm::Dataset random_dataset(int N, int V, int K, int P, std::uint64_t seed) {
    bnmm::Rng rng(seed);
    bnmm::Dataset data;
    data.V = V;
    data.P = P;
    for (int i = 0; i < N; ++i) {
        bnmm::SubjectRecord s;
        s.outcome = rng.normal();
        s.exposure = rng.normal();
        s.covariates = Eigen::VectorXd(P + 1);
        s.covariates[0] = 1.0;
        for (int p = 1; p <= P; ++p) s.covariates[p] = rng.normal();
        for (int k = 0; k < K; ++k) {
            Eigen::MatrixXd A = Eigen::MatrixXd::Zero(V, V);
            for (int j = 0; j < V; ++j)
                for (int l = j + 1; l < V; ++l) {
                    A(j, l) = rng.normal();
                    A(l, j) = A(j, l);
                }
            s.connectomes.push_back(std::move(A));
        }
        data.subjects.push_back(std::move(s));
    }
    return data;
}

/// Neutral state: round-robin labels, uniform pi, zero coefficients and
/// mediators, unit variances, all indicators off. Tests overwrite what they
/// need and leave the rest inert.
inline bnmm::ModelState plain_state(const bnmm::Dataset& data, int Q) {
    const int V = data.V;
    const int N = data.n_subjects();
    const int S = bnmm::pair_count(Q);
    const int P1 = data.P + 1;

    bnmm::ModelState st;
    std::vector<int> labels(static_cast<std::size_t>(V));
    for (int v = 0; v < V; ++v) labels[static_cast<std::size_t>(v)] = v % Q + 1;
    st.allocation = bnmm::Allocation(labels, Q);
    st.pi = Eigen::VectorXd::Constant(Q, 1.0 / Q);
    st.M.assign(static_cast<std::size_t>(N), bnmm::BlockPairTable(Q));
    st.m_meas.resize(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        st.m_meas[static_cast<std::size_t>(i)].assign(
            static_cast<std::size_t>(data.subjects[static_cast<std::size_t>(i)].n_measurements()),
            bnmm::BlockPairTable(Q));
    }
    st.sigma_qr = bnmm::BlockPairTable(Q, 1.0);
    st.omega_qr = bnmm::BlockPairTable(Q, 1.0);
    st.beta_x = Eigen::VectorXd::Zero(P1);
    st.beta_m = bnmm::BlockPairTable(Q);
    st.beta_z = 0.0;
    st.alpha_x.assign(static_cast<std::size_t>(S), Eigen::VectorXd::Zero(P1));
    st.alpha_z = bnmm::BlockPairTable(Q);
    st.tau = bnmm::BlockPairIndicators(Q);
    st.gamma = bnmm::BlockPairIndicators(Q);
    st.sigma2_1 = 1.0;
    st.sigma2_2 = 1.0;
    st.sigma2_zm = 1.0;
    st.sigma2_my = 1.0;
    return st;
}

/// Hyperparams whose priors all have finite moments; handy for MC checks.
inline bnmm::Hyperparams tame_hyper() {
    bnmm::Hyperparams h;
    h.a1 = 3.0;
    h.b1 = 3.0;
    h.a2 = 3.0;
    h.b2 = 3.0;
    h.ig_noninf_shape = 3.0;
    h.ig_noninf_scale = 3.0;
    h.sigma2_xy = 1.0;
    h.sigma2_zy = 1.0;
    h.sigma2_xm = 1.0;
    return h;
}

}  // namespace fixtures

#endif
