#include <doctest.h>

#include <cmath>

#include "bnmm/sampler.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace bnmm;

namespace {

Eigen::MatrixXd design_X(const Dataset& data) {
    Eigen::MatrixXd X(data.n_subjects(), data.P + 1);
    for (int i = 0; i < data.n_subjects(); ++i)
        X.row(i) = data.subjects[static_cast<std::size_t>(i)].covariates.transpose();
    return X;
}

Eigen::VectorXd exposure_vec(const Dataset& data) {
    Eigen::VectorXd z(data.n_subjects());
    for (int i = 0; i < data.n_subjects(); ++i)
        z[i] = data.subjects[static_cast<std::size_t>(i)].exposure;
    return z;
}

Eigen::VectorXd outcome_vec(const Dataset& data) {
    Eigen::VectorXd y(data.n_subjects());
    for (int i = 0; i < data.n_subjects(); ++i)
        y[i] = data.subjects[static_cast<std::size_t>(i)].outcome;
    return y;
}

Eigen::MatrixXd mediators(const ModelState& st, int N) {
    Eigen::MatrixXd M(N, st.n_pairs());
    for (int i = 0; i < N; ++i)
        for (int s = 0; s < st.n_pairs(); ++s) M(i, s) = st.M[static_cast<std::size_t>(i)].flat(s);
    return M;
}

}  // namespace

// ---------------------------------------------------------------- beta_m

TEST_CASE("outcome coefficients with nothing selected are refreshed from the prior") {
    Dataset data = fixtures::random_dataset(1, 2, 1, 0, 101);
    ModelState st = fixtures::plain_state(data, 1);
    st.sigma2_my = 2.25;
    Hyperparams hyper = fixtures::tame_hyper();
    Rng rng(5);
    std::vector<double> draws;
    for (int t = 0; t < 10000; ++t) {
        ModelState tmp = st;
        update_beta_m(tmp, data, hyper, rng);
        draws.push_back(tmp.beta_m.flat(0));
    }
    CHECK(std::fabs(oracles::mc_mean(draws)) < 3.0 * oracles::mc_se(draws));
    CHECK(oracles::mc_sd(draws) == doctest::Approx(1.5).epsilon(0.05));
    CHECK(beta_m_selected_posterior(st, data, hyper).mean.size() == 0);
}

TEST_CASE("single-subject single-mediator outcome coefficient has the textbook posterior") {
    Dataset data = fixtures::random_dataset(1, 2, 1, 0, 102);
    data.subjects[0].outcome = 2.0;
    data.subjects[0].exposure = 0.0;
    ModelState st = fixtures::plain_state(data, 1);
    st.tau.flat(0) = 1;
    st.M[0].flat(0) = 1.0;
    Hyperparams hyper = fixtures::tame_hyper();
    const MvnParams p = beta_m_selected_posterior(st, data, hyper);
    REQUIRE(p.mean.size() == 1);
    CHECK(p.mean[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.covariance(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("joint posterior of selected outcome coefficients matches Gaussian conditioning") {
    Dataset data = fixtures::random_dataset(5, 4, 1, 1, 103);
    ModelState st = fixtures::plain_state(data, 2);
    Rng rng(6);
    st.tau.flat(0) = 1;
    st.tau.flat(2) = 1;
    for (int i = 0; i < 5; ++i)
        for (int s = 0; s < 3; ++s) st.M[static_cast<std::size_t>(i)].flat(s) = rng.normal();
    st.beta_x << 0.3, -0.2;
    st.beta_z = 0.7;
    st.sigma2_1 = 0.7;
    st.sigma2_my = 1.3;
    Hyperparams hyper = fixtures::tame_hyper();

    const Eigen::MatrixXd M = mediators(st, 5);
    Eigen::MatrixXd Msel(5, 2);
    Msel.col(0) = M.col(0);
    Msel.col(1) = M.col(2);
    const Eigen::VectorXd resid =
        outcome_vec(data) - design_X(data) * st.beta_x - exposure_vec(data) * st.beta_z;
    const auto want = oracles::regression_posterior(
        Msel, resid, Eigen::VectorXd::Zero(5), Eigen::VectorXd::Constant(2, st.sigma2_my),
        st.sigma2_1);

    const MvnParams got = beta_m_selected_posterior(st, data, hyper);
    REQUIRE(got.mean.size() == 2);
    CHECK((got.mean - want.mean).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((got.covariance - want.cov).cwiseAbs().maxCoeff() < 1e-10);
}

// ---------------------------------------------------------------- alpha_z

TEST_CASE("exposure-to-mediator coefficients with gamma off come from the prior") {
    Dataset data = fixtures::random_dataset(1, 2, 1, 0, 104);
    ModelState st = fixtures::plain_state(data, 1);
    st.sigma2_zm = 4.0;
    Hyperparams hyper = fixtures::tame_hyper();
    Rng rng(7);
    std::vector<double> draws;
    for (int t = 0; t < 10000; ++t) {
        ModelState tmp = st;
        update_alpha_z(tmp, data, hyper, rng);
        draws.push_back(tmp.alpha_z.flat(0));
    }
    CHECK(std::fabs(oracles::mc_mean(draws)) < 3.0 * oracles::mc_se(draws));
    CHECK(oracles::mc_sd(draws) == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("two-subject exposure coefficient has the textbook posterior") {
    Dataset data = fixtures::random_dataset(2, 2, 1, 0, 105);
    data.subjects[0].exposure = 1.0;
    data.subjects[1].exposure = -1.0;
    ModelState st = fixtures::plain_state(data, 1);
    st.gamma.flat(0) = 1;
    st.M[0].flat(0) = 1.0;
    st.M[1].flat(0) = -1.0;
    Hyperparams hyper = fixtures::tame_hyper();
    const NormalParams p = alpha_z_pair_posterior(st, data, hyper, 0);
    CHECK(p.mean == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(p.variance == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("exposure coefficient posterior matches Gaussian conditioning") {
    Dataset data = fixtures::random_dataset(6, 4, 1, 1, 106);
    ModelState st = fixtures::plain_state(data, 2);
    Rng rng(8);
    const int s = 1;
    st.gamma.flat(s) = 1;
    for (int i = 0; i < 6; ++i) st.M[static_cast<std::size_t>(i)].flat(s) = rng.normal();
    st.alpha_x[s] = Eigen::VectorXd::Ones(2) * 0.4;
    st.sigma2_2 = 0.8;
    st.sigma2_zm = 2.0;
    Hyperparams hyper = fixtures::tame_hyper();

    const Eigen::MatrixXd M = mediators(st, 6);
    const Eigen::VectorXd resid = M.col(s) - design_X(data) * st.alpha_x[s];
    const auto want = oracles::regression_posterior(
        exposure_vec(data), resid, Eigen::VectorXd::Zero(6),
        Eigen::VectorXd::Constant(1, st.sigma2_zm), st.sigma2_2);

    const NormalParams got = alpha_z_pair_posterior(st, data, hyper, s);
    CHECK(got.mean == doctest::Approx(want.mean[0]).epsilon(1e-10));
    CHECK(got.variance == doctest::Approx(want.cov(0, 0)).epsilon(1e-10));
}

// ---------------------------------------------------------------- indicators

TEST_CASE("tau inclusion reduces to its prior when the coefficient is zero") {
    Dataset data = fixtures::random_dataset(3, 2, 1, 0, 107);
    ModelState st = fixtures::plain_state(data, 1);
    Hyperparams hyper = fixtures::tame_hyper();
    hyper.p_tau = 0.37;
    CHECK(tau_inclusion_prob(st, data, hyper, 0) == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("tau inclusion with a nine-to-one likelihood ratio is 0.9") {
    // One subject, residual exactly equal to the pair contribution, scaled so
    // the selected fit improves the squared error by 2 ln 9.
    Dataset data = fixtures::random_dataset(1, 2, 1, 0, 108);
    const double c = std::sqrt(2.0 * std::log(9.0));
    data.subjects[0].outcome = c;
    data.subjects[0].exposure = 0.0;
    ModelState st = fixtures::plain_state(data, 1);
    st.M[0].flat(0) = 1.0;
    st.beta_m.flat(0) = c;
    Hyperparams hyper = fixtures::tame_hyper();
    CHECK(tau_inclusion_prob(st, data, hyper, 0) == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("tau update frequency tracks its conditional probability") {
    Dataset data = fixtures::random_dataset(4, 2, 1, 0, 109);
    ModelState st = fixtures::plain_state(data, 1);
    Rng init(9);
    for (int i = 0; i < 4; ++i) st.M[static_cast<std::size_t>(i)].flat(0) = init.normal();
    st.beta_m.flat(0) = 0.8;
    Hyperparams hyper = fixtures::tame_hyper();
    const double p = tau_inclusion_prob(st, data, hyper, 0);
    Rng rng(10);
    int hits = 0;
    const int n = 50000;
    for (int t = 0; t < n; ++t) {
        ModelState tmp = st;
        update_tau(tmp, data, hyper, rng);
        hits += tmp.tau.flat(0);
    }
    const double freq = hits / double(n);
    const double se = std::sqrt(p * (1.0 - p) / n);
    CHECK(std::fabs(freq - p) < 3.0 * se);
}

TEST_CASE("tau inclusion stays finite at extreme residual scales") {
    Dataset data = fixtures::random_dataset(1, 2, 1, 0, 110);
    data.subjects[0].outcome = 300.0;
    data.subjects[0].exposure = 0.0;
    ModelState st = fixtures::plain_state(data, 1);
    st.M[0].flat(0) = 1.0;
    st.beta_m.flat(0) = 300.0;
    Hyperparams hyper = fixtures::tame_hyper();
    const double p = tau_inclusion_prob(st, data, hyper, 0);
    CHECK(std::isfinite(p));
    CHECK(p == doctest::Approx(1.0).epsilon(1e-12));
    st.beta_m.flat(0) = -300.0;  // selecting makes the fit far worse
    const double q = tau_inclusion_prob(st, data, hyper, 0);
    CHECK(std::isfinite(q));
    CHECK(q < 1e-10);
}

TEST_CASE("gamma inclusion reduces to its prior when alpha_z or exposure is zero") {
    Hyperparams hyper = fixtures::tame_hyper();
    hyper.p_gamma = 0.81;
    {
        Dataset data = fixtures::random_dataset(3, 2, 1, 0, 111);
        ModelState st = fixtures::plain_state(data, 1);
        st.alpha_z.flat(0) = 0.0;
        CHECK(gamma_inclusion_prob(st, data, hyper, 0) == doctest::Approx(0.81).epsilon(1e-12));
    }
    {
        Dataset data = fixtures::random_dataset(3, 2, 1, 0, 112);
        for (auto& s : data.subjects) s.exposure = 0.0;
        ModelState st = fixtures::plain_state(data, 1);
        st.alpha_z.flat(0) = 1.4;
        CHECK(gamma_inclusion_prob(st, data, hyper, 0) == doctest::Approx(0.81).epsilon(1e-12));
    }
}

TEST_CASE("gamma update frequency tracks its conditional probability") {
    Dataset data = fixtures::random_dataset(4, 2, 1, 0, 113);
    ModelState st = fixtures::plain_state(data, 1);
    Rng init(11);
    for (int i = 0; i < 4; ++i) st.M[static_cast<std::size_t>(i)].flat(0) = init.normal();
    st.alpha_z.flat(0) = 0.6;
    Hyperparams hyper = fixtures::tame_hyper();
    const double p = gamma_inclusion_prob(st, data, hyper, 0);
    Rng rng(12);
    int hits = 0;
    const int n = 50000;
    for (int t = 0; t < n; ++t) {
        ModelState tmp = st;
        update_gamma(tmp, data, hyper, rng);
        hits += tmp.gamma.flat(0);
    }
    const double se = std::sqrt(p * (1.0 - p) / n);
    CHECK(std::fabs(hits / double(n) - p) < 3.0 * se);
}

// ---------------------------------------------------------------- nuisance

TEST_CASE("intercept-only covariate posterior has the scalar closed form") {
    Dataset data = fixtures::random_dataset(7, 2, 1, 0, 114);
    ModelState st = fixtures::plain_state(data, 1);
    st.beta_z = 0.5;
    Hyperparams hyper = fixtures::tame_hyper();
    hyper.sigma2_xy = 3.0;
    st.sigma2_1 = 2.0;
    const Eigen::VectorXd resid = outcome_vec(data) - exposure_vec(data) * st.beta_z;
    const double prec = 7.0 / 2.0 + 1.0 / 3.0;
    const double mean = (resid.sum() / 2.0) / prec;
    const MvnParams got = beta_x_posterior(st, data, hyper);
    REQUIRE(got.mean.size() == 1);
    CHECK(got.mean[0] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(got.covariance(0, 0) == doctest::Approx(1.0 / prec).epsilon(1e-12));
}

TEST_CASE("covariate posterior mean equals the ridge solution") {
    Dataset data = fixtures::random_dataset(10, 2, 1, 2, 115);
    ModelState st = fixtures::plain_state(data, 1);
    st.beta_z = -0.3;
    st.sigma2_1 = 0.9;
    Hyperparams hyper = fixtures::tame_hyper();
    hyper.sigma2_xy = 2.5;
    const Eigen::MatrixXd X = design_X(data);
    const Eigen::VectorXd resid = outcome_vec(data) - exposure_vec(data) * st.beta_z;
    const double lambda = st.sigma2_1 / hyper.sigma2_xy;
    const Eigen::VectorXd ridge =
        (X.transpose() * X + lambda * Eigen::MatrixXd::Identity(3, 3))
            .ldlt()
            .solve(X.transpose() * resid);
    const MvnParams got = beta_x_posterior(st, data, hyper);
    CHECK((got.mean - ridge).cwiseAbs().maxCoeff() < 1e-10);

    const auto want = oracles::regression_posterior(
        X, resid, Eigen::VectorXd::Zero(10), Eigen::VectorXd::Constant(3, hyper.sigma2_xy),
        st.sigma2_1);
    CHECK((got.covariance - want.cov).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("mediator-side covariate posterior matches Gaussian conditioning") {
    Dataset data = fixtures::random_dataset(8, 4, 1, 1, 116);
    ModelState st = fixtures::plain_state(data, 2);
    Rng rng(13);
    const int s = 2;
    for (int i = 0; i < 8; ++i) st.M[static_cast<std::size_t>(i)].flat(s) = rng.normal();
    st.gamma.flat(s) = 1;
    st.alpha_z.flat(s) = 0.9;
    st.sigma2_2 = 1.4;
    Hyperparams hyper = fixtures::tame_hyper();
    hyper.sigma2_xm = 5.0;

    const Eigen::MatrixXd M = mediators(st, 8);
    const Eigen::VectorXd resid = M.col(s) - exposure_vec(data) * st.alpha_z.flat(s);
    const auto want = oracles::regression_posterior(
        design_X(data), resid, Eigen::VectorXd::Zero(8),
        Eigen::VectorXd::Constant(2, hyper.sigma2_xm), st.sigma2_2);
    const MvnParams got = alpha_x_pair_posterior(st, data, hyper, s);
    CHECK((got.mean - want.mean).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((got.covariance - want.cov).cwiseAbs().maxCoeff() < 1e-10);
}

// ---------------------------------------------------------------- beta_z

TEST_CASE("exposure effect posterior reduces to the prior when exposure is zero") {
    Dataset data = fixtures::random_dataset(5, 2, 1, 0, 117);
    for (auto& s : data.subjects) s.exposure = 0.0;
    ModelState st = fixtures::plain_state(data, 1);
    Hyperparams hyper = fixtures::tame_hyper();
    hyper.sigma2_zy = 7.0;
    const NormalParams got = beta_z_posterior(st, data, hyper);
    CHECK(got.mean == doctest::Approx(0.0));
    CHECK(got.variance == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("exposure effect posterior approaches least squares under a flat prior") {
    Dataset data = fixtures::random_dataset(5, 2, 1, 0, 118);
    for (auto& s : data.subjects) {
        s.exposure = 1.0;
        s.outcome = 3.0;
    }
    ModelState st = fixtures::plain_state(data, 1);
    Hyperparams hyper = fixtures::tame_hyper();
    hyper.sigma2_zy = 1e12;
    const NormalParams got = beta_z_posterior(st, data, hyper);
    CHECK(std::fabs(got.mean - 3.0) < 1e-5);
    CHECK(got.variance == doctest::Approx(0.2).epsilon(1e-5));
}

TEST_CASE("exposure effect posterior matches quadrature") {
    Dataset data = fixtures::random_dataset(6, 4, 1, 1, 119);
    ModelState st = fixtures::plain_state(data, 2);
    Rng rng(14);
    for (int i = 0; i < 6; ++i)
        for (int s = 0; s < 3; ++s) st.M[static_cast<std::size_t>(i)].flat(s) = rng.normal();
    st.tau.flat(1) = 1;
    st.beta_m.flat(1) = 1.1;
    st.beta_x << 0.2, -0.4;
    st.sigma2_1 = 0.6;
    Hyperparams hyper = fixtures::tame_hyper();
    hyper.sigma2_zy = 4.0;

    const Eigen::MatrixXd M = mediators(st, 6);
    const Eigen::VectorXd resid = outcome_vec(data) - design_X(data) * st.beta_x -
                                  M.col(1) * st.beta_m.flat(1);
    const Eigen::VectorXd z = exposure_vec(data);
    auto log_target = [&](double b) {
        double lt = oracles::log_normal_pdf(b, 0.0, hyper.sigma2_zy);
        for (int i = 0; i < 6; ++i)
            lt += oracles::log_normal_pdf(resid[i], b * z[i], st.sigma2_1);
        return lt;
    };
    const NormalParams got = beta_z_posterior(st, data, hyper);
    const double sd = std::sqrt(got.variance);
    const auto want = oracles::grid_moments(log_target, got.mean - 10 * sd, got.mean + 10 * sd);
    CHECK(std::fabs(got.mean - want.mean) < 1e-8);
    CHECK(std::fabs(got.variance - want.variance) < 1e-8);
}

// ---------------------------------------------------------------- latent mediators

TEST_CASE("deselected latent mediator averages its prior mean and measurement") {
    Dataset data = fixtures::random_dataset(1, 2, 1, 0, 120);
    ModelState st = fixtures::plain_state(data, 1);
    st.m_meas[0][0].flat(0) = 1.2;
    Hyperparams hyper = fixtures::tame_hyper();
    const MvnParams got = latent_mediator_posterior(st, data, hyper, 0);
    REQUIRE(got.mean.size() == 1);
    CHECK(got.mean[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(got.covariance(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("latent mediator posterior ignores the outcome when tau is off") {
    Dataset data = fixtures::random_dataset(1, 2, 1, 0, 121);
    ModelState st = fixtures::plain_state(data, 1);
    st.beta_m.flat(0) = 5.0;  // would matter if tau were on
    Hyperparams hyper = fixtures::tame_hyper();
    data.subjects[0].outcome = 0.0;
    const MvnParams a = latent_mediator_posterior(st, data, hyper, 0);
    data.subjects[0].outcome = 1000.0;
    const MvnParams b = latent_mediator_posterior(st, data, hyper, 0);
    CHECK(a.mean == b.mean);
    CHECK(a.covariance == b.covariance);
}

TEST_CASE("latent mediator joint posterior matches Gaussian conditioning") {
    Dataset data = fixtures::random_dataset(1, 4, 2, 1, 122);
    const int Q = 2, S = 3, K = 2;
    ModelState st = fixtures::plain_state(data, Q);
    Rng rng(15);
    for (int k = 0; k < K; ++k)
        for (int s = 0; s < S; ++s) st.m_meas[0][static_cast<std::size_t>(k)].flat(s) = rng.normal();
    st.tau.flat(0) = 1;
    st.tau.flat(1) = 1;
    st.beta_m.flat(0) = 1.3;
    st.beta_m.flat(1) = -0.7;
    st.gamma.flat(2) = 1;
    st.alpha_z.flat(2) = 0.5;
    for (int s = 0; s < S; ++s) st.alpha_x[static_cast<std::size_t>(s)] = Eigen::VectorXd::Constant(2, 0.2 * (s + 1));
    st.beta_x << 0.1, 0.3;
    st.beta_z = 0.4;
    st.sigma2_1 = 0.8;
    st.sigma2_2 = 1.7;
    st.omega_qr.flat(0) = 0.6;
    st.omega_qr.flat(1) = 1.1;
    st.omega_qr.flat(2) = 0.9;
    Hyperparams hyper = fixtures::tame_hyper();

    const auto& subj = data.subjects[0];
    Eigen::VectorXd prior_mean(S);
    for (int s = 0; s < S; ++s) {
        prior_mean[s] = subj.covariates.dot(st.alpha_x[static_cast<std::size_t>(s)]);
        if (st.gamma.flat(s) == 1) prior_mean[s] += subj.exposure * st.alpha_z.flat(s);
    }
    // observations: K measurement rows per pair plus the outcome, rescaled to
    // unit noise so the isotropic conditioning oracle applies
    const int n_obs = K * S + 1;
    Eigen::MatrixXd T(n_obs, S);
    Eigen::VectorXd obs(n_obs);
    T.setZero();
    int row = 0;
    for (int k = 0; k < K; ++k)
        for (int s = 0; s < S; ++s) {
            const double sd = std::sqrt(st.omega_qr.flat(s));
            T(row, s) = 1.0 / sd;
            obs[row] = st.m_meas[0][static_cast<std::size_t>(k)].flat(s) / sd;
            ++row;
        }
    {
        const double sd1 = std::sqrt(st.sigma2_1);
        for (int s = 0; s < S; ++s)
            T(row, s) = (st.tau.flat(s) == 1 ? st.beta_m.flat(s) : 0.0) / sd1;
        obs[row] = (subj.outcome - subj.covariates.dot(st.beta_x) -
                    subj.exposure * st.beta_z) / sd1;
    }
    const Eigen::VectorXd shifted = obs - T * prior_mean;
    const auto delta = oracles::regression_posterior(
        T, shifted, Eigen::VectorXd::Zero(n_obs), Eigen::VectorXd::Constant(S, st.sigma2_2),
        1.0);

    const MvnParams got = latent_mediator_posterior(st, data, hyper, 0);
    CHECK((got.mean - (delta.mean + prior_mean)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((got.covariance - delta.cov).cwiseAbs().maxCoeff() < 1e-8);
}

// ---------------------------------------------------------------- measurement means

TEST_CASE("measurement mean of an edgeless pair reduces to its subject-level prior") {
    Dataset data = fixtures::random_dataset(1, 2, 1, 0, 123);
    ModelState st = fixtures::plain_state(data, 2);
    st.allocation = Allocation({1, 1}, 2);   // pairs (1,2) and (2,2) carry no edge
    st.M[0].flat(1) = 3.3;
    st.omega_qr.flat(1) = 1.9;
    Hyperparams hyper = fixtures::tame_hyper();
    const NormalParams got = m_meas_posterior(st, data, hyper, 0, 0, 1);
    CHECK(got.mean == doctest::Approx(3.3).epsilon(1e-12));
    CHECK(got.variance == doctest::Approx(1.9).epsilon(1e-12));
}

TEST_CASE("single-edge measurement mean averages prior and observation") {
    Dataset data = fixtures::random_dataset(1, 2, 1, 0, 124);
    data.subjects[0].connectomes[0](0, 1) = 4.0;
    data.subjects[0].connectomes[0](1, 0) = 4.0;
    ModelState st = fixtures::plain_state(data, 2);
    st.allocation = Allocation({1, 2}, 2);
    Hyperparams hyper = fixtures::tame_hyper();
    const int s = pair_index(1, 2, 2);
    const NormalParams got = m_meas_posterior(st, data, hyper, 0, 0, s);
    CHECK(got.mean == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(got.variance == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("three-edge measurement mean matches quadrature") {
    Dataset data = fixtures::random_dataset(1, 4, 1, 0, 125);
    ModelState st = fixtures::plain_state(data, 2);
    st.allocation = Allocation({1, 1, 1, 2}, 2);  // pair (1,1): edges 01, 02, 12
    st.M[0].flat(0) = 0.4;
    st.omega_qr.flat(0) = 0.7;
    st.sigma_qr.flat(0) = 1.3;
    Hyperparams hyper = fixtures::tame_hyper();
    const auto& A = data.subjects[0].connectomes[0];
    auto log_target = [&](double m) {
        double lt = oracles::log_normal_pdf(m, 0.4, 0.7);
        lt += oracles::log_normal_pdf(A(0, 1), m, 1.3);
        lt += oracles::log_normal_pdf(A(0, 2), m, 1.3);
        lt += oracles::log_normal_pdf(A(1, 2), m, 1.3);
        return lt;
    };
    const NormalParams got = m_meas_posterior(st, data, hyper, 0, 0, 0);
    const double sd = std::sqrt(got.variance);
    const auto want = oracles::grid_moments(log_target, got.mean - 10 * sd, got.mean + 10 * sd);
    CHECK(std::fabs(got.mean - want.mean) < 1e-10);
    CHECK(std::fabs(got.variance - want.variance) < 1e-10);
}

// ---------------------------------------------------------------- allocation

namespace {

Eigen::VectorXd softmax(Eigen::VectorXd lw) {
    lw.array() -= lw.maxCoeff();
    Eigen::VectorXd w = lw.array().exp();
    return w / w.sum();
}

// direct edge-by-edge evaluation of the label conditional for node v
Eigen::VectorXd brute_label_conditional(const ModelState& st, const Dataset& data, int v) {
    const int Q = st.block_count();
    Eigen::VectorXd lw(Q);
    for (int q = 1; q <= Q; ++q) {
        double sc = std::log(st.pi[q - 1]);
        for (int i = 0; i < data.n_subjects(); ++i) {
            const auto& subj = data.subjects[static_cast<std::size_t>(i)];
            for (int k = 0; k < subj.n_measurements(); ++k) {
                const auto& A = subj.connectomes[static_cast<std::size_t>(k)];
                const auto& tab = st.m_meas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
                for (int l = 0; l < data.V; ++l) {
                    if (l == v) continue;
                    const int s = pair_index(q, st.allocation.label(l), Q);
                    sc += oracles::log_normal_pdf(A(v, l), tab.flat(s), st.sigma_qr.flat(s));
                }
            }
        }
        lw[q - 1] = sc;
    }
    return lw;
}

}  // namespace

TEST_CASE("label conditional matches a brute-force edge sum") {
    Dataset data = fixtures::random_dataset(2, 4, 2, 0, 126);
    ModelState st = fixtures::plain_state(data, 2);
    Rng rng(16);
    st.pi << 0.3, 0.7;
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 2; ++k)
            for (int s = 0; s < 3; ++s) st.m_meas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].flat(s) = rng.normal();
    for (int s = 0; s < 3; ++s) st.sigma_qr.flat(s) = 0.5 + rng.uniform();
    for (int v = 0; v < 4; ++v) {
        const Eigen::VectorXd got = softmax(allocation_log_conditional(st, data, v));
        const Eigen::VectorXd want = softmax(brute_label_conditional(st, data, v));
        CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("label conditional collapses to pi when blocks are indistinguishable") {
    Dataset data = fixtures::random_dataset(1, 4, 1, 0, 127);
    ModelState st = fixtures::plain_state(data, 2);
    st.pi << 0.25, 0.75;
    // identical means and variances in every pair: the likelihood cancels
    for (int s = 0; s < 3; ++s) st.m_meas[0][0].flat(s) = 0.9;
    const Eigen::VectorXd p = softmax(allocation_log_conditional(st, data, 2));
    CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("a ninety-nine-to-one mixing prior dominates an indifferent likelihood") {
    Dataset data = fixtures::random_dataset(1, 4, 1, 0, 128);
    ModelState st = fixtures::plain_state(data, 2);
    st.pi << 0.99, 0.01;
    for (int s = 0; s < 3; ++s) st.m_meas[0][0].flat(s) = -0.4;
    const Eigen::VectorXd p = softmax(allocation_log_conditional(st, data, 1));
    CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-12));
}

TEST_CASE("label update frequencies follow the sequential conditionals") {
    Dataset data = fixtures::random_dataset(1, 2, 1, 0, 129);
    ModelState st = fixtures::plain_state(data, 2);
    Rng init(17);
    st.pi << 0.4, 0.6;
    for (int s = 0; s < 3; ++s) {
        st.m_meas[0][0].flat(s) = init.normal();
        st.sigma_qr.flat(s) = 1.0 + init.uniform();
    }
    // exact law of the two sequential draws, using the trusted conditional
    double want[2][2];
    for (int q0 = 1; q0 <= 2; ++q0) {
        ModelState mid = st;
        const Eigen::VectorXd p0 = softmax(allocation_log_conditional(st, data, 0));
        mid.allocation.set_label(0, q0);
        const Eigen::VectorXd p1 = softmax(allocation_log_conditional(mid, data, 1));
        for (int q1 = 1; q1 <= 2; ++q1) want[q0 - 1][q1 - 1] = p0[q0 - 1] * p1[q1 - 1];
    }
    Rng rng(18);
    const int n = 20000;
    int cnt[2][2] = {{0, 0}, {0, 0}};
    for (int t = 0; t < n; ++t) {
        ModelState tmp = st;
        update_allocation(tmp, data, fixtures::tame_hyper(), rng);
        cnt[tmp.allocation.label(0) - 1][tmp.allocation.label(1) - 1] += 1;
    }
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            const double p = want[a][b];
            const double se = std::sqrt(p * (1.0 - p) / n) + 1e-12;
            CHECK(std::fabs(cnt[a][b] / double(n) - p) < 4.0 * se);
        }
}

// ---------------------------------------------------------------- pi

TEST_CASE("mixing weights follow the count-updated Dirichlet") {
    Dataset data = fixtures::random_dataset(1, 6, 1, 0, 130);
    ModelState st = fixtures::plain_state(data, 2);
    st.allocation = Allocation({1, 1, 1, 1, 2, 2}, 2);
    Hyperparams hyper = fixtures::tame_hyper();
    Rng rng(19);
    std::vector<double> first;
    for (int t = 0; t < 10000; ++t) {
        ModelState tmp = st;
        update_pi(tmp, hyper, rng);
        first.push_back(tmp.pi[0]);
    }
    const double want = 5.0 / 8.0;  // (1 + 4) / (2 + 6)
    CHECK(std::fabs(oracles::mc_mean(first) - want) < 3.0 * oracles::mc_se(first));
}

TEST_CASE("an empty block keeps positive but small mixing weight") {
    Dataset data = fixtures::random_dataset(1, 100, 1, 0, 131);
    ModelState st = fixtures::plain_state(data, 2);
    st.allocation = Allocation(std::vector<int>(100, 1), 2);
    Hyperparams hyper = fixtures::tame_hyper();
    Rng rng(20);
    std::vector<double> first;
    for (int t = 0; t < 10000; ++t) {
        ModelState tmp = st;
        update_pi(tmp, hyper, rng);
        CHECK(tmp.pi[1] > 0.0);
        first.push_back(tmp.pi[0]);
    }
    CHECK(std::fabs(oracles::mc_mean(first) - 101.0 / 102.0) < 3.0 * oracles::mc_se(first));
}

TEST_CASE("three-block mixing weights have Dirichlet moments") {
    Dataset data = fixtures::random_dataset(1, 9, 1, 0, 132);
    ModelState st = fixtures::plain_state(data, 3);
    st.allocation = Allocation({1, 1, 1, 1, 2, 2, 2, 3, 3}, 3);
    Hyperparams hyper = fixtures::tame_hyper();
    Rng rng(21);
    std::vector<double> p2;
    for (int t = 0; t < 20000; ++t) {
        ModelState tmp = st;
        update_pi(tmp, hyper, rng);
        p2.push_back(tmp.pi[1]);
    }
    const double c = 12.0, c2 = 4.0;  // total and block-2 concentration
    const double mean = c2 / c;
    const double var = c2 * (c - c2) / (c * c * (c + 1.0));
    CHECK(std::fabs(oracles::mc_mean(p2) - mean) < 3.0 * oracles::mc_se(p2));
    CHECK(oracles::mc_sd(p2) == doctest::Approx(std::sqrt(var)).epsilon(0.05));
}

// ---------------------------------------------------------------- variances

TEST_CASE("variance posteriors keep their priors without data terms") {
    Dataset data = fixtures::random_dataset(1, 2, 1, 0, 133);
    ModelState st = fixtures::plain_state(data, 2);
    st.allocation = Allocation({1, 1}, 2);
    Hyperparams hyper = fixtures::tame_hyper();
    // pair (2,2) has no edges: its posterior is exactly the prior
    const IgParams p = sigma_qr_posterior(st, data, hyper, pair_index(2, 2, 2));
    CHECK(p.shape == doctest::Approx(hyper.a1));
    CHECK(p.scale == doctest::Approx(hyper.b1));
}

TEST_CASE("every scalar variance posterior matches quadrature") {
    Dataset data = fixtures::random_dataset(4, 4, 2, 1, 134);
    ModelState st = fixtures::plain_state(data, 2);
    Rng rng(22);
    for (int i = 0; i < 4; ++i)
        for (int s = 0; s < 3; ++s) st.M[static_cast<std::size_t>(i)].flat(s) = rng.normal();
    for (int i = 0; i < 4; ++i)
        for (int k = 0; k < 2; ++k)
            for (int s = 0; s < 3; ++s)
                st.m_meas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].flat(s) = rng.normal();
    st.tau.flat(0) = 1;
    st.beta_m.flat(0) = 0.9;
    st.gamma.flat(1) = 1;
    st.alpha_z.flat(1) = -0.5;
    for (int s = 0; s < 3; ++s) st.alpha_x[static_cast<std::size_t>(s)] = Eigen::VectorXd::Constant(2, 0.1 * s);
    st.beta_x << 0.2, -0.1;
    st.beta_z = 0.3;
    for (int s = 0; s < 3; ++s) st.beta_m.flat(s) = 0.4 - 0.3 * s;
    for (int s = 0; s < 3; ++s) st.alpha_z.flat(s) = 0.2 + 0.2 * s;
    Hyperparams hyper = fixtures::tame_hyper();

    auto check_against_quadrature = [&](const IgParams& p,
                                        const std::function<double(double)>& loglik,
                                        double prior_shape, double prior_scale) {
        auto log_target = [&](double x) {
            return oracles::log_ig_pdf(x, prior_shape, prior_scale) + loglik(x);
        };
        const double mean = p.scale / (p.shape - 1.0);
        const auto want = oracles::positive_moments(log_target, mean * 1e-6, mean * 1e10);
        CHECK(std::fabs(mean - want.mean) < 1e-8 * std::max(1.0, mean));
        // the second moment pins shape and scale jointly
        const double m2 = p.scale * p.scale / ((p.shape - 1.0) * (p.shape - 2.0));
        CHECK(std::fabs(m2 - (want.variance + want.mean * want.mean)) < 1e-8 * std::max(1.0, m2));
    };

    const Eigen::MatrixXd X = design_X(data);
    const Eigen::VectorXd z = exposure_vec(data);
    const Eigen::VectorXd y = outcome_vec(data);
    const Eigen::MatrixXd M = mediators(st, 4);

    // outcome noise
    check_against_quadrature(
        sigma2_1_posterior(st, data, hyper),
        [&](double x) {
            double lt = 0.0;
            for (int i = 0; i < 4; ++i) {
                double mu = X.row(i).dot(st.beta_x) + z[i] * st.beta_z;
                for (int s = 0; s < 3; ++s)
                    if (st.tau.flat(s) == 1) mu += M(i, s) * st.beta_m.flat(s);
                lt += oracles::log_normal_pdf(y[i], mu, x);
            }
            return lt;
        },
        hyper.ig_noninf_shape, hyper.ig_noninf_scale);

    // mediator regression noise
    check_against_quadrature(
        sigma2_2_posterior(st, data, hyper),
        [&](double x) {
            double lt = 0.0;
            for (int i = 0; i < 4; ++i)
                for (int s = 0; s < 3; ++s) {
                    double mu = X.row(i).dot(st.alpha_x[static_cast<std::size_t>(s)]);
                    if (st.gamma.flat(s) == 1) mu += z[i] * st.alpha_z.flat(s);
                    lt += oracles::log_normal_pdf(M(i, s), mu, x);
                }
            return lt;
        },
        hyper.ig_noninf_shape, hyper.ig_noninf_scale);

    // coefficient slab variances
    check_against_quadrature(
        sigma2_zm_posterior(st, hyper),
        [&](double x) {
            double lt = 0.0;
            for (int s = 0; s < 3; ++s)
                lt += oracles::log_normal_pdf(st.alpha_z.flat(s), 0.0, x);
            return lt;
        },
        hyper.ig_noninf_shape, hyper.ig_noninf_scale);
    check_against_quadrature(
        sigma2_my_posterior(st, hyper),
        [&](double x) {
            double lt = 0.0;
            for (int s = 0; s < 3; ++s)
                lt += oracles::log_normal_pdf(st.beta_m.flat(s), 0.0, x);
            return lt;
        },
        hyper.ig_noninf_shape, hyper.ig_noninf_scale);

    // measurement-level spread around the subject mean, pair 0
    check_against_quadrature(
        omega_qr_posterior(st, data, hyper, 0),
        [&](double x) {
            double lt = 0.0;
            for (int i = 0; i < 4; ++i)
                for (int k = 0; k < 2; ++k)
                    lt += oracles::log_normal_pdf(
                        st.m_meas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].flat(0), M(i, 0), x);
            return lt;
        },
        hyper.a2, hyper.b2);

    // edge noise around the measurement means, pair 0
    check_against_quadrature(
        sigma_qr_posterior(st, data, hyper, 0),
        [&](double x) {
            double lt = 0.0;
            for (int i = 0; i < 4; ++i)
                for (int k = 0; k < 2; ++k) {
                    const auto& A = data.subjects[static_cast<std::size_t>(i)].connectomes[static_cast<std::size_t>(k)];
                    for (int j = 0; j < 4; ++j)
                        for (int l = j + 1; l < 4; ++l) {
                            if (pair_index(st.allocation.label(j), st.allocation.label(l), 2) != 0)
                                continue;
                            lt += oracles::log_normal_pdf(
                                A(j, l), st.m_meas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].flat(0), x);
                        }
                }
            return lt;
        },
        hyper.a1, hyper.b1);
}

TEST_CASE("inverse gamma posterior draws have the analytic mean") {
    Dataset data = fixtures::random_dataset(3, 3, 1, 0, 135);
    ModelState st = fixtures::plain_state(data, 1);
    Hyperparams hyper = fixtures::tame_hyper();
    const IgParams p = sigma2_1_posterior(st, data, hyper);
    Rng rng(23);
    std::vector<double> xs;
    for (int t = 0; t < 20000; ++t) {
        ModelState tmp = st;
        update_variances(tmp, data, hyper, rng);
        xs.push_back(tmp.sigma2_1);
    }
    const double want = p.scale / (p.shape - 1.0);
    CHECK(std::fabs(oracles::mc_mean(xs) - want) < 4.0 * oracles::mc_se(xs));
}
