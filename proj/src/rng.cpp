#include "bnmm/rng.hpp"

#include <cmath>

namespace bnmm {

int Rng::categorical_from_log(const Eigen::VectorXd& log_w) {
    const Eigen::Index n = log_w.size();
    const double max_lw = log_w.maxCoeff();
    if (!std::isfinite(max_lw)) {
        throw NumericError("categorical_from_log: no finite log weight");
    }
    Eigen::VectorXd w = (log_w.array() - max_lw).exp();
    const double total = w.sum();
    double u = uniform() * total;
    for (Eigen::Index i = 0; i < n; ++i) {
        u -= w[i];
        if (u <= 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(n - 1);
}

Eigen::VectorXd Rng::dirichlet(const Eigen::VectorXd& concentration) {
    Eigen::VectorXd draw(concentration.size());
    double total = 0.0;
    for (Eigen::Index q = 0; q < concentration.size(); ++q) {
        double g = 0.0;
        while (g <= 0.0 || !std::isfinite(g)) g = gamma(concentration[q], 1.0);
        draw[q] = g;
        total += g;
    }
    return draw / total;
}

Eigen::VectorXd Rng::mvn_from_precision(const Eigen::VectorXd& precision_times_mean,
                                        const Eigen::MatrixXd& precision) {
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) {
        throw NumericError("mvn_from_precision: precision matrix not positive definite");
    }
    const Eigen::VectorXd mean = llt.solve(precision_times_mean);
    Eigen::VectorXd z(precision.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal();
    // x = mean + L^-T z has covariance (L L^T)^-1
    return mean + llt.matrixU().solve(z);
}

}  // namespace bnmm
