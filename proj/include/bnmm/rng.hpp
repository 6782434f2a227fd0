#ifndef BNMM_RNG_HPP
#define BNMM_RNG_HPP

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "bnmm/core_types.hpp"

namespace bnmm {

/// Seeded random stream owned by exactly one chain or generator.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() { return uniform_(gen_); }

    double normal() { return normal_(gen_); }
    double normal(double mean, double sd) { return mean + sd * normal_(gen_); }

    double gamma(double shape, double scale) {
        std::gamma_distribution<double> d(shape, scale);
        return d(gen_);
    }

    /// IG(shape, scale): reciprocal of Gamma(shape, 1/scale).
    double inverse_gamma(double shape, double scale) {
        double g = 0.0;
        while (g <= 0.0) g = gamma(shape, 1.0 / scale);
        return 1.0 / g;
    }

    bool bernoulli(double p) { return uniform() < p; }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        std::uniform_int_distribution<int> d(lo, hi);
        return d(gen_);
    }

    /// Index draw from unnormalized log weights (log-sum-exp guarded).
    int categorical_from_log(const Eigen::VectorXd& log_w);

    Eigen::VectorXd dirichlet(const Eigen::VectorXd& concentration);

    /// Draw from N(mean, precision^-1) given the precision matrix.
    /// Throws NumericError when the precision is not positive definite.
    Eigen::VectorXd mvn_from_precision(const Eigen::VectorXd& precision_times_mean,
                                       const Eigen::MatrixXd& precision);

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace bnmm

#endif  // BNMM_RNG_HPP
