#ifndef BNMM_CORE_TYPES_HPP
#define BNMM_CORE_TYPES_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bnmm {

/// Input data problems: bad dimensions, non-finite values, broken invariants.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Numeric breakdown during sampling (overflow, singular precision).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Flat index of the unordered block pair (q, r) in row-major
/// upper-triangular order: (1,1),(1,2),...,(1,Q),(2,2),...,(Q,Q).
/// Block ids are 1-based; pair_index(q,r,Q) == pair_index(r,q,Q).
int pair_index(int q, int r, int Q);

/// Number of unordered block pairs, Q(Q+1)/2.
inline int pair_count(int Q) { return Q * (Q + 1) / 2; }

/// Symmetric table of one value per unordered block pair.
template <typename T>
class BasicBlockPairTable {
public:
    BasicBlockPairTable() = default;
    explicit BasicBlockPairTable(int Q, T fill = T{})
        : Q_(Q), values_(static_cast<std::size_t>(pair_count(Q)), fill) {}

    int block_count() const { return Q_; }
    int size() const { return static_cast<int>(values_.size()); }

    T& at(int q, int r) { return values_[static_cast<std::size_t>(pair_index(q, r, Q_))]; }
    const T& at(int q, int r) const { return values_[static_cast<std::size_t>(pair_index(q, r, Q_))]; }

    T& flat(int s) { return values_.at(static_cast<std::size_t>(s)); }
    const T& flat(int s) const { return values_.at(static_cast<std::size_t>(s)); }

    const std::vector<T>& values() const { return values_; }
    std::vector<T>& values() { return values_; }

    bool operator==(const BasicBlockPairTable& other) const = default;

private:
    int Q_ = 0;
    std::vector<T> values_;
};

using BlockPairTable = BasicBlockPairTable<double>;
using BlockPairIndicators = BasicBlockPairTable<int>;

/// Recovers the (q, r) pair (q <= r, 1-based) for a flat pair index.
std::pair<int, int> pair_from_index(int s, int Q);

/// One-hot community allocation stored compactly: labels[v] in {1..Q}.
/// Empty blocks are permitted (they can occur transiently while sampling).
class Allocation {
public:
    Allocation() = default;
    Allocation(std::vector<int> labels, int Q);

    int node_count() const { return static_cast<int>(labels_.size()); }
    int block_count() const { return Q_; }
    int label(int v) const { return labels_[static_cast<std::size_t>(v)]; }
    void set_label(int v, int q);
    const std::vector<int>& labels() const { return labels_; }

    /// Nodes per block, indexed 0..Q-1 for block ids 1..Q.
    std::vector<int> block_sizes() const;

    /// Relabeled copy: block q becomes perm[q-1] (perm is a permutation of 1..Q).
    Allocation permuted(const std::vector<int>& perm) const;

    bool operator==(const Allocation& other) const = default;

private:
    std::vector<int> labels_;
    int Q_ = 0;
};

/// One subject: outcome, exposure, covariates (intercept first), and the
/// repeated connectome matrices. K_i may differ across subjects.
struct SubjectRecord {
    double outcome = 0.0;
    double exposure = 0.0;
    Eigen::VectorXd covariates;                 // length P+1, first element 1
    std::vector<Eigen::MatrixXd> connectomes;   // each V x V, symmetric

    int n_measurements() const { return static_cast<int>(connectomes.size()); }
};

struct Dataset {
    std::vector<SubjectRecord> subjects;
    int V = 0;   // node count
    int P = 0;   // covariate count excluding the intercept

    int n_subjects() const { return static_cast<int>(subjects.size()); }
    int total_measurements() const;
};

/// Checks every Dataset invariant and returns a cleaned copy: off-diagonal
/// asymmetry up to `tol` is symmetrized by averaging, larger asymmetry is an
/// error; a missing intercept column (vectors of length P) is prepended.
/// Idempotent.
Dataset validate_dataset(const Dataset& raw, double tol = 1e-8);

/// Every fixed prior constant of the model.
struct Hyperparams {
    double p_tau = 0.5;               // Bernoulli prior on outcome-side indicators
    double p_gamma = 0.5;             // Bernoulli prior on exposure-side indicators
    Eigen::VectorXd dirichlet_conc;   // length Q; empty means all-ones
    double a1 = 1.0, b1 = 1.0;        // IG shape/scale for sigma^2_qr
    double a2 = 1.0, b2 = 1.0;        // IG shape/scale for omega^2_qr
    double ig_noninf_shape = 0.1;     // sigma^2_1, sigma^2_2, sigma^2_zm, sigma^2_my
    double ig_noninf_scale = 0.1;
    double sigma2_xy = 10.0;          // fixed prior variance of beta_x entries
    double sigma2_zy = 10.0;          // fixed prior variance of beta_z
    double sigma2_xm = 10.0;          // fixed prior variance of alpha_x entries

    /// Concentration vector resolved for Q blocks (all-ones default).
    Eigen::VectorXd concentration(int Q) const;

    void validate() const;
};

/// One complete draw of every unknown in the model.
struct ModelState {
    Allocation allocation;
    Eigen::VectorXd pi;                          // length Q, sums to 1
    std::vector<BlockPairTable> M;               // per subject: latent mediators m_{i,qr}
    std::vector<std::vector<BlockPairTable>> m_meas;  // [subject][measurement]
    BlockPairTable sigma_qr;                     // edge variances
    BlockPairTable omega_qr;                     // measurement-level variances
    Eigen::VectorXd beta_x;                      // length P+1
    BlockPairTable beta_m;
    double beta_z = 0.0;
    std::vector<Eigen::VectorXd> alpha_x;        // per pair, length P+1
    BlockPairTable alpha_z;
    BlockPairIndicators tau;
    BlockPairIndicators gamma;
    double sigma2_1 = 1.0;
    double sigma2_2 = 1.0;
    double sigma2_zm = 1.0;
    double sigma2_my = 1.0;

    int block_count() const { return allocation.block_count(); }
    int n_pairs() const { return sigma_qr.size(); }

    /// Throws NumericError if any invariant is broken (simplex pi, positive
    /// variances, indicator entries in {0,1}, finite values).
    void check_invariants() const;
};

/// Stored chain of per-draw summaries. Pair-indexed quantities use the flat
/// pair layout; labels are 1-based.
struct PosteriorDraws {
    struct Chain {
        std::uint64_t seed = 0;
        std::vector<int> iteration;              // original sweep index, 1-based
        std::vector<double> beta_z;
        std::vector<double> sigma2_1;
        std::vector<double> sigma2_2;
        std::vector<double> sigma2_zm;
        std::vector<double> sigma2_my;
        std::vector<std::vector<int>> tau;       // per draw, flat over pairs
        std::vector<std::vector<int>> gamma;
        std::vector<Eigen::VectorXd> alpha_z;
        std::vector<Eigen::VectorXd> beta_m;
        std::vector<std::vector<int>> labels;    // per draw, length V
        std::vector<double> nde, nie, te, nie_pos, nie_neg;

        int n_draws() const { return static_cast<int>(beta_z.size()); }
    };

    std::vector<Chain> chains;
    int n_iter = 0;
    int burn_in = 0;
    int thin = 1;
    int Q = 0;
    int V = 0;
    std::uint64_t master_seed = 0;
    double contrast_z = 1.0;       // (Z, Z*) used for the stored effect draws
    double contrast_z_star = 0.0;

    int n_pairs() const { return pair_count(Q); }
    int total_draws() const;
};

/// Deterministic stream split: child seed from (master, a, b).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

}  // namespace bnmm

#endif  // BNMM_CORE_TYPES_HPP
