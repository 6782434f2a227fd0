#include "bnmm/core_types.hpp"

#include <cmath>
#include <sstream>

namespace bnmm {

int pair_index(int q, int r, int Q) {
    if (q < 1 || q > Q || r < 1 || r > Q) {
        std::ostringstream msg;
        msg << "pair_index: block ids (" << q << "," << r << ") out of range 1.." << Q;
        throw std::out_of_range(msg.str());
    }
    if (q > r) std::swap(q, r);
    const int row_offset = (q - 1) * (2 * Q - q + 2) / 2;
    return row_offset + (r - q);
}

std::pair<int, int> pair_from_index(int s, int Q) {
    if (s < 0 || s >= pair_count(Q)) {
        throw std::out_of_range("pair_from_index: flat index out of range");
    }
    int q = 1;
    while (s >= Q - q + 1) {
        s -= Q - q + 1;
        ++q;
    }
    return {q, q + s};
}

Allocation::Allocation(std::vector<int> labels, int Q) : labels_(std::move(labels)), Q_(Q) {
    for (int lab : labels_) {
        if (lab < 1 || lab > Q_) {
            throw DataError("Allocation: label " + std::to_string(lab) + " outside 1.." +
                            std::to_string(Q_));
        }
    }
}

void Allocation::set_label(int v, int q) {
    if (q < 1 || q > Q_) throw DataError("Allocation::set_label: block id out of range");
    labels_[static_cast<std::size_t>(v)] = q;
}

std::vector<int> Allocation::block_sizes() const {
    std::vector<int> counts(static_cast<std::size_t>(Q_), 0);
    for (int lab : labels_) ++counts[static_cast<std::size_t>(lab - 1)];
    return counts;
}

Allocation Allocation::permuted(const std::vector<int>& perm) const {
    if (static_cast<int>(perm.size()) != Q_) {
        throw DataError("Allocation::permuted: permutation length != Q");
    }
    std::vector<int> relabeled(labels_.size());
    for (std::size_t v = 0; v < labels_.size(); ++v) {
        relabeled[v] = perm[static_cast<std::size_t>(labels_[v] - 1)];
    }
    return Allocation(std::move(relabeled), Q_);
}

int Dataset::total_measurements() const {
    int total = 0;
    for (const auto& s : subjects) total += s.n_measurements();
    return total;
}

namespace {

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

}  // namespace

Dataset validate_dataset(const Dataset& raw, double tol) {
    Dataset out = raw;
    const int V = out.V;
    if (V < 2) throw DataError("validate_dataset: node count V must be at least 2");
    if (out.subjects.empty()) throw DataError("validate_dataset: no subjects");

    for (std::size_t i = 0; i < out.subjects.size(); ++i) {
        auto& subj = out.subjects[i];
        const std::string who = "subject " + std::to_string(i + 1);

        if (!std::isfinite(subj.outcome) || !std::isfinite(subj.exposure)) {
            throw DataError(who + ": outcome/exposure not finite");
        }
        if (subj.connectomes.empty()) {
            throw DataError(who + ": no connectome measurements (K_i = 0)");
        }

        const auto len = subj.covariates.size();
        if (len == out.P + 1) {
            if (subj.covariates[0] != 1.0) {
                throw DataError(who + ": covariate vector of length P+1 must start with 1");
            }
        } else if (len == out.P) {
            Eigen::VectorXd with_intercept(out.P + 1);
            with_intercept[0] = 1.0;
            with_intercept.tail(out.P) = subj.covariates;
            subj.covariates = with_intercept;
        } else {
            throw DataError(who + ": covariate vector length " + std::to_string(len) +
                            " matches neither P nor P+1 (P=" + std::to_string(out.P) + ")");
        }
        if (!subj.covariates.allFinite()) {
            throw DataError(who + ": non-finite covariate entry");
        }

        for (std::size_t k = 0; k < subj.connectomes.size(); ++k) {
            auto& A = subj.connectomes[k];
            const std::string where = who + ", measurement " + std::to_string(k + 1);
            if (A.rows() != V || A.cols() != V) {
                throw DataError(where + ": matrix is " + std::to_string(A.rows()) + "x" +
                                std::to_string(A.cols()) + ", expected " + std::to_string(V) +
                                "x" + std::to_string(V));
            }
            if (!all_finite(A)) throw DataError(where + ": non-finite entry");
            for (int j = 0; j < V; ++j) {
                for (int l = j + 1; l < V; ++l) {
                    const double diff = std::abs(A(j, l) - A(l, j));
                    if (diff > tol) {
                        std::ostringstream msg;
                        msg << where << ": asymmetry above tolerance at (" << j + 1 << ","
                            << l + 1 << "): |" << A(j, l) << " - " << A(l, j) << "| = " << diff;
                        throw DataError(msg.str());
                    }
                    if (diff != 0.0) {
                        const double avg = 0.5 * (A(j, l) + A(l, j));
                        A(j, l) = avg;
                        A(l, j) = avg;
                    }
                }
            }
        }
    }
    return out;
}

Eigen::VectorXd Hyperparams::concentration(int Q) const {
    if (dirichlet_conc.size() == 0) return Eigen::VectorXd::Ones(Q);
    if (dirichlet_conc.size() != Q) {
        throw DataError("Hyperparams: dirichlet concentration length != Q");
    }
    return dirichlet_conc;
}

void Hyperparams::validate() const {
    auto positive = [](double x, const char* name) {
        if (!(x > 0.0) || !std::isfinite(x)) {
            throw DataError(std::string("Hyperparams: ") + name + " must be positive and finite");
        }
    };
    if (!(p_tau > 0.0 && p_tau < 1.0)) throw DataError("Hyperparams: p_tau outside (0,1)");
    if (!(p_gamma > 0.0 && p_gamma < 1.0)) throw DataError("Hyperparams: p_gamma outside (0,1)");
    positive(a1, "a1");
    positive(b1, "b1");
    positive(a2, "a2");
    positive(b2, "b2");
    positive(ig_noninf_shape, "ig_noninf_shape");
    positive(ig_noninf_scale, "ig_noninf_scale");
    positive(sigma2_xy, "sigma2_xy");
    positive(sigma2_zy, "sigma2_zy");
    positive(sigma2_xm, "sigma2_xm");
    for (Eigen::Index q = 0; q < dirichlet_conc.size(); ++q) {
        positive(dirichlet_conc[q], "dirichlet concentration entry");
    }
}

void ModelState::check_invariants() const {
    const double pi_sum = pi.sum();
    if (std::abs(pi_sum - 1.0) > 1e-9 || (pi.array() < 0.0).any()) {
        throw NumericError("ModelState: pi is not a probability simplex");
    }
    auto check_positive = [](const BlockPairTable& t, const char* name) {
        for (double v : t.values()) {
            if (!(v > 0.0) || !std::isfinite(v)) {
                throw NumericError(std::string("ModelState: non-positive ") + name);
            }
        }
    };
    check_positive(sigma_qr, "sigma^2_qr");
    check_positive(omega_qr, "omega^2_qr");
    for (double v : {sigma2_1, sigma2_2, sigma2_zm, sigma2_my}) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw NumericError("ModelState: non-positive scalar variance");
        }
    }
    auto check_binary = [](const BlockPairIndicators& t, const char* name) {
        for (int v : t.values()) {
            if (v != 0 && v != 1) {
                throw NumericError(std::string("ModelState: ") + name + " entry outside {0,1}");
            }
        }
    };
    check_binary(tau, "tau");
    check_binary(gamma, "gamma");
    if (!beta_x.allFinite() || !std::isfinite(beta_z)) {
        throw NumericError("ModelState: non-finite regression coefficient");
    }
}

int PosteriorDraws::total_draws() const {
    int total = 0;
    for (const auto& c : chains) total += c.n_draws();
    return total;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over the mixed words
    std::uint64_t x = master + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xBF58476D1CE4E5B9ULL * (b + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

}  // namespace bnmm
