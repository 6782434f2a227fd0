#ifndef BNMM_DIAGNOSTICS_HPP
#define BNMM_DIAGNOSTICS_HPP

#include <string>
#include <vector>

#include "bnmm/core_types.hpp"

namespace bnmm {

/// Classic potential scale reduction factor:
///   sqrt( ((n-1)/n * W + B/n) / W )
/// with W the mean within-chain variance and B = n * variance of chain means.
/// Chains are truncated to the shortest length. Degenerate cases: W=0, B=0
/// returns 1; W=0, B>0 returns +infinity. `split` halves every chain first
/// (split-chain variant). Throws DataError on fewer than 2 chains or n < 2.
double gelman_rubin(const std::vector<std::vector<double>>& chains, bool split = false);

struct GrEntry {
    std::string name;
    double psrf = 1.0;
    std::vector<double> chain_means;
    std::vector<double> chain_variances;
    int n_draws = 0;   // per chain, after truncation
};

struct GrReport {
    std::vector<GrEntry> entries;
};

/// Named per-chain scalar streams worth monitoring: beta_z, sigma2_1,
/// sigma2_2, the per-draw effects (relabeling-invariant), and the active
/// indicator count.
struct MonitoredScalar {
    std::string name;
    std::vector<std::vector<double>> chains;
};

std::vector<MonitoredScalar> monitored_scalars(const PosteriorDraws& draws);

GrReport gr_report(const PosteriorDraws& draws, bool split = false);

/// Long-format trace CSV with header "chain,iteration,parameter,value".
/// Doubles are printed with enough digits to round-trip exactly.
void trace_export(const PosteriorDraws& draws, const std::string& path);

struct TraceRow {
    int chain = 0;
    int iteration = 0;
    std::string parameter;
    double value = 0.0;
};

std::vector<TraceRow> trace_import(const std::string& path);

}  // namespace bnmm

#endif  // BNMM_DIAGNOSTICS_HPP
