#ifndef BNMM_CLI_HPP
#define BNMM_CLI_HPP

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

#include "bnmm/core_types.hpp"
#include "bnmm/sampler.hpp"
#include "bnmm/simulate.hpp"

namespace bnmm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Bad invocation (flag combinations, refused overwrites). Maps to exit 1.
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

/// Maps an in-flight exception to the documented process exit code, printing
/// the message to err.
int exit_code_for_current_exception(std::ostream& err);

struct SimulateOptions {
    SimConfig config;
    std::string out_dir;
    bool force = false;
};

/// Writes the dataset tree, truth.json, and manifest.json under out_dir.
void cmd_simulate(const SimulateOptions& opt, std::ostream& log);

struct SelectQOptions {
    std::string subjects_csv;
    int q_min = 2;
    int q_max = 10;
    std::uint64_t seed = 0;
    int restarts = 10;
    std::string out_csv;   // empty: table goes to log only
};

/// Prints the ICL table and the argmax Q; returns the chosen Q.
int cmd_select_q(const SelectQOptions& opt, std::ostream& log);

struct FitOptions {
    std::string subjects_csv;
    ChainConfig chain;               // chain.Q <= 0 resolves via select_q
    std::string hyper_json;          // optional hyperparameter file
    std::string out_dir;
    bool force = false;
    bool standardize = false;        // standardize covariates before fitting
    std::optional<double> contrast_z;        // default depends on exposure type
    std::optional<double> contrast_z_star;
    int select_q_min = 2;            // used only when chain.Q is unset
    int select_q_max = 10;
};

/// Runs the sampler and writes draws.csv and manifest.json under out_dir.
void cmd_fit(const FitOptions& opt, std::ostream& log);

struct ReportOptions {
    std::string draws_csv;
    std::string out_dir;
    bool force = false;
    std::optional<double> contrast_z;        // default: the fit-time contrast
    std::optional<double> contrast_z_star;
    bool split_gr = false;
};

/// Writes effects.json, gr.json, trace.csv, and edge_mask.csv; warns on
/// PSRF > 1.1.
void cmd_report(const ReportOptions& opt, std::ostream& log);

struct BenchOptions {
    int scenario = 1;
    SimConfig::Noise noise = SimConfig::Noise::low;
    int replicates = 10;
    std::uint64_t seed = 0;
    int n_iter = 3000;
    int burn_in = 1000;
    int n_chains = 3;
    int thin = 1;
    bool full_scale = false;   // default: scaled design (N=50,V=60,Q=6,K=4)
    std::string out_csv;
};

/// Replicate harness: simulate, fit, score. Emits the metrics CSV with
/// columns method,scenario,noise,replicate,sensitivity,specificity,
/// bias_nde,bias_nie,bias_te and logs the replicate summaries.
void cmd_bench(const BenchOptions& opt, std::ostream& log);

}  // namespace bnmm

#endif  // BNMM_CLI_HPP
