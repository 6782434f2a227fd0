#include "bnmm/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "bnmm/diagnostics.hpp"
#include "bnmm/effects.hpp"
#include "bnmm/io.hpp"
#include "bnmm/sbm.hpp"

namespace bnmm {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void prepare_out_dir(const std::string& dir, bool force) {
    if (dir.empty()) throw UsageError("output directory required");
    const fs::path p(dir);
    if (fs::exists(p)) {
        if (!fs::is_directory(p)) throw UsageError(dir + " exists and is not a directory");
        if (!fs::is_empty(p) && !force) {
            throw UsageError(dir + " is not empty; pass --force to write into it");
        }
    } else {
        fs::create_directories(p);
    }
}

std::vector<std::pair<std::string, std::string>> digest_inputs(
    const std::vector<std::string>& files) {
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(files.size());
    for (const auto& f : files) out.emplace_back(f, digest_file(f));
    return out;
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s << std::setprecision(prec) << v;
    return s.str();
}

std::string noise_name(SimConfig::Noise n) {
    return n == SimConfig::Noise::low ? "low" : "high";
}

// Contrast to report when none was requested: (1, 0) for a binary exposure,
// otherwise one standard deviation above the mean against the mean.
std::pair<double, double> default_contrast(const Dataset& data) {
    bool binary = true;
    double sum = 0.0;
    for (const auto& s : data.subjects) {
        if (s.exposure != 0.0 && s.exposure != 1.0) binary = false;
        sum += s.exposure;
    }
    if (binary) return {1.0, 0.0};
    const double n = static_cast<double>(data.n_subjects());
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& s : data.subjects) ss += (s.exposure - mean) * (s.exposure - mean);
    const double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    return {mean + sd, mean};
}

void standardize_covariates(Dataset& data) {
    if (data.P == 0 || data.n_subjects() < 2) return;
    const double n = static_cast<double>(data.n_subjects());
    // covariates carry the intercept at index 0 after validation
    for (int p = 1; p <= data.P; ++p) {
        double mean = 0.0;
        for (const auto& s : data.subjects) mean += s.covariates[p];
        mean /= n;
        double ss = 0.0;
        for (const auto& s : data.subjects) {
            ss += (s.covariates[p] - mean) * (s.covariates[p] - mean);
        }
        const double sd = std::sqrt(ss / (n - 1));
        if (sd <= 0.0) continue;
        for (auto& s : data.subjects) s.covariates[p] = (s.covariates[p] - mean) / sd;
    }
}

}  // namespace

int exit_code_for_current_exception(std::ostream& err) {
    try {
        throw;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
}

void cmd_simulate(const SimulateOptions& opt, std::ostream& log) {
    opt.config.validate();
    prepare_out_dir(opt.out_dir, opt.force);
    const auto t0 = Clock::now();

    auto [data, truth] = generate(opt.config);
    write_dataset(data, opt.out_dir);
    write_json_atomic((fs::path(opt.out_dir) / "truth.json").string(),
                      ground_truth_to_json(truth));

    RunManifest man;
    man.command = "simulate";
    man.config = sim_config_to_json(opt.config);
    man.hyper = nullptr;
    man.master_seed = opt.config.seed;
    man.wall_seconds = seconds_since(t0);
    write_json_atomic((fs::path(opt.out_dir) / "manifest.json").string(), manifest_to_json(man));

    log << "wrote " << data.n_subjects() << " subjects x " << opt.config.K << " scans ("
        << opt.config.V << " nodes, Q=" << opt.config.Q << ", scenario " << opt.config.scenario
        << ", " << noise_name(opt.config.noise) << " noise) to " << opt.out_dir << "\n";
    log << "active block pairs: " << truth.active_pairs.size() << "\n";
    log << "true effects at z=" << fmt(truth.contrast_z) << " vs " << fmt(truth.contrast_z_star)
        << ": nde=" << fmt(truth.nde) << " nie=" << fmt(truth.nie) << " te=" << fmt(truth.te)
        << "\n";
}

int cmd_select_q(const SelectQOptions& opt, std::ostream& log) {
    if (opt.q_min < 1 || opt.q_max < opt.q_min) {
        throw UsageError("need 1 <= q-min <= q-max");
    }
    if (opt.restarts < 1) throw UsageError("restarts must be >= 1");

    const Dataset data = read_dataset(opt.subjects_csv);
    const SelectQResult res = select_q(data, opt.q_min, opt.q_max, opt.seed, opt.restarts);

    log << "   Q          ICL\n";
    std::ostringstream csv;
    csv << "q,icl,converged\n";
    for (const auto& c : res.candidates) {
        log << std::setw(4) << c.Q << "  " << std::setw(12) << fmt(c.icl_score, 8)
            << (c.Q == res.best_q ? "  *" : "") << "\n";
        csv << c.Q << ',' << format_double(c.icl_score) << ',' << (c.converged ? 1 : 0) << '\n';
    }
    log << "selected Q = " << res.best_q << "\n";
    if (!opt.out_csv.empty()) write_text_atomic(opt.out_csv, csv.str());
    return res.best_q;
}

void cmd_fit(const FitOptions& opt, std::ostream& log) {
    const auto t0 = Clock::now();
    prepare_out_dir(opt.out_dir, opt.force);

    Dataset data = read_dataset(opt.subjects_csv);
    if (opt.standardize) {
        standardize_covariates(data);
        log << "standardized " << data.P << " covariate(s)\n";
    }

    Hyperparams hyper;
    if (!opt.hyper_json.empty()) hyper = hyperparams_from_json(read_json(opt.hyper_json));
    hyper.validate();

    ChainConfig chain = opt.chain;
    if (chain.Q <= 0) {
        log << "no block count given, selecting by ICL over [" << opt.select_q_min << ", "
            << opt.select_q_max << "]\n";
        SelectQOptions sel;
        sel.subjects_csv = opt.subjects_csv;
        sel.q_min = opt.select_q_min;
        sel.q_max = std::min(opt.select_q_max, data.V);
        sel.seed = derive_seed(chain.seed, 0x5e1ec7);
        chain.Q = cmd_select_q(sel, log);
    }

    const auto [dz, dzs] = default_contrast(data);
    chain.contrast_z = opt.contrast_z.value_or(dz);
    chain.contrast_z_star = opt.contrast_z_star.value_or(dzs);
    chain.validate();

    log << "fitting: Q=" << chain.Q << ", " << chain.n_chains << " chain(s) x " << chain.n_iter
        << " iterations (burn-in " << chain.burn_in << ", thin " << chain.thin << "), seed "
        << chain.seed << "\n";
    log << "reporting contrast z=" << fmt(chain.contrast_z) << " vs z*="
        << fmt(chain.contrast_z_star) << "\n";

    const PosteriorDraws draws = run_chains(data, chain, hyper);
    write_draws_csv(draws, (fs::path(opt.out_dir) / "draws.csv").string());

    RunManifest man;
    man.command = "fit";
    man.config = chain_config_to_json(chain);
    man.config["subjects_csv"] = opt.subjects_csv;
    man.config["standardize"] = opt.standardize;
    man.hyper = hyperparams_to_json(hyper);
    man.master_seed = chain.seed;
    std::vector<std::string> inputs = dataset_files(opt.subjects_csv);
    if (!opt.hyper_json.empty()) inputs.push_back(opt.hyper_json);
    man.input_digests = digest_inputs(inputs);
    man.wall_seconds = seconds_since(t0);
    write_json_atomic((fs::path(opt.out_dir) / "manifest.json").string(), manifest_to_json(man));

    log << "stored " << draws.total_draws() << " draws to "
        << (fs::path(opt.out_dir) / "draws.csv").string() << " in " << fmt(man.wall_seconds, 3)
        << "s\n";
}

void cmd_report(const ReportOptions& opt, std::ostream& log) {
    const PosteriorDraws draws = read_draws_csv(opt.draws_csv);
    prepare_out_dir(opt.out_dir, opt.force);

    const double z = opt.contrast_z.value_or(draws.contrast_z);
    const double z_star = opt.contrast_z_star.value_or(draws.contrast_z_star);

    const EffectSummary summary = summarize_effects(draws, z, z_star);
    const AllocationSummary alloc = allocation_summary(draws);
    const MedianModel mm = posterior_median_model(draws);

    nlohmann::json ej = effect_summary_to_json(summary);
    ej["consensus_labels"] = alloc.consensus.labels();
    write_json_atomic((fs::path(opt.out_dir) / "effects.json").string(), ej);

    const GrReport gr = gr_report(draws, opt.split_gr);
    write_json_atomic((fs::path(opt.out_dir) / "gr.json").string(), gr_report_to_json(gr));
    for (const auto& e : gr.entries) {
        if (e.psrf > 1.1) {
            log << "warning: PSRF for " << e.name << " is " << fmt(e.psrf)
                << " (> 1.1); chains look unconverged\n";
        }
    }

    trace_export(draws, (fs::path(opt.out_dir) / "trace.csv").string());
    write_matrix_csv((fs::path(opt.out_dir) / "edge_mask.csv").string(),
                     edge_mask(mm.active_pairs, alloc.consensus));

    log << "effects at z=" << fmt(z) << " vs z*=" << fmt(z_star) << " (" << summary.n_draws
        << " draws):\n";
    const auto line = [&](const char* name, const EffectSummary::Stats& s) {
        log << "  " << name << ": " << fmt(s.mean) << "  [" << fmt(s.ci_low) << ", "
            << fmt(s.ci_high) << "]\n";
    };
    line("nde", summary.nde);
    line("nie", summary.nie);
    line("te ", summary.te);
    log << "active block pairs (joint median model): " << mm.active_pairs.size() << "\n";
    log << "report written to " << opt.out_dir << "\n";
}

void cmd_bench(const BenchOptions& opt, std::ostream& log) {
    if (opt.replicates < 1) throw UsageError("replicates must be >= 1");

    struct Row {
        int replicate;
        SelectionRates rates;
        BiasReport bias;
    };
    std::vector<Row> rows;

    for (int r = 1; r <= opt.replicates; ++r) {
        const auto t0 = Clock::now();
        SimConfig sc = scaled_config(opt.scenario, opt.noise, derive_seed(opt.seed, r));
        if (opt.full_scale) {
            SimConfig full;
            full.scenario = opt.scenario;
            full.noise = opt.noise;
            full.seed = derive_seed(opt.seed, r);
            sc = full;
        }
        auto [data, truth] = generate(sc);

        ChainConfig chain;
        chain.Q = sc.Q;
        chain.n_iter = opt.n_iter;
        chain.burn_in = opt.burn_in;
        chain.thin = opt.thin;
        chain.n_chains = opt.n_chains;
        chain.seed = derive_seed(opt.seed, r, 1);
        chain.contrast_z = truth.contrast_z;
        chain.contrast_z_star = truth.contrast_z_star;
        chain.validate();

        const PosteriorDraws draws = run_chains(data, chain, Hyperparams{});
        const EffectSummary summary =
            summarize_effects(draws, truth.contrast_z, truth.contrast_z_star);
        const MedianModel mm = posterior_median_model(draws);
        const AllocationSummary alloc = allocation_summary(draws);
        const SelectionRates rates =
            selection_metrics(truth.mask, edge_mask(mm.active_pairs, alloc.consensus));
        const BiasReport bias = effect_bias(summary, truth);
        rows.push_back({r, rates, bias});

        log << "replicate " << r << ": sens="
            << (rates.sensitivity_defined ? fmt(rates.sensitivity) : "n/a")
            << " spec=" << (rates.specificity_defined ? fmt(rates.specificity) : "n/a")
            << " te bias=" << fmt(bias.te.value) << (bias.te.relative ? "%" : " (abs)") << " ["
            << fmt(seconds_since(t0), 3) << "s]\n";
    }

    std::ostringstream csv;
    csv << "method,scenario,noise,replicate,sensitivity,specificity,bias_nde,bias_nie,bias_te\n";
    for (const auto& row : rows) {
        csv << "bnmm," << opt.scenario << ',' << noise_name(opt.noise) << ',' << row.replicate
            << ',' << (row.rates.sensitivity_defined ? format_double(row.rates.sensitivity) : "nan")
            << ',' << (row.rates.specificity_defined ? format_double(row.rates.specificity) : "nan")
            << ',' << format_double(row.bias.nde.value) << ',' << format_double(row.bias.nie.value)
            << ',' << format_double(row.bias.te.value) << '\n';
    }
    if (!opt.out_csv.empty()) {
        write_text_atomic(opt.out_csv, csv.str());
        log << "metrics written to " << opt.out_csv << "\n";
    }

    const auto mean_sd = [](const std::vector<double>& xs) -> std::pair<double, double> {
        if (xs.empty()) return {std::nan(""), std::nan("")};
        double m = 0.0;
        for (double x : xs) m += x;
        m /= static_cast<double>(xs.size());
        double ss = 0.0;
        for (double x : xs) ss += (x - m) * (x - m);
        const double sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
        return {m, sd};
    };
    std::vector<double> sens, spec, b_nde, b_nie, b_te;
    for (const auto& row : rows) {
        if (row.rates.sensitivity_defined) sens.push_back(row.rates.sensitivity);
        if (row.rates.specificity_defined) spec.push_back(row.rates.specificity);
        b_nde.push_back(row.bias.nde.value);
        b_nie.push_back(row.bias.nie.value);
        b_te.push_back(row.bias.te.value);
    }
    const auto show = [&](const char* name, const std::vector<double>& xs) {
        const auto [m, sd] = mean_sd(xs);
        log << "  " << name << ": " << fmt(m) << " (" << fmt(sd) << ")\n";
    };
    log << "summary over " << opt.replicates << " replicates, mean (MC sd):\n";
    show("sensitivity", sens);
    show("specificity", spec);
    show("bias_nde %", b_nde);
    show("bias_nie %", b_nie);
    show("bias_te  %", b_te);
}

}  // namespace bnmm
