// Command line front end: simulate / select-q / fit / report / bench.

#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "bnmm/cli.hpp"

using namespace bnmm;

int main(int argc, char** argv) {
    CLI::App app{"Bayesian network mediation: subject-specific weighted stochastic "
                 "block models with block-pair mediators"};
    app.require_subcommand(1);

    const std::map<std::string, SimConfig::Noise> noise_names{
        {"low", SimConfig::Noise::low}, {"high", SimConfig::Noise::high}};
    const std::map<std::string, SimConfig::Exposure> exposure_names{
        {"continuous", SimConfig::Exposure::continuous},
        {"binary", SimConfig::Exposure::binary}};
    const std::map<std::string, ChainConfig::Init> init_names{
        {"random", ChainConfig::Init::random},
        {"block-average", ChainConfig::Init::block_average}};

    // simulate
    SimulateOptions sim;
    bool sim_scaled = false;
    auto* c_sim = app.add_subcommand("simulate", "Generate a synthetic study with known truth");
    c_sim->add_option("--out", sim.out_dir, "Output directory")->required();
    auto* o_n = c_sim->add_option("--subjects", sim.config.N, "Number of subjects");
    auto* o_k = c_sim->add_option("--scans", sim.config.K, "Connectome measurements per subject");
    auto* o_v = c_sim->add_option("--nodes", sim.config.V, "Nodes per connectome");
    auto* o_q = c_sim->add_option("--blocks", sim.config.Q, "Number of blocks");
    c_sim->add_option("--scenario", sim.config.scenario, "Activation scenario (1 or 2)");
    c_sim->add_option("--noise", sim.config.noise, "Noise level")
        ->transform(CLI::CheckedTransformer(noise_names, CLI::ignore_case));
    c_sim->add_option("--exposure", sim.config.exposure, "Exposure type")
        ->transform(CLI::CheckedTransformer(exposure_names, CLI::ignore_case));
    c_sim->add_option("--seed", sim.config.seed, "Master seed");
    c_sim->add_option("--active-prob", sim.config.active_prob,
                      "Scenario 1 per-pair activation probability");
    c_sim->add_option("--n-tau", sim.config.n_active_tau, "Scenario 2 active tau count");
    c_sim->add_option("--n-gamma", sim.config.n_active_gamma, "Scenario 2 active gamma count");
    c_sim->add_option("--n-overlap", sim.config.n_overlap, "Scenario 2 tau/gamma overlap");
    double ov_s1 = 0, ov_s2 = 0, ov_se = 0, ov_om = 0;
    auto* o_s1 = c_sim->add_option("--sigma1", ov_s1, "Outcome noise SD override");
    auto* o_s2 = c_sim->add_option("--sigma2", ov_s2, "Mediator noise SD override");
    auto* o_se = c_sim->add_option("--sigma-edge", ov_se, "Edge noise SD override");
    auto* o_om = c_sim->add_option("--omega", ov_om, "Measurement spread SD override");
    c_sim->add_flag("--scaled", sim_scaled, "Use the scaled design (N=50, V=60, Q=6, K=4)");
    c_sim->add_flag("--force", sim.force, "Write into a non-empty directory");

    // select-q
    SelectQOptions sel;
    auto* c_sel = app.add_subcommand("select-q", "Choose the block count by ICL");
    c_sel->add_option("--data", sel.subjects_csv, "subjects.csv of the dataset")->required();
    c_sel->add_option("--q-min", sel.q_min, "Smallest candidate Q");
    c_sel->add_option("--q-max", sel.q_max, "Largest candidate Q");
    c_sel->add_option("--seed", sel.seed, "Master seed");
    c_sel->add_option("--restarts", sel.restarts, "Greedy restarts per candidate");
    c_sel->add_option("--out", sel.out_csv, "Optional CSV for the ICL table");

    // fit
    FitOptions fit;
    fit.chain.Q = 0;   // auto unless --blocks given
    auto* c_fit = app.add_subcommand("fit", "Run the Gibbs sampler");
    c_fit->add_option("--data", fit.subjects_csv, "subjects.csv of the dataset")->required();
    c_fit->add_option("--out", fit.out_dir, "Output directory")->required();
    c_fit->add_option("--blocks", fit.chain.Q, "Block count (omit to select by ICL)");
    c_fit->add_option("--iters", fit.chain.n_iter, "Iterations per chain");
    c_fit->add_option("--burn-in", fit.chain.burn_in, "Burn-in iterations");
    c_fit->add_option("--thin", fit.chain.thin, "Thinning interval");
    c_fit->add_option("--chains", fit.chain.n_chains, "Number of chains");
    c_fit->add_option("--seed", fit.chain.seed, "Master seed");
    c_fit->add_option("--init", fit.chain.init_mode, "Chain initialization")
        ->transform(CLI::CheckedTransformer(init_names, CLI::ignore_case));
    c_fit->add_option("--hyper", fit.hyper_json, "Hyperparameter JSON file");
    c_fit->add_flag("--standardize", fit.standardize, "Standardize covariates before fitting");
    double fit_z = 0, fit_zs = 0;
    auto* o_fz = c_fit->add_option("--contrast-z", fit_z, "Exposure level z for effects");
    auto* o_fzs = c_fit->add_option("--contrast-z-star", fit_zs, "Reference level z*");
    c_fit->add_option("--q-min", fit.select_q_min, "Smallest candidate Q when selecting");
    c_fit->add_option("--q-max", fit.select_q_max, "Largest candidate Q when selecting");
    c_fit->add_flag("--force", fit.force, "Write into a non-empty directory");

    // report
    ReportOptions rep;
    auto* c_rep = app.add_subcommand("report", "Summarize a draws file");
    c_rep->add_option("--draws", rep.draws_csv, "draws.csv from a fit")->required();
    c_rep->add_option("--out", rep.out_dir, "Output directory")->required();
    double rep_z = 0, rep_zs = 0;
    auto* o_rz = c_rep->add_option("--contrast-z", rep_z, "Exposure level z for effects");
    auto* o_rzs = c_rep->add_option("--contrast-z-star", rep_zs, "Reference level z*");
    c_rep->add_flag("--split-gr", rep.split_gr, "Split chains in half for the PSRF");
    c_rep->add_flag("--force", rep.force, "Write into a non-empty directory");

    // bench
    BenchOptions bench;
    bench.out_csv = "metrics.csv";
    auto* c_bench = app.add_subcommand("bench", "Replicate study: simulate, fit, score");
    c_bench->add_option("--scenario", bench.scenario, "Activation scenario (1 or 2)");
    c_bench->add_option("--noise", bench.noise, "Noise level")
        ->transform(CLI::CheckedTransformer(noise_names, CLI::ignore_case));
    c_bench->add_option("--replicates", bench.replicates, "Number of replicates");
    c_bench->add_option("--seed", bench.seed, "Master seed");
    c_bench->add_option("--iters", bench.n_iter, "Iterations per chain");
    c_bench->add_option("--burn-in", bench.burn_in, "Burn-in iterations");
    c_bench->add_option("--chains", bench.n_chains, "Number of chains");
    c_bench->add_option("--thin", bench.thin, "Thinning interval");
    c_bench->add_flag("--full-scale", bench.full_scale, "Use the full design (N=50, V=100, Q=10)");
    c_bench->add_option("--out", bench.out_csv, "Metrics CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (app.got_subcommand(c_sim)) {
            if (sim_scaled) {
                SimConfig base = scaled_config(sim.config.scenario, sim.config.noise,
                                               sim.config.seed);
                if (o_n->count()) base.N = sim.config.N;
                if (o_k->count()) base.K = sim.config.K;
                if (o_v->count()) base.V = sim.config.V;
                if (o_q->count()) base.Q = sim.config.Q;
                base.exposure = sim.config.exposure;
                base.active_prob = sim.config.active_prob;
                base.n_active_tau = sim.config.n_active_tau;
                base.n_active_gamma = sim.config.n_active_gamma;
                base.n_overlap = sim.config.n_overlap;
                sim.config = base;
            }
            if (o_s1->count()) sim.config.sigma1 = ov_s1;
            if (o_s2->count()) sim.config.sigma2 = ov_s2;
            if (o_se->count()) sim.config.sigma_edge = ov_se;
            if (o_om->count()) sim.config.omega = ov_om;
            cmd_simulate(sim, std::cout);
        } else if (app.got_subcommand(c_sel)) {
            cmd_select_q(sel, std::cout);
        } else if (app.got_subcommand(c_fit)) {
            if (o_fz->count()) fit.contrast_z = fit_z;
            if (o_fzs->count()) fit.contrast_z_star = fit_zs;
            cmd_fit(fit, std::cout);
        } else if (app.got_subcommand(c_rep)) {
            if (o_rz->count()) rep.contrast_z = rep_z;
            if (o_rzs->count()) rep.contrast_z_star = rep_zs;
            cmd_report(rep, std::cout);
        } else if (app.got_subcommand(c_bench)) {
            cmd_bench(bench, std::cout);
        }
    } catch (...) {
        return exit_code_for_current_exception(std::cerr);
    }
    return kExitOk;
}
