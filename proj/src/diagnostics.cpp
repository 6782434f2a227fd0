#include "bnmm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace bnmm {

namespace {

double sample_mean(const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v, double mean) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
}

std::vector<std::vector<double>> split_chains(const std::vector<std::vector<double>>& chains) {
    std::vector<std::vector<double>> out;
    for (const auto& c : chains) {
        const std::size_t half = c.size() / 2;
        out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
        out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
    }
    return out;
}

}  // namespace

double gelman_rubin(const std::vector<std::vector<double>>& chains, bool split) {
    const std::vector<std::vector<double>>& use = chains;
    std::vector<std::vector<double>> halved;
    if (split) {
        halved = split_chains(chains);
    }
    const auto& cs = split ? halved : use;

    if (cs.size() < 2) throw DataError("gelman_rubin: need at least 2 chains");
    std::size_t n = std::numeric_limits<std::size_t>::max();
    for (const auto& c : cs) n = std::min(n, c.size());
    if (n < 2) throw DataError("gelman_rubin: need at least 2 draws per chain");

    const double m = static_cast<double>(cs.size());
    const double nd = static_cast<double>(n);

    std::vector<double> means;
    double W = 0.0;
    for (const auto& c : cs) {
        std::vector<double> trunc(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n));
        const double mu = sample_mean(trunc);
        means.push_back(mu);
        W += sample_variance(trunc, mu);
    }
    W /= m;

    const double grand = sample_mean(means);
    double B = 0.0;
    for (double mu : means) B += (mu - grand) * (mu - grand);
    B *= nd / (m - 1.0);

    if (W == 0.0) {
        return B == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    }
    const double var_hat = (nd - 1.0) / nd * W + B / nd;
    return std::sqrt(var_hat / W);
}

std::vector<MonitoredScalar> monitored_scalars(const PosteriorDraws& draws) {
    std::vector<MonitoredScalar> out;
    auto add = [&](const std::string& name, auto getter) {
        MonitoredScalar ms;
        ms.name = name;
        for (const auto& chain : draws.chains) {
            std::vector<double> seq;
            seq.reserve(static_cast<std::size_t>(chain.n_draws()));
            for (int d = 0; d < chain.n_draws(); ++d) {
                seq.push_back(getter(chain, static_cast<std::size_t>(d)));
            }
            ms.chains.push_back(std::move(seq));
        }
        out.push_back(std::move(ms));
    };

    using Chain = PosteriorDraws::Chain;
    add("beta_z", [](const Chain& c, std::size_t d) { return c.beta_z[d]; });
    add("sigma2_1", [](const Chain& c, std::size_t d) { return c.sigma2_1[d]; });
    add("sigma2_2", [](const Chain& c, std::size_t d) { return c.sigma2_2[d]; });
    add("nde", [](const Chain& c, std::size_t d) { return c.nde[d]; });
    add("nie", [](const Chain& c, std::size_t d) { return c.nie[d]; });
    add("te", [](const Chain& c, std::size_t d) { return c.te[d]; });
    add("n_active", [](const Chain& c, std::size_t d) {
        int count = 0;
        for (int t : c.tau[d]) count += t;
        for (int g : c.gamma[d]) count += g;
        return static_cast<double>(count);
    });
    return out;
}

GrReport gr_report(const PosteriorDraws& draws, bool split) {
    GrReport report;
    for (const auto& ms : monitored_scalars(draws)) {
        GrEntry entry;
        entry.name = ms.name;
        std::size_t n = std::numeric_limits<std::size_t>::max();
        for (const auto& c : ms.chains) n = std::min(n, c.size());
        entry.n_draws = static_cast<int>(n);
        for (const auto& c : ms.chains) {
            std::vector<double> trunc(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n));
            const double mu = sample_mean(trunc);
            entry.chain_means.push_back(mu);
            entry.chain_variances.push_back(n >= 2 ? sample_variance(trunc, mu) : 0.0);
        }
        entry.psrf = (ms.chains.size() >= 2 && n >= 2) ? gelman_rubin(ms.chains, split) : 1.0;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

void trace_export(const PosteriorDraws& draws, const std::string& path) {
    std::ostringstream body;
    body << "chain,iteration,parameter,value\n";
    const auto scalars = monitored_scalars(draws);
    char buf[64];
    for (std::size_t ci = 0; ci < draws.chains.size(); ++ci) {
        const auto& chain = draws.chains[ci];
        for (int d = 0; d < chain.n_draws(); ++d) {
            for (const auto& ms : scalars) {
                const double value = ms.chains[ci][static_cast<std::size_t>(d)];
                std::snprintf(buf, sizeof(buf), "%.17g", value);
                body << (ci + 1) << ',' << chain.iteration[static_cast<std::size_t>(d)] << ','
                     << ms.name << ',' << buf << '\n';
            }
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("trace_export: cannot open " + path);
    out << body.str();
    if (!out) throw DataError("trace_export: write failed for " + path);
}

std::vector<TraceRow> trace_import(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("trace_import: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("trace_import: empty file " + path);
    if (line != "chain,iteration,parameter,value") {
        throw DataError("trace_import: unexpected header in " + path);
    }
    std::vector<TraceRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string chain, iter, param, value;
        if (!std::getline(ss, chain, ',') || !std::getline(ss, iter, ',') ||
            !std::getline(ss, param, ',') || !std::getline(ss, value)) {
            throw DataError("trace_import: malformed row " + std::to_string(lineno) + " in " +
                            path);
        }
        TraceRow row;
        row.chain = std::stoi(chain);
        row.iteration = std::stoi(iter);
        row.parameter = param;
        row.value = std::strtod(value.c_str(), nullptr);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace bnmm
