#include "bnmm/io.hpp"

#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace bnmm {

std::string format_double(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

void write_text_atomic(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.parent_path() /
                         (target.filename().string() + ".tmp" + std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
        out << content;
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw DataError("rename to " + path + " failed: " + ec.message());
    }
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string digest_file(const std::string& path) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(read_text(path))));
    return buf;
}

namespace {

double parse_double(const std::string& field, const std::string& path, int row) {
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(field.c_str(), &end);
    if (end == field.c_str() || *end != '\0' || errno == ERANGE) {
        throw DataError(path + ", row " + std::to_string(row) + ": bad number '" + field + "'");
    }
    return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

Eigen::MatrixXd read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open matrix file " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        for (const std::string& f : split(line, ',')) row.push_back(parse_double(f, path, lineno));
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw DataError(path + ", row " + std::to_string(lineno) + ": expected " +
                            std::to_string(rows.front().size()) + " columns, got " +
                            std::to_string(row.size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError(path + ": empty matrix file");
    Eigen::MatrixXd m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    return m;
}

void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m) {
    std::ostringstream out;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) out << ',';
            out << format_double(m(r, c));
        }
        out << '\n';
    }
    write_text_atomic(path, out.str());
}

void write_matrix_csv(const std::string& path, const Eigen::MatrixXi& m) {
    std::ostringstream out;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) out << ',';
            out << m(r, c);
        }
        out << '\n';
    }
    write_text_atomic(path, out.str());
}

void write_dataset(const Dataset& dataset, const std::string& dir) {
    fs::create_directories(dir);
    std::ostringstream table;
    table << "id,outcome,exposure";
    for (int p = 1; p <= dataset.P; ++p) table << ",cov" << p;
    table << ",connectomes\n";

    for (int i = 0; i < dataset.n_subjects(); ++i) {
        const auto& subj = dataset.subjects[static_cast<std::size_t>(i)];
        table << (i + 1) << ',' << format_double(subj.outcome) << ','
              << format_double(subj.exposure);
        // covariates may or may not carry the leading intercept
        const int offset = subj.covariates.size() == dataset.P + 1 ? 1 : 0;
        for (int p = 0; p < dataset.P; ++p) table << ',' << format_double(subj.covariates[offset + p]);
        table << ',';
        for (int k = 0; k < subj.n_measurements(); ++k) {
            std::ostringstream name;
            name << "subject_" << (i + 1) << "_scan_" << (k + 1) << ".csv";
            write_matrix_csv((fs::path(dir) / name.str()).string(),
                             subj.connectomes[static_cast<std::size_t>(k)]);
            if (k) table << ';';
            table << name.str();
        }
        table << '\n';
    }
    write_text_atomic((fs::path(dir) / "subjects.csv").string(), table.str());
}

Dataset read_dataset(const std::string& subjects_csv) {
    std::ifstream in(subjects_csv);
    if (!in) throw DataError("cannot open subjects table " + subjects_csv);
    const fs::path base = fs::path(subjects_csv).parent_path();

    std::string line;
    if (!std::getline(in, line)) throw DataError(subjects_csv + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split(line, ',');
    if (header.size() < 4 || header[0] != "id" || header[1] != "outcome" ||
        header[2] != "exposure" || header.back() != "connectomes") {
        throw DataError(subjects_csv + ": header must be id,outcome,exposure,cov...,connectomes");
    }
    const int P = static_cast<int>(header.size()) - 4;

    Dataset data;
    data.P = P;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = split(line, ',');
        if (fields.size() != header.size()) {
            throw DataError(subjects_csv + ", row " + std::to_string(lineno) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        }
        SubjectRecord subj;
        subj.outcome = parse_double(fields[1], subjects_csv, lineno);
        subj.exposure = parse_double(fields[2], subjects_csv, lineno);
        subj.covariates.resize(P);
        for (int p = 0; p < P; ++p) {
            subj.covariates[p] = parse_double(fields[static_cast<std::size_t>(3 + p)],
                                              subjects_csv, lineno);
        }
        const std::string& list = fields.back();
        if (list.empty()) {
            throw DataError(subjects_csv + ", row " + std::to_string(lineno) +
                            ": no connectome files listed");
        }
        for (const std::string& rel : split(list, ';')) {
            subj.connectomes.push_back(read_matrix_csv((base / rel).string()));
        }
        data.subjects.push_back(std::move(subj));
    }
    if (data.subjects.empty()) throw DataError(subjects_csv + ": no subject rows");
    data.V = static_cast<int>(data.subjects.front().connectomes.front().rows());
    return validate_dataset(data);
}

std::vector<std::string> dataset_files(const std::string& subjects_csv) {
    std::ifstream in(subjects_csv);
    if (!in) throw DataError("cannot open subjects table " + subjects_csv);
    const fs::path base = fs::path(subjects_csv).parent_path();

    std::vector<std::string> files{subjects_csv};
    std::string line;
    if (!std::getline(in, line)) throw DataError(subjects_csv + ": empty file");
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = split(line, ',');
        if (fields.empty() || fields.back().empty()) continue;
        for (const std::string& rel : split(fields.back(), ';')) {
            files.push_back((base / rel).string());
        }
    }
    return files;
}

void check_schema(const json& j, const std::string& kind) {
    if (!j.contains("schema_version") || !j["schema_version"].is_string()) {
        throw DataError("document missing schema_version");
    }
    const std::string ver = j["schema_version"].get<std::string>();
    const std::string ours(kSchemaVersion);
    const int major = std::atoi(ver.c_str());
    const int ours_major = std::atoi(ours.c_str());
    if (major != ours_major) {
        throw DataError("schema_version " + ver + " not supported (this build reads " + ours + ")");
    }
    if (!kind.empty()) {
        if (!j.contains("kind") || j["kind"].get<std::string>() != kind) {
            throw DataError("expected document kind '" + kind + "'");
        }
    }
}

namespace {

json envelope(const std::string& kind) {
    return json{{"schema_version", kSchemaVersion}, {"kind", kind}};
}

json vec_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Eigen::VectorXd vec_from(const json& a) {
    Eigen::VectorXd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
}

json table_json(const BlockPairTable& t) {
    return json{{"Q", t.block_count()}, {"values", t.values()}};
}

BlockPairTable table_from(const json& j) {
    BlockPairTable t(j.at("Q").get<int>());
    const auto& vals = j.at("values");
    for (std::size_t s = 0; s < vals.size(); ++s) t.flat(static_cast<int>(s)) = vals[s].get<double>();
    return t;
}

json itable_json(const BlockPairIndicators& t) {
    return json{{"Q", t.block_count()}, {"values", t.values()}};
}

BlockPairIndicators itable_from(const json& j) {
    BlockPairIndicators t(j.at("Q").get<int>());
    const auto& vals = j.at("values");
    for (std::size_t s = 0; s < vals.size(); ++s) t.flat(static_cast<int>(s)) = vals[s].get<int>();
    return t;
}

}  // namespace

json hyperparams_to_json(const Hyperparams& h) {
    json j = envelope("hyperparams");
    j["p_tau"] = h.p_tau;
    j["p_gamma"] = h.p_gamma;
    j["dirichlet_conc"] = vec_json(h.dirichlet_conc);
    j["a1"] = h.a1;
    j["b1"] = h.b1;
    j["a2"] = h.a2;
    j["b2"] = h.b2;
    j["ig_noninf_shape"] = h.ig_noninf_shape;
    j["ig_noninf_scale"] = h.ig_noninf_scale;
    j["sigma2_xy"] = h.sigma2_xy;
    j["sigma2_zy"] = h.sigma2_zy;
    j["sigma2_xm"] = h.sigma2_xm;
    return j;
}

Hyperparams hyperparams_from_json(const json& j) {
    check_schema(j, "hyperparams");
    Hyperparams h;
    h.p_tau = j.value("p_tau", h.p_tau);
    h.p_gamma = j.value("p_gamma", h.p_gamma);
    if (j.contains("dirichlet_conc")) h.dirichlet_conc = vec_from(j["dirichlet_conc"]);
    h.a1 = j.value("a1", h.a1);
    h.b1 = j.value("b1", h.b1);
    h.a2 = j.value("a2", h.a2);
    h.b2 = j.value("b2", h.b2);
    h.ig_noninf_shape = j.value("ig_noninf_shape", h.ig_noninf_shape);
    h.ig_noninf_scale = j.value("ig_noninf_scale", h.ig_noninf_scale);
    h.sigma2_xy = j.value("sigma2_xy", h.sigma2_xy);
    h.sigma2_zy = j.value("sigma2_zy", h.sigma2_zy);
    h.sigma2_xm = j.value("sigma2_xm", h.sigma2_xm);
    h.validate();
    return h;
}

json chain_config_to_json(const ChainConfig& c) {
    json j = envelope("chain_config");
    j["n_iter"] = c.n_iter;
    j["burn_in"] = c.burn_in;
    j["thin"] = c.thin;
    j["n_chains"] = c.n_chains;
    j["seed"] = c.seed;
    j["Q"] = c.Q;
    j["init_mode"] = c.init_mode == ChainConfig::Init::random ? "random" : "block-average";
    j["contrast_z"] = c.contrast_z;
    j["contrast_z_star"] = c.contrast_z_star;
    return j;
}

ChainConfig chain_config_from_json(const json& j) {
    check_schema(j, "chain_config");
    ChainConfig c;
    c.n_iter = j.value("n_iter", c.n_iter);
    c.burn_in = j.value("burn_in", c.burn_in);
    c.thin = j.value("thin", c.thin);
    c.n_chains = j.value("n_chains", c.n_chains);
    c.seed = j.value("seed", c.seed);
    c.Q = j.value("Q", c.Q);
    const std::string mode = j.value("init_mode", std::string("block-average"));
    if (mode == "random") {
        c.init_mode = ChainConfig::Init::random;
    } else if (mode == "block-average") {
        c.init_mode = ChainConfig::Init::block_average;
    } else {
        throw DataError("chain config: unknown init_mode '" + mode + "'");
    }
    c.contrast_z = j.value("contrast_z", c.contrast_z);
    c.contrast_z_star = j.value("contrast_z_star", c.contrast_z_star);
    return c;
}

json sim_config_to_json(const SimConfig& c) {
    json j = envelope("sim_config");
    j["N"] = c.N;
    j["K"] = c.K;
    j["V"] = c.V;
    j["Q"] = c.Q;
    j["scenario"] = c.scenario;
    j["noise"] = c.noise == SimConfig::Noise::low ? "low" : "high";
    j["exposure"] = c.exposure == SimConfig::Exposure::continuous ? "continuous" : "binary";
    j["seed"] = c.seed;
    j["active_prob"] = c.active_prob;
    j["n_active_tau"] = c.n_active_tau;
    j["n_active_gamma"] = c.n_active_gamma;
    j["n_overlap"] = c.n_overlap;
    auto put = [&j](const char* name, const std::optional<double>& v) {
        if (v) j[name] = *v;
    };
    put("sigma1", c.sigma1);
    put("sigma2", c.sigma2);
    put("sigma_edge", c.sigma_edge);
    put("omega", c.omega);
    return j;
}

SimConfig sim_config_from_json(const json& j) {
    check_schema(j, "sim_config");
    SimConfig c;
    c.N = j.value("N", c.N);
    c.K = j.value("K", c.K);
    c.V = j.value("V", c.V);
    c.Q = j.value("Q", c.Q);
    c.scenario = j.value("scenario", c.scenario);
    const std::string noise = j.value("noise", std::string("low"));
    if (noise == "low") c.noise = SimConfig::Noise::low;
    else if (noise == "high") c.noise = SimConfig::Noise::high;
    else throw DataError("sim config: unknown noise '" + noise + "'");
    const std::string expo = j.value("exposure", std::string("continuous"));
    if (expo == "continuous") c.exposure = SimConfig::Exposure::continuous;
    else if (expo == "binary") c.exposure = SimConfig::Exposure::binary;
    else throw DataError("sim config: unknown exposure '" + expo + "'");
    c.seed = j.value("seed", c.seed);
    c.active_prob = j.value("active_prob", c.active_prob);
    c.n_active_tau = j.value("n_active_tau", c.n_active_tau);
    c.n_active_gamma = j.value("n_active_gamma", c.n_active_gamma);
    c.n_overlap = j.value("n_overlap", c.n_overlap);
    if (j.contains("sigma1")) c.sigma1 = j["sigma1"].get<double>();
    if (j.contains("sigma2")) c.sigma2 = j["sigma2"].get<double>();
    if (j.contains("sigma_edge")) c.sigma_edge = j["sigma_edge"].get<double>();
    if (j.contains("omega")) c.omega = j["omega"].get<double>();
    c.validate();
    return c;
}

json model_state_to_json(const ModelState& s) {
    json j = envelope("model_state");
    j["Q"] = s.block_count();
    j["labels"] = s.allocation.labels();
    j["pi"] = vec_json(s.pi);
    json m = json::array();
    for (const auto& t : s.M) m.push_back(table_json(t));
    j["M"] = m;
    json mm = json::array();
    for (const auto& subj : s.m_meas) {
        json per = json::array();
        for (const auto& t : subj) per.push_back(table_json(t));
        mm.push_back(std::move(per));
    }
    j["m_meas"] = mm;
    j["sigma_qr"] = table_json(s.sigma_qr);
    j["omega_qr"] = table_json(s.omega_qr);
    j["beta_x"] = vec_json(s.beta_x);
    j["beta_m"] = table_json(s.beta_m);
    j["beta_z"] = s.beta_z;
    json ax = json::array();
    for (const auto& a : s.alpha_x) ax.push_back(vec_json(a));
    j["alpha_x"] = ax;
    j["alpha_z"] = table_json(s.alpha_z);
    j["tau"] = itable_json(s.tau);
    j["gamma"] = itable_json(s.gamma);
    j["sigma2_1"] = s.sigma2_1;
    j["sigma2_2"] = s.sigma2_2;
    j["sigma2_zm"] = s.sigma2_zm;
    j["sigma2_my"] = s.sigma2_my;
    return j;
}

ModelState model_state_from_json(const json& j) {
    check_schema(j, "model_state");
    ModelState s;
    const int Q = j.at("Q").get<int>();
    s.allocation = Allocation(j.at("labels").get<std::vector<int>>(), Q);
    s.pi = vec_from(j.at("pi"));
    for (const auto& t : j.at("M")) s.M.push_back(table_from(t));
    for (const auto& subj : j.at("m_meas")) {
        std::vector<BlockPairTable> per;
        for (const auto& t : subj) per.push_back(table_from(t));
        s.m_meas.push_back(std::move(per));
    }
    s.sigma_qr = table_from(j.at("sigma_qr"));
    s.omega_qr = table_from(j.at("omega_qr"));
    s.beta_x = vec_from(j.at("beta_x"));
    s.beta_m = table_from(j.at("beta_m"));
    s.beta_z = j.at("beta_z").get<double>();
    for (const auto& a : j.at("alpha_x")) s.alpha_x.push_back(vec_from(a));
    s.alpha_z = table_from(j.at("alpha_z"));
    s.tau = itable_from(j.at("tau"));
    s.gamma = itable_from(j.at("gamma"));
    s.sigma2_1 = j.at("sigma2_1").get<double>();
    s.sigma2_2 = j.at("sigma2_2").get<double>();
    s.sigma2_zm = j.at("sigma2_zm").get<double>();
    s.sigma2_my = j.at("sigma2_my").get<double>();
    return s;
}

json ground_truth_to_json(const GroundTruth& t) {
    json j = envelope("ground_truth");
    j["config"] = sim_config_to_json(t.config);
    j["state"] = model_state_to_json(t.state);
    j["contrast_z"] = t.contrast_z;
    j["contrast_z_star"] = t.contrast_z_star;
    j["nde"] = t.nde;
    j["nie"] = t.nie;
    j["te"] = t.te;
    j["nie_pos"] = t.nie_pos;
    j["nie_neg"] = t.nie_neg;
    json pairs = json::array();
    for (const auto& [q, r] : t.active_pairs) pairs.push_back(json::array({q, r}));
    j["active_pairs"] = pairs;
    json mask = json::array();
    for (Eigen::Index r = 0; r < t.mask.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < t.mask.cols(); ++c) row.push_back(t.mask(r, c));
        mask.push_back(std::move(row));
    }
    j["mask"] = mask;
    return j;
}

GroundTruth ground_truth_from_json(const json& j) {
    check_schema(j, "ground_truth");
    GroundTruth t;
    t.config = sim_config_from_json(j.at("config"));
    t.state = model_state_from_json(j.at("state"));
    t.contrast_z = j.at("contrast_z").get<double>();
    t.contrast_z_star = j.at("contrast_z_star").get<double>();
    t.nde = j.at("nde").get<double>();
    t.nie = j.at("nie").get<double>();
    t.te = j.at("te").get<double>();
    t.nie_pos = j.at("nie_pos").get<double>();
    t.nie_neg = j.at("nie_neg").get<double>();
    for (const auto& p : j.at("active_pairs")) {
        t.active_pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
    }
    const auto& mask = j.at("mask");
    const auto rows = static_cast<Eigen::Index>(mask.size());
    if (rows > 0) {
        const auto cols = static_cast<Eigen::Index>(mask[0].size());
        t.mask.resize(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                t.mask(r, c) = mask[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]
                                   .get<int>();
            }
        }
    }
    return t;
}

namespace {

json stats_json(const EffectSummary::Stats& s) {
    return json{{"mean", s.mean}, {"median", s.median}, {"ci_low", s.ci_low},
                {"ci_high", s.ci_high}};
}

}  // namespace

json effect_summary_to_json(const EffectSummary& s) {
    json j = envelope("effects");
    j["nde"] = stats_json(s.nde);
    j["nie"] = stats_json(s.nie);
    j["te"] = stats_json(s.te);
    j["nie_pos"] = stats_json(s.nie_pos);
    j["nie_neg"] = stats_json(s.nie_neg);
    json pairs = json::array();
    for (const auto& [q, r] : s.active_pairs) pairs.push_back(json::array({q, r}));
    j["active_pairs"] = pairs;
    j["inclusion_tau"] = table_json(s.inclusion_tau);
    j["inclusion_gamma"] = table_json(s.inclusion_gamma);
    j["z"] = s.z;
    j["z_star"] = s.z_star;
    j["n_draws"] = s.n_draws;
    return j;
}

json gr_report_to_json(const GrReport& r, double warn_threshold) {
    json j = envelope("gr_report");
    j["psrf_threshold"] = warn_threshold;
    json entries = json::array();
    for (const auto& e : r.entries) {
        json je;
        je["name"] = e.name;
        je["psrf"] = e.psrf;
        je["chain_means"] = e.chain_means;
        je["chain_variances"] = e.chain_variances;
        je["n_draws"] = e.n_draws;
        je["exceeds_threshold"] = e.psrf > warn_threshold;
        entries.push_back(std::move(je));
    }
    j["entries"] = entries;
    return j;
}

void write_draws_csv(const PosteriorDraws& draws, const std::string& path) {
    const int S = draws.n_pairs();
    const int V = draws.V;
    json meta = envelope("draws");
    meta["Q"] = draws.Q;
    meta["V"] = V;
    meta["n_iter"] = draws.n_iter;
    meta["burn_in"] = draws.burn_in;
    meta["thin"] = draws.thin;
    meta["master_seed"] = draws.master_seed;
    meta["contrast_z"] = draws.contrast_z;
    meta["contrast_z_star"] = draws.contrast_z_star;
    json seeds = json::array();
    for (const auto& c : draws.chains) seeds.push_back(c.seed);
    meta["chain_seeds"] = seeds;

    std::ostringstream out;
    out << '#' << meta.dump() << '\n';
    out << "chain,iteration,beta_z,sigma2_1,sigma2_2,sigma2_zm,sigma2_my,"
        << "nde,nie,te,nie_pos,nie_neg";
    for (int s = 0; s < S; ++s) out << ",tau_" << s;
    for (int s = 0; s < S; ++s) out << ",gamma_" << s;
    for (int s = 0; s < S; ++s) out << ",alpha_z_" << s;
    for (int s = 0; s < S; ++s) out << ",beta_m_" << s;
    for (int v = 1; v <= V; ++v) out << ",label_" << v;
    out << '\n';

    for (std::size_t ci = 0; ci < draws.chains.size(); ++ci) {
        const auto& chain = draws.chains[ci];
        for (int d = 0; d < chain.n_draws(); ++d) {
            const auto di = static_cast<std::size_t>(d);
            out << (ci + 1) << ',' << chain.iteration[di];
            out << ',' << format_double(chain.beta_z[di]);
            out << ',' << format_double(chain.sigma2_1[di]);
            out << ',' << format_double(chain.sigma2_2[di]);
            out << ',' << format_double(chain.sigma2_zm[di]);
            out << ',' << format_double(chain.sigma2_my[di]);
            out << ',' << format_double(chain.nde[di]);
            out << ',' << format_double(chain.nie[di]);
            out << ',' << format_double(chain.te[di]);
            out << ',' << format_double(chain.nie_pos[di]);
            out << ',' << format_double(chain.nie_neg[di]);
            for (int s = 0; s < S; ++s) out << ',' << chain.tau[di][static_cast<std::size_t>(s)];
            for (int s = 0; s < S; ++s) out << ',' << chain.gamma[di][static_cast<std::size_t>(s)];
            for (int s = 0; s < S; ++s) out << ',' << format_double(chain.alpha_z[di][s]);
            for (int s = 0; s < S; ++s) out << ',' << format_double(chain.beta_m[di][s]);
            for (int v = 0; v < V; ++v) out << ',' << chain.labels[di][static_cast<std::size_t>(v)];
            out << '\n';
        }
    }
    write_text_atomic(path, out.str());
}

PosteriorDraws read_draws_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open draws file " + path);
    std::string line;
    if (!std::getline(in, line) || line.empty() || line[0] != '#') {
        throw DataError(path + ": missing metadata line");
    }
    const json meta = json::parse(line.substr(1));
    check_schema(meta, "draws");

    PosteriorDraws draws;
    draws.Q = meta.at("Q").get<int>();
    draws.V = meta.at("V").get<int>();
    draws.n_iter = meta.at("n_iter").get<int>();
    draws.burn_in = meta.at("burn_in").get<int>();
    draws.thin = meta.at("thin").get<int>();
    draws.master_seed = meta.at("master_seed").get<std::uint64_t>();
    draws.contrast_z = meta.at("contrast_z").get<double>();
    draws.contrast_z_star = meta.at("contrast_z_star").get<double>();
    const std::vector<std::uint64_t> seeds = meta.at("chain_seeds").get<std::vector<std::uint64_t>>();
    draws.chains.resize(seeds.size());
    for (std::size_t c = 0; c < seeds.size(); ++c) draws.chains[c].seed = seeds[c];

    const int S = draws.n_pairs();
    const int V = draws.V;
    const std::size_t expected = 12 + 4 * static_cast<std::size_t>(S) + static_cast<std::size_t>(V);

    if (!std::getline(in, line)) throw DataError(path + ": missing header");
    int lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::vector<std::string> f = split(line, ',');
        if (f.size() != expected) {
            throw DataError(path + ", row " + std::to_string(lineno) + ": expected " +
                            std::to_string(expected) + " fields, got " + std::to_string(f.size()));
        }
        const int ci = std::atoi(f[0].c_str()) - 1;
        if (ci < 0 || ci >= static_cast<int>(draws.chains.size())) {
            throw DataError(path + ", row " + std::to_string(lineno) + ": bad chain index");
        }
        auto& chain = draws.chains[static_cast<std::size_t>(ci)];
        std::size_t at = 1;
        chain.iteration.push_back(std::atoi(f[at++].c_str()));
        auto next = [&] { return parse_double(f[at++], path, lineno); };
        chain.beta_z.push_back(next());
        chain.sigma2_1.push_back(next());
        chain.sigma2_2.push_back(next());
        chain.sigma2_zm.push_back(next());
        chain.sigma2_my.push_back(next());
        chain.nde.push_back(next());
        chain.nie.push_back(next());
        chain.te.push_back(next());
        chain.nie_pos.push_back(next());
        chain.nie_neg.push_back(next());
        std::vector<int> tau(static_cast<std::size_t>(S)), gam(static_cast<std::size_t>(S));
        for (int s = 0; s < S; ++s) tau[static_cast<std::size_t>(s)] = std::atoi(f[at++].c_str());
        for (int s = 0; s < S; ++s) gam[static_cast<std::size_t>(s)] = std::atoi(f[at++].c_str());
        chain.tau.push_back(std::move(tau));
        chain.gamma.push_back(std::move(gam));
        Eigen::VectorXd az(S), bm(S);
        for (int s = 0; s < S; ++s) az[s] = next();
        for (int s = 0; s < S; ++s) bm[s] = next();
        chain.alpha_z.push_back(std::move(az));
        chain.beta_m.push_back(std::move(bm));
        std::vector<int> labels(static_cast<std::size_t>(V));
        for (int v = 0; v < V; ++v) labels[static_cast<std::size_t>(v)] = std::atoi(f[at++].c_str());
        chain.labels.push_back(std::move(labels));
    }
    return draws;
}

json manifest_to_json(const RunManifest& m) {
    json j = envelope("manifest");
    j["command"] = m.command;
    j["software_version"] = m.software_version;
    j["config"] = m.config;
    j["hyper"] = m.hyper;
    j["master_seed"] = m.master_seed;
    json digests = json::array();
    for (const auto& [path, digest] : m.input_digests) {
        digests.push_back(json{{"path", path}, {"fnv1a64", digest}});
    }
    j["input_digests"] = digests;
    j["wall_seconds"] = m.wall_seconds;
    return j;
}

RunManifest manifest_from_json(const json& j) {
    check_schema(j, "manifest");
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.software_version = j.at("software_version").get<std::string>();
    m.config = j.at("config");
    m.hyper = j.at("hyper");
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    for (const auto& d : j.at("input_digests")) {
        m.input_digests.emplace_back(d.at("path").get<std::string>(),
                                     d.at("fnv1a64").get<std::string>());
    }
    m.wall_seconds = j.at("wall_seconds").get<double>();
    return m;
}

void write_json_atomic(const std::string& path, const json& j) {
    write_text_atomic(path, j.dump(2) + "\n");
}

json read_json(const std::string& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw DataError(path + ": " + e.what());
    }
}

}  // namespace bnmm
