#include "ipwmeta/cli.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ipwmeta/dataset.hpp"
#include "ipwmeta/errors.hpp"
#include "ipwmeta/estimation.hpp"
#include "ipwmeta/inference.hpp"
#include "ipwmeta/simulation.hpp"
#include "json.hpp"

namespace ipwmeta::cli {

namespace {

using nlohmann::json;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string csv_num(double v) {
    if (!std::isfinite(v)) return "NA";
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string fixed(double v, int digits = 3) {
    if (!std::isfinite(v)) return "-";
    std::ostringstream s;
    if (std::fabs(v) >= 1e5) s << std::scientific << std::setprecision(2) << v;
    else s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

std::vector<double> parse_reals(const std::string& text, char sep) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep)) {
        double v = 0.0;
        const auto* b = item.data();
        const auto* e = item.data() + item.size();
        auto [p, ec] = std::from_chars(b, e, v);
        if (ec != std::errc() || p != e) throw UsageError("not a number: '" + item + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<Family> families_from_flag(const std::string& flag) {
    if (flag == "all") return {kAllFamilies.begin(), kAllFamilies.end()};
    try {
        return {family_from_string(flag)};
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

const std::vector<std::string> kFamilyChoices{"logistic1", "mlogistic1", "probit2", "logistic2", "all"};
const std::vector<std::string> kFormatChoices{"table", "json", "csv"};

// ---------------------------------------------------------------- analyze

struct AnalyzeFlags {
    std::string data;
    std::string family = "all";
    std::string ci = "asymptotic";
    std::string favorable = "lower";
    std::string format = "table";
    int boot_b = 1000;
    std::uint64_t seed = 1;
    double level = 0.95;
    int threads = 0;
    bool exp = false;
    bool baseline_dl = false;
};

struct ReportRow {
    std::string method;
    std::string family;
    std::string ci_kind;
    double estimate = NAN;  // reported scale
    double ci_lo = NAN;
    double ci_hi = NAN;
    double p_value = NAN;
    double tau2 = NAN;
    double tau2_lo = NAN;
    double tau2_hi = NAN;
    double i2 = NAN;
    std::vector<double> beta;
    std::vector<Interval> beta_ci;
    bool converged = true;
    std::string note;
};

struct SolverDiag {
    std::string family;
    SolverReport report;
    std::vector<double> beta;
};

void add_note(ReportRow& r, const std::string& msg) {
    if (msg.empty()) return;
    if (!r.note.empty()) r.note += "; ";
    r.note += msg;
}

void write_analysis(const AnalyzeFlags& f, const MetaDataset& data, const std::vector<ReportRow>& rows,
                    const std::vector<SolverDiag>& diags, std::ostream& out) {
    if (f.format == "json") {
        json j;
        j["schema"] = 1;
        j["command"] = "analyze";
        j["dataset"] = {{"path", f.data},
                        {"n_published", data.n_published()},
                        {"n_unpublished", data.n_unpublished()},
                        {"s_total", data.s_total()}};
        j["seed"] = f.seed;
        j["level"] = f.level;
        j["scale"] = f.exp ? "odds_ratio" : "log";
        j["favorable"] = f.favorable;
        json jr = json::array();
        for (const auto& r : rows) {
            json b = json::array(), bci = json::array();
            for (double v : r.beta) b.push_back(num(v));
            for (const auto& c : r.beta_ci) bci.push_back({num(c.first), num(c.second)});
            jr.push_back({{"method", r.method},
                          {"family", r.family},
                          {"ci_kind", r.ci_kind},
                          {"estimate", num(r.estimate)},
                          {"ci", {num(r.ci_lo), num(r.ci_hi)}},
                          {"p_value", num(r.p_value)},
                          {"tau2", num(r.tau2)},
                          {"tau2_ci", {num(r.tau2_lo), num(r.tau2_hi)}},
                          {"i2", num(r.i2)},
                          {"beta", b},
                          {"beta_ci", bci},
                          {"converged", r.converged},
                          {"note", r.note}});
        }
        j["rows"] = jr;
        json jd = json::array();
        for (const auto& d : diags) {
            json b = json::array();
            for (double v : d.beta) b.push_back(num(v));
            jd.push_back({{"family", d.family},
                          {"beta", b},
                          {"iterations", d.report.iterations},
                          {"residual", num(d.report.residual)},
                          {"tolerance", num(d.report.tolerance)},
                          {"converged", d.report.converged},
                          {"on_bound", d.report.on_bound},
                          {"message", d.report.message}});
        }
        j["solver"] = jd;
        out << j.dump(2) << '\n';
        return;
    }

    if (f.format == "csv") {
        out << "method,family,ci_kind,scale,estimate,ci_lo,ci_hi,p_value,tau2,tau2_ci_lo,tau2_ci_hi,i2,beta,"
               "converged,note\n";
        for (const auto& r : rows) {
            std::string beta;
            for (std::size_t k = 0; k < r.beta.size(); ++k) beta += (k ? ";" : "") + csv_num(r.beta[k]);
            std::string note = r.note;
            for (char& c : note)
                if (c == ',' || c == '"') c = ' ';
            out << r.method << ',' << r.family << ',' << r.ci_kind << ',' << (f.exp ? "odds_ratio" : "log")
                << ',' << csv_num(r.estimate) << ',' << csv_num(r.ci_lo) << ',' << csv_num(r.ci_hi) << ','
                << csv_num(r.p_value) << ',' << csv_num(r.tau2) << ',' << csv_num(r.tau2_lo) << ','
                << csv_num(r.tau2_hi) << ',' << csv_num(r.i2) << ',' << beta << ','
                << (r.converged ? 1 : 0) << ',' << note << '\n';
        }
        return;
    }

    out << "Studies: " << data.n_published() << " published, " << data.n_unpublished()
        << " unpublished (S = " << data.s_total() << ")\n";
    out << "Scale: " << (f.exp ? "odds ratio" : "log") << ", level " << f.level << ", seed " << f.seed << "\n\n";
    // Pad each cell but always keep a separating space, so wide values
    // (huge interval ends) cannot run into the next column.
    auto cell = [&out](const std::string& s, std::size_t w) {
        out << s << std::string(s.size() < w ? w - s.size() : 1, ' ');
    };
    cell("Method", 7);
    cell("Selection", 11);
    cell("CI", 12);
    cell("Estimate [CI]", 26);
    cell("P", 8);
    cell("tau2 [CI]", 24);
    cell("I2", 7);
    out << "beta\n";
    for (const auto& r : rows) {
        std::string beta;
        for (std::size_t k = 0; k < r.beta.size(); ++k) beta += (k ? ", " : "") + fixed(r.beta[k]);
        cell(r.method, 7);
        cell(r.family, 11);
        cell(r.ci_kind, 12);
        cell(fixed(r.estimate) + " [" + fixed(r.ci_lo) + ", " + fixed(r.ci_hi) + "]", 26);
        cell(fixed(r.p_value), 8);
        cell(fixed(r.tau2) + " [" + fixed(r.tau2_lo) + ", " + fixed(r.tau2_hi) + "]", 24);
        cell(fixed(r.i2), 7);
        out << beta << (r.converged ? "" : "  (not converged)") << '\n';
        if (!r.note.empty()) out << "    note: " << r.note << '\n';
    }
}

int cmd_analyze(const AnalyzeFlags& f, std::ostream& out, std::ostream& err) {
    if (!(f.level > 0.0 && f.level < 1.0)) throw UsageError("--level must lie strictly between 0 and 1");
    if (f.boot_b < 1) throw UsageError("--boot-b must be at least 1");
    const Favorable fav = favorable_from_string(f.favorable);
    const auto families = families_from_flag(f.family);
    const bool asym = f.ci == "asymptotic" || f.ci == "both";
    const bool boot = f.ci == "bootstrap" || f.ci == "both";

    const MetaDataset data = load_dataset(f.data);
    auto scale = [&](double v) { return f.exp ? std::exp(v) : v; };
    const double z = normal_quantile(1.0 - 0.5 * (1.0 - f.level));

    std::vector<ReportRow> rows;
    std::vector<SolverDiag> diags;
    if (f.baseline_dl) {
        const DlEstimates dl = dl_fit(data);
        ReportRow r;
        r.method = "DL";
        r.family = "-";
        r.ci_kind = "asymptotic";
        r.estimate = scale(dl.mu_hat);
        r.ci_lo = scale(dl.mu_hat - z * dl.se_mu);
        r.ci_hi = scale(dl.mu_hat + z * dl.se_mu);
        r.p_value = 2.0 * normal_cdf(-std::fabs(dl.mu_hat / dl.se_mu));
        r.tau2 = dl.tau2_hat;
        r.i2 = dl.i2;
        rows.push_back(r);
    }

    int failures = 0;
    for (Family fam : families) {
        const std::string name(to_string(fam));
        PointEstimates est;
        try {
            est = fit(data, fam, fav);
        } catch (const NumericalError& e) {
            if (families.size() == 1) throw;
            ++failures;
            ReportRow r;
            r.method = "IPW";
            r.family = name;
            r.ci_kind = "-";
            r.converged = false;
            r.note = e.what();
            rows.push_back(r);
            continue;
        }
        diags.push_back({name, est.solver_report, est.beta_hat});

        auto base = [&](const char* kind) {
            ReportRow r;
            r.method = "IPW";
            r.family = name;
            r.ci_kind = kind;
            r.estimate = scale(est.mu_hat);
            r.tau2 = est.tau2_hat;
            r.i2 = est.i2_ipw;
            r.beta = est.beta_hat;
            r.converged = est.converged;
            if (!est.converged) add_note(r, est.solver_report.message);
            return r;
        };
        if (asym) {
            ReportRow r = base("asymptotic");
            SandwichOptions so;
            so.level = f.level;
            const SandwichResult sw = sandwich_covariance(data, est, std::nullopt, so);
            if (sw.has_cis()) {
                r.ci_lo = scale(sw.ci_mu().first);
                r.ci_hi = scale(sw.ci_mu().second);
                r.p_value = sw.wald_p_mu;
                r.tau2_lo = sw.ci_tau2().first;
                r.tau2_hi = sw.ci_tau2().second;
                for (std::size_t k = 0; k < est.beta_hat.size(); ++k) r.beta_ci.push_back(sw.ci_beta(k));
            }
            add_note(r, sw.message);
            rows.push_back(r);
        }
        if (boot) {
            ReportRow r = base("bootstrap");
            BootstrapOptions bo;
            bo.b = f.boot_b;
            bo.seed = f.seed;
            bo.level = f.level;
            bo.threads = f.threads;
            try {
                const BootstrapResult b = parametric_bootstrap(data, est, std::nullopt, bo);
                r.ci_lo = scale(b.ci_mu.first);
                r.ci_hi = scale(b.ci_mu.second);
                r.tau2_lo = b.ci_tau2.first;
                r.tau2_hi = b.ci_tau2.second;
                r.beta_ci = b.ci_beta;
                if (b.n_failed > 0) {
                    add_note(r, std::to_string(b.n_failed) + " of " + std::to_string(b.b_replicates) +
                                    " bootstrap replicates failed");
                }
                if (b.too_many_failures) {
                    err << "warning: " << name << " bootstrap: more than 10% of replicates failed\n";
                }
            } catch (const NumericalError& e) {
                add_note(r, e.what());
            }
            rows.push_back(r);
        }
    }
    if (failures > 0 && failures == static_cast<int>(families.size()) && !f.baseline_dl) {
        throw NumericalError("no selection family could be fitted");
    }
    write_analysis(f, data, rows, diags, out);
    return kExitOk;
}

// -------------------------------------------------------- selection-curve

struct CurveFlags {
    std::string data;
    std::string family = "probit2";
    std::string beta;
    std::string t_range = "-3:3:0.01";
    std::string favorable = "lower";
    std::string format = "csv";
    double sigma = 1.0;
    double level = 0.95;
};

int cmd_selection_curve(const CurveFlags& f, std::ostream& out) {
    if (f.family == "all") throw UsageError("selection-curve needs a single --family");
    const Family fam = families_from_flag(f.family).front();
    const Favorable fav = favorable_from_string(f.favorable);
    const auto range = parse_reals(f.t_range, ':');
    if (range.size() != 3 || !(range[2] > 0.0) || range[1] < range[0]) {
        throw UsageError("--t-range must be lo:hi:step with lo <= hi and step > 0");
    }
    if (!(f.sigma > 0.0)) throw UsageError("--sigma must be positive");

    std::vector<double> beta;
    std::vector<Interval> beta_ci;
    std::optional<SolverReport> report;
    if (!f.beta.empty()) {
        beta = parse_reals(f.beta, ',');
    } else {
        if (f.data.empty()) throw UsageError("selection-curve needs --data or --beta");
        const MetaDataset data = load_dataset(f.data);
        const PointEstimates est = fit(data, fam, fav);
        beta = est.beta_hat;
        report = est.solver_report;
        SandwichOptions so;
        so.level = f.level;
        const SandwichResult sw = sandwich_covariance(data, est, std::nullopt, so);
        if (sw.has_cis())
            for (std::size_t k = 0; k < beta.size(); ++k) beta_ci.push_back(sw.ci_beta(k));
    }
    SelectionModel model(fam, beta, fav);

    const auto n = static_cast<std::size_t>(std::floor((range[1] - range[0]) / range[2] + 1e-9)) + 1;
    std::vector<std::pair<double, double>> curve;
    curve.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = range[0] + static_cast<double>(i) * range[2];
        curve.emplace_back(t, model.prob(t, f.sigma));
    }

    if (f.format == "json") {
        json j;
        j["schema"] = 1;
        j["command"] = "selection-curve";
        j["family"] = f.family;
        j["favorable"] = f.favorable;
        j["beta"] = beta;
        json ci = json::array();
        for (const auto& c : beta_ci) ci.push_back({num(c.first), num(c.second)});
        j["beta_ci"] = ci;
        if (report) j["converged"] = report->converged;
        json pts = json::array();
        for (const auto& [t, p] : curve) pts.push_back({{"t", t}, {"pi", p}});
        j["curve"] = pts;
        out << j.dump(2) << '\n';
        return kExitOk;
    }
    out << "# family=" << f.family << " favorable=" << f.favorable;
    for (std::size_t k = 0; k < beta.size(); ++k) {
        out << " beta" << k << '=' << csv_num(beta[k]);
        if (k < beta_ci.size())
            out << " [" << csv_num(beta_ci[k].first) << ", " << csv_num(beta_ci[k].second) << ']';
    }
    if (report) out << " converged=" << (report->converged ? 1 : 0);
    out << "\nt,pi\n";
    for (const auto& [t, p] : curve) out << csv_num(t) << ',' << csv_num(p) << '\n';
    return kExitOk;
}

// --------------------------------------------------------------- simulate

struct SimulateFlags {
    std::string config;
    std::string out;
    std::string format = "csv";
    std::string id = "scenario";
    std::string family = "logistic1";
    std::string beta = "2";
    std::string favorable = "lower";
    std::string methods;
    double mu = -0.5;
    double tau = 0.15;
    std::size_t s_total = 50;
    int replicates = 200;
    std::uint64_t seed = 1;
    int boot_b = 1000;
    double level = 0.95;
    int threads = 0;
    bool full = false;
    bool quiet = false;
};

std::vector<MethodSpec> methods_from_flag(const std::string& text, const GenerativeConfig& cfg) {
    // Comma-separated entries: dl | ipw:<family>:<ci> | ipw*:<family>:<ci>
    std::vector<MethodSpec> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::vector<std::string> parts;
        std::stringstream is(item);
        std::string p;
        while (std::getline(is, p, ':')) parts.push_back(p);
        if (parts.empty()) continue;
        MethodSpec m;
        m.family = cfg.selection.family();
        if (parts[0] == "dl") {
            m.estimator = Estimator::DL;
        } else if (parts[0] == "ipw" || parts[0] == "ipw*") {
            m.estimator = Estimator::IPW;
            m.true_beta = parts[0] == "ipw*";
            if (parts.size() > 1) m.family = family_from_string(parts[1]);
            if (parts.size() > 2) m.ci = ci_kind_from_string(parts[2]);
        } else {
            throw UsageError("unknown method '" + item + "'");
        }
        out.push_back(m);
    }
    return out;
}

int cmd_simulate(const SimulateFlags& f, const CLI::App& sub, std::ostream& out, std::ostream& err) {
    ScenarioFile sf;
    if (!f.config.empty()) {
        sf = load_scenario(f.config);
    } else {
        GenerativeConfig& c = sf.config;
        c.id = f.id;
        c.mu = f.mu;
        c.tau = f.tau;
        c.s_total = f.s_total;
        c.selection = SelectionModel(family_from_string(f.family), parse_reals(f.beta, ','),
                                     favorable_from_string(f.favorable));
        sf.methods = default_methods(c);
    }
    // Explicit flags override the configuration file.
    GenerativeConfig& c = sf.config;
    if (sub.count("--replicates")) c.n_replicates = f.replicates;
    else if (f.config.empty()) c.n_replicates = f.replicates;
    if (f.full) c.n_replicates = 1000;
    if (sub.count("--seed") || f.config.empty()) c.seed = f.seed;
    if (sub.count("--boot-b") || f.config.empty()) sf.options.boot_b = f.boot_b;
    if (sub.count("--level") || f.config.empty()) sf.options.level = f.level;
    if (sub.count("--threads") || f.config.empty()) sf.options.threads = f.threads;
    if (!f.methods.empty()) sf.methods = methods_from_flag(f.methods, c);
    c.validate();

    if (!f.quiet) {
        const int step = std::max(1, c.n_replicates / 10);
        sf.options.progress = [&err, step](int done, int total) {
            if (done % step == 0 || done == total) err << "replicate " << done << '/' << total << '\n';
        };
    }
    const ScenarioResult res = run_scenario(c, sf.methods, sf.options);

    std::ostringstream body;
    if (f.format == "json") {
        json j;
        j["schema"] = 1;
        j["command"] = "simulate";
        j["scenario"] = c.id;
        j["seed"] = c.seed;
        j["n_replicates"] = c.n_replicates;
        j["n_regenerated"] = res.n_regenerated;
        j["n_table_redraws"] = res.n_table_redraws;
        j["mean_unpublished_fraction"] = res.mean_unpublished_fraction;
        json rows = json::array();
        for (const auto& r : res.rows) {
            rows.push_back({{"scenario", r.scenario},
                            {"method", r.method},
                            {"family", r.family},
                            {"ci_kind", r.ci_kind},
                            {"parameter", r.parameter},
                            {"ave", num(r.ave)},
                            {"sd", num(r.sd)},
                            {"cp", num(r.cp)},
                            {"loci", num(r.loci)},
                            {"noc", r.noc},
                            {"noz", r.noz < 0 ? json(nullptr) : json(r.noz)},
                            {"n_replicates", r.n_replicates},
                            {"seed", r.seed}});
        }
        j["rows"] = rows;
        body << j.dump(2) << '\n';
    } else {
        body << metrics_csv(res.rows);
    }

    if (f.out.empty()) {
        out << body.str();
    } else {
        std::ofstream file(f.out);
        if (!file || !(file << body.str())) throw UsageError("cannot write output file " + f.out);
    }
    return kExitOk;
}

void emit_error(std::ostream& err, const char* kind, const std::string& msg) {
    err << json{{"schema", 1}, {"error", {{"kind", kind}, {"message", msg}}}}.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Publication-bias-adjusted random-effects meta-analysis using trial registries", "ipwmeta"};
    app.require_subcommand(1);

    AnalyzeFlags af;
    auto* analyze = app.add_subcommand("analyze", "Fit DL and IPW estimators to a dataset");
    analyze->add_option("--data", af.data, "Dataset CSV (summary or raw-count schema)")->required();
    analyze->add_option("--family", af.family, "Selection family or 'all'")
        ->check(CLI::IsMember(kFamilyChoices))
        ->capture_default_str();
    analyze->add_option("--ci", af.ci, "Interval kind")
        ->check(CLI::IsMember({"asymptotic", "bootstrap", "both"}))
        ->capture_default_str();
    analyze->add_option("--boot-b", af.boot_b, "Bootstrap replicates")->capture_default_str();
    analyze->add_option("--seed", af.seed, "Random seed")->capture_default_str();
    analyze->add_option("--level", af.level, "Confidence level")->capture_default_str();
    analyze->add_option("--threads", af.threads, "Worker threads (0 = auto)")->capture_default_str();
    analyze->add_option("--favorable", af.favorable, "Favourable effect direction")
        ->check(CLI::IsMember({"lower", "higher"}))
        ->capture_default_str();
    analyze->add_option("--format", af.format, "Output format")
        ->check(CLI::IsMember(kFormatChoices))
        ->capture_default_str();
    analyze->add_flag("--exp", af.exp, "Report exp(mu) and its interval (odds-ratio scale)");
    analyze->add_flag("--baseline-dl", af.baseline_dl, "Include the unadjusted DerSimonian-Laird row");

    CurveFlags cf;
    auto* curve = app.add_subcommand("selection-curve", "Tabulate a fitted or given selection function");
    curve->add_option("--data", cf.data, "Dataset CSV; beta is estimated from it");
    curve->add_option("--family", cf.family, "Selection family")
        ->check(CLI::IsMember({"logistic1", "mlogistic1", "probit2", "logistic2"}))
        ->capture_default_str();
    curve->add_option("--beta", cf.beta, "Comma-separated selection parameters (skips fitting)");
    curve->add_option("--t-range", cf.t_range, "Grid lo:hi:step")->capture_default_str();
    curve->add_option("--sigma", cf.sigma, "Standard error used by mlogistic1")->capture_default_str();
    curve->add_option("--level", cf.level, "Confidence level for beta")->capture_default_str();
    curve->add_option("--favorable", cf.favorable, "Favourable effect direction")
        ->check(CLI::IsMember({"lower", "higher"}))
        ->capture_default_str();
    curve->add_option("--format", cf.format, "Output format")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();

    SimulateFlags sf;
    auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo scenario and write its metrics");
    sim->add_option("--config", sf.config, "Scenario JSON file");
    sim->add_option("--out", sf.out, "Output file (default stdout)");
    sim->add_option("--format", sf.format, "Output format")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();
    sim->add_option("--id", sf.id, "Scenario id")->capture_default_str();
    sim->add_option("--family", sf.family, "Generating selection family")
        ->check(CLI::IsMember({"logistic1", "mlogistic1", "probit2", "logistic2"}))
        ->capture_default_str();
    sim->add_option("--beta", sf.beta, "Generating selection parameters")->capture_default_str();
    sim->add_option("--favorable", sf.favorable, "Favourable effect direction")
        ->check(CLI::IsMember({"lower", "higher"}))
        ->capture_default_str();
    sim->add_option("--mu", sf.mu, "True mean effect")->capture_default_str();
    sim->add_option("--tau", sf.tau, "Between-study standard deviation")->capture_default_str();
    sim->add_option("--s-total", sf.s_total, "Registered studies per meta-analysis")->capture_default_str();
    sim->add_option("--replicates", sf.replicates, "Monte Carlo replicates")->capture_default_str();
    sim->add_option("--seed", sf.seed, "Random seed")->capture_default_str();
    sim->add_option("--boot-b", sf.boot_b, "Bootstrap replicates per fit")->capture_default_str();
    sim->add_option("--level", sf.level, "Confidence level")->capture_default_str();
    sim->add_option("--threads", sf.threads, "Worker threads (0 = auto)")->capture_default_str();
    sim->add_option("--methods", sf.methods, "e.g. dl,ipw:logistic1:asymptotic,ipw:logistic1:bootstrap");
    sim->add_flag("--full", sf.full, "Use 1000 replicates");
    sim->add_flag("--quiet", sf.quiet, "No progress output");

    std::vector<const char*> argv{"ipwmeta"};
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        try {
            app.parse(static_cast<int>(argv.size()), argv.data());
        } catch (const CLI::CallForHelp&) {
            out << app.help();
            return kExitOk;
        } catch (const CLI::ParseError& e) {
            if (e.get_exit_code() == 0) {
                out << app.help();
                return kExitOk;
            }
            throw UsageError(e.what());
        }
        if (*analyze) return cmd_analyze(af, out, err);
        if (*curve) return cmd_selection_curve(cf, out);
        if (*sim) return cmd_simulate(sf, *sim, out, err);
        throw UsageError("no subcommand given");
    } catch (const UsageError& e) {
        emit_error(err, "usage", e.what());
        return kExitUsage;
    } catch (const DataError& e) {
        emit_error(err, "data", e.what());
        return kExitData;
    } catch (const NumericalError& e) {
        emit_error(err, "numerical", e.what());
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        emit_error(err, "usage", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        emit_error(err, "internal", e.what());
        return kExitNumerical;
    }
}

}  // namespace ipwmeta::cli
