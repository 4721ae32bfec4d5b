// Acceptance suite: one PASS/FAIL line per criterion, details indented below.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ipwmeta/dataset.hpp"
#include "ipwmeta/errors.hpp"
#include "ipwmeta/estimation.hpp"
#include "ipwmeta/inference.hpp"
#include "ipwmeta/simulation.hpp"

using namespace ipwmeta;

namespace {

using Clock = std::chrono::steady_clock;

std::string data_dir() { return IPWMETA_DATA_DIR; }

MetaDataset clopidogrel() { return load_dataset(data_dir() + "/clopidogrel.csv"); }

struct Check {
    std::ostringstream log;
    bool ok = true;

    void expect(bool cond, const std::string& what) {
        log << "    " << (cond ? "ok   " : "MISS ") << what << '\n';
        ok = ok && cond;
    }
    void info(const std::string& what) { log << "    info " << what << '\n'; }
};

std::string f3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

std::string f4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, std::fabs(v) < 1e4 ? "%.4f" : "%.4g", v);
    return buf;
}

bool near(double got, double want, double tol) { return std::fabs(got - want) <= tol; }

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

std::string near_text(const std::string& name, double got, double want, double tol) {
    return name + " = " + f4(got) + " (target " + f3(want) + " +/- " + f3(tol) + ")";
}

void expect_near(Check& c, const std::string& name, double got, double want, double tol) {
    c.expect(near(got, want, tol), near_text(name, got, want, tol));
}

Interval or_interval(const SandwichResult& s) {
    const auto ci = s.ci_mu();
    return {std::exp(ci.first), std::exp(ci.second)};
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ------------------------------------------------------------------ goldens

void clopidogrel_dl(Check& c) {
    const auto t0 = Clock::now();
    const auto d = clopidogrel();
    const auto dl = dl_fit(d);
    const double z = normal_quantile(0.975);
    const double secs = seconds_since(t0);
    expect_near(c, "OR", std::exp(dl.mu_hat), 0.622, 0.01);
    expect_near(c, "CI lower", std::exp(dl.mu_hat - z * dl.se_mu), 0.441, 0.01);
    expect_near(c, "CI upper", std::exp(dl.mu_hat + z * dl.se_mu), 0.877, 0.01);
    c.expect(dl.tau2_hat == 0.0, "tau2 = " + f4(dl.tau2_hat) + " (target 0)");
    c.expect(secs < 1.0, "runtime " + f3(secs) + " s (< 1 s)");
}

void clopidogrel_logistic1(Check& c) {
    const auto t0 = Clock::now();
    const auto d = clopidogrel();
    const auto e = fit(d, Family::Logistic1);
    const auto s = sandwich_covariance(d, e);
    const double secs = seconds_since(t0);
    c.expect(e.converged, "solver converged");
    expect_near(c, "beta", e.beta_hat[0], 1.018, 0.01);
    expect_near(c, "OR", std::exp(e.mu_hat), 0.666, 0.01);
    c.expect(s.has_cis(), "asymptotic interval available");
    if (s.has_cis()) {
        const auto ci = or_interval(s);
        expect_near(c, "CI lower", ci.first, 0.452, 0.02);
        expect_near(c, "CI upper", ci.second, 0.982, 0.02);
    }
    c.expect(secs < 1.0, "runtime " + f3(secs) + " s (< 1 s)");
}

struct Table6Row {
    Family family;
    double or_hat, lo, hi;
    double tol;
    std::vector<double> published_beta;  // published beta, for the informational line
};

void table6_row(Check& c, const MetaDataset& d, const Table6Row& row) {
    const std::string fam(to_string(row.family));
    const auto e = fit(d, row.family);
    std::string beta;
    for (double b : e.beta_hat) beta += (beta.empty() ? "" : ", ") + f4(b);
    c.info(fam + ": beta_hat = (" + beta + "), solver " + (e.converged ? "converged" : "not converged") +
           (e.solver_report.message.empty() ? "" : " (" + e.solver_report.message + ")") +
           ", residual " + f4(e.solver_report.residual));
    c.expect(e.converged, fam + " solver converged");
    if (row.family == Family::Probit2) expect_near(c, fam + " beta1", e.beta_hat[1], -0.575, 0.02);
    expect_near(c, fam + " OR", std::exp(e.mu_hat), row.or_hat, row.tol);
    const auto s = sandwich_covariance(d, e);
    c.expect(s.has_cis(), fam + " asymptotic interval available");
    if (s.has_cis()) {
        const auto ci = or_interval(s);
        expect_near(c, fam + " CI lower", ci.first, row.lo, row.tol);
        expect_near(c, fam + " CI upper", ci.second, row.hi, row.tol);
    }
    if (!row.published_beta.empty()) {
        // Same pipeline with beta held at the published values.
        const auto at = estimates_at(d, SelectionModel(row.family, row.published_beta));
        const auto sa = sandwich_covariance(d, at);
        std::string line = fam + " at the published beta: OR " + f4(std::exp(at.mu_hat));
        if (sa.has_cis()) {
            const auto ci = or_interval(sa);
            line += " [" + f4(ci.first) + ", " + f4(ci.second) + "]";
        }
        const auto u = u_beta(d, at.model(), EstimatingEquationSpec::for_family(row.family));
        line += ", |U| = " + f4(std::fabs(u[0]) + std::fabs(u[1]));
        c.info(line);
    }
}

void clopidogrel_other_rows(Check& c) {
    const auto d = clopidogrel();
    table6_row(c, d, {Family::Probit2, 0.662, 0.474, 0.923, 0.02, {0.735, -0.575}});
    table6_row(c, d, {Family::ModLogistic1, 0.648, 0.425, 0.987, 0.01, {}});
    table6_row(c, d, {Family::Logistic2, 0.625, 0.416, 0.939, 0.01, {1.518, -0.064}});
}

void clopidogrel_bootstrap(Check& c) {
    const auto d = clopidogrel();
    const auto e = fit(d, Family::Logistic1);
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        BootstrapOptions opts;
        opts.b = 1000;
        opts.seed = seed;
        opts.threads = 0;
        const auto r = parametric_bootstrap(d, e, std::nullopt, opts);
        const double lo = std::exp(r.ci_mu.first), hi = std::exp(r.ci_mu.second);
        const std::string s = "seed " + std::to_string(seed) + " (" + std::to_string(r.n_failed) + " failed) ";
        expect_near(c, s + "CI lower", lo, 0.471, 0.03);
        expect_near(c, s + "CI upper", hi, 0.953, 0.03);
    }
}

// --------------------------------------------------------------- simulation

GenerativeConfig scenario(const std::string& id, const SelectionModel& sel, double tau, int reps,
                          std::uint64_t seed) {
    GenerativeConfig cfg;
    cfg.id = id;
    cfg.mu = -0.5;
    cfg.tau = tau;
    cfg.s_total = 50;
    cfg.selection = sel;
    cfg.n_replicates = reps;
    cfg.seed = seed;
    return cfg;
}

void sdataset1(Check& c) {
    const auto cfg = scenario("sDataset1", SelectionModel(Family::Logistic1, {2.0}), 0.15, 200, 20210);
    ScenarioOptions opts;
    opts.boot_b = 1000;
    const auto r = run_scenario(cfg, default_methods(cfg), opts);
    const auto& dl = r.row("DL", "-", "asymptotic", "mu");
    const auto& ipw = r.row("IPW", "logistic1", "bootstrap", "mu");
    c.info("DL AVE " + f4(dl.ave) + ", IPW AVE " + f4(ipw.ave) + " over " + std::to_string(ipw.noc) +
           " converged replicates, unpublished fraction " + f3(r.mean_unpublished_fraction));
    c.expect(std::fabs(ipw.ave + 0.5) < std::fabs(dl.ave + 0.5), "|bias IPW| < |bias DL|");
    c.expect(ipw.ave >= -0.52 && ipw.ave <= -0.48, "AVE(IPW) = " + f4(ipw.ave) + " in [-0.52, -0.48]");
    c.expect(ipw.cp >= 0.88 && ipw.cp <= 0.98, "bootstrap CP = " + f3(ipw.cp) + " in [0.88, 0.98]");
    c.info("asymptotic CP " + f3(r.row("IPW", "logistic1", "asymptotic", "mu").cp));
}

void sdataset3(Check& c) {
    const SelectionModel sel(Family::Probit2, {-0.3, -1.0});
    const std::vector<MethodSpec> methods{{Estimator::DL, Family::Probit2, CiKind::None, false},
                                          {Estimator::IPW, Family::Probit2, CiKind::None, false}};
    const auto low = run_scenario(scenario("sDataset3", sel, 0.05, 200, 20230), methods);
    const auto& mu = low.row("IPW", "probit2", "none", "mu");
    c.info("tau = 0.05: IPW AVE over " + std::to_string(mu.noc) + " of 200 converged replicates; DL AVE " +
           f4(low.row("DL", "-", "none", "mu").ave));
    c.expect(mu.ave >= -0.52 && mu.ave <= -0.48, "AVE(IPW) = " + f4(mu.ave) + " in [-0.52, -0.48]");

    const auto mid = run_scenario(scenario("sDataset3", sel, 0.15, 200, 20231), methods);
    const auto& zd = mid.row("DL", "-", "none", "tau2");
    const auto& zi = mid.row("IPW", "probit2", "none", "tau2");
    c.expect(zi.noz < zd.noz, "tau = 0.15: NOZ IPW " + std::to_string(zi.noz) + " (of " + std::to_string(zi.noc) +
                                   ") < NOZ DL " + std::to_string(zd.noz) + " (of " + std::to_string(zd.noc) + ")");
}

// ----------------------------------------------------------------- properties

void properties(Check& c) {
    std::mt19937_64 rng(2718);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> unif(0.1, 0.8);

    // Reduction without unpublished studies.
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<StudyRecord> rows;
        const int n = 3 + rep % 20;
        for (int i = 0; i < n; ++i) {
            const double s = unif(rng);
            rows.push_back(StudyRecord::make_published("r" + std::to_string(i), -0.2 + std::sqrt(0.04 + s * s) * z(rng),
                                                       s, 20 + 10 * i));
        }
        const MetaDataset d(std::move(rows));
        const auto dl = dl_fit(d);
        for (Family f : kAllFamilies) {
            const auto e = arity(f) == 1 ? fit(d, f) : estimates_at(d, SelectionModel(f, {40.0, 0.0}));
            worst = std::max({worst, std::fabs(e.mu_hat - dl.mu_hat), std::fabs(e.tau2_hat - dl.tau2_hat)});
        }
    }
    c.expect(worst <= 1e-12, "M = 0 reduction: max |IPW - DL| = " + sci(worst));

    // Residual certificate.
    const auto d = clopidogrel();
    bool cert = true;
    for (Family f : {Family::Logistic1, Family::ModLogistic1}) {
        const auto s = solve_beta(d, f);
        const double u = std::fabs(u_beta(d, SelectionModel(f, s.beta), EstimatingEquationSpec{})[0]);
        cert = cert && s.report.converged && u <= s.report.tolerance;
    }
    c.expect(cert, "u_beta(beta_hat) within the solver tolerance");

    // Analytic derivative against central differences.
    double fd_worst = 0.0;
    for (Favorable fav : {Favorable::Lower, Favorable::Higher})
        for (Family f : kAllFamilies)
            for (double b : {-1.0, 0.4, 2.0})
                for (double t = -3.0; t <= 3.0; t += 0.25)
                    for (double sigma : {0.3, 1.0}) {
                        const std::vector<double> beta =
                            arity(f) == 1 ? std::vector<double>{b} : std::vector<double>{0.3 * b, -0.7};
                        const SelectionModel m(f, beta, fav);
                        const auto a = m.dprob_dbeta(t, sigma);
                        for (std::size_t k = 0; k < beta.size(); ++k) {
                            auto up = beta, dn = beta;
                            up[k] += 1e-5;
                            dn[k] -= 1e-5;
                            const double num = (m.with_beta(up).prob(t, sigma) - m.with_beta(dn).prob(t, sigma)) / 2e-5;
                            fd_worst = std::max(fd_worst, std::fabs(a[k] - num) / std::max(std::fabs(a[k]), 1e-3));
                        }
                    }
    c.expect(fd_worst <= 1e-6, "dprob_dbeta vs finite differences: max relative error " + sci(fd_worst));

    // Sandwich symmetric PSD.
    bool psd = true;
    for (Family f : {Family::Logistic1, Family::ModLogistic1}) {
        const auto s = sandwich_covariance(d, fit(d, f));
        const Eigen::MatrixXd& v = s.covariance;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(v);
        psd = psd && !s.singular_jacobian && (v - v.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * v.cwiseAbs().maxCoeff() &&
              eig.eigenvalues().minCoeff() >= -1e-10 * eig.eigenvalues().maxCoeff();
    }
    c.expect(psd, "sandwich covariance symmetric positive semi-definite");

    // Bootstrap determinism, including across thread counts.
    const auto e = fit(d, Family::Logistic1);
    BootstrapOptions bo;
    bo.b = 200;
    bo.seed = 99;
    bo.keep_draws = true;
    const auto b1 = parametric_bootstrap(d, e, std::nullopt, bo);
    const auto b2 = parametric_bootstrap(d, e, std::nullopt, bo);
    bo.threads = 4;
    const auto b3 = parametric_bootstrap(d, e, std::nullopt, bo);
    c.expect(b1 == b2 && b1 == b3, "bootstrap identical under a fixed seed (1 and 4 threads)");

    // Monte Carlo unbiasedness of the estimating equation at the true beta.
    bool unbiased = true;
    std::string detail;
    for (const auto& truth : {SelectionModel(Family::Logistic1, {2.0}), SelectionModel(Family::Probit2, {-0.3, -1.0})}) {
        GenerativeConfig cfg;
        cfg.selection = truth;
        const auto spec = EstimatingEquationSpec::for_family(truth.family());
        std::vector<std::vector<double>> draws(spec.arity());
        for (int r = 0; r < 2000; ++r) {
            Rng g = substream(1234, {static_cast<std::uint64_t>(r)});
            const auto pop = generate_population(cfg, g);
            const auto sel = apply_selection(pop.data, truth, g);
            if (!sel) continue;
            const auto u = u_beta(*sel, truth, spec);
            for (std::size_t k = 0; k < u.size(); ++k) draws[k].push_back(u[k]);
        }
        for (const auto& v : draws) {
            double m = 0.0, ss = 0.0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            for (double x : v) ss += (x - m) * (x - m);
            const double mcse = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
            unbiased = unbiased && std::fabs(m) <= 3 * mcse;
            detail += " " + std::string(to_string(truth.family())) + ":" + f3(m / mcse);
        }
    }
    c.expect(unbiased, "E U(beta*) = 0 within 3 MCSE (mean/MCSE:" + detail + ")");
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
        {"Golden: clopidogrel DerSimonian-Laird", clopidogrel_dl},
        {"Golden: clopidogrel IPW logistic1", clopidogrel_logistic1},
        {"Golden: clopidogrel IPW probit2, mlogistic1 and logistic2 rows", clopidogrel_other_rows},
        {"Stochastic golden: clopidogrel logistic1 bootstrap interval over 5 seeds", clopidogrel_bootstrap},
        {"Simulation trend: sDataset1, 200 replicates", sdataset1},
        {"Simulation trend: sDataset3, 200 replicates", sdataset3},
        {"Property suite", properties},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Check c;
        const auto t0 = Clock::now();
        try {
            fn(c);
        } catch (const std::exception& e) {
            c.expect(false, std::string("exception: ") + e.what());
        }
        std::cout << (c.ok ? "PASS" : "FAIL") << "  " << name << "  (" << f3(seconds_since(t0)) << " s)\n"
                  << c.log.str() << std::flush;
        failed += c.ok ? 0 : 1;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
    return failed == 0 ? 0 : 1;
}
