#include "ipwmeta/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>

#include "ipwmeta/errors.hpp"
#include "ipwmeta/estimation.hpp"
#include "ipwmeta/inference.hpp"
#include "ipwmeta/parallel.hpp"
#include "json.hpp"

namespace ipwmeta {

void GenerativeConfig::validate() const {
    if (s_total < 2) throw std::invalid_argument("scenario needs s_total >= 2");
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be non-negative");
    if (!std::isfinite(mu)) throw std::invalid_argument("mu must be finite");
    if (n_replicates < 1) throw std::invalid_argument("n_replicates must be at least 1");
    if (min_n < 2) throw std::invalid_argument("min_n must be at least 2");
    if (!(log_n_sd >= 0.0)) throw std::invalid_argument("log_n_sd must be non-negative");
    if (!(p_ctl_lo > 0.0 && p_ctl_lo <= p_ctl_hi && p_ctl_hi < 1.0)) {
        throw std::invalid_argument("control event rate range must lie inside (0, 1)");
    }
}

double treatment_rate(double p_ctl, double log_or) {
    const double e = std::exp(log_or);
    return e * p_ctl / (1.0 - p_ctl + p_ctl * e);
}

Population generate_population(const GenerativeConfig& cfg, Rng& rng) {
    cfg.validate();
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> p_ctl_dist(cfg.p_ctl_lo, cfg.p_ctl_hi);
    std::lognormal_distribution<double> size_dist(cfg.log_n_mean, cfg.log_n_sd);

    std::vector<StudyRecord> records;
    std::vector<StudyTruth> truth;
    records.reserve(cfg.s_total);
    truth.reserve(cfg.s_total);
    for (std::size_t i = 0; i < cfg.s_total; ++i) {
        StudyTruth st;
        st.mu_i = cfg.mu + cfg.tau * normal(rng);
        st.p_ctl = p_ctl_dist(rng);
        st.p_trt = treatment_rate(st.p_ctl, st.mu_i);
        const long n = std::max(cfg.min_n, std::lround(size_dist(rng)));
        do {
            st.n_trt = std::binomial_distribution<long>(n, 0.5)(rng);
            st.n_ctl = n - st.n_trt;
        } while (st.n_trt == 0 || st.n_ctl == 0);

        EffectEstimate eff{};
        for (;;) {
            TwoByTwoCounts c;
            c.total_trt = st.n_trt;
            c.total_ctl = st.n_ctl;
            c.events_trt = std::binomial_distribution<long>(st.n_trt, st.p_trt)(rng);
            c.events_ctl = std::binomial_distribution<long>(st.n_ctl, st.p_ctl)(rng);
            try {
                eff = effect_from_counts(c);
                break;
            } catch (const DataError&) {
                ++st.table_redraws;
            }
        }
        records.push_back(StudyRecord::make_published("s" + std::to_string(i + 1), eff.effect, eff.se, n));
        truth.push_back(st);
    }
    return Population{MetaDataset(std::move(records)), std::move(truth)};
}

std::optional<MetaDataset> apply_selection(const MetaDataset& population, const SelectionModel& model,
                                           Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<StudyRecord> out;
    out.reserve(population.s_total());
    std::size_t published = 0;
    for (const auto& s : population) {
        if (!s.published) throw std::invalid_argument("apply_selection expects a complete population");
        const double pi = model.prob(s.t_stat(), *s.se);
        if (unif(rng) < pi) {
            out.push_back(s);
            ++published;
        } else {
            out.push_back(StudyRecord::make_unpublished(s.id, s.n_total));
        }
    }
    if (published < 2) return std::nullopt;
    return MetaDataset(std::move(out));
}

std::string_view to_string(Estimator e) { return e == Estimator::DL ? "DL" : "IPW"; }

std::string_view to_string(CiKind c) {
    switch (c) {
        case CiKind::None: return "none";
        case CiKind::Asymptotic: return "asymptotic";
        case CiKind::Bootstrap: return "bootstrap";
    }
    throw std::logic_error("unknown interval kind");
}

CiKind ci_kind_from_string(std::string_view s) {
    if (s == "none") return CiKind::None;
    if (s == "asymptotic") return CiKind::Asymptotic;
    if (s == "bootstrap") return CiKind::Bootstrap;
    throw std::invalid_argument("interval kind must be none, asymptotic or bootstrap");
}

std::string MethodSpec::label() const {
    std::string s(to_string(estimator));
    if (estimator == Estimator::IPW) {
        if (true_beta) s += "*";
        s += "/" + std::string(to_string(family));
    }
    return s + "/" + std::string(to_string(ci));
}

const MetricsRow& ScenarioResult::row(std::string_view method, std::string_view family,
                                      std::string_view ci, std::string_view parameter) const {
    for (const auto& r : rows) {
        if (r.method == method && r.family == family && r.ci_kind == ci && r.parameter == parameter) return r;
    }
    throw std::out_of_range("no metrics row " + std::string(method) + "/" + std::string(family) + "/" +
                            std::string(ci) + "/" + std::string(parameter));
}

std::vector<MethodSpec> default_methods(const GenerativeConfig& cfg) {
    const Family f = cfg.selection.family();
    return {MethodSpec{Estimator::DL, f, CiKind::Asymptotic, false},
            MethodSpec{Estimator::IPW, f, CiKind::Asymptotic, false},
            MethodSpec{Estimator::IPW, f, CiKind::Bootstrap, false}};
}

namespace {

struct Outcome {
    bool converged = false;
    double mu = 0.0;
    double tau2 = 0.0;
    std::optional<Interval> mu_ci;
    std::optional<Interval> tau2_ci;
};

void check_methods(const GenerativeConfig& cfg, const std::vector<MethodSpec>& methods) {
    if (methods.empty()) throw std::invalid_argument("run_scenario needs at least one method");
    for (const auto& m : methods) {
        if (!m.true_beta) continue;
        if (m.estimator != Estimator::IPW || m.family != cfg.selection.family()) {
            throw std::invalid_argument("holding beta at the truth needs IPW with the generating family");
        }
        if (m.ci == CiKind::Bootstrap) {
            throw std::invalid_argument("bootstrap intervals re-solve beta; not available with true beta");
        }
    }
}

// Fits every method on one selected dataset. Point fits are shared between
// methods that differ only in the interval kind.
std::vector<Outcome> fit_methods(const MetaDataset& data, const GenerativeConfig& cfg,
                                 const std::vector<MethodSpec>& methods, const ScenarioOptions& opts,
                                 std::uint64_t boot_seed) {
    const double z = normal_quantile(1.0 - 0.5 * (1.0 - opts.level));
    std::map<std::pair<int, bool>, std::optional<PointEstimates>> fits;
    std::optional<DlEstimates> dl;

    std::vector<Outcome> out(methods.size());
    for (std::size_t k = 0; k < methods.size(); ++k) {
        const auto& m = methods[k];
        Outcome& o = out[k];
        if (m.estimator == Estimator::DL) {
            if (!dl) dl = dl_fit(data);
            o.converged = true;
            o.mu = dl->mu_hat;
            o.tau2 = dl->tau2_hat;
            if (m.ci != CiKind::None) o.mu_ci = Interval{dl->mu_hat - z * dl->se_mu, dl->mu_hat + z * dl->se_mu};
            continue;
        }

        const auto key = std::make_pair(static_cast<int>(m.family), m.true_beta);
        if (!fits.count(key)) {
            std::optional<PointEstimates> e;
            try {
                if (m.true_beta) e = estimates_at(data, cfg.selection);
                else e = fit(data, m.family, cfg.selection.favorable());
            } catch (const NumericalError&) {
            }
            fits[key] = e;
        }
        const auto& e = fits[key];
        if (!e || !e->converged) continue;
        o.converged = true;
        o.mu = e->mu_hat;
        o.tau2 = e->tau2_hat;

        if (m.ci == CiKind::Asymptotic) {
            SandwichOptions so;
            so.level = opts.level;
            const auto sw = sandwich_covariance(data, *e, std::nullopt, so);
            if (sw.has_cis()) {
                o.mu_ci = sw.ci_mu();
                o.tau2_ci = sw.ci_tau2();
            }
        } else if (m.ci == CiKind::Bootstrap) {
            BootstrapOptions bo;
            bo.b = opts.boot_b;
            bo.seed = boot_seed;
            bo.level = opts.level;
            bo.threads = 1;
            try {
                const auto b = parametric_bootstrap(data, *e, std::nullopt, bo);
                o.mu_ci = b.ci_mu;
                o.tau2_ci = b.ci_tau2;
            } catch (const NumericalError&) {
            }
        }
    }
    return out;
}

MetricsRow summarise(const GenerativeConfig& cfg, const MethodSpec& m, bool tau2_row,
                     const std::vector<std::vector<Outcome>>& all, std::size_t k) {
    MetricsRow r;
    r.scenario = cfg.id;
    r.method = std::string(to_string(m.estimator)) + (m.true_beta ? "*" : "");
    r.family = m.estimator == Estimator::DL ? "-" : std::string(to_string(m.family));
    r.ci_kind = std::string(to_string(m.ci));
    r.parameter = tau2_row ? "tau2" : "mu";
    r.truth = tau2_row ? cfg.tau * cfg.tau : cfg.mu;
    r.n_replicates = cfg.n_replicates;
    r.seed = cfg.seed;

    std::vector<double> est;
    int covered = 0, with_ci = 0, zeros = 0;
    double width = 0.0;
    for (const auto& rep : all) {
        const Outcome& o = rep[k];
        if (!o.converged) continue;
        const double v = tau2_row ? o.tau2 : o.mu;
        est.push_back(v);
        if (v == 0.0) ++zeros;
        const auto& ci = tau2_row ? o.tau2_ci : o.mu_ci;
        if (ci) {
            ++with_ci;
            if (ci->first <= r.truth && r.truth <= ci->second) ++covered;
            width += ci->second - ci->first;
        }
    }
    const double nan = std::nan("");
    r.noc = static_cast<int>(est.size());
    r.noz = tau2_row ? zeros : -1;
    if (est.empty()) {
        r.ave = r.sd = r.cp = r.loci = nan;
        return r;
    }
    double sum = 0.0;
    for (double v : est) sum += v;
    r.ave = sum / static_cast<double>(est.size());
    double ss = 0.0;
    for (double v : est) ss += (v - r.ave) * (v - r.ave);
    r.sd = est.size() > 1 ? std::sqrt(ss / static_cast<double>(est.size() - 1)) : nan;
    r.cp = with_ci ? static_cast<double>(covered) / with_ci : nan;
    r.loci = with_ci ? width / with_ci : nan;
    return r;
}

}  // namespace

ScenarioResult run_scenario(const GenerativeConfig& cfg, const std::vector<MethodSpec>& methods,
                            const ScenarioOptions& opts) {
    cfg.validate();
    check_methods(cfg, methods);
    if (opts.boot_b < 1) throw std::invalid_argument("boot_b must be at least 1");
    if (!(opts.level > 0.0 && opts.level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");

    const auto n = static_cast<std::size_t>(cfg.n_replicates);
    std::vector<std::vector<Outcome>> outcomes(n);
    std::vector<int> regenerated(n, 0), table_redraws(n, 0);
    std::vector<double> unpublished(n, 0.0);
    std::atomic<int> done{0};
    std::mutex progress_mutex;

    parallel_for(n, opts.threads, [&](std::size_t r) {
        std::optional<MetaDataset> selected;
        for (std::uint64_t attempt = 0; !selected; ++attempt) {
            if (attempt == 1000) {
                throw NumericalError("scenario " + cfg.id + ": fewer than two studies published in 1000 draws");
            }
            Rng pop_rng = substream(cfg.seed, {kStreamPopulation, r, attempt});
            const Population pop = generate_population(cfg, pop_rng);
            for (const auto& t : pop.truth) table_redraws[r] += t.table_redraws;
            Rng sel_rng = substream(cfg.seed, {kStreamSelection, r, attempt});
            selected = apply_selection(pop.data, cfg.selection, sel_rng);
            if (!selected) ++regenerated[r];
        }
        unpublished[r] = static_cast<double>(selected->n_unpublished()) / static_cast<double>(cfg.s_total);
        const std::uint64_t boot_seed = substream(cfg.seed, {kStreamBootstrap, r})();
        outcomes[r] = fit_methods(*selected, cfg, methods, opts, boot_seed);
        const int d = ++done;
        if (opts.progress) {
            std::lock_guard lock(progress_mutex);
            opts.progress(d, cfg.n_replicates);
        }
    });

    ScenarioResult res;
    res.config = cfg;
    res.methods = methods;
    for (std::size_t r = 0; r < n; ++r) {
        res.n_regenerated += regenerated[r];
        res.n_table_redraws += table_redraws[r];
        res.mean_unpublished_fraction += unpublished[r] / static_cast<double>(n);
    }
    for (std::size_t k = 0; k < methods.size(); ++k) {
        res.rows.push_back(summarise(cfg, methods[k], false, outcomes, k));
        res.rows.push_back(summarise(cfg, methods[k], true, outcomes, k));
    }
    return res;
}

namespace {

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

MethodSpec method_from_json(const nlohmann::json& j, const GenerativeConfig& cfg) {
    MethodSpec m;
    const auto est = get_or<std::string>(j, "estimator", "ipw");
    if (est == "dl" || est == "DL") m.estimator = Estimator::DL;
    else if (est == "ipw" || est == "IPW") m.estimator = Estimator::IPW;
    else throw std::invalid_argument("method estimator must be 'dl' or 'ipw'");
    m.family = j.contains("family") ? family_from_string(j.at("family").get<std::string>())
                                    : cfg.selection.family();
    m.ci = ci_kind_from_string(get_or<std::string>(j, "ci", "asymptotic"));
    m.true_beta = get_or<bool>(j, "true_beta", false);
    return m;
}

}  // namespace

ScenarioFile parse_scenario(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("scenario JSON: ") + e.what());
    }
    try {
        ScenarioFile f;
        GenerativeConfig& c = f.config;
        c.id = get_or<std::string>(j, "id", c.id);
        c.mu = get_or<double>(j, "mu", c.mu);
        c.tau = get_or<double>(j, "tau", c.tau);
        c.s_total = get_or<std::size_t>(j, "s_total", c.s_total);
        c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
        c.n_replicates = get_or<int>(j, "n_replicates", c.n_replicates);
        c.log_n_mean = get_or<double>(j, "log_n_mean", c.log_n_mean);
        c.log_n_sd = get_or<double>(j, "log_n_sd", c.log_n_sd);
        c.min_n = get_or<long>(j, "min_n", c.min_n);
        c.p_ctl_lo = get_or<double>(j, "p_ctl_lo", c.p_ctl_lo);
        c.p_ctl_hi = get_or<double>(j, "p_ctl_hi", c.p_ctl_hi);
        if (j.contains("selection")) {
            const auto& s = j.at("selection");
            const Family fam = family_from_string(s.at("family").get<std::string>());
            const Favorable fav = favorable_from_string(get_or<std::string>(s, "favorable", "lower"));
            c.selection = SelectionModel(fam, s.at("beta").get<std::vector<double>>(), fav);
        }
        c.validate();

        f.options.boot_b = get_or<int>(j, "boot_b", f.options.boot_b);
        f.options.level = get_or<double>(j, "level", f.options.level);
        f.options.threads = get_or<int>(j, "threads", f.options.threads);
        if (j.contains("methods")) {
            for (const auto& m : j.at("methods")) f.methods.push_back(method_from_json(m, c));
        } else {
            f.methods = default_methods(c);
        }
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("scenario JSON: ") + e.what());
    }
}

ScenarioFile load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot read scenario file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

}  // namespace

std::string metrics_csv_header() {
    return "scenario,method,family,ci_kind,parameter,ave,sd,cp,loci,noc,noz,n_replicates,seed\n";
}

std::string metrics_csv(const std::vector<MetricsRow>& rows, bool header) {
    std::ostringstream out;
    if (header) out << metrics_csv_header();
    for (const auto& r : rows) {
        out << r.scenario << ',' << r.method << ',' << r.family << ',' << r.ci_kind << ',' << r.parameter
            << ',' << fmt(r.ave) << ',' << fmt(r.sd) << ',' << fmt(r.cp) << ',' << fmt(r.loci) << ','
            << r.noc << ',' << (r.noz < 0 ? std::string("NA") : std::to_string(r.noz)) << ','
            << r.n_replicates << ',' << r.seed << '\n';
    }
    return out.str();
}

}  // namespace ipwmeta
