#include "ipwmeta/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ipwmeta/errors.hpp"
#include "ipwmeta/parallel.hpp"
#include "ipwmeta/rng.hpp"

namespace ipwmeta {

Eigen::VectorXd ThetaVector::stacked() const {
    Eigen::VectorXd v(dim());
    for (std::size_t k = 0; k < beta.size(); ++k) v[k] = beta[k];
    v[beta.size()] = tau2;
    v[beta.size() + 1] = mu;
    return v;
}

ThetaVector ThetaVector::from_stacked(const Eigen::VectorXd& v, std::size_t beta_dim) {
    ThetaVector t;
    t.beta.assign(v.data(), v.data() + beta_dim);
    t.tau2 = v[beta_dim];
    t.mu = v[beta_dim + 1];
    return t;
}

namespace {

// Scores of either the full system (beta, tau2, mu) or, when `reduced`, the
// system (beta, mu) with tau2 fixed at zero.
Eigen::MatrixXd scores_impl(const MetaDataset& data, Family family, Favorable favorable,
                            const EstimatingEquationSpec& spec, const std::vector<double>& beta,
                            double tau2, double mu, bool reduced) {
    const SelectionModel model(family, beta, favorable);
    const std::size_t p = beta.size();
    const std::size_t dim = p + (reduced ? 1 : 2);
    const std::size_t imu = dim - 1;
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.s_total()),
                                              static_cast<Eigen::Index>(dim));
    Eigen::Index row = 0;
    for (const auto& s : data) {
        const auto g = g_of_n(spec, s.n_total);
        if (!s.published) {
            for (std::size_t k = 0; k < p; ++k) u(row, k) = g[k];
            if (!reduced) u(row, p) = -1.0;
            ++row;
            continue;
        }
        const double se = *s.se;
        const double var = se * se;
        const double y = *s.effect;
        const double pi = model.prob(s.t_stat(), se);
        for (std::size_t k = 0; k < p; ++k) u(row, k) = (1.0 - 1.0 / pi) * g[k];
        if (!reduced) u(row, p) = ((y - mu) * (y - mu) - tau2) / (var * pi) - 1.0;
        u(row, imu) = (y - mu) / ((var + tau2) * pi);
        ++row;
    }
    return u;
}

Eigen::MatrixXd fd_jacobian(const MetaDataset& data, Family family, Favorable favorable,
                            const EstimatingEquationSpec& spec, const Eigen::VectorXd& theta,
                            bool reduced) {
    const std::size_t p = arity(family);
    const auto dim = theta.size();
    auto mean_score = [&](const Eigen::VectorXd& th) -> Eigen::VectorXd {
        std::vector<double> beta(th.data(), th.data() + p);
        const double tau2 = reduced ? 0.0 : th[static_cast<Eigen::Index>(p)];
        const double mu = th[dim - 1];
        return scores_impl(data, family, favorable, spec, beta, tau2, mu, reduced).colwise().mean();
    };
    Eigen::MatrixXd j(dim, dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
        const double h = 1e-6 * (1.0 + std::fabs(theta[k]));
        Eigen::VectorXd up = theta, dn = theta;
        up[k] += h;
        dn[k] -= h;
        j.col(k) = (mean_score(up) - mean_score(dn)) / (2.0 * h);
    }
    return j;
}

// |det J| relative to the product of its column norms (Hadamard bound).
bool is_singular(const Eigen::MatrixXd& j) {
    double scale = 1.0;
    for (Eigen::Index k = 0; k < j.cols(); ++k) scale *= j.col(k).norm();
    if (!(scale > 0.0) || !std::isfinite(scale)) return true;
    return !(std::fabs(j.determinant()) / scale >= 1e-12);
}

// J^-1 M J^-T / S into `cov`; false when J is singular.
bool sandwich(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& j, Eigen::MatrixXd& cov) {
    if (is_singular(j)) return false;
    const double s = static_cast<double>(scores.rows());
    const Eigen::MatrixXd meat = scores.transpose() * scores / s;
    const Eigen::MatrixXd jinv = j.fullPivLu().inverse();
    const Eigen::MatrixXd c = jinv * meat * jinv.transpose() / s;
    cov = 0.5 * (c + c.transpose());
    return true;
}

double two_sided_p(double est, double se) {
    if (!(se > 0.0)) return est == 0.0 ? 1.0 : 0.0;
    return 2.0 * normal_cdf(-std::fabs(est / se));
}

void check_level(double level) {
    if (!(level > 0.0 && level < 1.0)) {
        throw std::invalid_argument("confidence level must lie strictly between 0 and 1");
    }
}

}  // namespace

Eigen::MatrixXd stacked_scores(const MetaDataset& data, Family family, Favorable favorable,
                               const EstimatingEquationSpec& spec, const ThetaVector& theta) {
    return scores_impl(data, family, favorable, spec, theta.beta, theta.tau2, theta.mu, false);
}

Eigen::MatrixXd score_jacobian(const MetaDataset& data, Family family, Favorable favorable,
                               const EstimatingEquationSpec& spec, const ThetaVector& theta) {
    return fd_jacobian(data, family, favorable, spec, theta.stacked(), false);
}

Eigen::MatrixXd beta_score_jacobian(const MetaDataset& data, const SelectionModel& model,
                                    const EstimatingEquationSpec& spec) {
    const auto p = static_cast<Eigen::Index>(model.arity());
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(p, p);
    for (const auto& s : data) {
        if (!s.published) continue;
        const double pi = model.prob(s.t_stat(), *s.se);
        const auto dpi = model.dprob_dbeta(s.t_stat(), *s.se);
        const auto g = g_of_n(spec, s.n_total);
        // d/dbeta (1 - 1/pi) = dpi / pi^2
        for (Eigen::Index r = 0; r < p; ++r)
            for (Eigen::Index c = 0; c < p; ++c) j(r, c) += g[r] * dpi[c] / (pi * pi);
    }
    return j / static_cast<double>(data.s_total());
}

SandwichResult sandwich_covariance(const MetaDataset& data, const PointEstimates& est,
                                   std::optional<EstimatingEquationSpec> spec_opt,
                                   const SandwichOptions& opts) {
    check_level(opts.level);
    const auto spec = spec_opt.value_or(EstimatingEquationSpec::for_family(est.family));
    const std::size_t p = est.beta_hat.size();

    SandwichResult res;
    res.theta = ThetaVector{est.beta_hat, est.tau2_hat, est.mu_hat};
    res.level = opts.level;
    res.tau_at_boundary = est.tau2_hat == 0.0;
    res.from_unconverged_fit = !est.converged;

    const Eigen::VectorXd theta = res.theta.stacked();
    const auto dim = theta.size();
    const Eigen::MatrixXd full_scores =
        scores_impl(data, est.family, est.favorable, spec, est.beta_hat, est.tau2_hat, est.mu_hat, false);
    Eigen::MatrixXd full_cov;
    const bool full_ok =
        sandwich(full_scores, fd_jacobian(data, est.family, est.favorable, spec, theta, false), full_cov);

    Eigen::MatrixXd cov = full_cov;
    bool ok = full_ok;
    if (res.tau_at_boundary && opts.reduce_at_boundary) {
        Eigen::VectorXd theta_r(static_cast<Eigen::Index>(p + 1));
        for (std::size_t k = 0; k < p; ++k) theta_r[static_cast<Eigen::Index>(k)] = est.beta_hat[k];
        theta_r[static_cast<Eigen::Index>(p)] = est.mu_hat;
        Eigen::MatrixXd reduced;
        const bool reduced_ok = sandwich(
            scores_impl(data, est.family, est.favorable, spec, est.beta_hat, 0.0, est.mu_hat, true),
            fd_jacobian(data, est.family, est.favorable, spec, theta_r, true), reduced);
        ok = full_ok && reduced_ok;
        if (ok) {
            // (beta, mu) block from the reduced system, tau2 variance from the full one.
            Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dim, dim);
            std::vector<Eigen::Index> map(p + 1);
            std::iota(map.begin(), map.end(), 0);
            map[p] = dim - 1;
            for (std::size_t r = 0; r <= p; ++r)
                for (std::size_t s = 0; s <= p; ++s)
                    c(map[r], map[s]) = reduced(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s));
            const auto it = static_cast<Eigen::Index>(p);
            c(it, it) = full_cov(it, it);
            cov = c;
            res.boundary_reduced = true;
        }
    }

    if (!ok) {
        res.singular_jacobian = true;
        res.covariance = Eigen::MatrixXd::Constant(dim, dim, std::nan(""));
        res.standard_errors.assign(static_cast<std::size_t>(dim), std::nan(""));
        res.wald_p_mu = res.wald_p_beta1 = std::nan("");
        res.message = "score Jacobian is numerically singular; no Wald intervals";
        return res;
    }

    res.covariance = cov;
    const double z = normal_quantile(1.0 - 0.5 * (1.0 - opts.level));
    for (Eigen::Index k = 0; k < dim; ++k) {
        const double se = std::sqrt(std::max(0.0, res.covariance(k, k)));
        res.standard_errors.push_back(se);
        res.wald_cis.emplace_back(theta[k] - z * se, theta[k] + z * se);
    }
    auto& tau_ci = res.wald_cis[res.index_tau2()];
    tau_ci.first = std::max(0.0, tau_ci.first);

    res.wald_p_mu = two_sided_p(est.mu_hat, res.se_mu());
    res.wald_p_beta1 = two_sided_p(est.beta_hat.back(), res.standard_errors[p - 1]);
    if (res.tau_at_boundary) res.message = "tau2 estimate truncated at zero; intervals are approximate";
    if (res.from_unconverged_fit) {
        if (!res.message.empty()) res.message += "; ";
        res.message += "selection parameters did not converge";
    }
    return res;
}

double quantile_sorted(const std::vector<double>& v, double p) {
    if (v.empty()) throw std::invalid_argument("quantile of an empty sample");
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Interval standardized_interval(double point, const std::vector<double>& draws, double level,
                               double* sigma_out) {
    check_level(level);
    const double n = static_cast<double>(draws.size());
    const double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / n;
    double ss = 0.0;
    for (double d : draws) ss += (d - mean) * (d - mean);
    const double sigma = std::sqrt(ss / n);
    if (sigma_out) *sigma_out = sigma;
    if (!(sigma > 0.0)) return {point, point};

    std::vector<double> z;
    z.reserve(draws.size());
    for (double d : draws) z.push_back((d - mean) / sigma);
    std::sort(z.begin(), z.end());
    const double a = 0.5 * (1.0 - level);
    return {point + quantile_sorted(z, a) * sigma, point + quantile_sorted(z, 1.0 - a) * sigma};
}

BootstrapResult parametric_bootstrap(const MetaDataset& data, const PointEstimates& est,
                                     std::optional<EstimatingEquationSpec> spec,
                                     const BootstrapOptions& opts) {
    check_level(opts.level);
    if (opts.b < 1) throw std::invalid_argument("bootstrap needs at least one replicate");

    struct Draw {
        bool ok = false;
        std::vector<double> beta;
        double tau2 = 0.0;
        double mu = 0.0;
    };
    std::vector<Draw> draws(static_cast<std::size_t>(opts.b));

    std::vector<double> sd;
    for (const auto& s : data)
        if (s.published) sd.push_back(std::sqrt(*s.se * *s.se + est.tau2_hat));

    parallel_for(draws.size(), opts.threads, [&](std::size_t b) {
        Rng rng = substream(opts.seed, {kStreamBootstrap, b});
        std::normal_distribution<double> normal;
        std::vector<double> y(sd.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = est.mu_hat + sd[i] * normal(rng);
        const MetaDataset sim = data.with_published_effects(y);
        try {
            const BetaSolution sol = solve_beta(sim, est.family, est.favorable, spec);
            if (!sol.report.converged) return;
            const auto e = estimates_at(sim, SelectionModel(est.family, sol.beta, est.favorable));
            if (!std::isfinite(e.mu_hat) || !std::isfinite(e.tau2_hat)) return;
            draws[b] = Draw{true, sol.beta, e.tau2_hat, e.mu_hat};
        } catch (const NumericalError&) {
        }
    });

    BootstrapResult res;
    res.b_replicates = opts.b;
    res.seed = opts.seed;
    res.level = opts.level;
    std::vector<double> mu, tau2;
    std::vector<std::vector<double>> beta(est.beta_hat.size());
    for (const auto& d : draws) {
        if (!d.ok) {
            ++res.n_failed;
            continue;
        }
        mu.push_back(d.mu);
        tau2.push_back(d.tau2);
        for (std::size_t k = 0; k < beta.size(); ++k) beta[k].push_back(d.beta[k]);
    }
    res.too_many_failures = res.n_failed > opts.b / 10;
    if (mu.empty()) throw NumericalError("every bootstrap replicate failed to solve for beta");

    res.ci_mu = standardized_interval(est.mu_hat, mu, opts.level, &res.sigma_boot_mu);
    res.ci_tau2 = standardized_interval(est.tau2_hat, tau2, opts.level, &res.sigma_boot_tau2);
    res.ci_tau2.first = std::max(0.0, res.ci_tau2.first);
    for (std::size_t k = 0; k < beta.size(); ++k)
        res.ci_beta.push_back(standardized_interval(est.beta_hat[k], beta[k], opts.level));
    if (opts.keep_draws) {
        res.mu_draws = std::move(mu);
        res.tau2_draws = std::move(tau2);
    }
    return res;
}

}  // namespace ipwmeta
