#include "ipwmeta/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ipwmeta/errors.hpp"
#include "ipwmeta/nelder_mead.hpp"

namespace ipwmeta {

namespace {

// Published rows with their inverse-probability weights D_i / pi_i.
struct WeightedRows {
    std::vector<double> y;
    std::vector<double> var;
    std::vector<double> w;
};

WeightedRows published_rows(const MetaDataset& data, const SelectionModel* model) {
    WeightedRows rows;
    rows.y.reserve(data.n_published());
    rows.var.reserve(data.n_published());
    rows.w.reserve(data.n_published());
    for (const auto& s : data) {
        if (!s.published) continue;
        const double se = *s.se;
        rows.y.push_back(*s.effect);
        rows.var.push_back(se * se);
        rows.w.push_back(model ? 1.0 / model->prob(s.t_stat(), se) : 1.0);
    }
    return rows;
}

// Weighted DerSimonian-Laird moments; `count` is the number of studies the
// Q statistic is referred to (N classically, S under IPW).
Tau2Estimate dl_moments(const WeightedRows& r, std::size_t count) {
    double w1 = 0.0, w2 = 0.0, wy = 0.0;
    for (std::size_t i = 0; i < r.y.size(); ++i) {
        const double a = r.w[i] / r.var[i];
        w1 += a;
        w2 += a / r.var[i];
        wy += a * r.y[i];
    }
    Tau2Estimate est;
    est.mu_fixed = wy / w1;
    for (std::size_t i = 0; i < r.y.size(); ++i) {
        const double d = r.y[i] - est.mu_fixed;
        est.q_ipw += r.w[i] / r.var[i] * d * d;
    }
    const double denom = w1 - w2 / w1;
    if (!(denom > 0.0)) {
        est.degenerate = true;
        est.tau2 = 0.0;
        return est;
    }
    est.tau2 = std::max(0.0, (est.q_ipw - (static_cast<double>(count) - 1.0)) / denom);
    return est;
}

double random_effects_mean(const WeightedRows& r, double tau2, double* weight_sum = nullptr) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < r.y.size(); ++i) {
        const double a = r.w[i] / (r.var[i] + tau2);
        num += a * r.y[i];
        den += a;
    }
    if (weight_sum) *weight_sum = den;
    return num / den;
}

void check_arity(Family family, const EstimatingEquationSpec& spec) {
    if (arity(family) != spec.arity()) {
        throw std::invalid_argument("estimating equation arity does not match family " +
                                    std::string(to_string(family)));
    }
}

double sum_sqrt_n(const MetaDataset& data) {
    double s = 0.0;
    for (const auto& r : data) s += std::sqrt(static_cast<double>(r.n_total));
    return s;
}

}  // namespace

std::vector<double> g_of_n(const EstimatingEquationSpec& spec, long n) {
    const double root = std::sqrt(static_cast<double>(n));
    if (spec.kind == EquationKind::SqrtN) return {root};
    return {1.0, root};
}

DlEstimates dl_fit(const MetaDataset& data) {
    const WeightedRows rows = published_rows(data, nullptr);
    const std::size_t n = rows.y.size();
    if (n < 2) throw DataError("dl_fit needs at least two published studies");
    const Tau2Estimate m = dl_moments(rows, n);

    DlEstimates out;
    out.n_studies = n;
    out.mu_fixed = m.mu_fixed;
    out.q = m.q_ipw;
    out.tau2_hat = m.tau2;
    double wsum = 0.0;
    out.mu_hat = random_effects_mean(rows, out.tau2_hat, &wsum);
    out.se_mu = std::sqrt(1.0 / wsum);
    out.i2 = out.q > 0.0 ? std::max(0.0, (out.q - (static_cast<double>(n) - 1.0)) / out.q) : 0.0;
    return out;
}

std::vector<double> u_beta(const MetaDataset& data, const SelectionModel& model,
                           const EstimatingEquationSpec& spec) {
    if (model.arity() != spec.arity()) {
        throw std::invalid_argument("u_beta: model and equation arity differ");
    }
    double u0 = 0.0, u1 = 0.0;
    for (const auto& s : data) {
        const double r = s.published ? 1.0 - 1.0 / model.prob(s.t_stat(), *s.se) : 1.0;
        const double root = std::sqrt(static_cast<double>(s.n_total));
        if (spec.kind == EquationKind::SqrtN) {
            u0 += r * root;
        } else {
            u0 += r;
            u1 += r * root;
        }
    }
    if (spec.kind == EquationKind::SqrtN) return {u0};
    return {u0, u1};
}

BetaSolution solve_beta_1param(const MetaDataset& data, Family family, Favorable favorable,
                               std::optional<EstimatingEquationSpec> spec_opt) {
    if (arity(family) != 1) throw std::invalid_argument("solve_beta_1param: family arity is not 1");
    const auto spec = spec_opt.value_or(EstimatingEquationSpec::for_family(family));
    check_arity(family, spec);

    int evals = 0;
    auto U = [&](double b) {
        ++evals;
        return u_beta(data, SelectionModel(family, {b}, favorable), spec)[0];
    };

    // U is non-increasing in beta.
    double lo = -50.0, hi = 50.0;
    double ulo = U(lo), uhi = U(hi);
    for (int k = 0; k < 8 && !(ulo >= 0.0 && uhi <= 0.0); ++k) {
        lo *= 2.0;
        hi *= 2.0;
        ulo = U(lo);
        uhi = U(hi);
    }
    if (!(ulo >= 0.0 && uhi <= 0.0)) {
        throw NumericalError("no root of the selection equation in [" + std::to_string(lo) + ", " +
                             std::to_string(hi) + "] (U has constant sign)");
    }

    // Keep U(lo) >= 0 > U(hi); on a flat zero stretch this lands on its upper end.
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        const double um = U(mid);
        if (um >= 0.0) {
            lo = mid;
            ulo = um;
        } else {
            hi = mid;
            uhi = um;
        }
    }
    double x = std::fabs(ulo) <= std::fabs(uhi) ? lo : hi;
    double ux = std::fabs(ulo) <= std::fabs(uhi) ? ulo : uhi;

    for (int k = 0; k < 5 && ux != 0.0; ++k) {
        const SelectionModel m(family, {x}, favorable);
        double du = 0.0;
        for (const auto& s : data) {
            if (!s.published) continue;
            const double pi = m.prob(s.t_stat(), *s.se);
            du += m.dprob_dbeta(s.t_stat(), *s.se)[0] / (pi * pi) *
                  std::sqrt(static_cast<double>(s.n_total));
        }
        if (du == 0.0) break;
        const double xn = x - ux / du;
        if (!std::isfinite(xn)) break;
        const double un = U(xn);
        if (!(std::fabs(un) < std::fabs(ux))) break;
        x = xn;
        ux = un;
    }

    BetaSolution sol;
    sol.beta = {x};
    sol.report.iterations = evals;
    sol.report.residual = std::fabs(ux);
    sol.report.tolerance = 1e-8 * sum_sqrt_n(data);
    sol.report.converged = sol.report.residual <= sol.report.tolerance;
    if (!sol.report.converged) sol.report.message = "residual above tolerance";
    return sol;
}

BetaSolution solve_beta_2param(const MetaDataset& data, Family family, Favorable favorable,
                               std::optional<EstimatingEquationSpec> spec_opt) {
    if (arity(family) != 2) throw std::invalid_argument("solve_beta_2param: family arity is not 2");
    const auto spec = spec_opt.value_or(EstimatingEquationSpec::for_family(family));
    check_arity(family, spec);

    auto objective = [&](const std::vector<double>& b) {
        const auto u = u_beta(data, SelectionModel(family, b, favorable), spec);
        return std::fabs(u[0]) + std::fabs(u[1]);
    };

    NelderMeadOptions opts;
    opts.lower = {-kBetaBox, -kBetaBox};
    opts.upper = {kBetaBox, kBetaBox};

    NelderMeadResult best;
    best.value = std::numeric_limits<double>::infinity();
    int evals = 0;
    for (double b0 : {-1.0, 0.0, 1.0}) {
        for (double b1 : {-1.0, 0.0, 1.0}) {
            auto r = nelder_mead(objective, {b0, b1}, opts);
            evals += r.evaluations;
            if (r.value < best.value) best = std::move(r);
        }
    }

    BetaSolution sol;
    sol.beta = best.x;
    sol.report.iterations = evals;
    sol.report.residual = best.value;
    sol.report.tolerance =
        1e-6 * (static_cast<double>(data.s_total()) + sum_sqrt_n(data));
    sol.report.on_bound = best.on_bound;
    sol.report.converged = best.value <= sol.report.tolerance && !best.on_bound;
    if (best.on_bound) sol.report.message = "solution on the parameter box boundary";
    else if (!sol.report.converged) sol.report.message = "objective above tolerance at all starts";
    return sol;
}

BetaSolution solve_beta(const MetaDataset& data, Family family, Favorable favorable,
                        std::optional<EstimatingEquationSpec> spec) {
    return arity(family) == 1 ? solve_beta_1param(data, family, favorable, spec)
                              : solve_beta_2param(data, family, favorable, spec);
}

double ipw_fixed_mean(const MetaDataset& data, const SelectionModel& model) {
    return random_effects_mean(published_rows(data, &model), 0.0);
}

Tau2Estimate ipw_tau2(const MetaDataset& data, const SelectionModel& model) {
    return dl_moments(published_rows(data, &model), data.s_total());
}

double ipw_mean(const MetaDataset& data, const SelectionModel& model, double tau2) {
    if (!(tau2 >= 0.0)) throw std::invalid_argument("ipw_mean: tau2 must be non-negative");
    return random_effects_mean(published_rows(data, &model), tau2);
}

Heterogeneity heterogeneity(double q, std::size_t s) {
    if (s < 2) throw std::invalid_argument("heterogeneity: need at least two studies");
    Heterogeneity h;
    h.h2 = q / (static_cast<double>(s) - 1.0);
    h.i2 = h.h2 > 1.0 ? (h.h2 - 1.0) / h.h2 : 0.0;
    return h;
}

PointEstimates estimates_at(const MetaDataset& data, const SelectionModel& model) {
    const WeightedRows rows = published_rows(data, &model);
    const Tau2Estimate t = dl_moments(rows, data.s_total());

    PointEstimates est;
    est.family = model.family();
    est.favorable = model.favorable();
    est.beta_hat = model.beta();
    est.tau2_hat = t.tau2;
    est.tau2_degenerate = t.degenerate;
    est.q_ipw = t.q_ipw;
    est.mu_fixed_hat = t.mu_fixed;
    est.mu_hat = random_effects_mean(rows, t.tau2);
    const auto h = heterogeneity(t.q_ipw, data.s_total());
    est.h2_ipw = h.h2;
    est.i2_ipw = h.i2;
    est.converged = true;
    return est;
}

PointEstimates fit(const MetaDataset& data, Family family, Favorable favorable,
                   std::optional<EstimatingEquationSpec> spec) {
    BetaSolution sol = solve_beta(data, family, favorable, spec);
    PointEstimates est = estimates_at(data, SelectionModel(family, sol.beta, favorable));
    est.converged = sol.report.converged;
    est.solver_report = std::move(sol.report);
    return est;
}

}  // namespace ipwmeta
