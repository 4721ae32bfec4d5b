#include "ipwmeta/selection.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ipwmeta {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double expit(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::size_t arity(Family f) {
    switch (f) {
        case Family::Logistic1:
        case Family::ModLogistic1:
            return 1;
        case Family::Probit2:
        case Family::Logistic2:
            return 2;
    }
    throw std::logic_error("unknown family");
}

std::string_view to_string(Family f) {
    switch (f) {
        case Family::Logistic1: return "logistic1";
        case Family::ModLogistic1: return "mlogistic1";
        case Family::Probit2: return "probit2";
        case Family::Logistic2: return "logistic2";
    }
    throw std::logic_error("unknown family");
}

Family family_from_string(std::string_view name) {
    for (Family f : kAllFamilies) {
        if (to_string(f) == name) return f;
    }
    throw std::invalid_argument("unknown selection family '" + std::string(name) +
                                "' (expected logistic1, mlogistic1, probit2 or logistic2)");
}

std::string_view to_string(Favorable f) { return f == Favorable::Lower ? "lower" : "higher"; }

Favorable favorable_from_string(std::string_view name) {
    if (name == "lower") return Favorable::Lower;
    if (name == "higher") return Favorable::Higher;
    throw std::invalid_argument("favourable direction must be 'lower' or 'higher'");
}

SelectionModel::SelectionModel(Family family, std::vector<double> beta, Favorable favorable)
    : family_(family), beta_(std::move(beta)), favorable_(favorable) {
    if (beta_.size() != ipwmeta::arity(family_)) {
        throw std::invalid_argument("selection model " + std::string(to_string(family_)) +
                                    " needs " + std::to_string(ipwmeta::arity(family_)) +
                                    " parameter(s)");
    }
    for (double b : beta_) {
        if (!std::isfinite(b)) throw std::invalid_argument("selection parameters must be finite");
    }
}

double SelectionModel::one_sided_p(double t) const {
    return favorable_ == Favorable::Lower ? normal_cdf(t) : normal_cdf(-t);
}

namespace {

// 2 exp(-u) / (1 + exp(-u)) = 2 expit(-u), and its derivative in u.
double doubled_logistic(double u) { return 2.0 * expit(-u); }
double doubled_logistic_du(double u) {
    const double e = expit(-u);
    return -2.0 * e * (1.0 - e);
}

}  // namespace

double SelectionModel::prob(double t, double sigma) const {
    double pi = 0.0;
    switch (family_) {
        case Family::Logistic1:
            pi = doubled_logistic(beta_[0] * one_sided_p(t));
            break;
        case Family::ModLogistic1:
            pi = doubled_logistic(beta_[0] * sigma * one_sided_p(t));
            break;
        case Family::Probit2:
            pi = normal_cdf(beta_[0] + beta_[1] * t);
            break;
        case Family::Logistic2:
            pi = expit(beta_[0] + beta_[1] * t);
            break;
    }
    return std::clamp(pi, kMinProb, 1.0);
}

std::vector<double> SelectionModel::dprob_dbeta(double t, double sigma) const {
    switch (family_) {
        case Family::Logistic1:
        case Family::ModLogistic1: {
            const double scale =
                one_sided_p(t) * (family_ == Family::ModLogistic1 ? sigma : 1.0);
            const double u = beta_[0] * scale;
            const double pi = doubled_logistic(u);
            if (pi > 1.0 || pi < kMinProb) return {0.0};
            return {doubled_logistic_du(u) * scale};
        }
        case Family::Probit2: {
            const double z = beta_[0] + beta_[1] * t;
            if (normal_cdf(z) < kMinProb) return {0.0, 0.0};
            const double d = normal_pdf(z);
            return {d, d * t};
        }
        case Family::Logistic2: {
            const double z = beta_[0] + beta_[1] * t;
            const double e = expit(z);
            if (e < kMinProb) return {0.0, 0.0};
            const double d = e * (1.0 - e);
            return {d, d * t};
        }
    }
    throw std::logic_error("unknown family");
}

}  // namespace ipwmeta
