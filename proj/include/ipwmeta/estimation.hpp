#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ipwmeta/dataset.hpp"
#include "ipwmeta/selection.hpp"

namespace ipwmeta {

/// Choice of g(n) in the registry estimating equation
///   U(beta) = sum_i {1 - D_i / pi_i(beta)} g(n_i).
enum class EquationKind {
    SqrtN,        // g(n) = sqrt(n)
    OneAndSqrtN,  // g(n) = (1, sqrt(n))
};

struct EstimatingEquationSpec {
    EquationKind kind = EquationKind::SqrtN;

    std::size_t arity() const { return kind == EquationKind::SqrtN ? 1 : 2; }
    static EstimatingEquationSpec for_family(Family f) {
        return {ipwmeta::arity(f) == 1 ? EquationKind::SqrtN : EquationKind::OneAndSqrtN};
    }
};

// g(n), one entry per equation.
std::vector<double> g_of_n(const EstimatingEquationSpec& spec, long n);

/// Classical random-effects analysis of the published studies.
struct DlEstimates {
    double mu_hat = 0.0;
    double se_mu = 0.0;  // sqrt(1 / sum of random-effects weights)
    double tau2_hat = 0.0;
    double q = 0.0;
    double mu_fixed = 0.0;
    double i2 = 0.0;
    std::size_t n_studies = 0;
};

// Inverse-variance fixed-effect mean, Cochran's Q, DerSimonian-Laird tau^2
// (truncated at zero) and the random-effects mean. Unpublished rows are ignored.
DlEstimates dl_fit(const MetaDataset& data);

// Sum over all S registered studies of {1 - D_i/pi_i(beta)} g(n_i).
std::vector<double> u_beta(const MetaDataset& data, const SelectionModel& model,
                           const EstimatingEquationSpec& spec);

struct SolverReport {
    int iterations = 0;
    double residual = 0.0;   // |U| (1-parameter) or |U_0| + |U_1| (2-parameter)
    double tolerance = 0.0;  // residual threshold for convergence
    bool converged = false;
    bool on_bound = false;
    std::string message;
};

struct BetaSolution {
    std::vector<double> beta;
    SolverReport report;
};

// Root of the monotone one-parameter equation by bracketing and bisection
// with a Newton polish. Throws NumericalError when no sign change exists.
BetaSolution solve_beta_1param(const MetaDataset& data, Family family,
                               Favorable favorable = Favorable::Lower,
                               std::optional<EstimatingEquationSpec> spec = std::nullopt);

// Minimises |U_0(beta)| + |U_1(beta)| by multi-start simplex search inside
// the box |beta_k| <= 20. Never throws for lack of convergence; check
// report.converged.
BetaSolution solve_beta_2param(const MetaDataset& data, Family family,
                               Favorable favorable = Favorable::Lower,
                               std::optional<EstimatingEquationSpec> spec = std::nullopt);

BetaSolution solve_beta(const MetaDataset& data, Family family,
                        Favorable favorable = Favorable::Lower,
                        std::optional<EstimatingEquationSpec> spec = std::nullopt);

inline constexpr double kBetaBox = 20.0;

// sum D y / (s^2 pi)  /  sum D / (s^2 pi)
double ipw_fixed_mean(const MetaDataset& data, const SelectionModel& model);

struct Tau2Estimate {
    double tau2 = 0.0;
    double q_ipw = 0.0;
    double mu_fixed = 0.0;
    bool degenerate = false;  // non-positive denominator; tau2 forced to zero
};

// IPW DerSimonian-Laird estimator, truncated at zero.
Tau2Estimate ipw_tau2(const MetaDataset& data, const SelectionModel& model);

// sum D y / ((s^2 + tau2) pi)  /  sum D / ((s^2 + tau2) pi)
double ipw_mean(const MetaDataset& data, const SelectionModel& model, double tau2);

struct Heterogeneity {
    double h2 = 0.0;
    double i2 = 0.0;
};

// H^2 = Q / (s - 1), I^2 = (H^2 - 1) / H^2 floored at zero.
Heterogeneity heterogeneity(double q, std::size_t s);

struct PointEstimates {
    Family family = Family::Logistic1;
    Favorable favorable = Favorable::Lower;
    std::vector<double> beta_hat;
    double tau2_hat = 0.0;
    double mu_hat = 0.0;
    double mu_fixed_hat = 0.0;
    double q_ipw = 0.0;
    double h2_ipw = 0.0;
    double i2_ipw = 0.0;
    bool tau2_degenerate = false;
    bool converged = false;
    SolverReport solver_report;

    SelectionModel model() const { return SelectionModel(family, beta_hat, favorable); }
};

// Full IPW pipeline: selection parameters, tau^2, mean, heterogeneity.
PointEstimates fit(const MetaDataset& data, Family family, Favorable favorable = Favorable::Lower,
                   std::optional<EstimatingEquationSpec> spec = std::nullopt);

// Same pipeline with the selection parameters held at model.beta().
PointEstimates estimates_at(const MetaDataset& data, const SelectionModel& model);

}  // namespace ipwmeta
