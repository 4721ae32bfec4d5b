#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ipwmeta/dataset.hpp"
#include "ipwmeta/estimation.hpp"

namespace ipwmeta {

using Interval = std::pair<double, double>;

/// Stacked parameter theta = (beta, tau2, mu).
struct ThetaVector {
    std::vector<double> beta;
    double tau2 = 0.0;
    double mu = 0.0;

    std::size_t dim() const { return beta.size() + 2; }
    Eigen::VectorXd stacked() const;
    static ThetaVector from_stacked(const Eigen::VectorXd& v, std::size_t beta_dim);
};

// Per-study stacked scores U_i(theta), one row per registered study:
//   ({1 - D/pi} g(n),  D/(s^2 pi) {(y - mu)^2 - tau2} - 1,  D/((s^2 + tau2) pi) (y - mu)).
Eigen::MatrixXd stacked_scores(const MetaDataset& data, Family family, Favorable favorable,
                               const EstimatingEquationSpec& spec, const ThetaVector& theta);

// Jacobian of the mean score S^-1 sum_i U_i by central differences,
// h_k = 1e-6 (1 + |theta_k|).
Eigen::MatrixXd score_jacobian(const MetaDataset& data, Family family, Favorable favorable,
                               const EstimatingEquationSpec& spec, const ThetaVector& theta);

// Analytic derivative of the mean beta-score with respect to beta.
Eigen::MatrixXd beta_score_jacobian(const MetaDataset& data, const SelectionModel& model,
                                    const EstimatingEquationSpec& spec);

struct SandwichOptions {
    double level = 0.95;
    // When tau2_hat is truncated at zero, take the (beta, mu) block from the
    // system with tau2 held at zero instead of the full stacked system.
    bool reduce_at_boundary = true;
};

struct SandwichResult {
    ThetaVector theta;
    Eigen::MatrixXd covariance;
    std::vector<double> standard_errors;
    std::vector<Interval> wald_cis;  // empty when the Jacobian is singular
    double wald_p_mu = 0.0;
    double wald_p_beta1 = 0.0;  // last selection parameter
    double level = 0.95;
    bool singular_jacobian = false;
    bool tau_at_boundary = false;  // tau2_hat == 0; the asymptotics are nonstandard there
    bool boundary_reduced = false;
    bool from_unconverged_fit = false;
    std::string message;

    bool has_cis() const { return !wald_cis.empty(); }
    std::size_t index_tau2() const { return theta.beta.size(); }
    std::size_t index_mu() const { return theta.beta.size() + 1; }
    double se_mu() const { return standard_errors[index_mu()]; }
    Interval ci_mu() const { return wald_cis[index_mu()]; }
    Interval ci_tau2() const { return wald_cis[index_tau2()]; }
    Interval ci_beta(std::size_t k) const { return wald_cis[k]; }
};

// Sandwich covariance J^-1 (S^-1 sum U U^T) J^-T / S at the fitted theta,
// with Wald intervals. The tau2 interval is floored at zero.
SandwichResult sandwich_covariance(const MetaDataset& data, const PointEstimates& estimates,
                                   std::optional<EstimatingEquationSpec> spec = std::nullopt,
                                   const SandwichOptions& opts = {});

struct BootstrapOptions {
    int b = 1000;
    std::uint64_t seed = 0;
    double level = 0.95;
    int threads = 1;
    bool keep_draws = false;
};

struct BootstrapResult {
    int b_replicates = 0;
    int n_failed = 0;
    bool too_many_failures = false;  // n_failed > B / 10
    double sigma_boot_mu = 0.0;
    double sigma_boot_tau2 = 0.0;
    Interval ci_mu;
    Interval ci_tau2;
    std::vector<Interval> ci_beta;
    std::vector<double> mu_draws;  // filled when keep_draws
    std::vector<double> tau2_draws;
    std::uint64_t seed = 0;
    double level = 0.95;

    friend bool operator==(const BootstrapResult&, const BootstrapResult&) = default;
};

// Parametric bootstrap: published effects are redrawn from
// N(mu_hat, s^2 + tau2_hat), beta is re-solved with the publication pattern
// unchanged, and tau2 and mu are recomputed. Replicates whose solve fails or
// does not converge are dropped and counted.
BootstrapResult parametric_bootstrap(const MetaDataset& data, const PointEstimates& estimates,
                                     std::optional<EstimatingEquationSpec> spec = std::nullopt,
                                     const BootstrapOptions& opts = {});

// Percentile-type interval point + q * sigma from standardised draws; q are
// linear-interpolation empirical quantiles.
Interval standardized_interval(double point, const std::vector<double>& draws, double level,
                               double* sigma_out = nullptr);

// Empirical quantile (linear interpolation between order statistics) of
// sorted data.
double quantile_sorted(const std::vector<double>& sorted, double p);

}  // namespace ipwmeta
