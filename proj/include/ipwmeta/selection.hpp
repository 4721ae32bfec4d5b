#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace ipwmeta {

// Standard normal helpers with stable tails.
double normal_cdf(double x);
double normal_pdf(double x);
double normal_quantile(double p);
double expit(double x);

enum class Family { Logistic1, ModLogistic1, Probit2, Logistic2 };

// Which direction of the effect counts as a "positive" finding. One-parameter
// families are driven by the one-sided p-value in this direction; for log odds
// ratios of harmful events a lower effect is the favourable one.
enum class Favorable { Lower, Higher };

inline constexpr std::array<Family, 4> kAllFamilies{Family::Logistic1, Family::ModLogistic1,
                                                    Family::Probit2, Family::Logistic2};

std::size_t arity(Family f);
std::string_view to_string(Family f);
Family family_from_string(std::string_view name);
std::string_view to_string(Favorable f);
Favorable favorable_from_string(std::string_view name);

// Floor applied to publication probabilities before they are inverted.
inline constexpr double kMinProb = 1e-12;

/// Publication-probability model pi(t, sigma; beta) on the Wald statistic
/// t = effect / se.
///
///   Logistic1     2 exp(-b p) / (1 + exp(-b p))
///   ModLogistic1  2 exp(-b sigma p) / (1 + exp(-b sigma p))
///   Probit2       Phi(b0 + b1 t)
///   Logistic2     expit(b0 + b1 t)
///
/// where p is the one-sided p-value of t in the favourable direction
/// (Phi(t) when lower is favourable, 1 - Phi(t) otherwise). Results are
/// clamped to [kMinProb, 1].
class SelectionModel {
public:
    SelectionModel(Family family, std::vector<double> beta, Favorable favorable = Favorable::Lower);

    Family family() const { return family_; }
    Favorable favorable() const { return favorable_; }
    const std::vector<double>& beta() const { return beta_; }
    std::size_t arity() const { return beta_.size(); }

    SelectionModel with_beta(std::vector<double> beta) const {
        return SelectionModel(family_, std::move(beta), favorable_);
    }

    double prob(double t, double sigma) const;

    // Analytic gradient of prob() with respect to beta. Zero where the clamp
    // is active.
    std::vector<double> dprob_dbeta(double t, double sigma) const;

private:
    double one_sided_p(double t) const;

    Family family_;
    std::vector<double> beta_;
    Favorable favorable_;
};

}  // namespace ipwmeta
