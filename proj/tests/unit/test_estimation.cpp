#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "ipwmeta/errors.hpp"
#include "ipwmeta/estimation.hpp"
#include "ipwmeta/simulation.hpp"

using namespace ipwmeta;
using R = StudyRecord;

// Reference values below come from an independent NumPy/SciPy implementation
// of the same estimators run on the count-derived Clopidogrel data.
namespace ref {
constexpr double dl_mu = -0.47510301741719208;
constexpr double dl_se = 0.17517174337196922;
constexpr double dl_q = 10.486748458507261;
constexpr double l1_beta = 1.0177995254350658;
constexpr double l1_mu = -0.4059659502032778;
constexpr double l1_q = 12.344097906693374;
constexpr double m1_beta = 1.3094101882474647;
constexpr double m1_mu = -0.43448686041513473;
constexpr double m1_q = 12.148991431456611;
constexpr double p2_mu_at_fig = -0.41297778542306779;  // beta = (0.735, -0.575)
constexpr double p2_q_at_fig = 12.425397444283439;
constexpr double g2_mu_at_fig = -0.46980469660015139;  // beta = (1.518, -0.064)
}  // namespace ref

TEST_CASE("DerSimonian-Laird on hand-computable data") {
    const MetaDataset d({R::make_published("a", -1, 1, 10), R::make_published("b", 0, 1, 10),
                         R::make_published("c", 1, 1, 10)});
    const auto dl = dl_fit(d);
    CHECK(dl.mu_fixed == doctest::Approx(0.0));
    CHECK(dl.q == doctest::Approx(2.0));
    CHECK(dl.tau2_hat == 0.0);
    CHECK(dl.i2 == 0.0);
    CHECK(dl.se_mu == doctest::Approx(std::sqrt(1.0 / 3.0)));

    const MetaDataset same({R::make_published("a", 0.4, 0.2, 10), R::make_published("b", 0.4, 0.9, 10),
                            R::make_published("c", 0.4, 0.5, 10)});
    const auto s = dl_fit(same);
    CHECK(s.mu_hat == doctest::Approx(0.4).epsilon(1e-14));
    CHECK(s.tau2_hat == 0.0);

    // Q = 8 with N = 3 gives tau2 = (8 - 2) / (3 - 1) = 3 at unit variances.
    const MetaDataset spread({R::make_published("a", -2, 1, 10), R::make_published("b", 0, 1, 10),
                              R::make_published("c", 2, 1, 10)});
    const auto sp = dl_fit(spread);
    CHECK(sp.q == doctest::Approx(8.0));
    CHECK(sp.tau2_hat == doctest::Approx(3.0));
    CHECK(sp.i2 == doctest::Approx(0.75));
}

TEST_CASE("DerSimonian-Laird on the clopidogrel data") {
    const auto dl = dl_fit(testing::clopidogrel());
    CHECK(dl.mu_hat == doctest::Approx(ref::dl_mu).epsilon(1e-12));
    CHECK(dl.se_mu == doctest::Approx(ref::dl_se).epsilon(1e-12));
    CHECK(dl.q == doctest::Approx(ref::dl_q).epsilon(1e-12));
    CHECK(dl.tau2_hat == 0.0);
    CHECK(std::exp(dl.mu_hat) == doctest::Approx(0.622).epsilon(0.002));
    CHECK(dl.n_studies == 12);
}

TEST_CASE("u_beta") {
    const MetaDataset complete({R::make_published("a", -0.5, 0.3, 50), R::make_published("b", 0.2, 0.4, 80),
                                R::make_published("c", 0.9, 0.2, 20)});
    CHECK(u_beta(complete, SelectionModel(Family::Logistic1, {0.0}), EstimatingEquationSpec{})[0] == 0.0);
    CHECK(u_beta(complete, SelectionModel(Family::Logistic1, {0.8}), EstimatingEquationSpec{})[0] < 0.0);

    // Unpublished rows contribute g(n) exactly.
    const MetaDataset reg({R::make_published("a", -0.5, 0.3, 50), R::make_published("b", 0.2, 0.4, 80),
                           R::make_unpublished("c", 49)});
    const EstimatingEquationSpec two{EquationKind::OneAndSqrtN};
    const auto u = u_beta(reg, SelectionModel(Family::Probit2, {40.0, 0.0}), two);
    CHECK(u[0] == doctest::Approx(1.0));
    CHECK(u[1] == doctest::Approx(7.0));
    CHECK_THROWS(u_beta(reg, SelectionModel(Family::Logistic1, {0.0}), two));

    const auto g = g_of_n(two, 16);
    CHECK(g == std::vector<double>{1.0, 4.0});
}

TEST_CASE("one-parameter solver on the clopidogrel data") {
    const auto d = testing::clopidogrel();
    const auto l1 = solve_beta_1param(d, Family::Logistic1);
    CHECK(l1.report.converged);
    CHECK(l1.beta[0] == doctest::Approx(ref::l1_beta).epsilon(1e-8));
    CHECK(std::fabs(l1.beta[0] - 1.018) < 0.001);
    const auto m1 = solve_beta_1param(d, Family::ModLogistic1);
    CHECK(m1.report.converged);
    CHECK(m1.beta[0] == doctest::Approx(ref::m1_beta).epsilon(1e-8));
    CHECK(std::fabs(m1.beta[0] - 1.309) < 0.001);

    // Residual certificate.
    for (const auto& [fam, sol] : {std::pair{Family::Logistic1, l1}, std::pair{Family::ModLogistic1, m1}}) {
        const double u = u_beta(d, SelectionModel(fam, sol.beta), EstimatingEquationSpec{})[0];
        CHECK(std::fabs(u) <= sol.report.tolerance);
    }
    CHECK_THROWS(solve_beta_1param(d, Family::Probit2));
}

TEST_CASE("one-parameter solver with no unpublished studies returns zero") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        const auto d = testing::random_complete(rng, 12);
        for (Family f : {Family::Logistic1, Family::ModLogistic1}) {
            const auto s = solve_beta_1param(d, f);
            CHECK(s.report.converged);
            CHECK(s.beta[0] == 0.0);
        }
    }
}

TEST_CASE("one-parameter solver reports a missing root") {
    // Every published study is maximally favourable (pi = 1 for any beta is
    // not attainable), yet the registry has unpublished trials: U > 0 for all
    // beta when selection cannot push pi below one.
    const MetaDataset d({R::make_published("a", 0.0, 1e-3, 10), R::make_published("b", 0.0, 1e-3, 10),
                         R::make_unpublished("c", 10)});
    // With t = 0 the publication probability depends on beta through p = 1/2;
    // U crosses zero, so this one has a root.
    CHECK(solve_beta_1param(d, Family::Logistic1).report.converged);

    // ModLogistic1 with sigma tiny keeps pi near one for all |beta| <= 12800,
    // so U stays positive on the whole bracket.
    const MetaDataset flat({R::make_published("a", 0.0, 1e-9, 10), R::make_published("b", 0.0, 1e-9, 10),
                            R::make_unpublished("c", 10)});
    CHECK_THROWS_AS(solve_beta_1param(flat, Family::ModLogistic1), NumericalError);
}

TEST_CASE("two-parameter solver") {
    SUBCASE("no unpublished studies drives the intercept to the box") {
        std::mt19937_64 rng(3);
        const auto d = testing::random_complete(rng, 15);
        const auto s = solve_beta_2param(d, Family::Logistic2);
        CHECK_FALSE(s.report.converged);
        CHECK(s.report.on_bound);
    }
    SUBCASE("recovers an exact root when one exists") {
        GenerativeConfig cfg;
        cfg.s_total = 200;
        cfg.tau = 0.05;
        cfg.selection = SelectionModel(Family::Probit2, {-0.3, -1.0});
        Rng rng(17);
        const auto pop = generate_population(cfg, rng);
        const auto d = apply_selection(pop.data, cfg.selection, rng);
        REQUIRE(d);
        const auto s = solve_beta_2param(*d, Family::Probit2);
        CAPTURE(s.report.residual);
        CHECK(s.report.converged);
        const auto u = u_beta(*d, SelectionModel(Family::Probit2, s.beta), EstimatingEquationSpec{EquationKind::OneAndSqrtN});
        CHECK(std::fabs(u[0]) + std::fabs(u[1]) <= s.report.tolerance);
    }
    SUBCASE("clopidogrel has no exact root for either family") {
        const auto d = testing::clopidogrel();
        for (Family f : {Family::Probit2, Family::Logistic2}) {
            const auto s = solve_beta_2param(d, f);
            CHECK_FALSE(s.report.converged);
            CHECK_FALSE(s.report.on_bound);
            // The best point found beats the objective at the published curve.
            const std::vector<double> fig = f == Family::Probit2 ? std::vector<double>{0.735, -0.575}
                                                                 : std::vector<double>{1.518, -0.064};
            const auto u = u_beta(d, SelectionModel(f, fig), EstimatingEquationSpec{EquationKind::OneAndSqrtN});
            CHECK(s.report.residual < std::fabs(u[0]) + std::fabs(u[1]));
        }
    }
}

TEST_CASE("IPW point estimators") {
    SUBCASE("fixed mean with given probabilities") {
        const MetaDataset d({R::make_published("a", 0.0, 1.0, 10), R::make_published("b", 1.0, 1.0, 10)});
        // Logistic2 with beta = (0, 40) gives pi = 1/2 at t = 0 and pi = 1 at t = 1.
        const SelectionModel m(Family::Logistic2, {0.0, 40.0});
        CHECK(m.prob(0.0, 1.0) == 0.5);
        CHECK(m.prob(1.0, 1.0) == 1.0);
        CHECK(ipw_fixed_mean(d, m) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    }
    SUBCASE("pi = 1 reduces to the classical fixed mean") {
        std::mt19937_64 rng(8);
        const auto d = testing::random_complete(rng, 9);
        CHECK(ipw_fixed_mean(d, SelectionModel(Family::Logistic1, {0.0})) ==
              doctest::Approx(dl_fit(d).mu_fixed).epsilon(1e-14));
    }
    SUBCASE("clopidogrel pipelines") {
        const auto d = testing::clopidogrel();
        const auto l1 = fit(d, Family::Logistic1);
        CHECK(l1.mu_hat == doctest::Approx(ref::l1_mu).epsilon(1e-8));
        CHECK(l1.q_ipw == doctest::Approx(ref::l1_q).epsilon(1e-8));
        CHECK(l1.tau2_hat == 0.0);
        CHECK(std::exp(l1.mu_hat) == doctest::Approx(0.666).epsilon(0.0015));
        const auto m1 = fit(d, Family::ModLogistic1);
        CHECK(m1.mu_hat == doctest::Approx(ref::m1_mu).epsilon(1e-8));
        CHECK(m1.q_ipw == doctest::Approx(ref::m1_q).epsilon(1e-8));
        CHECK(std::exp(m1.mu_hat) == doctest::Approx(0.648).epsilon(0.0015));

        const auto p2 = estimates_at(d, SelectionModel(Family::Probit2, {0.735, -0.575}));
        CHECK(p2.mu_hat == doctest::Approx(ref::p2_mu_at_fig).epsilon(1e-12));
        CHECK(p2.q_ipw == doctest::Approx(ref::p2_q_at_fig).epsilon(1e-12));
        CHECK(std::exp(p2.mu_hat) == doctest::Approx(0.662).epsilon(0.0015));
        const auto g2 = estimates_at(d, SelectionModel(Family::Logistic2, {1.518, -0.064}));
        CHECK(g2.mu_hat == doctest::Approx(ref::g2_mu_at_fig).epsilon(1e-12));
        CHECK(std::exp(g2.mu_hat) == doctest::Approx(0.625).epsilon(0.0015));
    }
    SUBCASE("tau2 reduces to DerSimonian-Laird when pi = 1 and M = 0") {
        std::mt19937_64 rng(21);
        const auto d = testing::random_complete(rng, 25, 0.1, 0.5);
        const auto t = ipw_tau2(d, SelectionModel(Family::Logistic1, {0.0}));
        const auto dl = dl_fit(d);
        CHECK(dl.tau2_hat > 0.0);
        CHECK(t.tau2 == dl.tau2_hat);
        CHECK(ipw_mean(d, SelectionModel(Family::Logistic1, {0.0}), dl.tau2_hat) == dl.mu_hat);
    }
    SUBCASE("negative tau2 is rejected") {
        const auto d = testing::clopidogrel();
        CHECK_THROWS(ipw_mean(d, SelectionModel(Family::Logistic1, {1.0}), -0.1));
    }
}

TEST_CASE("heterogeneity") {
    auto h = heterogeneity(9.0, 10);
    CHECK(h.h2 == 1.0);
    CHECK(h.i2 == 0.0);
    h = heterogeneity(18.0, 10);
    CHECK(h.h2 == 2.0);
    CHECK(h.i2 == 0.5);
    CHECK(heterogeneity(3.0, 10).i2 == 0.0);
    CHECK_THROWS(heterogeneity(1.0, 1));
}

TEST_CASE("full reduction: no unpublished studies means IPW equals DerSimonian-Laird") {
    std::mt19937_64 rng(99);
    for (int rep = 0; rep < 20; ++rep) {
        const auto d = testing::random_complete(rng, 5 + rep, -0.2, rep % 2 ? 0.4 : 0.0);
        const auto dl = dl_fit(d);
        for (Family f : {Family::Logistic1, Family::ModLogistic1}) {
            const auto e = fit(d, f);
            CHECK(e.converged);
            CHECK(std::fabs(e.mu_hat - dl.mu_hat) <= 1e-12);
            CHECK(std::fabs(e.tau2_hat - dl.tau2_hat) <= 1e-12);
            CHECK(std::fabs(e.q_ipw - dl.q) <= 1e-12 * std::max(1.0, dl.q));
        }
    }
}

TEST_CASE("translation equivariance with beta held fixed") {
    const auto d = testing::clopidogrel();
    const double c = 0.37;
    std::vector<double> shifted;
    for (const auto& s : d)
        if (s.published) shifted.push_back(*s.effect + c);
    const auto e = d.with_published_effects(shifted);
    // pi depends on t = y / se, so hold the weights fixed with pi = 1.
    const SelectionModel flat(Family::Probit2, {40.0, 0.0});
    CHECK(ipw_fixed_mean(e, flat) == doctest::Approx(ipw_fixed_mean(d, flat) + c).epsilon(1e-13));
    CHECK(ipw_mean(e, flat, 0.05) == doctest::Approx(ipw_mean(d, flat, 0.05) + c).epsilon(1e-13));
}

TEST_CASE("inverse weights are finite and at least one") {
    const auto d = testing::clopidogrel();
    for (Family f : kAllFamilies) {
        const std::vector<double> beta = arity(f) == 1 ? std::vector<double>{3.0} : std::vector<double>{-2.0, 4.0};
        const SelectionModel m(f, beta);
        for (const auto& s : d) {
            if (!s.published) continue;
            const double w = 1.0 / m.prob(s.t_stat(), *s.se);
            CHECK(std::isfinite(w));
            CHECK(w >= 1.0);
        }
    }
}

TEST_CASE("estimating equation is unbiased at the true beta") {
    // Monte Carlo mean of U(beta*) / S over complete simulated registries.
    for (const auto& truth : {SelectionModel(Family::Logistic1, {2.0}), SelectionModel(Family::Probit2, {-0.3, -1.0})}) {
        GenerativeConfig cfg;
        cfg.s_total = 50;
        cfg.tau = 0.15;
        cfg.selection = truth;
        const auto spec = EstimatingEquationSpec::for_family(truth.family());
        const int reps = 2000;
        std::vector<std::vector<double>> draws(spec.arity());
        for (int r = 0; r < reps; ++r) {
            Rng rng = substream(42, {static_cast<std::uint64_t>(r)});
            const auto pop = generate_population(cfg, rng);
            const auto d = apply_selection(pop.data, truth, rng);
            if (!d) continue;
            const auto u = u_beta(*d, truth, spec);
            for (std::size_t k = 0; k < u.size(); ++k) draws[k].push_back(u[k] / 50.0);
        }
        for (const auto& v : draws) {
            double m = 0.0, ss = 0.0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            for (double x : v) ss += (x - m) * (x - m);
            const double mcse = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
            CAPTURE(m);
            CAPTURE(mcse);
            CHECK(std::fabs(m) <= 3.0 * mcse);
        }
    }
}

TEST_CASE("selection estimate concentrates as the registry grows") {
    const SelectionModel truth(Family::Logistic1, {2.0});
    std::vector<double> medians;
    for (std::size_t s : {50u, 100u, 200u}) {
        GenerativeConfig cfg;
        cfg.s_total = s;
        cfg.selection = truth;
        std::vector<double> err;
        for (int r = 0; r < 150; ++r) {
            Rng rng = substream(7, {s, static_cast<std::uint64_t>(r)});
            const auto pop = generate_population(cfg, rng);
            const auto d = apply_selection(pop.data, truth, rng);
            if (!d) continue;
            try {
                err.push_back(std::fabs(solve_beta_1param(*d, Family::Logistic1).beta[0] - 2.0));
            } catch (const NumericalError&) {
            }
        }
        std::sort(err.begin(), err.end());
        medians.push_back(err[err.size() / 2]);
    }
    CAPTURE(medians[0]);
    CAPTURE(medians[1]);
    CAPTURE(medians[2]);
    CHECK(medians[1] < medians[0]);
    CHECK(medians[2] < medians[1]);
}
