#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ipwmeta/dataset.hpp"
#include "ipwmeta/rng.hpp"
#include "ipwmeta/selection.hpp"

namespace ipwmeta {

/// Data-generating design for two-arm trials with a binary outcome summarised
/// by the empirical log odds ratio.
struct GenerativeConfig {
    std::string id = "scenario";
    double mu = -0.5;
    double tau = 0.15;
    std::size_t s_total = 50;
    SelectionModel selection{Family::Logistic1, {2.0}};
    std::uint64_t seed = 1;
    int n_replicates = 200;

    double log_n_mean = 5.0;  // total size ~ round(LN(5, 1)), at least min_n
    double log_n_sd = 1.0;
    long min_n = 20;
    double p_ctl_lo = 0.2;  // control event rate ~ U(0.2, 0.9)
    double p_ctl_hi = 0.9;

    void validate() const;
};

struct StudyTruth {
    double mu_i = 0.0;
    double p_ctl = 0.0;
    double p_trt = 0.0;
    long n_trt = 0;
    long n_ctl = 0;
    int table_redraws = 0;  // event counts redrawn because a whole outcome column was empty
};

struct Population {
    MetaDataset data;  // every record published
    std::vector<StudyTruth> truth;
};

// Treatment-arm event rate giving odds ratio exp(log_or) against p_ctl.
double treatment_rate(double p_ctl, double log_or);

Population generate_population(const GenerativeConfig& cfg, Rng& rng);

// Publishes each study with probability pi_i under `model`; unpublished rows
// keep only their sample size. nullopt when fewer than two studies survive.
std::optional<MetaDataset> apply_selection(const MetaDataset& population, const SelectionModel& model,
                                           Rng& rng);

enum class Estimator { DL, IPW };
enum class CiKind { None, Asymptotic, Bootstrap };

std::string_view to_string(Estimator e);
std::string_view to_string(CiKind c);
CiKind ci_kind_from_string(std::string_view s);

struct MethodSpec {
    Estimator estimator = Estimator::IPW;
    Family family = Family::Logistic1;  // ignored for DL
    CiKind ci = CiKind::Asymptotic;
    bool true_beta = false;  // hold beta at the generating value instead of solving

    std::string label() const;
};

/// One line of a simulation table: one method, one parameter (mu or tau2).
struct MetricsRow {
    std::string scenario;
    std::string method;  // "DL" or "IPW" (suffixed "*" when beta is held at the truth)
    std::string family;  // "-" for DL
    std::string ci_kind;
    std::string parameter;  // "mu" or "tau2"
    double truth = 0.0;
    double ave = 0.0;
    double sd = 0.0;
    double cp = 0.0;    // NaN when the method gives no interval
    double loci = 0.0;  // NaN when the method gives no interval
    int noc = 0;        // replicates with a converged fit
    int noz = -1;       // zero tau2 estimates among converged replicates; -1 for mu rows
    int n_replicates = 0;
    std::uint64_t seed = 0;
};

struct ScenarioResult {
    GenerativeConfig config;
    std::vector<MethodSpec> methods;
    std::vector<MetricsRow> rows;
    int n_regenerated = 0;    // replicates redrawn because fewer than two studies were published
    int n_table_redraws = 0;  // degenerate 2x2 tables redrawn
    double mean_unpublished_fraction = 0.0;

    const MetricsRow& row(std::string_view method, std::string_view family, std::string_view ci,
                          std::string_view parameter) const;
};

struct ScenarioOptions {
    int boot_b = 1000;
    double level = 0.95;
    int threads = 0;
    std::function<void(int done, int total)> progress;
};

// Methods used when a configuration names none: DL, plus IPW with the
// generating family under both interval kinds.
std::vector<MethodSpec> default_methods(const GenerativeConfig& cfg);

ScenarioResult run_scenario(const GenerativeConfig& cfg, const std::vector<MethodSpec>& methods,
                            const ScenarioOptions& opts = {});

struct ScenarioFile {
    GenerativeConfig config;
    std::vector<MethodSpec> methods;
    ScenarioOptions options;
};

// Scenario document: generative fields at the top level, "selection":
// {"family", "beta", "favorable"}, optional "methods", "boot_b", "level",
// "threads".
ScenarioFile parse_scenario(const std::string& json_text);
ScenarioFile load_scenario(const std::string& path);

std::string metrics_csv_header();
std::string metrics_csv(const std::vector<MetricsRow>& rows, bool header = true);

}  // namespace ipwmeta
