#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ipwmeta {

/// One registered trial. Published trials carry an effect estimate and its
/// standard error; unpublished ones only reveal the registered sample size.
struct StudyRecord {
    std::string id;
    std::optional<double> effect;
    std::optional<double> se;
    long n_total = 0;
    bool published = false;

    static StudyRecord make_published(std::string id, double effect, double se, long n_total);
    static StudyRecord make_unpublished(std::string id, long n_total);

    // Wald-type statistic effect/se. Only meaningful for published records.
    double t_stat() const { return *effect / *se; }

    friend bool operator==(const StudyRecord&, const StudyRecord&) = default;
};

// Throws DataError when the record violates the published/unpublished field rules.
void validate(const StudyRecord& rec);

/// Validated collection of published and unpublished trials. Immutable once
/// constructed; row order is preserved.
class MetaDataset {
public:
    // Requires at least two published studies and unique ids.
    explicit MetaDataset(std::vector<StudyRecord> studies);

    const std::vector<StudyRecord>& studies() const { return studies_; }
    std::size_t n_published() const { return n_published_; }
    std::size_t n_unpublished() const { return studies_.size() - n_published_; }
    std::size_t s_total() const { return studies_.size(); }

    const StudyRecord& operator[](std::size_t i) const { return studies_[i]; }
    auto begin() const { return studies_.begin(); }
    auto end() const { return studies_.end(); }

    // New dataset holding only the published rows.
    MetaDataset published_only() const;

    // Same rows, with the effects of published records replaced in order.
    // Used by resampling schemes that keep the registry structure fixed.
    MetaDataset with_published_effects(const std::vector<double>& effects) const;

    friend bool operator==(const MetaDataset& a, const MetaDataset& b) {
        return a.studies_ == b.studies_;
    }

private:
    std::vector<StudyRecord> studies_;
    std::size_t n_published_ = 0;
};

/// Per-arm event counts for a two-arm trial with a binary outcome.
struct TwoByTwoCounts {
    long events_trt = 0;
    long total_trt = 0;
    long events_ctl = 0;
    long total_ctl = 0;
};

struct EffectEstimate {
    double effect;
    double se;
};

// Empirical log odds ratio (treatment vs control) and its standard error.
// When any cell is zero, 0.5 is added to all four cells. Tables where no
// subject (or every subject) had an event in both arms are rejected.
EffectEstimate effect_from_counts(const TwoByTwoCounts& c);

// Reads either the summary schema `id,effect,se,n_total,published` or the
// raw-count schema `id,events_trt,total_trt,events_ctl,total_ctl,n_total,published`.
MetaDataset load_dataset(const std::filesystem::path& path);
MetaDataset parse_dataset_csv(const std::string& text);

// Writes the summary schema with round-trip precision.
void save_dataset(const MetaDataset& data, const std::filesystem::path& path);
std::string format_dataset_csv(const MetaDataset& data);

}  // namespace ipwmeta
