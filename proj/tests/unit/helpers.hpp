#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ipwmeta/dataset.hpp"

namespace testing {

inline std::string data_path(const std::string& name) { return std::string(IPWMETA_DATA_DIR) + "/" + name; }

inline ipwmeta::MetaDataset clopidogrel() { return ipwmeta::load_dataset(data_path("clopidogrel.csv")); }

// Random published-only dataset with effects drawn around `mu`.
inline ipwmeta::MetaDataset random_complete(std::mt19937_64& rng, std::size_t n, double mu = -0.3,
                                            double tau = 0.2) {
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> se(0.1, 0.8);
    std::uniform_int_distribution<long> size(20, 2000);
    std::vector<ipwmeta::StudyRecord> rows;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = se(rng);
        const double y = mu + std::sqrt(tau * tau + s * s) * z(rng);
        rows.push_back(ipwmeta::StudyRecord::make_published("r" + std::to_string(i), y, s, size(rng)));
    }
    return ipwmeta::MetaDataset(std::move(rows));
}

inline double rel_diff(double a, double b) {
    const double scale = std::max({std::fabs(a), std::fabs(b), 1e-300});
    return std::fabs(a - b) / scale;
}

}  // namespace testing
