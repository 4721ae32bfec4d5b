#include "ipwmeta/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "ipwmeta/errors.hpp"

namespace ipwmeta {

StudyRecord StudyRecord::make_published(std::string id, double effect, double se, long n_total) {
    StudyRecord r{std::move(id), effect, se, n_total, true};
    validate(r);
    return r;
}

StudyRecord StudyRecord::make_unpublished(std::string id, long n_total) {
    StudyRecord r{std::move(id), std::nullopt, std::nullopt, n_total, false};
    validate(r);
    return r;
}

void validate(const StudyRecord& rec) {
    if (rec.n_total < 1) {
        throw DataError("study '" + rec.id + "': n_total must be >= 1");
    }
    if (rec.published) {
        if (!rec.effect || !rec.se) {
            throw DataError("study '" + rec.id + "': published study needs effect and se");
        }
        if (!std::isfinite(*rec.effect)) {
            throw DataError("study '" + rec.id + "': effect is not finite");
        }
        if (!(*rec.se > 0.0) || !std::isfinite(*rec.se)) {
            throw DataError("study '" + rec.id + "': se must be positive and finite");
        }
    } else if (rec.effect || rec.se) {
        throw DataError("study '" + rec.id + "': unpublished study must not carry effect/se");
    }
}

MetaDataset::MetaDataset(std::vector<StudyRecord> studies) : studies_(std::move(studies)) {
    std::unordered_set<std::string> ids;
    for (const auto& s : studies_) {
        validate(s);
        if (!ids.insert(s.id).second) {
            throw DataError("duplicate study id '" + s.id + "'");
        }
        if (s.published) ++n_published_;
    }
    if (n_published_ < 2) {
        throw DataError("at least two published studies are required (found " +
                        std::to_string(n_published_) + ")");
    }
}

MetaDataset MetaDataset::published_only() const {
    std::vector<StudyRecord> pub;
    pub.reserve(n_published_);
    std::copy_if(studies_.begin(), studies_.end(), std::back_inserter(pub),
                 [](const StudyRecord& s) { return s.published; });
    return MetaDataset(std::move(pub));
}

MetaDataset MetaDataset::with_published_effects(const std::vector<double>& effects) const {
    if (effects.size() != n_published_) {
        throw std::invalid_argument("with_published_effects: size mismatch");
    }
    std::vector<StudyRecord> out = studies_;
    std::size_t k = 0;
    for (auto& s : out) {
        if (s.published) s.effect = effects[k++];
    }
    return MetaDataset(std::move(out));
}

EffectEstimate effect_from_counts(const TwoByTwoCounts& c) {
    if (c.total_trt < 1 || c.total_ctl < 1) {
        throw DataError("2x2 table: each arm needs at least one subject");
    }
    if (c.events_trt < 0 || c.events_ctl < 0 || c.events_trt > c.total_trt ||
        c.events_ctl > c.total_ctl) {
        throw DataError("2x2 table: events must lie in [0, total]");
    }
    double a = static_cast<double>(c.events_trt);
    double b = static_cast<double>(c.total_trt - c.events_trt);
    double cc = static_cast<double>(c.events_ctl);
    double d = static_cast<double>(c.total_ctl - c.events_ctl);
    if ((a == 0.0 && cc == 0.0) || (b == 0.0 && d == 0.0)) {
        throw DataError("2x2 table: an outcome column is empty, odds ratio undefined");
    }
    if (a == 0.0 || b == 0.0 || cc == 0.0 || d == 0.0) {
        a += 0.5;
        b += 0.5;
        cc += 0.5;
        d += 0.5;
    }
    return {std::log((a * d) / (b * cc)), std::sqrt(1.0 / a + 1.0 / b + 1.0 / cc + 1.0 / d)};
}

namespace {

std::string trim(std::string_view s) {
    const auto ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (quoted) throw DataError("line " + std::to_string(line_no) + ": unterminated quote");
    out.push_back(trim(cur));
    return out;
}

std::optional<double> parse_optional_real(const std::string& cell, std::size_t line_no,
                                          const char* field) {
    if (cell.empty()) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw DataError("line " + std::to_string(line_no) + ": cannot parse " + field + " '" +
                        cell + "'");
    }
    return v;
}

std::optional<long> parse_optional_int(const std::string& cell, std::size_t line_no,
                                       const char* field) {
    if (cell.empty()) return std::nullopt;
    long v = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw DataError("line " + std::to_string(line_no) + ": cannot parse " + field + " '" +
                        cell + "'");
    }
    return v;
}

long require_int(const std::string& cell, std::size_t line_no, const char* field) {
    auto v = parse_optional_int(cell, line_no, field);
    if (!v) throw DataError("line " + std::to_string(line_no) + ": missing " + field);
    return *v;
}

bool parse_flag(const std::string& cell, std::size_t line_no) {
    if (cell == "1") return true;
    if (cell == "0") return false;
    throw DataError("line " + std::to_string(line_no) + ": published must be 0 or 1, got '" +
                    cell + "'");
}

const std::vector<std::string> kSummaryHeader{"id", "effect", "se", "n_total", "published"};
const std::vector<std::string> kCountHeader{"id",        "events_trt", "total_trt", "events_ctl",
                                            "total_ctl", "n_total",    "published"};

StudyRecord parse_summary_row(const std::vector<std::string>& f, std::size_t line_no) {
    const bool pub = parse_flag(f[4], line_no);
    const long n = require_int(f[3], line_no, "n_total");
    auto effect = parse_optional_real(f[1], line_no, "effect");
    auto se = parse_optional_real(f[2], line_no, "se");
    StudyRecord r{f[0], effect, se, n, pub};
    try {
        validate(r);
    } catch (const DataError& e) {
        throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    return r;
}

StudyRecord parse_count_row(const std::vector<std::string>& f, std::size_t line_no) {
    const bool pub = parse_flag(f[6], line_no);
    const long n = require_int(f[5], line_no, "n_total");
    const bool any_count = std::any_of(f.begin() + 1, f.begin() + 5,
                                       [](const std::string& c) { return !c.empty(); });
    if (!pub) {
        if (any_count) {
            throw DataError("line " + std::to_string(line_no) +
                            ": unpublished study must not carry counts");
        }
        StudyRecord r{f[0], std::nullopt, std::nullopt, n, false};
        validate(r);
        return r;
    }
    TwoByTwoCounts c{require_int(f[1], line_no, "events_trt"),
                     require_int(f[2], line_no, "total_trt"),
                     require_int(f[3], line_no, "events_ctl"),
                     require_int(f[4], line_no, "total_ctl")};
    try {
        auto est = effect_from_counts(c);
        StudyRecord r{f[0], est.effect, est.se, n, true};
        validate(r);
        return r;
    } catch (const DataError& e) {
        throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
}

std::string format_real(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + '"';
}

}  // namespace

MetaDataset parse_dataset_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (!trim(line).empty()) {
            header = split_csv_line(line, line_no);
            break;
        }
    }
    if (header.empty()) throw DataError("empty dataset file");

    const bool counts = header == kCountHeader;
    if (!counts && header != kSummaryHeader) {
        throw DataError("unrecognised header; expected 'id,effect,se,n_total,published' or "
                        "'id,events_trt,total_trt,events_ctl,total_ctl,n_total,published'");
    }

    std::vector<StudyRecord> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line, line_no);
        if (fields.size() != header.size()) {
            throw DataError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        }
        if (fields[0].empty()) throw DataError("line " + std::to_string(line_no) + ": empty id");
        rows.push_back(counts ? parse_count_row(fields, line_no)
                              : parse_summary_row(fields, line_no));
    }
    return MetaDataset(std::move(rows));
}

MetaDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_dataset_csv(ss.str());
}

std::string format_dataset_csv(const MetaDataset& data) {
    std::ostringstream out;
    out << "id,effect,se,n_total,published\n";
    for (const auto& s : data) {
        out << quote_if_needed(s.id) << ',';
        if (s.published) out << format_real(*s.effect) << ',' << format_real(*s.se);
        else out << ',';
        out << ',' << s.n_total << ',' << (s.published ? 1 : 0) << '\n';
    }
    return out.str();
}

void save_dataset(const MetaDataset& data, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write dataset '" + path.string() + "'");
    out << format_dataset_csv(data);
}

}  // namespace ipwmeta
