#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyqe/error.hpp"
#include "tinyqe/metrics.hpp"

namespace tinyqe {

enum class SortKey { kSpearman, kPearson, kMethod };

inline SortKey sort_key_from_string(std::string_view name) {
    if (name == "spearman") return SortKey::kSpearman;
    if (name == "pearson") return SortKey::kPearson;
    if (name == "method") return SortKey::kMethod;
    throw config_error("leaderboard: unknown sort key '" + std::string(name) + "'");
}

struct LeaderboardRow {
    std::string method;
    std::string pair;
    double spearman = 0.0;
    double pearson = 0.0;
    std::size_t n = 0;
    bool best = false;  // highest Spearman within the language pair
};

namespace detail {

inline double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

inline std::string fixed3(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(3) << v;
    return out.str();
}

}  // namespace detail

// Rows grouped by language pair; within a pair, ordered by the sort key with
// method-name ties broken lexicographically. The best Spearman of each pair
// is flagged.
inline std::vector<LeaderboardRow> build_leaderboard(const std::vector<CorrelationReport>& reports,
                                                     SortKey key = SortKey::kSpearman) {
    if (reports.empty()) throw contract_error("leaderboard: no reports");
    std::vector<LeaderboardRow> rows;
    rows.reserve(reports.size());
    for (const auto& r : reports)
        rows.push_back({r.method_name, r.language_pair, r.spearman_rho, r.pearson_r, r.n, false});
    std::sort(rows.begin(), rows.end(), [key](const LeaderboardRow& a, const LeaderboardRow& b) {
        if (a.pair != b.pair) return a.pair < b.pair;
        switch (key) {
            case SortKey::kSpearman:
                if (a.spearman != b.spearman) return a.spearman > b.spearman;
                break;
            case SortKey::kPearson:
                if (a.pearson != b.pearson) return a.pearson > b.pearson;
                break;
            case SortKey::kMethod:
                break;
        }
        return a.method < b.method;
    });
    for (std::size_t i = 0; i < rows.size();) {
        std::size_t j = i;
        double best = rows[i].spearman;
        while (j < rows.size() && rows[j].pair == rows[i].pair) {
            best = std::max(best, rows[j].spearman);
            ++j;
        }
        for (std::size_t k = i; k < j; ++k) rows[k].best = rows[k].spearman == best;
        i = j;
    }
    return rows;
}

// Fixed-format text table, 3-decimal coefficients, '*' on the best Spearman
// per language pair.
inline std::string render_leaderboard_text(const std::vector<LeaderboardRow>& rows) {
    std::size_t method_w = 6, pair_w = 4;
    for (const auto& r : rows) {
        method_w = std::max(method_w, r.method.size());
        pair_w = std::max(pair_w, r.pair.size());
    }
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(method_w)) << "method" << "  " << std::setw(static_cast<int>(pair_w))
        << "pair" << "  " << std::right << std::setw(8) << "spearman" << "  " << std::setw(8) << "pearson" << "  "
        << std::setw(6) << "n" << "  best\n";
    for (const auto& r : rows) {
        out << std::left << std::setw(static_cast<int>(method_w)) << r.method << "  "
            << std::setw(static_cast<int>(pair_w)) << r.pair << "  " << std::right << std::setw(8)
            << detail::fixed3(r.spearman) << "  " << std::setw(8) << detail::fixed3(r.pearson) << "  " << std::setw(6)
            << r.n << "  " << (r.best ? "*" : "") << '\n';
    }
    return out.str();
}

// JSON mirror of the table; coefficients carry the same 3-decimal values the
// text renders.
inline nlohmann::json leaderboard_json(const std::vector<LeaderboardRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows)
        arr.push_back({{"method", r.method},
                       {"pair", r.pair},
                       {"spearman", detail::round3(r.spearman)},
                       {"pearson", detail::round3(r.pearson)},
                       {"n", r.n},
                       {"best", r.best}});
    return arr;
}

// Per-evaluation report file, full precision.
inline void write_report_json(const CorrelationReport& report, const std::filesystem::path& path) {
    nlohmann::json j{{"method", report.method_name},
                     {"pair", report.language_pair},
                     {"spearman", report.spearman_rho},
                     {"pearson", report.pearson_r},
                     {"n", report.n}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("report: cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << '\n';
    if (!out.flush()) throw io_error("report: failed writing '" + path.string() + "'");
}

inline CorrelationReport read_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("report: cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
        CorrelationReport report;
        report.method_name = j.at("method").get<std::string>();
        report.language_pair = j.at("pair").get<std::string>();
        report.spearman_rho = j.at("spearman").get<double>();
        report.pearson_r = j.at("pearson").get<double>();
        report.n = j.at("n").get<std::size_t>();
        return report;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error("report '" + path.string() + "': " + e.what());
    }
}

// 2254857830 -> "2,254,857,830"
inline std::string format_bytes(std::uint64_t bytes) {
    std::string digits = std::to_string(bytes);
    std::string out;
    out.reserve(digits.size() + digits.size() / 3);
    const std::size_t first = digits.size() % 3 == 0 ? 3 : digits.size() % 3;
    for (std::size_t i = 0; i < digits.size(); ++i) {
        if (i != 0 && i >= first && (i - first) % 3 == 0) out.push_back(',');
        out.push_back(digits[i]);
    }
    return out;
}

inline std::string render_footprint_row(const std::string& name, std::uint64_t bytes) {
    return name + "\t" + format_bytes(bytes);
}

}  // namespace tinyqe
