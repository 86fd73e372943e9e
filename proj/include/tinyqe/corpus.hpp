#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "tinyqe/error.hpp"

namespace tinyqe {

enum class Split { kTrain, kDev, kTest };

struct AnnotatedPair {
    std::string segment_id;
    std::string source;
    std::string target;
    std::vector<double> raw_scores;   // per-annotator DA scores in [0, 100]
    std::optional<double> z_mean;     // regression target; absent on test data

    bool operator==(const AnnotatedPair&) const = default;
};

struct Dataset {
    Split split = Split::kTrain;
    std::string language_pair;
    std::vector<AnnotatedPair> pairs;
};

struct ScoredSegment {
    std::string segment_id;
    double score = 0.0;

    bool operator==(const ScoredSegment&) const = default;
};

using PredictionSet = std::vector<ScoredSegment>;

// Shortest decimal representation that parses back to the same value.
inline std::string format_double(double value) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, const std::string& context) {
    double value = 0.0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw parse_error(context + ": '" + std::string(text) + "' is not a number");
    return value;
}

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline constexpr const char* kLabeledHeader = "id\tsource\ttarget\tscores\tz_mean";
inline constexpr const char* kUnlabeledHeader = "id\tsource\ttarget";

}  // namespace detail

// Peeks at the header line to decide whether a dataset carries labels.
inline bool tsv_has_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("dataset: cannot open '" + path.string() + "'");
    std::string header;
    std::getline(in, header);
    if (header == detail::kLabeledHeader) return true;
    if (header == detail::kUnlabeledHeader) return false;
    throw parse_error("dataset '" + path.string() + "' line 1: unrecognized header");
}

// Tab-separated dataset. Labeled files carry space-separated raw annotator
// scores plus the mean z-score target; embedded tabs are illegal in fields.
inline Dataset parse_tsv(const std::filesystem::path& path, bool has_labels) {
    std::ifstream in(path);
    if (!in) throw io_error("dataset: cannot open '" + path.string() + "'");
    const std::string where = "dataset '" + path.string() + "'";
    const std::size_t expected_cols = has_labels ? 5 : 3;

    std::string header;
    if (!std::getline(in, header)) throw parse_error(where + " line 1: missing header");
    const char* expected_header = has_labels ? detail::kLabeledHeader : detail::kUnlabeledHeader;
    if (header != expected_header) throw parse_error(where + " line 1: header must be '" + expected_header + "'");

    Dataset dataset;
    dataset.split = has_labels ? Split::kTrain : Split::kTest;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string at_line = where + " line " + std::to_string(line_no);
        auto fields = detail::split_tabs(line);
        if (fields.size() != expected_cols)
            throw parse_error(at_line + ": expected " + std::to_string(expected_cols) + " columns, got " +
                              std::to_string(fields.size()));
        AnnotatedPair pair;
        pair.segment_id = std::string(fields[0]);
        if (pair.segment_id.empty()) throw parse_error(at_line + ": empty segment id");
        if (!seen.insert(pair.segment_id).second)
            throw integrity_error(at_line + ": duplicate segment id '" + pair.segment_id + "'");
        pair.source = std::string(fields[1]);
        pair.target = std::string(fields[2]);
        if (has_labels) {
            std::string_view scores = fields[3];
            if (scores.empty()) throw parse_error(at_line + ": empty score list");
            std::size_t start = 0;
            while (start <= scores.size()) {
                const std::size_t pos = scores.find(' ', start);
                const std::string_view tok =
                    pos == std::string_view::npos ? scores.substr(start) : scores.substr(start, pos - start);
                const double s = parse_double(tok, at_line);
                if (!(s >= 0.0 && s <= 100.0))
                    throw parse_error(at_line + ": score " + std::string(tok) + " outside [0, 100]");
                pair.raw_scores.push_back(s);
                if (pos == std::string_view::npos) break;
                start = pos + 1;
            }
            const double z = parse_double(fields[4], at_line);
            if (!std::isfinite(z)) throw parse_error(at_line + ": z_mean is not finite");
            pair.z_mean = z;
        }
        dataset.pairs.push_back(std::move(pair));
    }
    return dataset;
}

// Canonical serialization: parse_tsv(write_dataset(d)) round-trips exactly.
inline void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    const bool labeled = !dataset.pairs.empty() && dataset.pairs.front().z_mean.has_value();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("dataset: cannot open '" + path.string() + "' for writing");
    out << (labeled ? detail::kLabeledHeader : detail::kUnlabeledHeader) << '\n';
    for (const auto& pair : dataset.pairs) {
        out << pair.segment_id << '\t' << pair.source << '\t' << pair.target;
        if (labeled) {
            if (!pair.z_mean.has_value())
                throw contract_error("dataset: segment '" + pair.segment_id + "' lacks a label");
            out << '\t';
            for (std::size_t i = 0; i < pair.raw_scores.size(); ++i) {
                if (i) out << ' ';
                out << format_double(pair.raw_scores[i]);
            }
            out << '\t' << format_double(*pair.z_mean);
        }
        out << '\n';
    }
    if (!out.flush()) throw io_error("dataset: failed writing '" + path.string() + "'");
}

// Per-annotator z-scores (sample standard deviation), then the per-segment
// mean across annotators. Rows are segments, columns are annotators.
inline std::vector<double> zscore_normalize(const std::vector<std::vector<double>>& scores_by_segment) {
    const std::size_t n_segments = scores_by_segment.size();
    if (n_segments < 2) throw contract_error("zscore: need at least 2 segments per annotator");
    const std::size_t n_annotators = scores_by_segment.front().size();
    if (n_annotators == 0) throw contract_error("zscore: no annotator columns");
    for (const auto& row : scores_by_segment)
        if (row.size() != n_annotators)
            throw contract_error("zscore: ragged score matrix (every segment needs the same annotator count)");

    std::vector<double> mean(n_annotators, 0.0), stddev(n_annotators, 0.0);
    for (std::size_t a = 0; a < n_annotators; ++a) {
        for (const auto& row : scores_by_segment) mean[a] += row[a];
        mean[a] /= static_cast<double>(n_segments);
        double ss = 0.0;
        for (const auto& row : scores_by_segment) {
            const double c = row[a] - mean[a];
            ss += c * c;
        }
        stddev[a] = std::sqrt(ss / static_cast<double>(n_segments - 1));
        if (stddev[a] == 0.0)
            throw degenerate_error("zscore: annotator column " + std::to_string(a) + " has zero variance");
    }
    std::vector<double> z_mean(n_segments, 0.0);
    for (std::size_t s = 0; s < n_segments; ++s) {
        double acc = 0.0;
        for (std::size_t a = 0; a < n_annotators; ++a) acc += (scores_by_segment[s][a] - mean[a]) / stddev[a];
        z_mean[s] = acc / static_cast<double>(n_annotators);
    }
    return z_mean;
}

// Prediction files: `segment_id<TAB>score`, one line per segment, no header.
inline PredictionSet read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("predictions: cannot open '" + path.string() + "'");
    const std::string where = "predictions '" + path.string() + "'";
    PredictionSet preds;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string at_line = where + " line " + std::to_string(line_no);
        auto fields = detail::split_tabs(line);
        if (fields.size() != 2) throw parse_error(at_line + ": expected 'id<TAB>score'");
        ScoredSegment seg;
        seg.segment_id = std::string(fields[0]);
        if (seg.segment_id.empty()) throw parse_error(at_line + ": empty segment id");
        if (!seen.insert(seg.segment_id).second)
            throw integrity_error(at_line + ": duplicate segment id '" + seg.segment_id + "'");
        seg.score = parse_double(fields[1], at_line);
        if (!std::isfinite(seg.score)) throw parse_error(at_line + ": score is not finite");
        preds.push_back(std::move(seg));
    }
    return preds;
}

inline void write_predictions(const PredictionSet& preds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("predictions: cannot open '" + path.string() + "' for writing");
    for (const auto& seg : preds) out << seg.segment_id << '\t' << format_double(seg.score) << '\n';
    if (!out.flush()) throw io_error("predictions: failed writing '" + path.string() + "'");
}

}  // namespace tinyqe
