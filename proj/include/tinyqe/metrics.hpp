#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tinyqe/corpus.hpp"
#include "tinyqe/error.hpp"

namespace tinyqe {

struct CorrelationReport {
    std::string method_name;
    std::string language_pair;
    double spearman_rho = 0.0;
    double pearson_r = 0.0;
    std::size_t n = 0;
};

// Pearson r, two-pass mean-subtracted sums in double.
inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw contract_error("pearson: lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()) +
                             " disagree");
    const std::size_t n = x.size();
    if (n < 2) throw contract_error("pearson: need at least 2 samples");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw degenerate_error("pearson: correlation undefined for a constant vector");
    // rounding can push a perfect correlation an ulp past 1
    return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

// Ascending fractional ranks starting at 1; ties share the mean of the rank
// positions they occupy.
inline std::vector<double> average_ranks(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n == 0) throw contract_error("average_ranks: empty input");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&x](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

// Spearman rho: Pearson correlation of the two rank vectors.
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw contract_error("spearman: lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()) +
                             " disagree");
    if (x.size() < 2) throw contract_error("spearman: need at least 2 samples");
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    return pearson(rx, ry);
}

// Aligns predictions to gold labels by segment id (row order irrelevant) and
// computes both correlation coefficients.
inline CorrelationReport evaluate(const PredictionSet& preds, const Dataset& gold, std::string method_name = "model",
                                  std::string language_pair = "") {
    std::unordered_map<std::string, double> by_id;
    by_id.reserve(preds.size());
    for (const auto& seg : preds) {
        if (!by_id.emplace(seg.segment_id, seg.score).second)
            throw integrity_error("evaluate: duplicate prediction for segment '" + seg.segment_id + "'");
    }
    std::vector<double> x, y;
    x.reserve(gold.pairs.size());
    y.reserve(gold.pairs.size());
    for (const auto& pair : gold.pairs) {
        auto it = by_id.find(pair.segment_id);
        if (it == by_id.end())
            throw alignment_error("evaluate: no prediction for segment '" + pair.segment_id + "'");
        if (!pair.z_mean.has_value())
            throw contract_error("evaluate: gold segment '" + pair.segment_id + "' lacks a label");
        x.push_back(it->second);
        y.push_back(*pair.z_mean);
    }
    if (x.size() < 2) throw contract_error("evaluate: need at least 2 aligned segments");

    CorrelationReport report;
    report.method_name = std::move(method_name);
    report.language_pair = language_pair.empty() ? gold.language_pair : std::move(language_pair);
    report.spearman_rho = spearman(x, y);
    report.pearson_r = pearson(x, y);
    report.n = x.size();
    return report;
}

}  // namespace tinyqe
