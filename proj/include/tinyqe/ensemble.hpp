#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "tinyqe/corpus.hpp"
#include "tinyqe/error.hpp"

namespace tinyqe {

struct EnsembleSpec {
    std::vector<PredictionSet> member_predictions;
    std::vector<std::string> member_names;  // optional; aligned with members when present
};

// Unweighted per-segment mean of the member scores. Members must cover the
// same segment ids; output follows the first member's segment order.
inline PredictionSet average_predictions(const EnsembleSpec& spec) {
    const std::size_t k = spec.member_predictions.size();
    if (k == 0) throw contract_error("ensemble: no member prediction sets");
    if (!spec.member_names.empty() && spec.member_names.size() != k)
        throw contract_error("ensemble: member names do not match member count");

    auto member_name = [&spec](std::size_t i) {
        return spec.member_names.empty() ? "member " + std::to_string(i) : "'" + spec.member_names[i] + "'";
    };

    std::set<std::string> reference_ids;
    for (const auto& seg : spec.member_predictions.front()) {
        if (!reference_ids.insert(seg.segment_id).second)
            throw integrity_error("ensemble: duplicate segment id '" + seg.segment_id + "' in " + member_name(0));
    }

    std::vector<double> sums(spec.member_predictions.front().size(), 0.0);
    std::unordered_map<std::string, std::size_t> slot;
    slot.reserve(reference_ids.size());
    for (std::size_t i = 0; i < spec.member_predictions.front().size(); ++i)
        slot[spec.member_predictions.front()[i].segment_id] = i;

    for (std::size_t m = 0; m < k; ++m) {
        const auto& member = spec.member_predictions[m];
        std::set<std::string> ids;
        for (const auto& seg : member) {
            if (!ids.insert(seg.segment_id).second)
                throw integrity_error("ensemble: duplicate segment id '" + seg.segment_id + "' in " +
                                      member_name(m));
        }
        if (ids != reference_ids) {
            std::vector<std::string> diff;
            std::set_symmetric_difference(ids.begin(), ids.end(), reference_ids.begin(), reference_ids.end(),
                                          std::back_inserter(diff));
            std::string listed;
            for (std::size_t i = 0; i < diff.size() && i < 8; ++i) {
                if (i) listed += ", ";
                listed += "'" + diff[i] + "'";
            }
            if (diff.size() > 8) listed += ", ...";
            throw alignment_error("ensemble: " + member_name(m) + " covers different segments than " +
                                  member_name(0) + " (symmetric difference: " + listed + ")");
        }
        for (const auto& seg : member) sums[slot[seg.segment_id]] += seg.score;
    }

    PredictionSet out;
    out.reserve(sums.size());
    for (std::size_t i = 0; i < sums.size(); ++i)
        out.push_back({spec.member_predictions.front()[i].segment_id, sums[i] / static_cast<double>(k)});
    return out;
}

}  // namespace tinyqe
