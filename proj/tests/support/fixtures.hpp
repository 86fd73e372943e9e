#pragma once

// Shared test fixtures: a tiny model configuration, tape-based batch loss
// with gradients, and a synthetic corpus whose gold label is the z-scored
// positional byte-overlap between source and target.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tinyqe/corpus.hpp"
#include "tinyqe/model.hpp"
#include "tinyqe/random.hpp"

namespace tinyqe::testing {

inline EncoderConfig micro_config() {
    EncoderConfig config;
    config.d_model = 8;
    config.n_heads = 2;
    config.n_layers = 1;
    config.d_ff = 16;
    config.max_len = 16;
    config.dropout_rate = 0.0f;
    return config;
}

struct LabeledPair {
    std::string source;
    std::string target;
    float gold;
};

// Mean squared error of the model over the pairs, computed without a tape.
inline double batch_loss(const QEModel& model, const std::vector<LabeledPair>& pairs) {
    std::vector<float> preds, gold;
    for (const auto& p : pairs) {
        preds.push_back(predict(model, p.source, p.target));
        gold.push_back(p.gold);
    }
    return static_cast<double>(mse_loss(preds, gold));
}

// Same objective through the tape; returns analytic gradients per parameter.
inline std::map<std::string, std::vector<float>> batch_loss_gradients(QEModel& model,
                                                                      const std::vector<LabeledPair>& pairs) {
    Tape tape;
    std::vector<std::pair<std::string, Tensor*>> params;
    model.for_each_parameter([&params](const std::string& name, Tensor& t) { params.emplace_back(name, &t); });
    for (auto& [name, tensor] : params) tape.watch(*tensor);
    Tensor total;
    for (const auto& p : pairs) {
        TokenSequence seq = build_input(p.source, p.target, model.config.max_len);
        Tensor score = score_sequence(model, seq, /*train_mode=*/false, &tape);
        Tensor residual = sub(score, Tensor({1, 1}, std::vector<float>{p.gold}), &tape);
        Tensor squared = hadamard(residual, residual, &tape);
        total = total.numel() == 0 ? squared : add(total, squared, &tape);
    }
    Tensor loss = scale(total, 1.0f / static_cast<float>(pairs.size()), &tape);
    tape.backward(loss.node);
    std::map<std::string, std::vector<float>> grads;
    for (auto& [name, tensor] : params) grads[name] = tape.grad(tensor->node);
    return grads;
}

// Synthetic quality-estimation task. Sources are random words over 'a'..'m';
// targets are copies with a random fraction of letters replaced from the
// disjoint range 'n'..'z'. The gold label is the z-scored fraction of
// positions left intact, so score and surface overlap agree by construction.
inline Dataset make_overlap_dataset(std::size_t n, std::uint32_t seed, const std::string& id_prefix,
                                    std::size_t min_len = 24, std::size_t max_len = 48) {
    RandomSource rng(seed);
    Dataset dataset;
    dataset.language_pair = "en-xx";
    std::vector<std::vector<double>> raw_rows;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t len = min_len + rng.below(static_cast<std::uint32_t>(max_len - min_len + 1));
        std::string source;
        for (std::size_t j = 0; j < len; ++j) {
            const std::uint32_t c = rng.below(14);
            source.push_back(c == 13 ? ' ' : static_cast<char>('a' + c));
        }
        const float corrupt_rate = rng.uniform() * 0.9f;
        std::string target = source;
        std::size_t intact = 0;
        for (std::size_t j = 0; j < len; ++j) {
            if (target[j] != ' ' && rng.uniform() < corrupt_rate)
                target[j] = static_cast<char>('n' + rng.below(13));
            if (target[j] == source[j]) ++intact;
        }
        const double overlap = static_cast<double>(intact) / static_cast<double>(len);
        AnnotatedPair pair;
        pair.segment_id = id_prefix + std::to_string(i);
        pair.source = std::move(source);
        pair.target = std::move(target);
        pair.raw_scores = {overlap * 100.0};
        dataset.pairs.push_back(std::move(pair));
        raw_rows.push_back({overlap * 100.0});
    }
    const std::vector<double> z = zscore_normalize(raw_rows);
    for (std::size_t i = 0; i < n; ++i) dataset.pairs[i].z_mean = z[i];
    return dataset;
}

}  // namespace tinyqe::testing
