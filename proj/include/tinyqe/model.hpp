#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "tinyqe/encoder.hpp"
#include "tinyqe/error.hpp"
#include "tinyqe/tensor.hpp"

namespace tinyqe {

// Cross-encoder regressor: encoder over the concatenated (source, target)
// pair, one pooled vector, affine head producing an unbounded quality score.
struct QEModel {
    EncoderConfig config;
    EncoderWeights weights;
    Tensor head_weight;  // [d_model x 1]
    Tensor head_bias;    // [1]
    Pooling pooling = Pooling::kCls;

    // Head starts at zero so the initial prediction is 0, the mean of
    // z-scored targets.
    static QEModel init(const EncoderConfig& config, std::uint32_t seed, Pooling pooling = Pooling::kCls) {
        config.validate();
        RandomSource rng(seed);
        QEModel model;
        model.config = config;
        model.weights = EncoderWeights::init(config, rng);
        model.head_weight = Tensor({config.d_model, 1});
        model.head_bias = Tensor({1, 1});
        model.pooling = pooling;
        return model;
    }

    template <typename Fn>
    void for_each_parameter(Fn&& fn) {
        weights.for_each_parameter(fn);
        fn("head.weight", head_weight);
        fn("head.bias", head_bias);
    }

    template <typename Fn>
    void for_each_parameter(Fn&& fn) const {
        const_cast<QEModel*>(this)->for_each_parameter(
            [&fn](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
    }

    bool finite() const {
        bool ok = true;
        for_each_parameter([&ok](const std::string&, const Tensor& t) { ok = ok && t.finite(); });
        return ok;
    }

    void validate() const {
        config.validate();
        weights.validate_against(config);
        if (head_weight.shape != std::vector<std::size_t>{config.d_model, 1})
            throw config_error("model: head weight has shape " + detail::shape_str(head_weight.shape) +
                               ", expected [" + std::to_string(config.d_model) + "x1]");
        if (head_bias.shape != std::vector<std::size_t>{1, 1})
            throw config_error("model: head bias must be a single scalar");
    }
};

// Full forward pass to a scalar score node; shared by inference and training.
inline Tensor score_sequence(const QEModel& model, const TokenSequence& seq, bool train_mode, Tape* tape = nullptr,
                             RandomSource* rng = nullptr) {
    Tensor hidden = encode(seq, model.weights, model.config, train_mode, tape, rng);
    Tensor pooled = pool(hidden, seq.attention_mask, model.pooling, tape);
    Tensor projected = matmul(pooled, model.head_weight, tape);
    return add(projected, model.head_bias, tape);
}

inline float predict(const QEModel& model, std::string_view source, std::string_view target) {
    TokenSequence seq = build_input(source, target, model.config.max_len);
    return score_sequence(model, seq, /*train_mode=*/false).data[0];
}

// (1/n) * sum((pred - gold)^2); double accumulator, float result.
inline float mse_loss(const std::vector<float>& preds, const std::vector<float>& gold) {
    if (preds.size() != gold.size())
        throw contract_error("mse_loss: " + std::to_string(preds.size()) + " predictions vs " +
                             std::to_string(gold.size()) + " gold labels");
    if (preds.empty()) throw contract_error("mse_loss: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double r = static_cast<double>(preds[i]) - static_cast<double>(gold[i]);
        acc += r * r;
    }
    return static_cast<float>(acc / static_cast<double>(preds.size()));
}

}  // namespace tinyqe
