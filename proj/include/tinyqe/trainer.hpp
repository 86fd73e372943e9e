#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "tinyqe/checkpoint.hpp"
#include "tinyqe/corpus.hpp"
#include "tinyqe/error.hpp"
#include "tinyqe/model.hpp"
#include "tinyqe/random.hpp"

namespace tinyqe {

struct TrainConfig {
    float learning_rate = 2e-5f;
    std::size_t batch_size = 8;
    std::size_t epochs = 3;
    std::size_t patience = 10;      // evaluation rounds without improvement
    std::size_t eval_every = 0;     // steps per evaluation round; 0 = once per epoch
    std::uint32_t seed = 42;
    bool shuffle = true;
    std::string checkpoint_path;    // best model mirrored to disk when set

    void validate() const {
        // learning_rate == 0 is allowed: it freezes the model, which the
        // early-stopping machinery and its tests rely on.
        if (learning_rate < 0.0f || !std::isfinite(learning_rate))
            throw config_error("train config: learning rate must be finite and non-negative");
        if (batch_size < 1) throw config_error("train config: batch_size must be at least 1");
        if (epochs < 1) throw config_error("train config: epochs must be at least 1");
        if (patience < 1) throw config_error("train config: patience must be at least 1");
    }
};

struct AdamState {
    struct Slot {
        std::vector<float> m;
        std::vector<float> v;
    };
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    std::int64_t t = 0;
    std::map<std::string, Slot> slots;
};

// One Adam update with bias correction over a named parameter set. Scans
// every gradient for NaN before mutating anything, so a poisoned step aborts
// without leaving parameters half-updated.
inline void adam_step(const std::vector<std::pair<std::string, Tensor*>>& params,
                      const std::map<std::string, std::vector<float>>& grads, AdamState& state, float lr) {
    for (const auto& [name, param] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) throw contract_error("adam: no gradient for parameter '" + name + "'");
        if (it->second.size() != param->numel())
            throw shape_error("adam: gradient for '" + name + "' has " + std::to_string(it->second.size()) +
                              " elements, parameter has " + std::to_string(param->numel()));
        for (float g : it->second)
            if (std::isnan(g)) throw numeric_error("adam: NaN gradient in parameter '" + name + "'");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.t));
    for (const auto& [name, param] : params) {
        const auto& g = grads.at(name);
        auto& slot = state.slots[name];
        if (slot.m.empty()) {
            slot.m.assign(param->numel(), 0.0f);
            slot.v.assign(param->numel(), 0.0f);
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            slot.m[i] = state.beta1 * slot.m[i] + (1.0f - state.beta1) * g[i];
            slot.v[i] = state.beta2 * slot.v[i] + (1.0f - state.beta2) * g[i] * g[i];
            const float m_hat = static_cast<float>(slot.m[i] / bc1);
            const float v_hat = static_cast<float>(slot.v[i] / bc2);
            param->data[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

// Full-dataset MSE with dropout off; never mutates the model.
inline float evaluate_loss(const QEModel& model, const Dataset& dataset) {
    if (dataset.pairs.empty()) throw contract_error("evaluate_loss: empty dataset");
    std::vector<float> preds, gold;
    preds.reserve(dataset.pairs.size());
    gold.reserve(dataset.pairs.size());
    for (const auto& pair : dataset.pairs) {
        if (!pair.z_mean.has_value())
            throw contract_error("evaluate_loss: segment '" + pair.segment_id + "' lacks a label");
        preds.push_back(predict(model, pair.source, pair.target));
        gold.push_back(static_cast<float>(*pair.z_mean));
    }
    return mse_loss(preds, gold);
}

struct TrainRecord {
    std::size_t step = 0;
    std::string split;  // "train" | "dev"
    float loss = 0.0f;

    bool operator==(const TrainRecord&) const = default;
};

using TrainLog = std::vector<TrainRecord>;

inline std::string serialize_train_log(const TrainLog& log) {
    std::string out;
    for (const auto& rec : log) {
        out += std::to_string(rec.step);
        out += '\t';
        out += rec.split;
        out += '\t';
        out += format_double(static_cast<double>(rec.loss));
        out += '\n';
    }
    return out;
}

inline void write_train_log(const TrainLog& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("train log: cannot open '" + path.string() + "' for writing");
    out << serialize_train_log(log);
    if (!out.flush()) throw io_error("train log: failed writing '" + path.string() + "'");
}

struct TrainResult {
    QEModel model;  // the best-eval-loss checkpoint, not the final state
    TrainLog log;
    float best_eval_loss = 0.0f;
    std::size_t eval_rounds = 0;
    bool stopped_early = false;
};

inline constexpr float kImprovementTolerance = 1e-6f;

// Mini-batch MSE training with Adam and patience-based early stopping. An
// evaluation round improves only when its loss beats the best seen by more
// than the tolerance; improvement checkpoints the model, anything else ages
// the patience counter.
inline TrainResult train(QEModel model, const Dataset& train_set, const Dataset& dev_set, const TrainConfig& config) {
    config.validate();
    model.validate();
    if (train_set.pairs.empty()) throw contract_error("train: empty training set");
    if (dev_set.pairs.empty()) throw contract_error("train: empty dev set");

    RandomSource rng(config.seed);
    AdamState adam;
    TrainResult result;

    std::vector<std::pair<std::string, Tensor*>> params;
    model.for_each_parameter([&params](const std::string& name, Tensor& t) { params.emplace_back(name, &t); });

    // Token sequences are fixed per pair; build them once.
    std::vector<TokenSequence> sequences;
    std::vector<float> targets;
    sequences.reserve(train_set.pairs.size());
    for (const auto& pair : train_set.pairs) {
        if (!pair.z_mean.has_value())
            throw contract_error("train: segment '" + pair.segment_id + "' lacks a label");
        sequences.push_back(build_input(pair.source, pair.target, model.config.max_len));
        targets.push_back(static_cast<float>(*pair.z_mean));
    }

    float best_loss = std::numeric_limits<float>::infinity();
    QEModel best_model = model;
    bool have_best = false;
    std::size_t rounds_since_improvement = 0;
    std::size_t step = 0;
    bool stop = false;

    auto run_eval_round = [&]() {
        const float eval_loss = evaluate_loss(model, dev_set);
        result.log.push_back({step, "dev", eval_loss});
        result.eval_rounds += 1;
        if (!std::isfinite(eval_loss))
            throw numeric_error("train: evaluation loss diverged at step " + std::to_string(step));
        if (eval_loss < best_loss - kImprovementTolerance) {
            best_loss = eval_loss;
            best_model = model;
            have_best = true;
            rounds_since_improvement = 0;
            if (!config.checkpoint_path.empty()) save_checkpoint(best_model, config.checkpoint_path);
        } else {
            rounds_since_improvement += 1;
            if (rounds_since_improvement >= config.patience) stop = true;
        }
    };

    std::vector<std::size_t> order(train_set.pairs.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.epochs && !stop; ++epoch) {
        if (config.shuffle) rng.shuffle(order);
        for (std::size_t begin = 0; begin < order.size() && !stop; begin += config.batch_size) {
            const std::size_t end = std::min(begin + config.batch_size, order.size());
            Tape tape;
            for (auto& [name, tensor] : params) tape.watch(*tensor);
            Tensor total;
            for (std::size_t i = begin; i < end; ++i) {
                const std::size_t idx = order[i];
                Tensor score = score_sequence(model, sequences[idx], /*train_mode=*/true, &tape, &rng);
                Tensor residual = sub(score, Tensor({1, 1}, std::vector<float>{targets[idx]}), &tape);
                Tensor squared = hadamard(residual, residual, &tape);
                total = total.numel() == 0 ? squared : add(total, squared, &tape);
            }
            Tensor loss = scale(total, 1.0f / static_cast<float>(end - begin), &tape);
            step += 1;
            result.log.push_back({step, "train", loss.data[0]});
            tape.backward(loss.node);
            std::map<std::string, std::vector<float>> grads;
            for (auto& [name, tensor] : params) grads[name] = tape.grad(tensor->node);
            adam_step(params, grads, adam, config.learning_rate);
            if (!model.finite())
                throw numeric_error("train: parameters diverged after step " + std::to_string(step));
            if (config.eval_every > 0 && step % config.eval_every == 0) run_eval_round();
        }
        if (config.eval_every == 0 && !stop) run_eval_round();
    }

    if (!have_best && result.eval_rounds == 0) run_eval_round();

    result.model = have_best ? std::move(best_model) : std::move(model);
    result.best_eval_loss = best_loss;
    result.stopped_early = stop;
    return result;
}

}  // namespace tinyqe
