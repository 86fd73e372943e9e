#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tinyqe/error.hpp"
#include "tinyqe/random.hpp"
#include "tinyqe/tensor.hpp"

namespace tinyqe {

// Byte-level vocabulary: 4 specials followed by the 256 raw byte values.
// Total coverage, exact round trip, no language assumptions.
namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kCls = 1;
inline constexpr int kSep = 2;
inline constexpr int kUnk = 3;
inline constexpr int kByteOffset = 4;
inline constexpr std::size_t kSize = 260;
}  // namespace vocab

inline std::vector<int> tokenize(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char byte : text) ids.push_back(static_cast<int>(byte) + vocab::kByteOffset);
    return ids;
}

// Inverse of tokenize; special ids carry no bytes and are skipped.
inline std::string detokenize(std::span<const int> ids) {
    std::string text;
    text.reserve(ids.size());
    for (int id : ids) {
        if (id < vocab::kByteOffset || id >= static_cast<int>(vocab::kSize)) continue;
        text.push_back(static_cast<char>(id - vocab::kByteOffset));
    }
    return text;
}

struct TokenSequence {
    std::vector<int> ids;
    std::vector<int> attention_mask;  // 1 on real tokens, 0 on padding

    std::size_t size() const { return ids.size(); }
};

// [CLS] source [SEP] target [SEP]. When the pair is too long, tokens are
// dropped one at a time from the end of whichever segment is currently
// longer, so both prefixes survive.
inline TokenSequence build_input(std::string_view source, std::string_view target, std::size_t max_len) {
    if (max_len < 5) throw config_error("build_input: max_len must be at least 5, got " + std::to_string(max_len));
    std::vector<int> src = tokenize(source);
    std::vector<int> tgt = tokenize(target);
    while (src.size() + tgt.size() + 3 > max_len) {
        if (src.size() >= tgt.size())
            src.pop_back();
        else
            tgt.pop_back();
    }
    TokenSequence seq;
    seq.ids.reserve(src.size() + tgt.size() + 3);
    seq.ids.push_back(vocab::kCls);
    seq.ids.insert(seq.ids.end(), src.begin(), src.end());
    seq.ids.push_back(vocab::kSep);
    seq.ids.insert(seq.ids.end(), tgt.begin(), tgt.end());
    seq.ids.push_back(vocab::kSep);
    seq.attention_mask.assign(seq.ids.size(), 1);
    return seq;
}

// Appends [PAD] tokens with mask 0 up to target_len.
inline TokenSequence padded(TokenSequence seq, std::size_t target_len) {
    if (target_len < seq.size())
        throw contract_error("padded: target length " + std::to_string(target_len) + " shorter than sequence of " +
                             std::to_string(seq.size()));
    seq.ids.resize(target_len, vocab::kPad);
    seq.attention_mask.resize(target_len, 0);
    return seq;
}

enum class Pooling { kCls, kMean, kMax };

inline std::string to_string(Pooling p) {
    switch (p) {
        case Pooling::kCls: return "cls";
        case Pooling::kMean: return "mean";
        case Pooling::kMax: return "max";
    }
    throw contract_error("pooling: unknown variant");
}

inline Pooling pooling_from_string(std::string_view name) {
    if (name == "cls") return Pooling::kCls;
    if (name == "mean") return Pooling::kMean;
    if (name == "max") return Pooling::kMax;
    throw config_error("pooling: unknown strategy '" + std::string(name) + "' (expected cls|mean|max)");
}

struct EncoderConfig {
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::size_t d_ff = 256;
    std::size_t max_len = 512;
    std::size_t vocab_size = vocab::kSize;
    float dropout_rate = 0.1f;

    void validate() const {
        if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0)
            throw config_error("encoder config: dimensions must be positive");
        if (d_model % n_heads != 0)
            throw config_error("encoder config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                               std::to_string(n_heads));
        if (max_len < 5) throw config_error("encoder config: max_len must be at least 5");
        if (vocab_size != vocab::kSize)
            throw config_error("encoder config: vocab_size must be " + std::to_string(vocab::kSize));
        if (dropout_rate < 0.0f || dropout_rate >= 1.0f)
            throw config_error("encoder config: dropout_rate must lie in [0, 1)");
    }

    bool operator==(const EncoderConfig&) const = default;
};

struct LayerWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;
};

struct EncoderWeights {
    Tensor token_embedding;     // [vocab x d_model]
    Tensor position_embedding;  // [max_len x d_model]
    std::vector<LayerWeights> layers;
    Tensor final_gain, final_bias;  // closing norm of the pre-norm stack

    static EncoderWeights init(const EncoderConfig& config, RandomSource& rng) {
        config.validate();
        const std::size_t d = config.d_model, ff = config.d_ff;
        auto normal = [&rng](std::vector<std::size_t> shape, float stddev) {
            Tensor t(std::move(shape));
            for (auto& v : t.data) v = rng.normal(0.0f, stddev);
            return t;
        };
        auto glorot = [&normal](std::size_t fan_in, std::size_t fan_out) {
            return normal({fan_in, fan_out}, std::sqrt(2.0f / static_cast<float>(fan_in + fan_out)));
        };
        EncoderWeights w;
        w.token_embedding = normal({config.vocab_size, d}, 0.02f);
        w.position_embedding = normal({config.max_len, d}, 0.02f);
        w.layers.resize(config.n_layers);
        for (auto& layer : w.layers) {
            layer.wq = glorot(d, d);
            layer.bq = Tensor({d});
            layer.wk = glorot(d, d);
            layer.bk = Tensor({d});
            layer.wv = glorot(d, d);
            layer.bv = Tensor({d});
            layer.wo = glorot(d, d);
            layer.bo = Tensor({d});
            layer.ln1_gain = Tensor({d}, 1.0f);
            layer.ln1_bias = Tensor({d});
            layer.ln2_gain = Tensor({d}, 1.0f);
            layer.ln2_bias = Tensor({d});
            layer.w1 = glorot(d, ff);
            layer.b1 = Tensor({ff});
            layer.w2 = glorot(ff, d);
            layer.b2 = Tensor({d});
        }
        w.final_gain = Tensor({d}, 1.0f);
        w.final_bias = Tensor({d});
        return w;
    }

    template <typename Fn>
    void for_each_parameter(Fn&& fn) {
        fn("embed.token", token_embedding);
        fn("embed.position", position_embedding);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string prefix = "layer" + std::to_string(i) + ".";
            auto& l = layers[i];
            fn(prefix + "attn.wq", l.wq);
            fn(prefix + "attn.bq", l.bq);
            fn(prefix + "attn.wk", l.wk);
            fn(prefix + "attn.bk", l.bk);
            fn(prefix + "attn.wv", l.wv);
            fn(prefix + "attn.bv", l.bv);
            fn(prefix + "attn.wo", l.wo);
            fn(prefix + "attn.bo", l.bo);
            fn(prefix + "norm1.gain", l.ln1_gain);
            fn(prefix + "norm1.bias", l.ln1_bias);
            fn(prefix + "norm2.gain", l.ln2_gain);
            fn(prefix + "norm2.bias", l.ln2_bias);
            fn(prefix + "ffn.w1", l.w1);
            fn(prefix + "ffn.b1", l.b1);
            fn(prefix + "ffn.w2", l.w2);
            fn(prefix + "ffn.b2", l.b2);
        }
        fn("final_norm.gain", final_gain);
        fn("final_norm.bias", final_bias);
    }

    template <typename Fn>
    void for_each_parameter(Fn&& fn) const {
        const_cast<EncoderWeights*>(this)->for_each_parameter(
            [&fn](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
    }

    bool finite() const {
        bool ok = true;
        for_each_parameter([&ok](const std::string&, const Tensor& t) { ok = ok && t.finite(); });
        return ok;
    }

    void validate_against(const EncoderConfig& config) const {
        const std::size_t d = config.d_model, ff = config.d_ff;
        auto expect = [](const Tensor& t, std::vector<std::size_t> shape, const std::string& name) {
            if (t.shape != shape)
                throw config_error("encoder weights: " + name + " has shape " + detail::shape_str(t.shape) +
                                   ", expected " + detail::shape_str(shape));
        };
        expect(token_embedding, {config.vocab_size, d}, "embed.token");
        expect(position_embedding, {config.max_len, d}, "embed.position");
        if (layers.size() != config.n_layers)
            throw config_error("encoder weights: layer count " + std::to_string(layers.size()) + " != n_layers " +
                               std::to_string(config.n_layers));
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            const std::string prefix = "layer" + std::to_string(i) + ".";
            expect(l.wq, {d, d}, prefix + "attn.wq");
            expect(l.bq, {d}, prefix + "attn.bq");
            expect(l.wk, {d, d}, prefix + "attn.wk");
            expect(l.bk, {d}, prefix + "attn.bk");
            expect(l.wv, {d, d}, prefix + "attn.wv");
            expect(l.bv, {d}, prefix + "attn.bv");
            expect(l.wo, {d, d}, prefix + "attn.wo");
            expect(l.bo, {d}, prefix + "attn.bo");
            expect(l.ln1_gain, {d}, prefix + "norm1.gain");
            expect(l.ln1_bias, {d}, prefix + "norm1.bias");
            expect(l.ln2_gain, {d}, prefix + "norm2.gain");
            expect(l.ln2_bias, {d}, prefix + "norm2.bias");
            expect(l.w1, {d, ff}, prefix + "ffn.w1");
            expect(l.b1, {ff}, prefix + "ffn.b1");
            expect(l.w2, {ff, d}, prefix + "ffn.w2");
            expect(l.b2, {d}, prefix + "ffn.b2");
        }
        expect(final_gain, {d}, "final_norm.gain");
        expect(final_bias, {d}, "final_norm.bias");
    }
};

inline constexpr float kLayerNormEps = 1e-5f;

// Pre-norm transformer encoder over one token sequence. Returns one hidden
// vector per position, [len x d_model]. Masked key positions receive -inf
// attention logits; dropout runs only in training mode.
inline Tensor encode(const TokenSequence& seq, const EncoderWeights& weights, const EncoderConfig& config,
                     bool train_mode, Tape* tape = nullptr, RandomSource* rng = nullptr) {
    config.validate();
    weights.validate_against(config);
    const std::size_t len = seq.size();
    if (len == 0) throw contract_error("encode: empty sequence");
    if (len > config.max_len)
        throw contract_error("encode: sequence of " + std::to_string(len) + " tokens exceeds max_len " +
                             std::to_string(config.max_len));
    if (seq.attention_mask.size() != len) throw contract_error("encode: mask length does not match ids");
    if (seq.ids[0] != vocab::kCls) throw contract_error("encode: model inputs must start with [CLS]");
    const bool use_dropout = train_mode && config.dropout_rate > 0.0f;
    if (use_dropout && rng == nullptr)
        throw contract_error("encode: training mode with dropout needs a random source");

    const std::size_t d = config.d_model;
    const std::size_t head_dim = d / config.n_heads;
    const float attn_scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

    auto drop = [&](const Tensor& t) { return use_dropout ? dropout(t, config.dropout_rate, *rng, tape) : t; };

    Tensor x = add(gather_rows(weights.token_embedding, seq.ids, tape),
                   row_slice(weights.position_embedding, 0, len, tape), tape);
    x = drop(x);

    for (const auto& layer : weights.layers) {
        Tensor normed = layer_norm_rows(x, layer.ln1_gain, layer.ln1_bias, kLayerNormEps, tape);
        Tensor q = add_row_broadcast(matmul(normed, layer.wq, tape), layer.bq, tape);
        Tensor k = add_row_broadcast(matmul(normed, layer.wk, tape), layer.bk, tape);
        Tensor v = add_row_broadcast(matmul(normed, layer.wv, tape), layer.bv, tape);
        std::vector<Tensor> heads;
        heads.reserve(config.n_heads);
        for (std::size_t h = 0; h < config.n_heads; ++h) {
            Tensor qh = col_slice(q, h * head_dim, head_dim, tape);
            Tensor kh = col_slice(k, h * head_dim, head_dim, tape);
            Tensor vh = col_slice(v, h * head_dim, head_dim, tape);
            Tensor logits = scale(matmul(qh, transpose(kh, tape), tape), attn_scale, tape);
            Tensor attn = softmax_rows(mask_logits(logits, seq.attention_mask, tape), tape);
            heads.push_back(matmul(attn, vh, tape));
        }
        Tensor merged = col_concat(heads, tape);
        Tensor attn_out = add_row_broadcast(matmul(merged, layer.wo, tape), layer.bo, tape);
        x = add(x, drop(attn_out), tape);

        Tensor normed2 = layer_norm_rows(x, layer.ln2_gain, layer.ln2_bias, kLayerNormEps, tape);
        Tensor hidden = activation(add_row_broadcast(matmul(normed2, layer.w1, tape), layer.b1, tape), tape);
        Tensor ffn_out = add_row_broadcast(matmul(hidden, layer.w2, tape), layer.b2, tape);
        x = add(x, drop(ffn_out), tape);
    }

    return layer_norm_rows(x, weights.final_gain, weights.final_bias, kLayerNormEps, tape);
}

// Collapses per-token hidden states to one vector, [1 x d_model].
inline Tensor pool(const Tensor& hidden, const std::vector<int>& mask, Pooling strategy, Tape* tape = nullptr) {
    if (hidden.rows() < 1) throw contract_error("pool: empty hidden state");
    if (mask.size() != hidden.rows()) throw shape_error("pool: mask length does not match row count");
    bool any = false;
    for (int v : mask) any = any || v != 0;
    if (!any) throw degenerate_error("pool: mask selects no rows");
    switch (strategy) {
        case Pooling::kCls: return row_slice(hidden, 0, 1, tape);
        case Pooling::kMean: return masked_mean_rows(hidden, mask, tape);
        case Pooling::kMax: return masked_max_rows(hidden, mask, tape);
    }
    throw contract_error("pool: unknown strategy");
}

}  // namespace tinyqe
