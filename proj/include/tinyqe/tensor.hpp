#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tinyqe/error.hpp"
#include "tinyqe/random.hpp"

namespace tinyqe {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

namespace detail {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

}  // namespace detail

// Dense row-major float32 tensor. `node` ties the tensor to the tape that
// recorded it; `tape_serial` guards against ids leaking across tapes.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until filled from a tape
    NodeId node = kNoNode;
    std::uint64_t tape_serial = 0;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, float fill = 0.0f) : shape(std::move(s)) {
        validate_shape();
        data.assign(detail::shape_numel(shape), fill);
    }

    Tensor(std::vector<std::size_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        validate_shape();
        if (detail::shape_numel(shape) != data.size()) {
            throw shape_error("tensor: shape " + detail::shape_str(shape) + " does not match buffer of " +
                              std::to_string(data.size()) + " elements");
        }
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows_init) {
        std::size_t m = rows_init.size();
        std::size_t n = m ? rows_init.begin()->size() : 0;
        std::vector<float> buf;
        buf.reserve(m * n);
        for (const auto& row : rows_init) {
            if (row.size() != n) throw shape_error("tensor: ragged matrix initializer");
            buf.insert(buf.end(), row.begin(), row.end());
        }
        return Tensor({m, n}, std::move(buf));
    }

    static Tensor vec(std::initializer_list<float> values) {
        return Tensor({values.size()}, std::vector<float>(values));
    }

    std::size_t numel() const { return data.size(); }

    std::size_t rows() const {
        require_2d();
        return shape[0];
    }
    std::size_t cols() const {
        require_2d();
        return shape[1];
    }

    float& at(std::size_t i, std::size_t j) {
        require_2d();
        return data[i * shape[1] + j];
    }
    float at(std::size_t i, std::size_t j) const {
        require_2d();
        return data[i * shape[1] + j];
    }

    bool finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

   private:
    void validate_shape() const {
        for (std::size_t d : shape)
            if (d == 0) throw shape_error("tensor: zero dimension in shape " + detail::shape_str(shape));
    }
    void require_2d() const {
        if (shape.size() != 2) throw shape_error("tensor: expected 2-D, got " + detail::shape_str(shape));
    }
};

// Define-by-run tape. Operations append records in execution order, so the
// record list is topologically sorted by construction and every node id is
// produced exactly once. backward() replays the records in reverse.
class Tape {
   public:
    using Pull = std::function<void(Tape&, std::span<const float>)>;

    Tape() : serial_(next_serial().fetch_add(1) + 1) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::uint64_t serial() const { return serial_; }

    // Registers a leaf and stamps the tensor with its node id.
    NodeId watch(Tensor& t) {
        NodeId id = add_node(t.numel());
        t.node = id;
        t.tape_serial = serial_;
        return id;
    }

    // Registers a value the caller does not need gradients for.
    NodeId imprint(const Tensor& t) { return add_node(t.numel()); }

    // Resolves a tensor to a node on this tape, re-registering stale ids.
    NodeId node_of(const Tensor& t) {
        if (t.node != kNoNode && t.tape_serial == serial_ && static_cast<std::size_t>(t.node) < numel_.size())
            return t.node;
        return imprint(t);
    }

    NodeId record(std::vector<NodeId> inputs, std::size_t out_numel, Pull pull) {
        NodeId out = add_node(out_numel);
        for (NodeId in : inputs) {
            if (in < 0 || in >= out) throw tape_error("tape: op input " + std::to_string(in) + " not before output");
        }
        ops_.push_back({std::move(inputs), out, std::move(pull)});
        return out;
    }

    void backward(NodeId loss) {
        if (loss < 0 || static_cast<std::size_t>(loss) >= numel_.size())
            throw tape_error("tape: node " + std::to_string(loss) + " is not on this tape");
        if (numel_[loss] != 1)
            throw contract_error("backward: loss node must be scalar, has " + std::to_string(numel_[loss]) +
                                 " elements");
        for (auto& g : grads_) g.clear();
        grads_[loss] = {1.0f};
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            const auto& g = grads_[it->output];
            if (!g.empty()) it->pull(*this, g);
        }
    }

    // Gradient of a node after backward(); zeros if the loss never reached it.
    std::vector<float> grad(NodeId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= numel_.size())
            throw tape_error("tape: node " + std::to_string(id) + " is not on this tape");
        if (grads_[id].empty()) return std::vector<float>(numel_[id], 0.0f);
        return grads_[id];
    }

    void grad_into(Tensor& t) const {
        if (t.tape_serial != serial_) throw tape_error("tape: tensor was not watched on this tape");
        t.grad = grad(t.node);
    }

    void accumulate(NodeId id, std::span<const float> delta) {
        auto& buf = grads_[id];
        if (buf.empty()) {
            buf.assign(delta.begin(), delta.end());
        } else {
            for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += delta[i];
        }
    }

    std::size_t node_count() const { return numel_.size(); }
    std::size_t node_numel(NodeId id) const { return numel_[id]; }
    std::size_t op_count() const { return ops_.size(); }
    const std::vector<NodeId>& op_inputs(std::size_t i) const { return ops_[i].inputs; }
    NodeId op_output(std::size_t i) const { return ops_[i].output; }

   private:
    struct Record {
        std::vector<NodeId> inputs;
        NodeId output;
        Pull pull;
    };

    static std::atomic<std::uint64_t>& next_serial() {
        static std::atomic<std::uint64_t> counter{0};
        return counter;
    }

    NodeId add_node(std::size_t numel) {
        numel_.push_back(numel);
        grads_.emplace_back();
        return static_cast<NodeId>(numel_.size() - 1);
    }

    std::uint64_t serial_;
    std::vector<std::size_t> numel_;
    std::vector<std::vector<float>> grads_;
    std::vector<Record> ops_;
};

namespace detail {

inline Tensor make_output(std::vector<std::size_t> shape, std::vector<float> data, Tape* tape, NodeId node) {
    Tensor out(std::move(shape), std::move(data));
    if (tape) {
        out.node = node;
        out.tape_serial = tape->serial();
    }
    return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw shape_error(std::string(op) + ": shapes " + shape_str(a.shape) + " and " + shape_str(b.shape) +
                          " disagree");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable operations. Each computes its value eagerly; when a tape is
// supplied it also records a pull rule that routes the output gradient to the
// inputs.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
        throw shape_error("matmul: shapes " + detail::shape_str(a.shape) + " and " + detail::shape_str(b.shape) +
                          " have mismatched inner dimensions");
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    std::vector<float> out(m * n, 0.0f);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const float aip = a.data[i * k + p];
            if (aip == 0.0f) continue;
            const float* brow = &b.data[p * n];
            float* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    NodeId node = kNoNode;
    if (tape) {
        NodeId ia = tape->node_of(a), ib = tape->node_of(b);
        std::vector<float> adata = a.data, bdata = b.data;
        node = tape->record({ia, ib}, m * n,
                            [ia, ib, adata, bdata, m, k, n](Tape& t, std::span<const float> g) {
                                // dA = G * B^T
                                std::vector<float> da(m * k, 0.0f);
                                for (std::size_t i = 0; i < m; ++i)
                                    for (std::size_t j = 0; j < k; ++j) {
                                        float s = 0.0f;
                                        for (std::size_t p = 0; p < n; ++p)
                                            s += g[i * n + p] * bdata[j * n + p];
                                        da[i * k + j] = s;
                                    }
                                t.accumulate(ia, da);
                                // dB = A^T * G
                                std::vector<float> db(k * n, 0.0f);
                                for (std::size_t p = 0; p < m; ++p)
                                    for (std::size_t i = 0; i < k; ++i) {
                                        const float api = adata[p * k + i];
                                        if (api == 0.0f) continue;
                                        for (std::size_t j = 0; j < n; ++j)
                                            db[i * n + j] += api * g[p * n + j];
                                    }
                                t.accumulate(ib, db);
                            });
    }
    return detail::make_output({m, n}, std::move(out), tape, node);
}

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::require_same_shape(a, b, "add");
    std::vector<float> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] + b.data[i];
    NodeId node = kNoNode;
    if (tape) {
        NodeId ia = tape->node_of(a), ib = tape->node_of(b);
        node = tape->record({ia, ib}, out.size(), [ia, ib](Tape& t, std::span<const float> g) {
            t.accumulate(ia, g);
            t.accumulate(ib, g);
        });
    }
    return detail::make_output(a.shape, std::move(out), tape, node);
}

inline Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::require_same_shape(a, b, "sub");
    std::vector<float> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] - b.data[i];
    NodeId node = kNoNode;
    if (tape) {
        NodeId ia = tape->node_of(a), ib = tape->node_of(b);
        node = tape->record({ia, ib}, out.size(), [ia, ib](Tape& t, std::span<const float> g) {
            t.accumulate(ia, g);
            std::vector<float> neg(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
            t.accumulate(ib, neg);
        });
    }
    return detail::make_output(a.shape, std::move(out), tape, node);
}

inline Tensor hadamard(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::require_same_shape(a, b, "hadamard");
    std::vector<float> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] * b.data[i];
    NodeId node = kNoNode;
    if (tape) {
        NodeId ia = tape->node_of(a), ib = tape->node_of(b);
        std::vector<float> adata = a.data, bdata = b.data;
        node = tape->record({ia, ib}, out.size(), [ia, ib, adata, bdata](Tape& t, std::span<const float> g) {
            std::vector<float> d(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * bdata[i];
            t.accumulate(ia, d);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * adata[i];
            t.accumulate(ib, d);
        });
    }
    return detail::make_output(a.shape, std::move(out), tape, node);
}

inline Tensor scale(const Tensor& a, float c, Tape* tape = nullptr) {
    std::vector<float> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] * c;
    NodeId node = kNoNode;
    if (tape) {
        NodeId ia = tape->node_of(a);
        node = tape->record({ia}, out.size(), [ia, c](Tape& t, std::span<const float> g) {
            std::vector<float> d(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * c;
            t.accumulate(ia, d);
        });
    }
    return detail::make_output(a.shape, std::move(out), tape, node);
}

// a[m x n] + bias[n], broadcast across rows
inline Tensor add_row_broadcast(const Tensor& a, const Tensor& bias, Tape* tape = nullptr) {
    if (a.shape.size() != 2 || bias.shape.size() != 1 || bias.shape[0] != a.shape[1])
        throw shape_error("add_row_broadcast: shapes " + detail::shape_str(a.shape) + " and " +
                          detail::shape_str(bias.shape) + " disagree");
    const std::size_t m = a.shape[0], n = a.shape[1];
    std::vector<float> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data[i * n + j] + bias.data[j];
    NodeId node = kNoNode;
    if (tape) {
        NodeId ia = tape->node_of(a), ib = tape->node_of(bias);
        node = tape->record({ia, ib}, m * n, [ia, ib, m, n](Tape& t, std::span<const float> g) {
            t.accumulate(ia, g);
            std::vector<float> db(n, 0.0f);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
            t.accumulate(ib, db);
        });
    }
    return detail::make_output({m, n}, std::move(out), tape, node);
}

inline Tensor transpose(const Tensor& a, Tape* tape = nullptr) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<float> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data[i * n + j];
    NodeId node = kNoNode;
    if (tape) {
        NodeId ia = tape->node_of(a);
        node = tape->record({ia}, m * n, [ia, m, n](Tape& t, std::span<const float> g) {
            std::vector<float> d(m * n);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) d[i * n + j] = g[j * m + i];
            t.accumulate(ia, d);
        });
    }
    return detail::make_output({n, m}, std::move(out), tape, node);
}

// Row-wise softmax, stabilized by subtracting the row max.
inline Tensor softmax_rows(const Tensor& x, Tape* tape = nullptr) {
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<float> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const float* row = &x.data[i * n];
        float mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        float sum = 0.0f;
        for (std::size_t j = 0; j < n; ++j) {
            const float e = std::exp(row[j] - mx);
            out[i * n + j] = e;
            sum += e;
        }
        const float inv = 1.0f / sum;
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= inv;
    }
    NodeId node = kNoNode;
    if (tape) {
        NodeId ix = tape->node_of(x);
        std::vector<float> y = out;
        node = tape->record({ix}, m * n, [ix, y, m, n](Tape& t, std::span<const float> g) {
            // dx_j = y_j * (g_j - sum_k g_k y_k), per row
            std::vector<float> d(m * n);
            for (std::size_t i = 0; i < m; ++i) {
                float dot = 0.0f;
                for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                for (std::size_t j = 0; j < n; ++j) d[i * n + j] = y[i * n + j] * (g[i * n + j] - dot);
            }
            t.accumulate(ix, d);
        });
    }
    return detail::make_output({m, n}, std::move(out), tape, node);
}

// Row-wise layer normalization with population variance:
// out = gain * (x - mean) / sqrt(var + eps) + bias.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps,
                              Tape* tape = nullptr) {
    const std::size_t m = x.rows(), n = x.cols();
    if (n < 2) throw degenerate_error("layer_norm_rows: rows of width " + std::to_string(n) + " are degenerate");
    if (gain.shape != std::vector<std::size_t>{n} || bias.shape != std::vector<std::size_t>{n})
        throw shape_error("layer_norm_rows: gain/bias must have shape [" + std::to_string(n) + "]");
    std::vector<float> out(m * n), xhat(m * n), inv_sigma(m);
    for (std::size_t i = 0; i < m; ++i) {
        const float* row = &x.data[i * n];
        float mean = 0.0f;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<float>(n);
        float var = 0.0f;
        for (std::size_t j = 0; j < n; ++j) {
            const float c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<float>(n);
        const float inv = 1.0f / std::sqrt(var + eps);
        inv_sigma[i] = inv;
        for (std::size_t j = 0; j < n; ++j) {
            const float h = (row[j] - mean) * inv;
            xhat[i * n + j] = h;
            out[i * n + j] = gain.data[j] * h + bias.data[j];
        }
    }
    NodeId node = kNoNode;
    if (tape) {
        NodeId ix = tape->node_of(x), ig = tape->node_of(gain), ib = tape->node_of(bias);
        std::vector<float> gdata = gain.data;
        node = tape->record(
            {ix, ig, ib}, m * n, [ix, ig, ib, xhat, inv_sigma, gdata, m, n](Tape& t, std::span<const float> g) {
                std::vector<float> dgain(n, 0.0f), dbias(n, 0.0f), dx(m * n);
                for (std::size_t i = 0; i < m; ++i) {
                    float mean_h = 0.0f, mean_hx = 0.0f;
                    for (std::size_t j = 0; j < n; ++j) {
                        const float go = g[i * n + j];
                        const float h = go * gdata[j];
                        dgain[j] += go * xhat[i * n + j];
                        dbias[j] += go;
                        mean_h += h;
                        mean_hx += h * xhat[i * n + j];
                    }
                    mean_h /= static_cast<float>(n);
                    mean_hx /= static_cast<float>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const float h = g[i * n + j] * gdata[j];
                        dx[i * n + j] = (h - mean_h - xhat[i * n + j] * mean_hx) * inv_sigma[i];
                    }
                }
                t.accumulate(ix, dx);
                t.accumulate(ig, dgain);
                t.accumulate(ib, dbias);
            });
    }
    return detail::make_output({m, n}, std::move(out), tape, node);
}

namespace detail {
inline constexpr float kGeluCoef = 0.7978845608028654f;  // sqrt(2/pi)
inline constexpr float kGeluCubic = 0.044715f;
}  // namespace detail

// Elementwise GELU, tanh approximation.
inline Tensor activation(const Tensor& x, Tape* tape = nullptr) {
    std::vector<float> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float v = x.data[i];
        const float u = detail::kGeluCoef * (v + detail::kGeluCubic * v * v * v);
        out[i] = 0.5f * v * (1.0f + std::tanh(u));
    }
    NodeId node = kNoNode;
    if (tape) {
        NodeId ix = tape->node_of(x);
        std::vector<float> xdata = x.data;
        node = tape->record({ix}, out.size(), [ix, xdata](Tape& t, std::span<const float> g) {
            std::vector<float> d(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                const float v = xdata[i];
                const float u = detail::kGeluCoef * (v + detail::kGeluCubic * v * v * v);
                const float th = std::tanh(u);
                const float du = detail::kGeluCoef * (1.0f + 3.0f * detail::kGeluCubic * v * v);
                d[i] = g[i] * (0.5f * (1.0f + th) + 0.5f * v * (1.0f - th * th) * du);
            }
            t.accumulate(ix, d);
        });
    }
    return detail::make_output(x.shape, std::move(out), tape, node);
}

// out[i, :] = table[ids[i], :]
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids, Tape* tape = nullptr) {
    const std::size_t v = table.rows(), d = table.cols();
    if (ids.empty()) throw contract_error("gather_rows: empty id list");
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw contract_error("gather_rows: id " + std::to_string(id) + " outside table of " + std::to_string(v) +
                                 " rows");
    const std::size_t L = ids.size();
    std::vector<float> out(L * d);
    for (std::size_t i = 0; i < L; ++i)
        std::copy_n(&table.data[static_cast<std::size_t>(ids[i]) * d], d, &out[i * d]);
    NodeId node = kNoNode;
    if (tape) {
        NodeId it_ = tape->node_of(table);
        node = tape->record({it_}, L * d, [it_, ids, v, d, L](Tape& t, std::span<const float> g) {
            std::vector<float> dt(v * d, 0.0f);
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t j = 0; j < d; ++j) dt[static_cast<std::size_t>(ids[i]) * d + j] += g[i * d + j];
            t.accumulate(it_, dt);
        });
    }
    return detail::make_output({L, d}, std::move(out), tape, node);
}

inline Tensor row_slice(const Tensor& x, std::size_t begin, std::size_t count, Tape* tape = nullptr) {
    const std::size_t m = x.rows(), n = x.cols();
    if (begin + count > m || count == 0)
        throw shape_error("row_slice: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") outside " + detail::shape_str(x.shape));
    std::vector<float> out(count * n);
    std::copy_n(&x.data[begin * n], count * n, out.data());
    NodeId node = kNoNode;
    if (tape) {
        NodeId ix = tape->node_of(x);
        node = tape->record({ix}, count * n, [ix, begin, count, m, n](Tape& t, std::span<const float> g) {
            std::vector<float> d(m * n, 0.0f);
            std::copy_n(g.data(), count * n, &d[begin * n]);
            t.accumulate(ix, d);
        });
    }
    return detail::make_output({count, n}, std::move(out), tape, node);
}

inline Tensor col_slice(const Tensor& x, std::size_t begin, std::size_t count, Tape* tape = nullptr) {
    const std::size_t m = x.rows(), n = x.cols();
    if (begin + count > n || count == 0)
        throw shape_error("col_slice: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") outside " + detail::shape_str(x.shape));
    std::vector<float> out(m * count);
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(&x.data[i * n + begin], count, &out[i * count]);
    NodeId node = kNoNode;
    if (tape) {
        NodeId ix = tape->node_of(x);
        node = tape->record({ix}, m * count, [ix, begin, count, m, n](Tape& t, std::span<const float> g) {
            std::vector<float> d(m * n, 0.0f);
            for (std::size_t i = 0; i < m; ++i)
                std::copy_n(&g[i * count], count, &d[i * n + begin]);
            t.accumulate(ix, d);
        });
    }
    return detail::make_output({m, count}, std::move(out), tape, node);
}

inline Tensor col_concat(const std::vector<Tensor>& parts, Tape* tape = nullptr) {
    if (parts.empty()) throw contract_error("col_concat: no parts");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p.rows() != m) throw shape_error("col_concat: row counts disagree");
        n += p.cols();
    }
    std::vector<float> out(m * n);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t c = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(&p.data[i * c], c, &out[i * n + off]);
        off += c;
    }
    NodeId node = kNoNode;
    if (tape) {
        std::vector<NodeId> ins;
        std::vector<std::size_t> widths;
        for (const auto& p : parts) {
            ins.push_back(tape->node_of(p));
            widths.push_back(p.cols());
        }
        node = tape->record(ins, m * n, [ins, widths, m, n](Tape& t, std::span<const float> g) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < ins.size(); ++k) {
                const std::size_t c = widths[k];
                std::vector<float> d(m * c);
                for (std::size_t i = 0; i < m; ++i)
                    std::copy_n(&g[i * n + off], c, &d[i * c]);
                t.accumulate(ins[k], d);
                off += c;
            }
        });
    }
    return detail::make_output({m, n}, std::move(out), tape, node);
}

// Adds -inf to logit columns whose key mask is 0, so softmax assigns them
// exactly zero weight.
inline Tensor mask_logits(const Tensor& logits, const std::vector<int>& key_mask, Tape* tape = nullptr) {
    const std::size_t m = logits.rows(), n = logits.cols();
    if (key_mask.size() != n) throw shape_error("mask_logits: mask length does not match key count");
    constexpr float kNegInf = -std::numeric_limits<float>::infinity();
    std::vector<float> out = logits.data;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (!key_mask[j]) out[i * n + j] = kNegInf;
    NodeId node = kNoNode;
    if (tape) {
        NodeId ix = tape->node_of(logits);
        node = tape->record({ix}, m * n, [ix, key_mask, m, n](Tape& t, std::span<const float> g) {
            std::vector<float> d(m * n, 0.0f);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (key_mask[j]) d[i * n + j] = g[i * n + j];
            t.accumulate(ix, d);
        });
    }
    return detail::make_output({m, n}, std::move(out), tape, node);
}

// Mask-weighted mean over rows -> [1 x n].
inline Tensor masked_mean_rows(const Tensor& x, const std::vector<int>& mask, Tape* tape = nullptr) {
    const std::size_t m = x.rows(), n = x.cols();
    if (mask.size() != m) throw shape_error("masked_mean_rows: mask length does not match row count");
    std::size_t kept = 0;
    for (int v : mask) kept += v ? 1 : 0;
    if (kept == 0) throw degenerate_error("masked_mean_rows: mask selects no rows");
    // double accumulator: the mean of k identical rows reproduces the row
    std::vector<double> acc(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        if (mask[i])
            for (std::size_t j = 0; j < n; ++j) acc[j] += static_cast<double>(x.data[i * n + j]);
    std::vector<float> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<float>(acc[j] / static_cast<double>(kept));
    const float inv = 1.0f / static_cast<float>(kept);
    NodeId node = kNoNode;
    if (tape) {
        NodeId ix = tape->node_of(x);
        node = tape->record({ix}, n, [ix, mask, m, n, inv](Tape& t, std::span<const float> g) {
            std::vector<float> d(m * n, 0.0f);
            for (std::size_t i = 0; i < m; ++i)
                if (mask[i])
                    for (std::size_t j = 0; j < n; ++j) d[i * n + j] = g[j] * inv;
            t.accumulate(ix, d);
        });
    }
    return detail::make_output({1, n}, std::move(out), tape, node);
}

// Elementwise max over mask-selected rows -> [1 x n]. Gradient flows to the
// first row attaining each maximum.
inline Tensor masked_max_rows(const Tensor& x, const std::vector<int>& mask, Tape* tape = nullptr) {
    const std::size_t m = x.rows(), n = x.cols();
    if (mask.size() != m) throw shape_error("masked_max_rows: mask length does not match row count");
    std::vector<std::size_t> argmax(n, m);
    std::vector<float> out(n, -std::numeric_limits<float>::infinity());
    bool any = false;
    for (std::size_t i = 0; i < m; ++i) {
        if (!mask[i]) continue;
        any = true;
        for (std::size_t j = 0; j < n; ++j) {
            const float v = x.data[i * n + j];
            if (v > out[j]) {
                out[j] = v;
                argmax[j] = i;
            }
        }
    }
    if (!any) throw degenerate_error("masked_max_rows: mask selects no rows");
    NodeId node = kNoNode;
    if (tape) {
        NodeId ix = tape->node_of(x);
        node = tape->record({ix}, n, [ix, argmax, m, n](Tape& t, std::span<const float> g) {
            std::vector<float> d(m * n, 0.0f);
            for (std::size_t j = 0; j < n; ++j) d[argmax[j] * n + j] = g[j];
            t.accumulate(ix, d);
        });
    }
    return detail::make_output({1, n}, std::move(out), tape, node);
}

inline Tensor sum_all(const Tensor& x, Tape* tape = nullptr) {
    double s = 0.0;
    for (float v : x.data) s += static_cast<double>(v);
    NodeId node = kNoNode;
    if (tape) {
        NodeId ix = tape->node_of(x);
        const std::size_t count = x.numel();
        node = tape->record({ix}, 1, [ix, count](Tape& t, std::span<const float> g) {
            std::vector<float> d(count, g[0]);
            t.accumulate(ix, d);
        });
    }
    return detail::make_output({1, 1}, {static_cast<float>(s)}, tape, node);
}

inline Tensor mean_all(const Tensor& x, Tape* tape = nullptr) {
    double s = 0.0;
    for (float v : x.data) s += static_cast<double>(v);
    const float inv = 1.0f / static_cast<float>(x.numel());
    NodeId node = kNoNode;
    if (tape) {
        NodeId ix = tape->node_of(x);
        const std::size_t count = x.numel();
        node = tape->record({ix}, 1, [ix, count, inv](Tape& t, std::span<const float> g) {
            std::vector<float> d(count, g[0] * inv);
            t.accumulate(ix, d);
        });
    }
    return detail::make_output({1, 1}, {static_cast<float>(s / static_cast<double>(x.numel()))}, tape, node);
}

// Inverted dropout: kept activations are scaled by 1/(1-rate). rate == 0 is
// an identity and consumes no randomness.
inline Tensor dropout(const Tensor& x, float rate, RandomSource& rng, Tape* tape = nullptr) {
    if (rate < 0.0f || rate >= 1.0f) throw contract_error("dropout: rate must lie in [0, 1)");
    if (rate == 0.0f) return x;
    const float keep_scale = 1.0f / (1.0f - rate);
    std::vector<float> kept(x.numel());
    std::vector<float> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        kept[i] = rng.uniform() >= rate ? keep_scale : 0.0f;
        out[i] = x.data[i] * kept[i];
    }
    NodeId node = kNoNode;
    if (tape) {
        NodeId ix = tape->node_of(x);
        node = tape->record({ix}, out.size(), [ix, kept](Tape& t, std::span<const float> g) {
            std::vector<float> d(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * kept[i];
            t.accumulate(ix, d);
        });
    }
    return detail::make_output(x.shape, std::move(out), tape, node);
}

}  // namespace tinyqe
