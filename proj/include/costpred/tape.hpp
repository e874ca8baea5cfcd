#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <utility>

#include "costpred/tensor.hpp"

namespace costpred::ag {

using NodeId = int;

namespace detail {

// c[m,n] += a[m,k] * b[k,n]
template <typename T>
void gemm_accum(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; i++) {
        const T* arow = a + static_cast<size_t>(i) * k;
        T* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; p++) {
            const T av = arow[p];
            const T* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; j++) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void transpose2d(const T* a, T* out, int rows, int cols) {
    for (int i = 0; i < rows; i++)
        for (int j = 0; j < cols; j++) out[static_cast<size_t>(j) * rows + i] = a[static_cast<size_t>(i) * cols + j];
}

// Decompose a shape around one axis into (outer, n, inner) extents.
inline void axis_extents(const Shape& s, int axis, std::int64_t& outer, int& n, std::int64_t& inner) {
    outer = 1;
    inner = 1;
    for (int d = 0; d < axis; d++) outer *= s[static_cast<size_t>(d)];
    n = s[static_cast<size_t>(axis)];
    for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); d++) inner *= s[d];
}

inline int normalize_axis(int axis, int ndim) {
    if (axis < 0) axis += ndim;
    if (axis < 0 || axis >= ndim) throw std::out_of_range("axis out of range");
    return axis;
}

}  // namespace detail

// Reverse-mode tape. Nodes are appended in construction order, which is a
// topological order by construction; backward() walks it once in reverse.
template <typename T>
class Tape {
  public:
    struct Node {
        Tensor<T> t;
        bool requires_grad = false;
        std::function<void()> backward;
    };

    void reset() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

    const Tensor<T>& val(NodeId id) const { return nodes_[static_cast<size_t>(id)].t; }
    const Shape& shape(NodeId id) const { return nodes_[static_cast<size_t>(id)].t.shape; }

    // Gradient of a node after backward(); zeros if nothing flowed into it.
    Tensor<T> grad(NodeId id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        Tensor<T> g(n.t.shape);
        if (!n.t.g.empty()) g.v = n.t.g;
        return g;
    }

    NodeId input(Tensor<T> value) { return push(std::move(value), false); }
    NodeId param(const Tensor<T>& value) {
        Tensor<T> copy = value;
        return push(std::move(copy), true);
    }

    NodeId add(NodeId a, NodeId b) { return binary_elementwise(a, b, "add", [](T x, T y) { return x + y; }, [](T) { return T(1); }, [](T) { return T(1); }); }
    NodeId sub(NodeId a, NodeId b) { return binary_elementwise(a, b, "sub", [](T x, T y) { return x - y; }, [](T) { return T(1); }, [](T) { return T(-1); }); }

    NodeId mul(NodeId a, NodeId b) {
        check_same_shape(a, b, "mul");
        const Tensor<T>& ta = nodes_[a].t;
        const Tensor<T>& tb = nodes_[b].t;
        Tensor<T> out(ta.shape);
        for (size_t i = 0; i < out.v.size(); i++) out.v[i] = ta.v[i] * tb.v[i];
        NodeId id = push(std::move(out), any_grad({a, b}));
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a, b] {
                const auto& go = nodes_[id].t.g;
                if (nodes_[a].requires_grad) {
                    nodes_[a].t.ensure_grad();
                    for (size_t i = 0; i < go.size(); i++) nodes_[a].t.g[i] += go[i] * nodes_[b].t.v[i];
                }
                if (nodes_[b].requires_grad) {
                    nodes_[b].t.ensure_grad();
                    for (size_t i = 0; i < go.size(); i++) nodes_[b].t.g[i] += go[i] * nodes_[a].t.v[i];
                }
            };
        }
        return id;
    }

    NodeId scale(NodeId a, T c) {
        Tensor<T> out = nodes_[a].t;
        out.g.clear();
        out.requires_grad = false;
        for (auto& x : out.v) x *= c;
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a, c] {
                nodes_[a].t.ensure_grad();
                const auto& go = nodes_[id].t.g;
                for (size_t i = 0; i < go.size(); i++) nodes_[a].t.g[i] += go[i] * c;
            };
        }
        return id;
    }

    // Constant elementwise offset, typically an attention mask. No gradient
    // flows into the offset.
    NodeId add_const(NodeId a, const Tensor<T>& offs) {
        if (nodes_[a].t.shape != offs.shape) throw std::invalid_argument("add_const: shape mismatch");
        Tensor<T> out = nodes_[a].t;
        out.g.clear();
        out.requires_grad = false;
        for (size_t i = 0; i < out.v.size(); i++) out.v[i] += offs.v[i];
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) nodes_[id].backward = passthrough(id, a);
        return id;
    }

    // x [..., d] + bias [d]; the only broadcast the tape supports.
    NodeId add_bias(NodeId x, NodeId bias) {
        const Tensor<T>& tx = nodes_[x].t;
        const Tensor<T>& tb = nodes_[bias].t;
        if (tb.ndim() != 1 || tx.ndim() < 1 || tx.dim(-1) != tb.shape[0])
            throw std::invalid_argument("add_bias: bias must match last dim");
        const int d = tb.shape[0];
        Tensor<T> out = tx;
        out.g.clear();
        out.requires_grad = false;
        const std::int64_t rows = out.size() / d;
        for (std::int64_t r = 0; r < rows; r++)
            for (int j = 0; j < d; j++) out.v[static_cast<size_t>(r) * d + j] += tb.v[static_cast<size_t>(j)];
        NodeId id = push(std::move(out), any_grad({x, bias}));
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, x, bias, d, rows] {
                const auto& go = nodes_[id].t.g;
                if (nodes_[x].requires_grad) {
                    nodes_[x].t.ensure_grad();
                    for (size_t i = 0; i < go.size(); i++) nodes_[x].t.g[i] += go[i];
                }
                if (nodes_[bias].requires_grad) {
                    nodes_[bias].t.ensure_grad();
                    for (std::int64_t r = 0; r < rows; r++)
                        for (int j = 0; j < d; j++) nodes_[bias].t.g[static_cast<size_t>(j)] += go[static_cast<size_t>(r) * d + j];
                }
            };
        }
        return id;
    }

    // a[m,k] x b[k,n]; a[N,m,k] x b[N,k,n] batched; a[N,m,k] x b[k,n] shared.
    NodeId matmul(NodeId a, NodeId b) {
        const Tensor<T>& ta = nodes_[a].t;
        const Tensor<T>& tb = nodes_[b].t;
        const int ra = ta.ndim(), rb = tb.ndim();
        int m, k, n;
        std::int64_t batch;
        Shape out_shape;
        bool shared_b = false;
        if (ra == 2 && rb == 2) {
            m = ta.shape[0]; k = ta.shape[1]; n = tb.shape[1];
            if (tb.shape[0] != k) throw std::invalid_argument("matmul: inner dims " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
            batch = 1;
            out_shape = {m, n};
            shared_b = true;
        } else if (ra == 3 && rb == 3) {
            if (ta.shape[0] != tb.shape[0] || ta.shape[2] != tb.shape[1])
                throw std::invalid_argument("matmul: batch dims " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
            batch = ta.shape[0]; m = ta.shape[1]; k = ta.shape[2]; n = tb.shape[2];
            out_shape = {static_cast<int>(batch), m, n};
        } else if (ra == 3 && rb == 2) {
            if (ta.shape[2] != tb.shape[0]) throw std::invalid_argument("matmul: inner dims " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
            batch = 1; m = ta.shape[0] * ta.shape[1]; k = ta.shape[2]; n = tb.shape[1];
            out_shape = {ta.shape[0], ta.shape[1], n};
            shared_b = true;
        } else {
            throw std::invalid_argument("matmul: unsupported ranks " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
        }
        Tensor<T> out(out_shape);
        for (std::int64_t s = 0; s < batch; s++) {
            const T* ap = ta.v.data() + s * static_cast<std::int64_t>(m) * k;
            const T* bp = tb.v.data() + (shared_b ? 0 : s * static_cast<std::int64_t>(k) * n);
            T* cp = out.v.data() + s * static_cast<std::int64_t>(m) * n;
            detail::gemm_accum(ap, bp, cp, m, k, n);
        }
        NodeId id = push(std::move(out), any_grad({a, b}));
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a, b, m, k, n, batch, shared_b] {
                const Tensor<T>& ta2 = nodes_[a].t;
                const Tensor<T>& tb2 = nodes_[b].t;
                const auto& go = nodes_[id].t.g;
                std::vector<T> scratch(static_cast<size_t>(std::max<std::int64_t>(static_cast<std::int64_t>(k) * n, static_cast<std::int64_t>(m) * k)));
                if (nodes_[a].requires_grad) {
                    nodes_[a].t.ensure_grad();
                    for (std::int64_t s = 0; s < batch; s++) {
                        const T* bp = tb2.v.data() + (shared_b ? 0 : s * static_cast<std::int64_t>(k) * n);
                        detail::transpose2d(bp, scratch.data(), k, n);  // [n,k]
                        detail::gemm_accum(go.data() + s * static_cast<std::int64_t>(m) * n, scratch.data(),
                                           nodes_[a].t.g.data() + s * static_cast<std::int64_t>(m) * k, m, n, k);
                    }
                }
                if (nodes_[b].requires_grad) {
                    nodes_[b].t.ensure_grad();
                    for (std::int64_t s = 0; s < batch; s++) {
                        const T* ap = ta2.v.data() + s * static_cast<std::int64_t>(m) * k;
                        detail::transpose2d(ap, scratch.data(), m, k);  // [k,m]
                        detail::gemm_accum(scratch.data(), go.data() + s * static_cast<std::int64_t>(m) * n,
                                           nodes_[b].t.g.data() + (shared_b ? 0 : s * static_cast<std::int64_t>(k) * n), k, m, n);
                    }
                }
            };
        }
        return id;
    }

    NodeId transpose_last2(NodeId a) {
        const Tensor<T>& ta = nodes_[a].t;
        if (ta.ndim() < 2) throw std::invalid_argument("transpose_last2: rank < 2");
        Shape s = ta.shape;
        std::swap(s[s.size() - 1], s[s.size() - 2]);
        const int rows = ta.dim(-2), cols = ta.dim(-1);
        const std::int64_t mats = ta.size() / (static_cast<std::int64_t>(rows) * cols);
        Tensor<T> out(s);
        for (std::int64_t q = 0; q < mats; q++)
            detail::transpose2d(ta.v.data() + q * rows * cols, out.v.data() + q * rows * cols, rows, cols);
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a, rows, cols, mats] {
                nodes_[a].t.ensure_grad();
                const auto& go = nodes_[id].t.g;
                std::vector<T> scratch(static_cast<size_t>(rows) * cols);
                for (std::int64_t q = 0; q < mats; q++) {
                    detail::transpose2d(go.data() + q * rows * cols, scratch.data(), cols, rows);
                    T* dst = nodes_[a].t.g.data() + q * rows * cols;
                    for (size_t i = 0; i < scratch.size(); i++) dst[i] += scratch[i];
                }
            };
        }
        return id;
    }

    NodeId permute(NodeId a, std::vector<int> axes) {
        const Tensor<T>& ta = nodes_[a].t;
        const int nd = ta.ndim();
        if (static_cast<int>(axes.size()) != nd) throw std::invalid_argument("permute: axes rank mismatch");
        Shape out_shape(static_cast<size_t>(nd));
        for (int d = 0; d < nd; d++) out_shape[static_cast<size_t>(d)] = ta.shape[static_cast<size_t>(axes[static_cast<size_t>(d)])];
        Tensor<T> out(out_shape);
        permute_copy(ta.v.data(), out.v.data(), ta.shape, axes, false);
        const Shape in_shape = ta.shape;  // copy: push() may reallocate nodes_
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a, axes, in_shape] {
                nodes_[a].t.ensure_grad();
                permute_copy(nodes_[id].t.g.data(), nodes_[a].t.g.data(), in_shape, axes, true);
            };
        }
        return id;
    }

    NodeId reshape(NodeId a, Shape s) {
        if (shape_numel(s) != nodes_[a].t.size()) throw std::invalid_argument("reshape: size mismatch");
        Tensor<T> out(std::move(s), nodes_[a].t.v);
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) nodes_[id].backward = passthrough(id, a);
        return id;
    }

    NodeId relu(NodeId a) {
        Tensor<T> out = value_copy(a);
        for (auto& x : out.v) x = x > T(0) ? x : T(0);
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a] {
                nodes_[a].t.ensure_grad();
                const auto& go = nodes_[id].t.g;
                for (size_t i = 0; i < go.size(); i++)
                    if (nodes_[a].t.v[i] > T(0)) nodes_[a].t.g[i] += go[i];
            };
        }
        return id;
    }

    NodeId sigmoid(NodeId a) {
        Tensor<T> out = value_copy(a);
        for (auto& x : out.v) x = T(1) / (T(1) + std::exp(-x));
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a] {
                nodes_[a].t.ensure_grad();
                const auto& go = nodes_[id].t.g;
                const auto& y = nodes_[id].t.v;
                for (size_t i = 0; i < go.size(); i++) nodes_[a].t.g[i] += go[i] * y[i] * (T(1) - y[i]);
            };
        }
        return id;
    }

    NodeId tanh_(NodeId a) {
        Tensor<T> out = value_copy(a);
        for (auto& x : out.v) x = std::tanh(x);
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a] {
                nodes_[a].t.ensure_grad();
                const auto& go = nodes_[id].t.g;
                const auto& y = nodes_[id].t.v;
                for (size_t i = 0; i < go.size(); i++) nodes_[a].t.g[i] += go[i] * (T(1) - y[i] * y[i]);
            };
        }
        return id;
    }

    // Max-subtracted softmax along one axis. NaN inputs are rejected.
    NodeId softmax(NodeId a, int axis) {
        const Tensor<T>& ta = nodes_[a].t;
        axis = detail::normalize_axis(axis, ta.ndim());
        std::int64_t outer, inner;
        int n;
        detail::axis_extents(ta.shape, axis, outer, n, inner);
        Tensor<T> out(ta.shape);
        for (std::int64_t o = 0; o < outer; o++) {
            for (std::int64_t in = 0; in < inner; in++) {
                const std::int64_t base = o * n * inner + in;
                T mx = ta.v[static_cast<size_t>(base)];
                for (int i = 0; i < n; i++) {
                    const T x = ta.v[static_cast<size_t>(base + i * inner)];
                    if (std::isnan(x)) throw std::domain_error("softmax: NaN input");
                    if (x > mx) mx = x;
                }
                T sum = T(0);
                for (int i = 0; i < n; i++) {
                    const T e = std::exp(ta.v[static_cast<size_t>(base + i * inner)] - mx);
                    out.v[static_cast<size_t>(base + i * inner)] = e;
                    sum += e;
                }
                for (int i = 0; i < n; i++) out.v[static_cast<size_t>(base + i * inner)] /= sum;
            }
        }
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a, outer, n, inner] {
                nodes_[a].t.ensure_grad();
                const auto& go = nodes_[id].t.g;
                const auto& y = nodes_[id].t.v;
                for (std::int64_t o = 0; o < outer; o++) {
                    for (std::int64_t in = 0; in < inner; in++) {
                        const std::int64_t base = o * n * inner + in;
                        T dot = T(0);
                        for (int i = 0; i < n; i++) {
                            const size_t ix = static_cast<size_t>(base + i * inner);
                            dot += go[ix] * y[ix];
                        }
                        for (int i = 0; i < n; i++) {
                            const size_t ix = static_cast<size_t>(base + i * inner);
                            nodes_[a].t.g[ix] += (go[ix] - dot) * y[ix];
                        }
                    }
                }
            };
        }
        return id;
    }

    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, T eps = T(1e-5)) {
        const Tensor<T>& tx = nodes_[x].t;
        const int d = tx.dim(-1);
        if (nodes_[gain].t.shape != Shape{d} || nodes_[bias].t.shape != Shape{d})
            throw std::invalid_argument("layer_norm: gain/bias must be [last_dim]");
        const std::int64_t rows = tx.size() / d;
        Tensor<T> out(tx.shape);
        std::vector<T> inv_sigma(static_cast<size_t>(rows));
        std::vector<T> xhat(tx.v.size());
        for (std::int64_t r = 0; r < rows; r++) {
            const T* xp = tx.v.data() + r * d;
            T mu = T(0);
            for (int j = 0; j < d; j++) mu += xp[j];
            mu /= static_cast<T>(d);
            T var = T(0);
            for (int j = 0; j < d; j++) var += (xp[j] - mu) * (xp[j] - mu);
            var /= static_cast<T>(d);
            const T is = T(1) / std::sqrt(var + eps);
            inv_sigma[static_cast<size_t>(r)] = is;
            for (int j = 0; j < d; j++) {
                const T xh = (xp[j] - mu) * is;
                xhat[static_cast<size_t>(r * d + j)] = xh;
                out.v[static_cast<size_t>(r * d + j)] = xh * nodes_[gain].t.v[static_cast<size_t>(j)] + nodes_[bias].t.v[static_cast<size_t>(j)];
            }
        }
        NodeId id = push(std::move(out), any_grad({x, gain, bias}));
        if (nodes_[id].requires_grad) {
            auto xh = std::make_shared<std::vector<T>>(std::move(xhat));
            auto is = std::make_shared<std::vector<T>>(std::move(inv_sigma));
            nodes_[id].backward = [this, id, x, gain, bias, d, rows, xh, is] {
                const auto& go = nodes_[id].t.g;
                if (nodes_[gain].requires_grad) nodes_[gain].t.ensure_grad();
                if (nodes_[bias].requires_grad) nodes_[bias].t.ensure_grad();
                if (nodes_[x].requires_grad) nodes_[x].t.ensure_grad();
                for (std::int64_t r = 0; r < rows; r++) {
                    const T* gop = go.data() + r * d;
                    const T* xhp = xh->data() + r * d;
                    if (nodes_[gain].requires_grad)
                        for (int j = 0; j < d; j++) nodes_[gain].t.g[static_cast<size_t>(j)] += gop[j] * xhp[j];
                    if (nodes_[bias].requires_grad)
                        for (int j = 0; j < d; j++) nodes_[bias].t.g[static_cast<size_t>(j)] += gop[j];
                    if (nodes_[x].requires_grad) {
                        T mean_dy = T(0), mean_dyxh = T(0);
                        for (int j = 0; j < d; j++) {
                            const T dy = gop[j] * nodes_[gain].t.v[static_cast<size_t>(j)];
                            mean_dy += dy;
                            mean_dyxh += dy * xhp[j];
                        }
                        mean_dy /= static_cast<T>(d);
                        mean_dyxh /= static_cast<T>(d);
                        for (int j = 0; j < d; j++) {
                            const T dy = gop[j] * nodes_[gain].t.v[static_cast<size_t>(j)];
                            nodes_[x].t.g[static_cast<size_t>(r * d + j)] += (*is)[static_cast<size_t>(r)] * (dy - mean_dy - xhp[j] * mean_dyxh);
                        }
                    }
                }
            };
        }
        return id;
    }

    // table [V,D] gathered by ids -> [ids.shape..., D]
    NodeId embedding(NodeId table, const IntTensor& ids) {
        const Tensor<T>& tt = nodes_[table].t;
        if (tt.ndim() != 2) throw std::invalid_argument("embedding: table must be [V,D]");
        const int V = tt.shape[0], D = tt.shape[1];
        Shape out_shape = ids.shape;
        out_shape.push_back(D);
        Tensor<T> out(out_shape);
        for (std::int64_t i = 0; i < ids.size(); i++) {
            const int tok = ids.v[static_cast<size_t>(i)];
            if (tok < 0 || tok >= V) throw std::out_of_range("embedding: token id " + std::to_string(tok) + " out of vocab " + std::to_string(V));
            std::memcpy(out.v.data() + i * D, tt.v.data() + static_cast<std::int64_t>(tok) * D, sizeof(T) * static_cast<size_t>(D));
        }
        NodeId id = push(std::move(out), nodes_[table].requires_grad);
        if (nodes_[id].requires_grad) {
            IntTensor ids_copy = ids;
            nodes_[id].backward = [this, id, table, ids_copy, D] {
                nodes_[table].t.ensure_grad();
                const auto& go = nodes_[id].t.g;
                for (std::int64_t i = 0; i < ids_copy.size(); i++) {
                    T* dst = nodes_[table].t.g.data() + static_cast<std::int64_t>(ids_copy.v[static_cast<size_t>(i)]) * D;
                    const T* src = go.data() + i * D;
                    for (int j = 0; j < D; j++) dst[j] += src[j];
                }
            };
        }
        return id;
    }

    NodeId linear(NodeId x, NodeId w, NodeId b) { return add_bias(matmul(x, w), b); }

    NodeId concat(const std::vector<NodeId>& parts, int axis) {
        if (parts.empty()) throw std::invalid_argument("concat: no inputs");
        const Tensor<T>& t0 = nodes_[parts[0]].t;
        axis = detail::normalize_axis(axis, t0.ndim());
        Shape out_shape = t0.shape;
        int total = 0;
        for (NodeId p : parts) {
            const Shape& s = nodes_[p].t.shape;
            if (static_cast<int>(s.size()) != t0.ndim()) throw std::invalid_argument("concat: rank mismatch");
            for (int d = 0; d < t0.ndim(); d++)
                if (d != axis && s[static_cast<size_t>(d)] != t0.shape[static_cast<size_t>(d)]) throw std::invalid_argument("concat: shape mismatch");
            total += s[static_cast<size_t>(axis)];
        }
        out_shape[static_cast<size_t>(axis)] = total;
        std::int64_t outer, inner;
        int n_out;
        detail::axis_extents(out_shape, axis, outer, n_out, inner);
        Tensor<T> out(out_shape);
        std::vector<int> offsets;
        int off = 0;
        for (NodeId p : parts) {
            offsets.push_back(off);
            const Tensor<T>& tp = nodes_[p].t;
            const int np = tp.shape[static_cast<size_t>(axis)];
            for (std::int64_t o = 0; o < outer; o++)
                std::memcpy(out.v.data() + (o * n_out + off) * inner, tp.v.data() + o * np * inner,
                            sizeof(T) * static_cast<size_t>(np) * static_cast<size_t>(inner));
            off += np;
        }
        bool rg = false;
        for (NodeId p : parts) rg = rg || nodes_[p].requires_grad;
        NodeId id = push(std::move(out), rg);
        if (rg) {
            std::vector<NodeId> parts_copy = parts;
            nodes_[id].backward = [this, id, parts_copy, offsets, outer, n_out, inner, axis] {
                const auto& go = nodes_[id].t.g;
                for (size_t pi = 0; pi < parts_copy.size(); pi++) {
                    NodeId p = parts_copy[pi];
                    if (!nodes_[p].requires_grad) continue;
                    nodes_[p].t.ensure_grad();
                    const int np = nodes_[p].t.shape[static_cast<size_t>(axis)];
                    for (std::int64_t o = 0; o < outer; o++) {
                        const T* src = go.data() + (o * n_out + offsets[pi]) * inner;
                        T* dst = nodes_[p].t.g.data() + o * np * inner;
                        for (std::int64_t i = 0; i < static_cast<std::int64_t>(np) * inner; i++) dst[i] += src[i];
                    }
                }
            };
        }
        return id;
    }

    // [start, end) along axis.
    NodeId slice(NodeId a, int axis, int start, int end) {
        const Tensor<T>& ta = nodes_[a].t;
        axis = detail::normalize_axis(axis, ta.ndim());
        const int n = ta.shape[static_cast<size_t>(axis)];
        if (start < 0 || end > n || start >= end) throw std::out_of_range("slice: bad range");
        std::int64_t outer, inner;
        int n_in;
        detail::axis_extents(ta.shape, axis, outer, n_in, inner);
        Shape out_shape = ta.shape;
        out_shape[static_cast<size_t>(axis)] = end - start;
        Tensor<T> out(out_shape);
        const int len = end - start;
        for (std::int64_t o = 0; o < outer; o++)
            std::memcpy(out.v.data() + o * len * inner, ta.v.data() + (o * n_in + start) * inner,
                        sizeof(T) * static_cast<size_t>(len) * static_cast<size_t>(inner));
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a, outer, n_in, inner, start, len] {
                nodes_[a].t.ensure_grad();
                const auto& go = nodes_[id].t.g;
                for (std::int64_t o = 0; o < outer; o++) {
                    const T* src = go.data() + o * len * inner;
                    T* dst = nodes_[a].t.g.data() + (o * n_in + start) * inner;
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(len) * inner; i++) dst[i] += src[i];
                }
            };
        }
        return id;
    }

    // Reduce one axis away.
    NodeId sum_axis(NodeId a, int axis) {
        const Tensor<T>& ta = nodes_[a].t;
        axis = detail::normalize_axis(axis, ta.ndim());
        std::int64_t outer, inner;
        int n;
        detail::axis_extents(ta.shape, axis, outer, n, inner);
        Shape out_shape;
        for (int d = 0; d < ta.ndim(); d++)
            if (d != axis) out_shape.push_back(ta.shape[static_cast<size_t>(d)]);
        if (out_shape.empty()) out_shape = {1};
        Tensor<T> out(out_shape);
        for (std::int64_t o = 0; o < outer; o++)
            for (int i = 0; i < n; i++)
                for (std::int64_t in = 0; in < inner; in++)
                    out.v[static_cast<size_t>(o * inner + in)] += ta.v[static_cast<size_t>((o * n + i) * inner + in)];
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a, outer, n, inner] {
                nodes_[a].t.ensure_grad();
                const auto& go = nodes_[id].t.g;
                for (std::int64_t o = 0; o < outer; o++)
                    for (int i = 0; i < n; i++)
                        for (std::int64_t in = 0; in < inner; in++)
                            nodes_[a].t.g[static_cast<size_t>((o * n + i) * inner + in)] += go[static_cast<size_t>(o * inner + in)];
            };
        }
        return id;
    }

    NodeId sum_all(NodeId a) {
        T s = T(0);
        for (T x : nodes_[a].t.v) s += x;
        Tensor<T> out(Shape{1});
        out.v[0] = s;
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a] {
                nodes_[a].t.ensure_grad();
                const T go = nodes_[id].t.g[0];
                for (auto& gx : nodes_[a].t.g) gx += go;
            };
        }
        return id;
    }

    NodeId mean_all(NodeId a) {
        const T inv = T(1) / static_cast<T>(nodes_[a].t.size());
        return scale(sum_all(a), inv);
    }

    // Eq. 3 style nested normalization: mean over batch rows of (mean over
    // each row's unmasked positions of -log softmax(true class)).
    // logits [B,C,P], targets/mask [B,P].
    NodeId cross_entropy_logits(NodeId logits, const IntTensor& targets, const IntTensor& mask) {
        const Tensor<T>& tl = nodes_[logits].t;
        if (tl.ndim() != 3) throw std::invalid_argument("cross_entropy_logits: logits must be [B,C,P]");
        const int B = tl.shape[0], C = tl.shape[1], P = tl.shape[2];
        if (targets.shape != Shape{B, P} || mask.shape != Shape{B, P})
            throw std::invalid_argument("cross_entropy_logits: targets/mask must be [B,P]");
        // Per-position log-softmax over the class axis, saved for backward.
        auto probs = std::make_shared<std::vector<T>>(tl.v.size());
        std::vector<T> row_count(static_cast<size_t>(B), T(0));
        T loss = T(0);
        for (int b = 0; b < B; b++) {
            T row_sum = T(0);
            int kcount = 0;
            for (int p = 0; p < P; p++) {
                T mx = tl.v[static_cast<size_t>((b * C) * P + p)];
                for (int c = 1; c < C; c++) mx = std::max(mx, tl.v[static_cast<size_t>((b * C + c) * P + p)]);
                T denom = T(0);
                for (int c = 0; c < C; c++) {
                    const T e = std::exp(tl.v[static_cast<size_t>((b * C + c) * P + p)] - mx);
                    (*probs)[static_cast<size_t>((b * C + c) * P + p)] = e;
                    denom += e;
                }
                for (int c = 0; c < C; c++) (*probs)[static_cast<size_t>((b * C + c) * P + p)] /= denom;
                if (mask.at2(b, p) != 0) {
                    const int t = targets.at2(b, p);
                    if (t < 0 || t >= C) throw std::out_of_range("cross_entropy_logits: target id out of class range");
                    row_sum += -std::log((*probs)[static_cast<size_t>((b * C + t) * P + p)]);
                    kcount++;
                }
            }
            if (kcount > 0) loss += row_sum / static_cast<T>(kcount);
            row_count[static_cast<size_t>(b)] = static_cast<T>(kcount);
        }
        loss /= static_cast<T>(B);
        Tensor<T> out(Shape{1});
        out.v[0] = loss;
        NodeId id = push(std::move(out), nodes_[logits].requires_grad);
        if (nodes_[id].requires_grad) {
            IntTensor tg = targets, mk = mask;
            nodes_[id].backward = [this, id, logits, tg, mk, probs, row_count, B, C, P] {
                nodes_[logits].t.ensure_grad();
                const T go = nodes_[id].t.g[0];
                for (int b = 0; b < B; b++) {
                    if (row_count[static_cast<size_t>(b)] <= T(0)) continue;
                    const T w = go / (static_cast<T>(B) * row_count[static_cast<size_t>(b)]);
                    for (int p = 0; p < P; p++) {
                        if (mk.at2(b, p) == 0) continue;
                        const int t = tg.at2(b, p);
                        for (int c = 0; c < C; c++) {
                            const size_t ix = static_cast<size_t>((b * C + c) * P + p);
                            nodes_[logits].t.g[ix] += w * ((*probs)[ix] - (c == t ? T(1) : T(0)));
                        }
                    }
                }
            };
        }
        return id;
    }

    NodeId log10_clamped(NodeId a, T eps) {
        Tensor<T> out = value_copy(a);
        for (auto& x : out.v) x = std::log10(std::max(x, eps));
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) {
            const T ln10 = std::log(T(10));
            nodes_[id].backward = [this, id, a, eps, ln10] {
                nodes_[a].t.ensure_grad();
                const auto& go = nodes_[id].t.g;
                for (size_t i = 0; i < go.size(); i++) {
                    const T x = nodes_[a].t.v[i];
                    if (x > eps) nodes_[a].t.g[i] += go[i] / (x * ln10);
                }
            };
        }
        return id;
    }

    // Inverted dropout; identity when not training.
    NodeId dropout(NodeId a, T p, std::mt19937_64& rng, bool training) {
        if (!training || p <= T(0)) return a;
        if (p >= T(1)) throw std::invalid_argument("dropout: rate must be < 1");
        auto keep = std::make_shared<std::vector<uint8_t>>(nodes_[a].t.v.size());
        const T scale_kept = T(1) / (T(1) - p);
        Tensor<T> out = value_copy(a);
        for (size_t i = 0; i < out.v.size(); i++) {
            const bool k = uniform01(rng) >= static_cast<double>(p);
            (*keep)[i] = k;
            out.v[i] = k ? out.v[i] * scale_kept : T(0);
        }
        NodeId id = push(std::move(out), nodes_[a].requires_grad);
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a, keep, scale_kept] {
                nodes_[a].t.ensure_grad();
                const auto& go = nodes_[id].t.g;
                for (size_t i = 0; i < go.size(); i++)
                    if ((*keep)[i]) nodes_[a].t.g[i] += go[i] * scale_kept;
            };
        }
        return id;
    }

    NodeId square(NodeId a) { return mul(a, a); }

    // Seeds d(root)/d(root)=1 and replays the tape once in reverse.
    void backward(NodeId root) {
        Node& r = nodes_[static_cast<size_t>(root)];
        if (r.t.size() != 1) throw std::invalid_argument("backward: root must be scalar");
        if (!r.requires_grad) throw std::invalid_argument("backward: root does not require grad");
        r.t.ensure_grad();
        r.t.g[0] = T(1);
        for (std::int64_t i = root; i >= 0; i--) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.requires_grad && n.backward && !n.t.g.empty()) n.backward();
        }
    }

  private:
    std::vector<Node> nodes_;

    NodeId push(Tensor<T> t, bool requires_grad) {
        t.requires_grad = requires_grad;
        t.g.clear();
        nodes_.push_back(Node{std::move(t), requires_grad, nullptr});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    bool any_grad(std::initializer_list<NodeId> ids) const {
        for (NodeId id : ids)
            if (nodes_[static_cast<size_t>(id)].requires_grad) return true;
        return false;
    }

    Tensor<T> value_copy(NodeId a) const {
        Tensor<T> out;
        out.shape = nodes_[static_cast<size_t>(a)].t.shape;
        out.v = nodes_[static_cast<size_t>(a)].t.v;
        return out;
    }

    void check_same_shape(NodeId a, NodeId b, const char* op) const {
        if (nodes_[static_cast<size_t>(a)].t.shape != nodes_[static_cast<size_t>(b)].t.shape)
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(nodes_[static_cast<size_t>(a)].t.shape) +
                                        " vs " + shape_str(nodes_[static_cast<size_t>(b)].t.shape));
    }

    std::function<void()> passthrough(NodeId id, NodeId a) {
        return [this, id, a] {
            nodes_[static_cast<size_t>(a)].t.ensure_grad();
            const auto& go = nodes_[static_cast<size_t>(id)].t.g;
            for (size_t i = 0; i < go.size(); i++) nodes_[static_cast<size_t>(a)].t.g[i] += go[i];
        };
    }

    template <typename F, typename DA, typename DB>
    NodeId binary_elementwise(NodeId a, NodeId b, const char* name, F f, DA da, DB db) {
        check_same_shape(a, b, name);
        const Tensor<T>& ta = nodes_[a].t;
        const Tensor<T>& tb = nodes_[b].t;
        Tensor<T> out(ta.shape);
        for (size_t i = 0; i < out.v.size(); i++) out.v[i] = f(ta.v[i], tb.v[i]);
        NodeId id = push(std::move(out), any_grad({a, b}));
        if (nodes_[id].requires_grad) {
            nodes_[id].backward = [this, id, a, b, da, db] {
                const auto& go = nodes_[id].t.g;
                if (nodes_[a].requires_grad) {
                    nodes_[a].t.ensure_grad();
                    for (size_t i = 0; i < go.size(); i++) nodes_[a].t.g[i] += go[i] * da(nodes_[a].t.v[i]);
                }
                if (nodes_[b].requires_grad) {
                    nodes_[b].t.ensure_grad();
                    for (size_t i = 0; i < go.size(); i++) nodes_[b].t.g[i] += go[i] * db(nodes_[b].t.v[i]);
                }
            };
        }
        return id;
    }

    static void permute_copy(const T* src, T* dst, const Shape& in_shape, const std::vector<int>& axes, bool accumulate_inverse) {
        const int nd = static_cast<int>(in_shape.size());
        std::vector<std::int64_t> in_strides(static_cast<size_t>(nd), 1);
        for (int d = nd - 2; d >= 0; d--) in_strides[static_cast<size_t>(d)] = in_strides[static_cast<size_t>(d) + 1] * in_shape[static_cast<size_t>(d) + 1];
        Shape out_shape(static_cast<size_t>(nd));
        for (int d = 0; d < nd; d++) out_shape[static_cast<size_t>(d)] = in_shape[static_cast<size_t>(axes[static_cast<size_t>(d)])];
        std::vector<std::int64_t> out_strides(static_cast<size_t>(nd), 1);
        for (int d = nd - 2; d >= 0; d--) out_strides[static_cast<size_t>(d)] = out_strides[static_cast<size_t>(d) + 1] * out_shape[static_cast<size_t>(d) + 1];
        const std::int64_t total = shape_numel(in_shape);
        std::vector<int> idx(static_cast<size_t>(nd), 0);
        for (std::int64_t lin = 0; lin < total; lin++) {
            std::int64_t out_off = 0;
            for (int d = 0; d < nd; d++) out_off += static_cast<std::int64_t>(idx[static_cast<size_t>(axes[static_cast<size_t>(d)])]) * out_strides[static_cast<size_t>(d)];
            if (accumulate_inverse)
                dst[lin] += src[out_off];  // src indexed in permuted layout
            else
                dst[out_off] = src[lin];
            for (int d = nd - 1; d >= 0; d--) {
                if (++idx[static_cast<size_t>(d)] < in_shape[static_cast<size_t>(d)]) break;
                idx[static_cast<size_t>(d)] = 0;
            }
        }
    }
};

}  // namespace costpred::ag
