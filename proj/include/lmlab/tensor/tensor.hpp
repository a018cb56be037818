// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over dense n-dimensional arrays backed by Eigen.
// The graph doubles as the tape: nodes carry a creation serial, parents are
// created before children, so descending-serial order is a valid reverse
// topological order and backward() visits each reachable node exactly once.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lmlab/core/error.hpp"
#include "lmlab/core/rng.hpp"

namespace lmlab {

using Shape = std::vector<int64_t>;

template <class S>
using ArrX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<MatRM<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const MatRM<S>>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << s[i] << (i + 1 < s.size() ? "," : "");
    os << ")";
    return os.str();
}

// Thread-local toggle for graph construction; sampling and evaluation run
// under NoGradGuard so forwards stay value-only.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline uint64_t next_serial() {
    thread_local uint64_t counter = 0;
    return ++counter;
}

template <class S>
struct TensorNode {
    Shape shape;
    ArrX<S> value;
    ArrX<S> grad;  // empty until touched by backward()
    bool requires_grad = false;
    uint64_t serial = 0;
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::function<void(const TensorNode<S>&)> vjp;  // pulls this->grad into parents

    int64_t numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad = ArrX<S>::Zero(value.size());
    }
};

template <class S>
class Tensor {
public:
    using Node = TensorNode<S>;
    using NodePtr = std::shared_ptr<Node>;

    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), S(0), requires_grad);
    }
    static Tensor ones(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), S(1), requires_grad);
    }
    static Tensor filled(Shape shape, S v, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = ArrX<S>::Constant(numel_of(n->shape), v);
        n->requires_grad = requires_grad;
        n->serial = next_serial();
        return Tensor(std::move(n));
    }
    static Tensor scalar(S v) { return filled({}, v); }
    static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            throw ShapeError("from_data: " + std::to_string(data.size()) +
                             " values for shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = Eigen::Map<const ArrX<S>>(data.data(), static_cast<int64_t>(data.size()));
        n->requires_grad = requires_grad;
        n->serial = next_serial();
        return Tensor(std::move(n));
    }
    static Tensor randn(Shape shape, RngStream& rng, S stddev = S(1), bool requires_grad = false) {
        auto t = zeros(std::move(shape), requires_grad);
        auto& v = t.node_->value;
        for (int64_t i = 0; i < v.size(); ++i) v[i] = static_cast<S>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
    int64_t numel() const { return node_->numel(); }
    int64_t dim(int64_t i) const { return node_->shape[static_cast<size_t>(i)]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    const ArrX<S>& value() const { return node_->value; }
    ArrX<S>& value_mut() { return node_->value; }
    const ArrX<S>& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    void zero_grad() {
        if (node_->grad.size() > 0) node_->grad.setZero();
    }

    S item() const {
        if (numel() != 1) throw ShapeError("item(): tensor has shape " + shape_str(shape()));
        return node_->value[0];
    }

    // Rank-2 (or flattened leading dims x last dim) matrix view of the data.
    ConstMatMap<S> matrix() const {
        const auto [r, c] = rows_cols();
        return ConstMatMap<S>(node_->value.data(), r, c);
    }
    MatMap<S> matrix_mut() {
        const auto [r, c] = rows_cols();
        return MatMap<S>(node_->value.data(), r, c);
    }

    // Value-only copy detached from the graph.
    Tensor detach() const {
        auto n = std::make_shared<Node>();
        n->shape = node_->shape;
        n->value = node_->value;
        n->serial = next_serial();
        return Tensor(std::move(n));
    }

    NodePtr node() const { return node_; }

private:
    std::pair<int64_t, int64_t> rows_cols() const {
        int64_t cols = node_->shape.empty() ? 1 : node_->shape.back();
        return {node_->numel() / std::max<int64_t>(cols, 1), cols};
    }

    NodePtr node_;
};

namespace detail {

template <class S>
Tensor<S> make_node(Shape shape, ArrX<S> value, std::vector<Tensor<S>> parents,
                    std::function<void(const TensorNode<S>&)> vjp) {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->serial = next_serial();
    bool track = false;
    if (grad_mode()) {
        for (const auto& p : parents)
            if (p.requires_grad()) track = true;
    }
    if (track) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->vjp = std::move(vjp);
    }
    return Tensor<S>(std::move(n));
}

// Broadcasting is allowed over leading singleton dims only: after padding the
// smaller shape with leading 1s, every mismatching position must be a leading
// prefix of 1s, so a flattened input tiles the output with index % numel.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const size_t r = std::max(a.size(), b.size());
    auto dim_at = [r](const Shape& s, size_t i) -> int64_t {
        const size_t off = r - s.size();
        return i < off ? 1 : s[i - off];
    };
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        const int64_t da = dim_at(a, i), db = dim_at(b, i);
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " do not conform");
        out[i] = std::max(da, db);
    }
    auto check_leading_only = [&](const Shape& s) {
        bool past_broadcast_prefix = false;
        for (size_t i = 0; i < r; ++i) {
            const int64_t d = dim_at(s, i);
            if (d != out[i]) {
                if (past_broadcast_prefix)
                    throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                     shape_str(b) +
                                     " do not conform (leading-1 broadcast only)");
            } else if (out[i] != 1) {
                past_broadcast_prefix = true;
            }
        }
    };
    check_leading_only(a);
    check_leading_only(b);
    return out;
}

// Accumulate a full-size gradient into a possibly-tiled input.
template <class S>
void reduce_into(ArrX<S>& dst, const ArrX<S>& g) {
    const int64_t n = dst.size();
    if (g.size() == n) {
        dst += g;
        return;
    }
    for (int64_t f = 0; f < g.size(); ++f) dst[f % n] += g[f];
}

template <class S>
ArrX<S> tile_to(const ArrX<S>& v, int64_t n) {
    if (v.size() == n) return v;
    ArrX<S> out(n);
    for (int64_t f = 0; f < n; ++f) out[f] = v[f % v.size()];
    return out;
}

// Splits a shape at `axis` into (outer, extent, inner) block sizes.
struct AxisBlocks {
    int64_t outer = 1, extent = 1, inner = 1;
};
inline AxisBlocks axis_blocks(const Shape& s, int64_t axis, const char* op) {
    if (axis < 0 || axis >= static_cast<int64_t>(s.size()))
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
    AxisBlocks b;
    for (int64_t i = 0; i < axis; ++i) b.outer *= s[static_cast<size_t>(i)];
    b.extent = s[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) b.inner *= s[i];
    return b;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (leading-1 broadcast)
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    Shape out_shape = detail::broadcast_shape(a.shape(), b.shape(), "add");
    const int64_t n = numel_of(out_shape);
    ArrX<S> out = detail::tile_to(a.value(), n) + detail::tile_to(b.value(), n);
    auto an = a.node(), bn = b.node();
    return detail::make_node<S>(
        std::move(out_shape), std::move(out), {a, b}, [an, bn](const TensorNode<S>& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                detail::reduce_into(an->grad, o.grad);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                detail::reduce_into(bn->grad, o.grad);
            }
        });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    Shape out_shape = detail::broadcast_shape(a.shape(), b.shape(), "mul");
    const int64_t n = numel_of(out_shape);
    ArrX<S> av = detail::tile_to(a.value(), n);
    ArrX<S> bv = detail::tile_to(b.value(), n);
    ArrX<S> out = av * bv;
    auto an = a.node(), bn = b.node();
    return detail::make_node<S>(
        std::move(out_shape), std::move(out), {a, b},
        [an, bn, av = std::move(av), bv = std::move(bv)](const TensorNode<S>& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                detail::reduce_into<S>(an->grad, (o.grad * bv).eval());
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                detail::reduce_into<S>(bn->grad, (o.grad * av).eval());
            }
        });
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
    auto an = a.node();
    return detail::make_node<S>(a.shape(), (-a.value()).eval(), {a},
                                [an](const TensorNode<S>& o) {
                                    an->ensure_grad();
                                    an->grad -= o.grad;
                                });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return add(a, neg(b));
}

// Multiply by a compile-time-known constant; no extra graph node for it.
template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    auto an = a.node();
    return detail::make_node<S>(a.shape(), (a.value() * c).eval(), {a},
                                [an, c](const TensorNode<S>& o) {
                                    an->ensure_grad();
                                    an->grad += o.grad * c;
                                });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
    auto an = a.node();
    return detail::make_node<S>(a.shape(), (a.value() + c).eval(), {a},
                                [an](const TensorNode<S>& o) {
                                    an->ensure_grad();
                                    an->grad += o.grad;
                                });
}

template <class S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <class S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <class S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <class S>
Tensor<S> operator*(const Tensor<S>& a, S c) { return scale(a, c); }
template <class S>
Tensor<S> operator*(S c, const Tensor<S>& a) { return scale(a, c); }

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not conform");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    ArrX<S> out(m * n);
    MatMap<S>(out.data(), m, n).noalias() =
        ConstMatMap<S>(a.value().data(), m, k) * ConstMatMap<S>(b.value().data(), k, n);
    auto an = a.node(), bn = b.node();
    return detail::make_node<S>(
        {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](const TensorNode<S>& o) {
            ConstMatMap<S> g(o.grad.data(), m, n);
            if (an->requires_grad) {
                an->ensure_grad();
                MatMap<S>(an->grad.data(), m, k).noalias() +=
                    g * ConstMatMap<S>(bn->value.data(), k, n).transpose();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                MatMap<S>(bn->grad.data(), k, n).noalias() +=
                    ConstMatMap<S>(an->value.data(), m, k).transpose() * g;
            }
        });
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
    if (a.rank() != 2)
        throw ShapeError("transpose: expected rank-2, got shape " + shape_str(a.shape()));
    const int64_t m = a.dim(0), n = a.dim(1);
    ArrX<S> out(m * n);
    MatMap<S>(out.data(), n, m) = ConstMatMap<S>(a.value().data(), m, n).transpose();
    auto an = a.node();
    return detail::make_node<S>({n, m}, std::move(out), {a}, [an, m, n](const TensorNode<S>& o) {
        an->ensure_grad();
        MatMap<S>(an->grad.data(), m, n) += ConstMatMap<S>(o.grad.data(), n, m).transpose();
    });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> exp(const Tensor<S>& a) {
    ArrX<S> out = a.value().exp();
    auto an = a.node();
    return detail::make_node<S>(a.shape(), out, {a}, [an, out](const TensorNode<S>& o) {
        an->ensure_grad();
        an->grad += o.grad * out;
    });
}

template <class S>
Tensor<S> log(const Tensor<S>& a) {
    if ((a.value() <= S(0)).any())
        throw DomainError("log: input has non-positive entries");
    auto an = a.node();
    return detail::make_node<S>(a.shape(), a.value().log().eval(), {a},
                                [an](const TensorNode<S>& o) {
                                    an->ensure_grad();
                                    an->grad += o.grad / an->value;
                                });
}

template <class S>
Tensor<S> pow(const Tensor<S>& a, S p) {
    const bool integral_p = std::floor(static_cast<double>(p)) == static_cast<double>(p);
    if (!integral_p && (a.value() < S(0)).any())
        throw DomainError("pow: fractional exponent of negative base");
    if (p < S(0) && (a.value() == S(0)).any())
        throw DomainError("pow: negative exponent of zero base");
    ArrX<S> out = a.value().pow(p);
    auto an = a.node();
    return detail::make_node<S>(a.shape(), std::move(out), {a},
                                [an, p](const TensorNode<S>& o) {
                                    an->ensure_grad();
                                    an->grad += o.grad * p * an->value.pow(p - S(1));
                                });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    ArrX<S> out = (S(1) / (S(1) + (-a.value()).exp()));
    auto an = a.node();
    return detail::make_node<S>(a.shape(), out, {a}, [an, out](const TensorNode<S>& o) {
        an->ensure_grad();
        an->grad += o.grad * out * (S(1) - out);
    });
}

// x * sigmoid(x)
template <class S>
Tensor<S> silu(const Tensor<S>& a) {
    ArrX<S> sig = (S(1) / (S(1) + (-a.value()).exp()));
    ArrX<S> out = a.value() * sig;
    auto an = a.node();
    return detail::make_node<S>(a.shape(), std::move(out), {a},
                                [an, sig = std::move(sig)](const TensorNode<S>& o) {
                                    an->ensure_grad();
                                    an->grad +=
                                        o.grad * sig * (S(1) + an->value * (S(1) - sig));
                                });
}

template <class S>
Tensor<S> log_sigmoid(const Tensor<S>& a) {
    const auto& v = a.value();
    ArrX<S> out(v.size());
    for (int64_t i = 0; i < v.size(); ++i) {
        // stable in both tails
        out[i] = v[i] >= S(0) ? -std::log1p(std::exp(-static_cast<double>(v[i])))
                              : static_cast<double>(v[i]) -
                                    std::log1p(std::exp(static_cast<double>(v[i])));
    }
    auto an = a.node();
    return detail::make_node<S>(a.shape(), std::move(out), {a},
                                [an](const TensorNode<S>& o) {
                                    an->ensure_grad();
                                    an->grad += o.grad / (S(1) + an->value.exp());
                                });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
    ArrX<S> out(1);
    out[0] = a.value().sum();
    auto an = a.node();
    return detail::make_node<S>({}, std::move(out), {a}, [an](const TensorNode<S>& o) {
        an->ensure_grad();
        an->grad += o.grad[0];
    });
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
    return scale(sum(a), S(1) / static_cast<S>(a.numel()));
}

template <class S>
Tensor<S> sum(const Tensor<S>& a, int64_t axis) {
    const auto b = detail::axis_blocks(a.shape(), axis, "sum");
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + axis);
    ArrX<S> out = ArrX<S>::Zero(b.outer * b.inner);
    const auto& v = a.value();
    for (int64_t o = 0; o < b.outer; ++o)
        for (int64_t j = 0; j < b.extent; ++j)
            for (int64_t i = 0; i < b.inner; ++i)
                out[o * b.inner + i] += v[(o * b.extent + j) * b.inner + i];
    auto an = a.node();
    return detail::make_node<S>(std::move(out_shape), std::move(out), {a},
                                [an, b](const TensorNode<S>& o) {
                                    an->ensure_grad();
                                    for (int64_t ot = 0; ot < b.outer; ++ot)
                                        for (int64_t j = 0; j < b.extent; ++j)
                                            for (int64_t i = 0; i < b.inner; ++i)
                                                an->grad[(ot * b.extent + j) * b.inner + i] +=
                                                    o.grad[ot * b.inner + i];
                                });
}

template <class S>
Tensor<S> mean(const Tensor<S>& a, int64_t axis) {
    const auto b = detail::axis_blocks(a.shape(), axis, "mean");
    return scale(sum(a, axis), S(1) / static_cast<S>(b.extent));
}

// ---------------------------------------------------------------------------
// Softmax over the last axis (max-subtracted)
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> softmax(const Tensor<S>& a) {
    if (a.rank() < 1)
        throw ShapeError("softmax: expected rank >= 1, got shape " + shape_str(a.shape()));
    const int64_t cols = a.shape().back();
    const int64_t rows = a.numel() / cols;
    ArrX<S> out(a.numel());
    ConstMatMap<S> x(a.value().data(), rows, cols);
    MatMap<S> y(out.data(), rows, cols);
    for (int64_t r = 0; r < rows; ++r) {
        ArrX<S> e = (x.row(r).array() - x.row(r).maxCoeff()).exp();
        y.row(r) = (e / e.sum()).matrix().transpose();
    }
    auto an = a.node();
    return detail::make_node<S>(
        a.shape(), out, {a}, [an, out, rows, cols](const TensorNode<S>& o) {
            an->ensure_grad();
            ConstMatMap<S> y(out.data(), rows, cols);
            ConstMatMap<S> g(o.grad.data(), rows, cols);
            MatMap<S> gx(an->grad.data(), rows, cols);
            for (int64_t r = 0; r < rows; ++r) {
                const S dot = (g.row(r).array() * y.row(r).array()).sum();
                gx.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
            }
        });
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape new_shape) {
    if (numel_of(new_shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    auto an = a.node();
    return detail::make_node<S>(std::move(new_shape), a.value(), {a},
                                [an](const TensorNode<S>& o) {
                                    an->ensure_grad();
                                    an->grad += o.grad;
                                });
}

template <class S>
Tensor<S> concat(std::span<const Tensor<S>> parts, int64_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& ref = parts[0].shape();
    Shape out_shape = ref;
    int64_t total_extent = 0;
    for (const auto& p : parts) {
        if (p.rank() != static_cast<int64_t>(ref.size()))
            throw ShapeError("concat: rank mismatch between " + shape_str(ref) + " and " +
                             shape_str(p.shape()));
        for (int64_t i = 0; i < p.rank(); ++i)
            if (i != axis && p.dim(i) != ref[static_cast<size_t>(i)])
                throw ShapeError("concat: shapes " + shape_str(ref) + " and " +
                                 shape_str(p.shape()) + " differ off-axis");
        total_extent += p.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = total_extent;
    const auto ob = detail::axis_blocks(out_shape, axis, "concat");
    ArrX<S> out(numel_of(out_shape));
    std::vector<Tensor<S>> owned(parts.begin(), parts.end());
    int64_t offset = 0;
    std::vector<int64_t> offsets;
    for (const auto& p : owned) {
        offsets.push_back(offset);
        const int64_t ext = p.dim(axis);
        const auto& v = p.value();
        for (int64_t o = 0; o < ob.outer; ++o)
            for (int64_t j = 0; j < ext; ++j)
                for (int64_t i = 0; i < ob.inner; ++i)
                    out[(o * ob.extent + offset + j) * ob.inner + i] =
                        v[(o * ext + j) * ob.inner + i];
        offset += ext;
    }
    std::vector<std::shared_ptr<TensorNode<S>>> pnodes;
    std::vector<int64_t> extents;
    for (const auto& p : owned) {
        pnodes.push_back(p.node());
        extents.push_back(p.dim(axis));
    }
    return detail::make_node<S>(
        std::move(out_shape), std::move(out), owned,
        [pnodes, extents, offsets, ob](const TensorNode<S>& o) {
            for (size_t pi = 0; pi < pnodes.size(); ++pi) {
                auto& pn = pnodes[pi];
                if (!pn->requires_grad) continue;
                pn->ensure_grad();
                const int64_t ext = extents[pi], off = offsets[pi];
                for (int64_t ot = 0; ot < ob.outer; ++ot)
                    for (int64_t j = 0; j < ext; ++j)
                        for (int64_t i = 0; i < ob.inner; ++i)
                            pn->grad[(ot * ext + j) * ob.inner + i] +=
                                o.grad[(ot * ob.extent + off + j) * ob.inner + i];
            }
        });
}

template <class S>
Tensor<S> concat(std::initializer_list<Tensor<S>> parts, int64_t axis) {
    std::vector<Tensor<S>> v(parts);
    return concat(std::span<const Tensor<S>>(v), axis);
}
template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int64_t axis) {
    return concat(std::span<const Tensor<S>>(parts), axis);
}

template <class S>
Tensor<S> slice(const Tensor<S>& a, int64_t axis, int64_t begin, int64_t end) {
    const auto b = detail::axis_blocks(a.shape(), axis, "slice");
    if (begin < 0 || end > b.extent || begin >= end)
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for axis extent " + std::to_string(b.extent));
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] = end - begin;
    const int64_t ext = end - begin;
    ArrX<S> out(numel_of(out_shape));
    const auto& v = a.value();
    for (int64_t o = 0; o < b.outer; ++o)
        for (int64_t j = 0; j < ext; ++j)
            for (int64_t i = 0; i < b.inner; ++i)
                out[(o * ext + j) * b.inner + i] = v[(o * b.extent + begin + j) * b.inner + i];
    auto an = a.node();
    return detail::make_node<S>(std::move(out_shape), std::move(out), {a},
                                [an, b, begin, ext](const TensorNode<S>& o) {
                                    an->ensure_grad();
                                    for (int64_t ot = 0; ot < b.outer; ++ot)
                                        for (int64_t j = 0; j < ext; ++j)
                                            for (int64_t i = 0; i < b.inner; ++i)
                                                an->grad[(ot * b.extent + begin + j) * b.inner +
                                                         i] += o.grad[(ot * ext + j) * b.inner + i];
                                });
}

// Row gather from a (vocab, dim) table; the embedding lookup.
template <class S>
Tensor<S> embedding(const Tensor<S>& table, std::span<const int32_t> ids) {
    if (table.rank() != 2)
        throw ShapeError("embedding: table must be rank-2, got " + shape_str(table.shape()));
    const int64_t v = table.dim(0), d = table.dim(1);
    for (int32_t id : ids)
        if (id < 0 || id >= v)
            throw DomainError("embedding: id " + std::to_string(id) +
                              " out of range for vocab " + std::to_string(v));
    const int64_t n = static_cast<int64_t>(ids.size());
    ArrX<S> out(n * d);
    ConstMatMap<S> tab(table.value().data(), v, d);
    MatMap<S> o(out.data(), n, d);
    for (int64_t i = 0; i < n; ++i) o.row(i) = tab.row(ids[static_cast<size_t>(i)]);
    auto tn = table.node();
    std::vector<int32_t> ids_copy(ids.begin(), ids.end());
    return detail::make_node<S>(
        {n, d}, std::move(out), {table},
        [tn, ids_copy = std::move(ids_copy), n, v, d](const TensorNode<S>& og) {
            tn->ensure_grad();
            MatMap<S> gt(tn->grad.data(), v, d);
            ConstMatMap<S> g(og.grad.data(), n, d);
            for (int64_t i = 0; i < n; ++i)
                gt.row(ids_copy[static_cast<size_t>(i)]) += g.row(i);
        });
}

// ---------------------------------------------------------------------------
// Normalization and rotary embedding
// ---------------------------------------------------------------------------

// y_i = gain_i * x_i / sqrt(mean(x^2) + eps), applied over the last axis.
template <class S>
Tensor<S> rms_norm(const Tensor<S>& x, const Tensor<S>& gain, S eps) {
    const int64_t cols = x.shape().empty() ? 1 : x.shape().back();
    if (gain.rank() != 1 || gain.dim(0) != cols)
        throw ShapeError("rms_norm: gain " + shape_str(gain.shape()) +
                         " does not match last axis of " + shape_str(x.shape()));
    if (eps < S(0)) throw DomainError("rms_norm: eps must be non-negative");
    const int64_t rows = x.numel() / cols;
    ArrX<S> out(x.numel());
    ArrX<S> inv_rms(rows);
    ConstMatMap<S> xm(x.value().data(), rows, cols);
    MatMap<S> ym(out.data(), rows, cols);
    for (int64_t r = 0; r < rows; ++r) {
        const S ms = xm.row(r).array().square().mean();
        inv_rms[r] = S(1) / std::sqrt(ms + eps);
        ym.row(r) =
            (xm.row(r).array() * gain.value().transpose().array() * inv_rms[r]).matrix();
    }
    auto xn = x.node(), gn = gain.node();
    return detail::make_node<S>(
        x.shape(), std::move(out), {x, gain},
        [xn, gn, inv_rms = std::move(inv_rms), rows, cols](const TensorNode<S>& o) {
            ConstMatMap<S> xm(xn->value.data(), rows, cols);
            ConstMatMap<S> g(o.grad.data(), rows, cols);
            Eigen::Map<const ArrX<S>> gain_v(gn->value.data(), cols);
            if (xn->requires_grad) {
                xn->ensure_grad();
                MatMap<S> gx(xn->grad.data(), rows, cols);
                for (int64_t r = 0; r < rows; ++r) {
                    const S r1 = inv_rms[r];
                    const S dot =
                        (g.row(r).array() * gain_v.transpose() * xm.row(r).array()).sum();
                    gx.row(r).array() += g.row(r).array() * gain_v.transpose() * r1 -
                                         xm.row(r).array() * (r1 * r1 * r1 * dot /
                                                              static_cast<S>(cols));
                }
            }
            if (gn->requires_grad) {
                gn->ensure_grad();
                Eigen::Map<ArrX<S>> gg(gn->grad.data(), cols);
                for (int64_t r = 0; r < rows; ++r)
                    gg += (g.row(r).array() * xm.row(r).array() * inv_rms[r]).transpose();
            }
        });
}

namespace detail {

template <class S>
void rope_rotate(const ArrX<S>& in, ArrX<S>& dst, double sign, int64_t seq, int64_t d,
                 int64_t pos0, double base) {
    for (int64_t t = 0; t < seq; ++t) {
        const double pos = static_cast<double>(pos0 + t);
        for (int64_t i = 0; i < d / 2; ++i) {
            const double freq = std::pow(base, -2.0 * static_cast<double>(i) /
                                                   static_cast<double>(d));
            const double ang = pos * freq * sign;
            const S c = static_cast<S>(std::cos(ang)), s = static_cast<S>(std::sin(ang));
            const S x0 = in[t * d + 2 * i], x1 = in[t * d + 2 * i + 1];
            dst[t * d + 2 * i] = c * x0 - s * x1;
            dst[t * d + 2 * i + 1] = s * x0 + c * x1;
        }
    }
}

}  // namespace detail

// Pairwise 2-D rotations over adjacent lanes (2i, 2i+1); row t is rotated for
// position pos0 + t with angle pos * base^(-2i/dim). Norm-preserving, and the
// inverse rotation is its own vector-Jacobian product.
template <class S>
Tensor<S> rope(const Tensor<S>& x, S base, int64_t pos0 = 0) {
    if (x.rank() != 2)
        throw ShapeError("rope: expected rank-2 (positions, head_dim), got " +
                         shape_str(x.shape()));
    if (base <= S(0)) throw DomainError("rope: base must be positive");
    const int64_t seq = x.dim(0), d = x.dim(1);
    if (d % 2 != 0)
        throw ShapeError("rope: head_dim must be even, got " + std::to_string(d));
    ArrX<S> out(x.numel());
    detail::rope_rotate<S>(x.value(), out, 1.0, seq, d, pos0, static_cast<double>(base));
    auto xn = x.node();
    const double base_d = static_cast<double>(base);
    return detail::make_node<S>(x.shape(), std::move(out), {x},
                                [xn, seq, d, pos0, base_d](const TensorNode<S>& o) {
                                    xn->ensure_grad();
                                    ArrX<S> gx(o.grad.size());
                                    detail::rope_rotate<S>(o.grad, gx, -1.0, seq, d, pos0,
                                                           base_d);
                                    xn->grad += gx;
                                });
}

// ---------------------------------------------------------------------------
// Losses (fused log-softmax forms; reduce to a scalar)
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void check_logits_targets(const Tensor<S>& logits, size_t n_targets, const char* op) {
    if (logits.rank() != 2)
        throw ShapeError(std::string(op) + ": logits must be rank-2, got " +
                         shape_str(logits.shape()));
    if (static_cast<int64_t>(n_targets) != logits.dim(0))
        throw ShapeError(std::string(op) + ": " + std::to_string(n_targets) +
                         " targets for " + std::to_string(logits.dim(0)) + " rows");
}

// Row-wise log-sum-exp and softmax of the logits.
template <class S>
void row_softmax_lse(ConstMatMap<S> l, MatRM<S>& sm, ArrX<S>& lse) {
    const int64_t rows = l.rows(), cols = l.cols();
    sm.resize(rows, cols);
    lse.resize(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const S mx = l.row(r).maxCoeff();
        ArrX<S> e = (l.row(r).array() - mx).exp();
        const S z = e.sum();
        sm.row(r) = (e / z).matrix().transpose();
        lse[r] = mx + std::log(z);
    }
}

}  // namespace detail

// Weighted mean of per-row cross-entropy against integer targets.
// weights default to 1; rows with weight 0 contribute nothing (and no gradient).
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int32_t> targets,
                        std::span<const S> weights = {}) {
    detail::check_logits_targets(logits, targets.size(), "cross_entropy");
    const int64_t n = logits.dim(0), v = logits.dim(1);
    for (int32_t t : targets)
        if (t < 0 || t >= v)
            throw DomainError("cross_entropy: target " + std::to_string(t) +
                              " out of range for vocab " + std::to_string(v));
    if (!weights.empty() && static_cast<int64_t>(weights.size()) != n)
        throw ShapeError("cross_entropy: weight count mismatch");
    ConstMatMap<S> l(logits.value().data(), n, v);
    MatRM<S> sm;
    ArrX<S> lse;
    detail::row_softmax_lse<S>(l, sm, lse);
    S wsum = 0, loss = 0;
    for (int64_t r = 0; r < n; ++r) {
        const S w = weights.empty() ? S(1) : weights[static_cast<size_t>(r)];
        wsum += w;
        loss += w * (lse[r] - l(r, targets[static_cast<size_t>(r)]));
    }
    if (wsum == S(0)) throw DomainError("cross_entropy: all weights are zero");
    ArrX<S> out(1);
    out[0] = loss / wsum;
    auto ln = logits.node();
    std::vector<int32_t> tg(targets.begin(), targets.end());
    std::vector<S> ws(weights.begin(), weights.end());
    return detail::make_node<S>(
        {}, std::move(out), {logits},
        [ln, tg = std::move(tg), ws = std::move(ws), sm = std::move(sm), n, v,
         wsum](const TensorNode<S>& o) {
            ln->ensure_grad();
            MatMap<S> gl(ln->grad.data(), n, v);
            const S gs = o.grad[0] / wsum;
            for (int64_t r = 0; r < n; ++r) {
                const S w = ws.empty() ? S(1) : ws[static_cast<size_t>(r)];
                if (w == S(0)) continue;
                gl.row(r) += (gs * w) * sm.row(r);
                gl(r, tg[static_cast<size_t>(r)]) -= gs * w;
            }
        });
}

// Cross-entropy against dense target distributions (rows of `probs` sum to 1).
// The targets are data, not differentiated through.
template <class S>
Tensor<S> cross_entropy_soft(const Tensor<S>& logits, const Tensor<S>& probs,
                             std::span<const S> weights = {}) {
    if (probs.requires_grad())
        throw Error("cross_entropy_soft: target distributions must not require grad");
    if (logits.shape() != probs.shape())
        throw ShapeError("cross_entropy_soft: logits " + shape_str(logits.shape()) +
                         " vs targets " + shape_str(probs.shape()));
    const int64_t n = logits.dim(0), v = logits.dim(1);
    if (!weights.empty() && static_cast<int64_t>(weights.size()) != n)
        throw ShapeError("cross_entropy_soft: weight count mismatch");
    ConstMatMap<S> l(logits.value().data(), n, v);
    ConstMatMap<S> p(probs.value().data(), n, v);
    MatRM<S> sm;
    ArrX<S> lse;
    detail::row_softmax_lse<S>(l, sm, lse);
    S wsum = 0, loss = 0;
    for (int64_t r = 0; r < n; ++r) {
        const S w = weights.empty() ? S(1) : weights[static_cast<size_t>(r)];
        wsum += w;
        loss += w * (lse[r] - (p.row(r).array() * l.row(r).array()).sum());
    }
    if (wsum == S(0)) throw DomainError("cross_entropy_soft: all weights are zero");
    ArrX<S> out(1);
    out[0] = loss / wsum;
    auto ln = logits.node();
    auto pn = probs.node();
    std::vector<S> ws(weights.begin(), weights.end());
    return detail::make_node<S>(
        {}, std::move(out), {logits},
        [ln, pn, ws = std::move(ws), sm = std::move(sm), n, v, wsum](const TensorNode<S>& o) {
            ln->ensure_grad();
            MatMap<S> gl(ln->grad.data(), n, v);
            ConstMatMap<S> p(pn->value.data(), n, v);
            const S gs = o.grad[0] / wsum;
            for (int64_t r = 0; r < n; ++r) {
                const S w = ws.empty() ? S(1) : ws[static_cast<size_t>(r)];
                if (w == S(0)) continue;
                gl.row(r) += (gs * w) * (sm.row(r) - p.row(r));
            }
        });
}

// Sum over rows of mask_t * log softmax(logits)_t[target_t]; the sequence-level
// log-probability used by the alignment losses.
template <class S>
Tensor<S> sequence_logprob(const Tensor<S>& logits, std::span<const int32_t> targets,
                           std::span<const S> mask) {
    detail::check_logits_targets(logits, targets.size(), "sequence_logprob");
    const int64_t n = logits.dim(0), v = logits.dim(1);
    if (static_cast<int64_t>(mask.size()) != n)
        throw ShapeError("sequence_logprob: mask count mismatch");
    for (int32_t t : targets)
        if (t < 0 || t >= v)
            throw DomainError("sequence_logprob: target out of range");
    ConstMatMap<S> l(logits.value().data(), n, v);
    MatRM<S> sm;
    ArrX<S> lse;
    detail::row_softmax_lse<S>(l, sm, lse);
    S total = 0;
    for (int64_t r = 0; r < n; ++r)
        total += mask[static_cast<size_t>(r)] *
                 (l(r, targets[static_cast<size_t>(r)]) - lse[r]);
    ArrX<S> out(1);
    out[0] = total;
    auto ln = logits.node();
    std::vector<int32_t> tg(targets.begin(), targets.end());
    std::vector<S> mk(mask.begin(), mask.end());
    return detail::make_node<S>(
        {}, std::move(out), {logits},
        [ln, tg = std::move(tg), mk = std::move(mk), sm = std::move(sm), n,
         v](const TensorNode<S>& o) {
            ln->ensure_grad();
            MatMap<S> gl(ln->grad.data(), n, v);
            const S g = o.grad[0];
            for (int64_t r = 0; r < n; ++r) {
                const S w = g * mk[static_cast<size_t>(r)];
                if (w == S(0)) continue;
                gl.row(r) -= w * sm.row(r);
                gl(r, tg[static_cast<size_t>(r)]) += w;
            }
        });
}

// Inverted-dropout; identity when rate == 0. Draws one uniform per element
// from the supplied stream.
template <class S>
Tensor<S> dropout(const Tensor<S>& x, double rate, RngStream& rng) {
    if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout: rate must be in [0,1)");
    if (rate == 0.0) return x;
    ArrX<S> mask(x.numel());
    const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
    for (int64_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.next_double() < rate ? S(0) : keep_scale;
    ArrX<S> out = x.value() * mask;
    auto xn = x.node();
    return detail::make_node<S>(x.shape(), std::move(out), {x},
                                [xn, mask = std::move(mask)](const TensorNode<S>& o) {
                                    xn->ensure_grad();
                                    xn->grad += o.grad * mask;
                                });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

template <class S>
void backward(const Tensor<S>& loss) {
    if (!loss.defined()) throw Error("backward: undefined tensor");
    if (loss.numel() != 1)
        throw ShapeError("backward: loss must be scalar, got shape " +
                         shape_str(loss.shape()));
    auto root = loss.node();
    std::vector<TensorNode<S>*> order;
    std::unordered_set<const TensorNode<S>*> seen;
    std::vector<TensorNode<S>*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents)
            if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
    // Creation order is a topological order (inputs exist before outputs), so
    // descending serials give the reverse traversal; each node fires once.
    std::sort(order.begin(), order.end(),
              [](const TensorNode<S>* a, const TensorNode<S>* b) { return a->serial > b->serial; });
    root->ensure_grad();
    root->grad[0] += S(1);
    for (auto* n : order)
        if (n->vjp) {
            n->ensure_grad();
            n->vjp(*n);
        }
}

}  // namespace lmlab
