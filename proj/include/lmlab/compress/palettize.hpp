// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Grouped weight palettization: every group_size consecutive columns (or
// rows) of a matrix share one lookup table of 2^bits centroids found by
// k-means (k-means++ seeding, capped Lloyd iterations). Groups with at most
// 2^bits distinct values reconstruct exactly.
#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

#include "lmlab/core/rng.hpp"
#include "lmlab/tensor/tensor.hpp"

namespace lmlab {

enum class GroupAxis : uint8_t { Columns = 0, Rows = 1 };

template <class S>
struct PalettizedTensor {
    Shape shape;  // original (rows, cols)
    GroupAxis axis = GroupAxis::Columns;
    int64_t group_size = 16;
    int bits = 4;
    std::vector<std::vector<S>> luts;      // per group, 2^bits entries
    std::vector<uint8_t> indices;          // per weight, row-major over the original
    std::vector<double> group_sse;         // per-group squared reconstruction error
    std::vector<std::vector<double>> sse_per_iter;  // k-means objective trace per group

    int64_t rows() const { return shape[0]; }
    int64_t cols() const { return shape[1]; }
    int64_t n_groups() const { return static_cast<int64_t>(luts.size()); }

    MatRM<S> reconstruct() const {
        MatRM<S> out(rows(), cols());
        const int64_t gs = group_size;
        for (int64_t r = 0; r < rows(); ++r)
            for (int64_t c = 0; c < cols(); ++c) {
                const int64_t g = axis == GroupAxis::Columns ? c / gs : r / gs;
                out(r, c) = luts[static_cast<size_t>(g)]
                                [indices[static_cast<size_t>(r * cols() + c)]];
            }
        return out;
    }

    double total_sse() const {
        double s = 0;
        for (double e : group_sse) s += e;
        return s;
    }
};

namespace detail {

// 1-D k-means with k-means++ seeding and a fixed iteration budget. Returns
// centroids and fills assignments; appends the SSE after each iteration.
template <class S>
std::vector<S> kmeans_1d(const std::vector<S>& x, int k, int iters, RngStream& rng,
                         std::vector<uint8_t>& assign, std::vector<double>& sse_trace) {
    const size_t n = x.size();
    std::set<S> distinct(x.begin(), x.end());
    std::vector<S> centers;
    const bool lossless = static_cast<int>(distinct.size()) <= k;
    if (lossless) {
        // enough centroids for an exact table; pad with duplicates
        centers.assign(distinct.begin(), distinct.end());
        while (static_cast<int>(centers.size()) < k) centers.push_back(centers.back());
    } else {
        // k-means++ seeding
        centers.push_back(x[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(n)))]);
        std::vector<double> d2(n);
        while (static_cast<int>(centers.size()) < k) {
            double total = 0;
            for (size_t i = 0; i < n; ++i) {
                double best = 1e300;
                for (S c : centers) {
                    const double d = static_cast<double>(x[i]) - static_cast<double>(c);
                    best = std::min(best, d * d);
                }
                d2[i] = best;
                total += best;
            }
            if (total <= 0) {
                centers.push_back(centers.back());
                continue;
            }
            double r = rng.next_double() * total, acc = 0;
            size_t pick = n - 1;
            for (size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (r < acc) {
                    pick = i;
                    break;
                }
            }
            centers.push_back(x[pick]);
        }
    }
    assign.assign(n, 0);
    auto assign_all = [&] {
        double sse = 0;
        for (size_t i = 0; i < n; ++i) {
            double best = 1e300;
            uint8_t bi = 0;
            for (size_t c = 0; c < centers.size(); ++c) {
                const double d = static_cast<double>(x[i]) - static_cast<double>(centers[c]);
                const double dd = d * d;
                if (dd < best) {
                    best = dd;
                    bi = static_cast<uint8_t>(c);
                }
            }
            assign[i] = bi;
            sse += best;
        }
        return sse;
    };
    sse_trace.push_back(assign_all());
    if (lossless) return centers;  // refining exact centroids could only drift
    for (int it = 0; it < iters; ++it) {
        std::vector<double> sum(centers.size(), 0.0);
        std::vector<int64_t> cnt(centers.size(), 0);
        for (size_t i = 0; i < n; ++i) {
            sum[assign[i]] += static_cast<double>(x[i]);
            ++cnt[assign[i]];
        }
        bool moved = false;
        for (size_t c = 0; c < centers.size(); ++c) {
            if (cnt[c] == 0) continue;  // empty cluster keeps its centroid
            const S nc = static_cast<S>(sum[c] / static_cast<double>(cnt[c]));
            if (nc != centers[c]) moved = true;
            centers[c] = nc;
        }
        sse_trace.push_back(assign_all());
        if (!moved) break;
    }
    return centers;
}

}  // namespace detail

template <class S>
PalettizedTensor<S> palettize(const Tensor<S>& w, int bits, int64_t group_size,
                              GroupAxis axis, int kmeans_iters, RngStream& rng) {
    if (bits != 2 && bits != 4) throw ConfigError("palettize: bits must be 2 or 4");
    if (w.rank() != 2)
        throw ShapeError("palettize: expected rank-2 weights, got " + shape_str(w.shape()));
    if (group_size <= 0) throw ConfigError("palettize: group_size must be positive");
    const int64_t rows = w.dim(0), cols = w.dim(1);
    const int64_t extent = axis == GroupAxis::Columns ? cols : rows;
    // a ragged final group acts as its own smaller k-means problem
    const int64_t n_groups = (extent + group_size - 1) / group_size;
    const int k = 1 << bits;

    PalettizedTensor<S> out;
    out.shape = {rows, cols};
    out.axis = axis;
    out.group_size = group_size;
    out.bits = bits;
    out.indices.assign(static_cast<size_t>(rows * cols), 0);
    ConstMatMap<S> wm(w.value().data(), rows, cols);

    for (int64_t g = 0; g < n_groups; ++g) {
        const int64_t lo = g * group_size;
        const int64_t hi = std::min(extent, lo + group_size);
        std::vector<S> scalars;
        std::vector<std::pair<int64_t, int64_t>> coords;
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) {
                const int64_t pos = axis == GroupAxis::Columns ? c : r;
                if (pos < lo || pos >= hi) continue;
                scalars.push_back(wm(r, c));
                coords.emplace_back(r, c);
            }
        std::vector<uint8_t> assign;
        std::vector<double> trace;
        auto rng_g = rng.split(static_cast<uint64_t>(g));
        auto lut = detail::kmeans_1d<S>(scalars, k, kmeans_iters, rng_g, assign, trace);
        double sse = 0;
        for (size_t i = 0; i < scalars.size(); ++i) {
            const auto [r, c] = coords[i];
            out.indices[static_cast<size_t>(r * cols + c)] = assign[i];
            const double d =
                static_cast<double>(scalars[i]) - static_cast<double>(lut[assign[i]]);
            sse += d * d;
        }
        out.luts.push_back(std::move(lut));
        out.group_sse.push_back(sse);
        out.sse_per_iter.push_back(std::move(trace));
    }
    return out;
}

// Per-channel 8-bit affine quantization over columns; the embedding scheme.
template <class S>
struct Int8PerChannel {
    Shape shape;
    std::vector<S> scale, zero;  // per column
    std::vector<uint8_t> q;      // row-major

    MatRM<S> reconstruct() const {
        const int64_t rows = shape[0], cols = shape[1];
        MatRM<S> out(rows, cols);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c)
                out(r, c) = zero[static_cast<size_t>(c)] +
                            scale[static_cast<size_t>(c)] *
                                static_cast<S>(q[static_cast<size_t>(r * cols + c)]);
        return out;
    }
};

template <class S>
Int8PerChannel<S> quantize_int8_per_channel(const Tensor<S>& w) {
    if (w.rank() != 2)
        throw ShapeError("int8 quantization expects rank-2, got " + shape_str(w.shape()));
    const int64_t rows = w.dim(0), cols = w.dim(1);
    ConstMatMap<S> wm(w.value().data(), rows, cols);
    Int8PerChannel<S> out;
    out.shape = {rows, cols};
    out.scale.resize(static_cast<size_t>(cols));
    out.zero.resize(static_cast<size_t>(cols));
    out.q.resize(static_cast<size_t>(rows * cols));
    for (int64_t c = 0; c < cols; ++c) {
        const S mn = wm.col(c).minCoeff(), mx = wm.col(c).maxCoeff();
        const S scale = (mx - mn) > S(0) ? (mx - mn) / S(255) : S(1);
        out.scale[static_cast<size_t>(c)] = scale;
        out.zero[static_cast<size_t>(c)] = mn;
        for (int64_t r = 0; r < rows; ++r) {
            const double t = (static_cast<double>(wm(r, c)) - static_cast<double>(mn)) /
                             static_cast<double>(scale);
            out.q[static_cast<size_t>(r * cols + c)] =
                static_cast<uint8_t>(std::min(255.0, std::max(0.0, std::round(t))));
        }
    }
    return out;
}

}  // namespace lmlab
