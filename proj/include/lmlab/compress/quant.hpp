// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Quantization plans over a whole model: projection matrices are palettized
// at 2 or 4 bits (16-wide LUT share groups), the shared embedding uses
// per-channel 8-bit affine quantization, norm gains stay in float32.
// Mixed precision demotes projections from 4 to 2 bits greedily, smallest
// reconstruction-error increase first, until the target bits-per-weight is
// met. LUT entries are accounted at 16 bits each.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lmlab/compress/palettize.hpp"
#include "lmlab/model/model.hpp"

namespace lmlab {

struct TensorScheme {
    enum class Kind : uint8_t { Pal4 = 0, Pal2 = 1, Int8PC = 2, Float32 = 3 };
    Kind kind = Kind::Float32;
    GroupAxis axis = GroupAxis::Columns;
    int64_t group_size = 16;
};

struct QuantPlan {
    std::map<std::string, TensorScheme> schemes;  // must cover every parameter
    double target_bpw = 4.07;
};

namespace detail {

// Column grouping for input-side projections, row grouping for the two
// output-side ones; isolated here so the assignment is a single policy point.
inline GroupAxis group_axis_for(const std::string& name) {
    const auto pos = name.rfind('.');
    const std::string leaf = pos == std::string::npos ? name : name.substr(pos + 1);
    if (leaf == "wo" || leaf == "w_down") return GroupAxis::Rows;
    return GroupAxis::Columns;
}

inline bool is_projection(const std::string& name) {
    const auto pos = name.rfind('.');
    const std::string leaf = pos == std::string::npos ? name : name.substr(pos + 1);
    return leaf == "wq" || leaf == "wk" || leaf == "wv" || leaf == "wo" ||
           leaf == "w_gate" || leaf == "w_up" || leaf == "w_down";
}

}  // namespace detail

template <class S>
QuantPlan uniform_plan(const Model<S>& model, int bits, int64_t group_size = 16) {
    QuantPlan plan;
    for (const auto& [name, p] : model.named_params()) {
        TensorScheme s;
        if (detail::is_projection(name)) {
            s.kind = bits == 2 ? TensorScheme::Kind::Pal2 : TensorScheme::Kind::Pal4;
            s.axis = detail::group_axis_for(name);
            s.group_size = group_size;
        } else if (name == "embed") {
            s.kind = TensorScheme::Kind::Int8PC;
        } else {
            s.kind = TensorScheme::Kind::Float32;
        }
        plan.schemes[name] = s;
    }
    plan.target_bpw = bits + 0.07;
    return plan;
}

struct BpwBreakdown {
    double overall = 0;      // all parameters, float tensors at 32 bits
    double palettized = 0;   // projection class only
    double embedding = 0;
    int64_t total_weights = 0;
};

template <class S>
BpwBreakdown effective_bpw_breakdown(const QuantPlan& plan, const Model<S>& model) {
    BpwBreakdown b;
    double bits_all = 0, bits_pal = 0, bits_emb = 0;
    int64_t n_all = 0, n_pal = 0, n_emb = 0;
    for (const auto& [name, p] : model.named_params()) {
        auto it = plan.schemes.find(name);
        if (it == plan.schemes.end())
            throw ConfigError("effective_bpw: plan does not cover tensor '" + name + "'");
        const auto& s = it->second;
        const int64_t n = p.numel();
        double bits = 0;
        switch (s.kind) {
            case TensorScheme::Kind::Pal4:
            case TensorScheme::Kind::Pal2: {
                const int bw = s.kind == TensorScheme::Kind::Pal4 ? 4 : 2;
                const int64_t extent =
                    s.axis == GroupAxis::Columns ? p.dim(1) : p.dim(0);
                const int64_t groups = (extent + s.group_size - 1) / s.group_size;
                bits = double(n) * bw + double(groups) * double(1 << bw) * 16.0;
                bits_pal += bits;
                n_pal += n;
                break;
            }
            case TensorScheme::Kind::Int8PC: {
                const int64_t channels = p.dim(1);
                bits = double(n) * 8.0 + double(channels) * 32.0;  // f16 scale + f16 zero
                bits_emb += bits;
                n_emb += n;
                break;
            }
            case TensorScheme::Kind::Float32:
                bits = double(n) * 32.0;
                break;
        }
        bits_all += bits;
        n_all += n;
    }
    b.overall = bits_all / double(n_all);
    b.palettized = n_pal > 0 ? bits_pal / double(n_pal) : 0.0;
    b.embedding = n_emb > 0 ? bits_emb / double(n_emb) : 0.0;
    b.total_weights = n_all;
    return b;
}

template <class S>
double effective_bpw(const QuantPlan& plan, const Model<S>& model) {
    return effective_bpw_breakdown(plan, model).overall;
}

template <class S>
struct QuantizedModel {
    ModelConfig cfg;
    QuantPlan plan;
    std::map<std::string, PalettizedTensor<S>> palettized;
    std::map<std::string, Int8PerChannel<S>> int8;
    std::map<std::string, Tensor<S>> floats;

    // Materialize a float model with reconstructed weights; parameters are
    // frozen (no gradients) since the backbone is fixed after quantization.
    Model<S> dequantize(RngStream& rng) const {
        auto m = Model<S>::init(cfg, rng);
        for (auto& [name, p] : m.named_params()) {
            auto t = const_cast<Tensor<S>&>(p);
            if (auto it = palettized.find(name); it != palettized.end()) {
                MatRM<S> r = it->second.reconstruct();
                t.value_mut() = Eigen::Map<ArrX<S>>(r.data(), r.size());
            } else if (auto it8 = int8.find(name); it8 != int8.end()) {
                MatRM<S> r = it8->second.reconstruct();
                t.value_mut() = Eigen::Map<ArrX<S>>(r.data(), r.size());
            } else if (auto itf = floats.find(name); itf != floats.end()) {
                t.value_mut() = itf->second.value();
            } else {
                throw CheckpointError("QuantizedModel: missing tensor " + name);
            }
            t.set_requires_grad(false);
        }
        return m;
    }
};

template <class S>
QuantizedModel<S> quantize(const Model<S>& model, const QuantPlan& plan,
                           int kmeans_iters, RngStream& rng) {
    QuantizedModel<S> qm;
    qm.cfg = model.cfg;
    qm.plan = plan;
    for (const auto& [name, p] : model.named_params()) {
        auto it = plan.schemes.find(name);
        if (it == plan.schemes.end())
            throw ConfigError("quantize: plan does not cover tensor '" + name + "'");
        const auto& s = it->second;
        auto trng = rng.split(name);
        switch (s.kind) {
            case TensorScheme::Kind::Pal4:
                qm.palettized[name] = palettize(p, 4, s.group_size, s.axis, kmeans_iters, trng);
                break;
            case TensorScheme::Kind::Pal2:
                qm.palettized[name] = palettize(p, 2, s.group_size, s.axis, kmeans_iters, trng);
                break;
            case TensorScheme::Kind::Int8PC:
                qm.int8[name] = quantize_int8_per_channel(p);
                break;
            case TensorScheme::Kind::Float32:
                qm.floats[name] = p.detach();
                break;
        }
    }
    return qm;
}

// Greedy mixed-precision planner: start all projections at 4 bits and demote
// to 2 bits in order of smallest reconstruction-error increase until the
// overall bits-per-weight reaches target + 0.05, then keep whichever of the
// last two plans lands closer to the target.
template <class S>
QuantPlan plan_for_target(const Model<S>& model, double target_bpw, int64_t group_size,
                          int kmeans_iters, RngStream& rng) {
    QuantPlan plan = uniform_plan(model, 4, group_size);
    plan.target_bpw = target_bpw;

    struct Cand {
        std::string name;
        double err_increase;
    };
    std::vector<Cand> cands;
    for (const auto& [name, p] : model.named_params()) {
        if (!detail::is_projection(name)) continue;
        auto r4 = rng.split(name + "#4"), r2 = rng.split(name + "#2");
        const auto axis = detail::group_axis_for(name);
        const double e4 = palettize(p, 4, group_size, axis, kmeans_iters, r4).total_sse();
        const double e2 = palettize(p, 2, group_size, axis, kmeans_iters, r2).total_sse();
        cands.push_back({name, e2 - e4});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        return a.err_increase != b.err_increase ? a.err_increase < b.err_increase
                                                : a.name < b.name;
    });

    bool have_best = false;
    double best_dist = 0;
    QuantPlan best;
    auto consider = [&] {
        const double bpw = effective_bpw(plan, model);
        if (bpw > target_bpw + 0.05) return;
        const double d = std::abs(bpw - target_bpw);
        if (!have_best || d < best_dist) {
            have_best = true;
            best_dist = d;
            best = plan;
        }
    };
    consider();
    for (const auto& c : cands) {
        if (effective_bpw(plan, model) <= target_bpw) break;
        plan.schemes[c.name].kind = TensorScheme::Kind::Pal2;
        consider();
    }
    if (!have_best)
        throw ConfigError("plan_for_target: target " + std::to_string(target_bpw) +
                          " bpw unreachable for this model");
    return best;
}

}  // namespace lmlab
