// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Structural pruning of the feed-forward hidden dimension. Learns per-unit
// scores through a sigmoid relaxation whose threshold is re-solved by
// bisection every step so the relaxed mask sums to the keep budget; the final
// mask is a hard top-k over the scores.
#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "lmlab/model/model.hpp"
#include "lmlab/optim/optimizer.hpp"

namespace lmlab {

template <class S>
struct PruneMask {
    std::vector<Tensor<S>> scores;  // per layer, shape (ffn_hidden), learnable
    double temperature = 1.0;
    int64_t keep = 0;

    // Threshold tau with sum(sigmoid((s - tau)/T)) within [k - 0.5, k + 0.5].
    static S solve_tau(const ArrX<S>& s, double temperature, int64_t k) {
        const double T = temperature;
        double lo = static_cast<double>(s.minCoeff()) - 20.0 * T;
        double hi = static_cast<double>(s.maxCoeff()) + 20.0 * T;
        auto mass = [&](double tau) {
            double sum = 0;
            for (int64_t i = 0; i < s.size(); ++i)
                sum += 1.0 / (1.0 + std::exp(-(static_cast<double>(s[i]) - tau) / T));
            return sum;
        };
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double m = mass(mid);
            if (std::abs(m - static_cast<double>(k)) <= 0.5) return static_cast<S>(mid);
            if (m > static_cast<double>(k))
                lo = mid;
            else
                hi = mid;
        }
        std::ostringstream os;
        os << "PruneMask: bisection failed (k=" << k << ", T=" << T
           << ", score min=" << s.minCoeff() << " max=" << s.maxCoeff()
           << " mean=" << s.mean() << ")";
        throw DomainError(os.str());
    }

    // Relaxed differentiable mask for one layer; tau is treated as a constant.
    Tensor<S> relaxed(size_t layer) const {
        const auto& s = scores[layer];
        const S tau = solve_tau(s.value(), temperature, keep);
        return sigmoid(scale(add_scalar(s, -tau), static_cast<S>(1.0 / temperature)));
    }

    std::vector<Tensor<S>> relaxed_all() const {
        std::vector<Tensor<S>> out;
        for (size_t l = 0; l < scores.size(); ++l) out.push_back(relaxed(l));
        return out;
    }

    // Hard top-k unit indices per layer (ascending), ties broken by index.
    std::vector<std::vector<int64_t>> hardened() const {
        std::vector<std::vector<int64_t>> out;
        for (const auto& s : scores) {
            std::vector<int64_t> idx(static_cast<size_t>(s.numel()));
            for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
            std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
                return s.value()[a] > s.value()[b];
            });
            idx.resize(static_cast<size_t>(keep));
            std::sort(idx.begin(), idx.end());
            out.push_back(std::move(idx));
        }
        return out;
    }

    // 0/1 mask tensors from the hardened indices.
    std::vector<Tensor<S>> hard_mask_tensors() const {
        auto kept = hardened();
        std::vector<Tensor<S>> out;
        for (size_t l = 0; l < kept.size(); ++l) {
            auto m = Tensor<S>::zeros({scores[l].numel()});
            for (int64_t i : kept[l]) m.value_mut()[i] = S(1);
            out.push_back(std::move(m));
        }
        return out;
    }
};

struct MaskTrainConfig {
    int64_t steps = 200;
    double lr = 0.05;
    double t_start = 1.0;
    double t_end = 0.05;  // annealed geometrically
    int64_t batch = 4;
    int64_t seq_len = 48;
};

// Learns the mask against next-token loss on sampled batches; model weights
// stay frozen, only the scores move.
template <class S, class BatchFn>
PruneMask<S> learn_mask(const Model<S>& model, BatchFn&& next_batch, int64_t k,
                        const MaskTrainConfig& cfg, RngStream& rng) {
    if (k <= 0 || k > model.cfg.ffn_hidden_dim)
        throw ConfigError("learn_mask: keep count " + std::to_string(k) +
                          " out of range for ffn_hidden_dim " +
                          std::to_string(model.cfg.ffn_hidden_dim));
    PruneMask<S> mask;
    mask.keep = k;
    mask.temperature = cfg.t_start;
    std::vector<std::pair<std::string, Tensor<S>>> score_params;
    for (int64_t l = 0; l < model.cfg.n_layers; ++l) {
        auto s = Tensor<S>::randn({model.cfg.ffn_hidden_dim}, rng, S(0.01), true);
        mask.scores.push_back(s);
        score_params.emplace_back("mask_scores." + std::to_string(l), s);
    }
    typename RmsPropMomentum<S>::Hyper h;
    h.weight_decay = 0.0;
    RmsPropMomentum<S> opt(score_params, h, LrSchedule::constant(cfg.lr));
    const double anneal =
        cfg.steps > 1 ? std::pow(cfg.t_end / cfg.t_start, 1.0 / double(cfg.steps - 1)) : 1.0;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        mask.temperature = cfg.t_start * std::pow(anneal, double(step));
        auto rows = next_batch(step);
        for (auto& s : mask.scores) s.zero_grad();
        auto masks = mask.relaxed_all();
        Tensor<S> loss;
        for (const auto& row : rows) {
            ForwardOptions<S> opts;
            opts.ffn_masks = &masks;
            auto l = lm_loss_graph(model, std::span<const int32_t>(row), opts);
            loss = loss.defined() ? add(loss, l) : l;
        }
        loss = scale(loss, S(1.0 / double(rows.size())));
        backward(loss);
        opt.step();
    }
    return mask;
}

// Removes masked-out hidden units: gate/up lose columns, down loses rows.
template <class S>
Model<S> prune(const Model<S>& model, const PruneMask<S>& mask) {
    auto kept = mask.hardened();
    if (kept.size() != model.layers.size())
        throw ShapeError("prune: mask layer count does not match model");
    ModelConfig cfg = model.cfg;
    cfg.ffn_hidden_dim = mask.keep;
    Model<S> out = model.clone();
    out.cfg = cfg;
    for (size_t l = 0; l < out.layers.size(); ++l) {
        const auto& ki = kept[l];
        auto& w = out.layers[l];
        const int64_t dim = model.cfg.model_dim;
        const int64_t old_ffn = model.cfg.ffn_hidden_dim;
        auto take_cols = [&](const Tensor<S>& m) {
            auto t = Tensor<S>::zeros({dim, mask.keep}, true);
            ConstMatMap<S> src(m.value().data(), dim, old_ffn);
            MatMap<S> dst(t.value_mut().data(), dim, mask.keep);
            for (size_t j = 0; j < ki.size(); ++j)
                dst.col(static_cast<int64_t>(j)) = src.col(ki[j]);
            return t;
        };
        auto take_rows = [&](const Tensor<S>& m) {
            auto t = Tensor<S>::zeros({mask.keep, dim}, true);
            ConstMatMap<S> src(m.value().data(), old_ffn, dim);
            MatMap<S> dst(t.value_mut().data(), mask.keep, dim);
            for (size_t j = 0; j < ki.size(); ++j)
                dst.row(static_cast<int64_t>(j)) = src.row(ki[j]);
            return t;
        };
        w.w_gate = take_cols(model.layers[l].w_gate);
        w.w_up = take_cols(model.layers[l].w_up);
        w.w_down = take_rows(model.layers[l].w_down);
    }
    out.rebuild_registry();
    return out;
}

}  // namespace lmlab
