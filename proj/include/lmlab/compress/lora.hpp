// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters over every attention and feed-forward projection.
// delta(x) = (alpha / rank) * x A B with A (in, r) random, B (r, out) zero,
// so a fresh adapter is an exact identity delta.
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lmlab/model/model.hpp"

namespace lmlab {

inline const char* kLoraProjections[] = {"wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down"};

template <class S>
class LoraAdapter final : public LinearDeltaProvider<S> {
public:
    struct Pair {
        Tensor<S> A, B;
    };

    int64_t rank = 16;
    S alpha = 16;

    static LoraAdapter init(const ModelConfig& cfg, int64_t rank, S alpha, RngStream& rng) {
        if (rank <= 0) throw ConfigError("LoraAdapter: rank must be positive");
        LoraAdapter a;
        a.rank = rank;
        a.alpha = alpha;
        auto dims = projection_dims(cfg);
        for (int64_t l = 0; l < cfg.n_layers; ++l) {
            for (const char* proj : kLoraProjections) {
                const auto [in, out] = dims.at(proj);
                Pair p;
                p.A = Tensor<S>::randn({in, rank}, rng,
                                       static_cast<S>(1.0 / std::sqrt(double(in))), true);
                p.B = Tensor<S>::zeros({rank, out}, true);
                a.pairs_[key(l, proj)] = std::move(p);
            }
        }
        return a;
    }

    Tensor<S> delta(int64_t layer, const std::string& proj, const Tensor<S>& x) override {
        if (alpha == S(0)) return {};
        auto it = pairs_.find(key(layer, proj));
        if (it == pairs_.end()) return {};
        return scale(matmul(matmul(x, it->second.A), it->second.B),
                     alpha / static_cast<S>(rank));
    }

    // Registry order: layer-major, projection order as wrapped.
    std::vector<std::pair<std::string, Tensor<S>>> named_params() {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        for (auto& [k, p] : pairs_) {
            out.emplace_back("lora." + k + ".A", p.A);
            out.emplace_back("lora." + k + ".B", p.B);
        }
        return out;
    }

    void zero_grads() {
        for (auto& [k, p] : pairs_) {
            p.A.zero_grad();
            p.B.zero_grad();
        }
    }

    const std::map<std::string, Pair>& pairs() const { return pairs_; }
    std::map<std::string, Pair>& pairs_mut() { return pairs_; }

    static std::string key(int64_t layer, const std::string& proj) {
        return std::to_string(layer) + "." + proj;
    }

    static std::map<std::string, std::pair<int64_t, int64_t>> projection_dims(
        const ModelConfig& cfg) {
        return {
            {"wq", {cfg.model_dim, cfg.attention_width()}},
            {"wk", {cfg.model_dim, cfg.kv_width()}},
            {"wv", {cfg.model_dim, cfg.kv_width()}},
            {"wo", {cfg.attention_width(), cfg.model_dim}},
            {"w_gate", {cfg.model_dim, cfg.ffn_hidden_dim}},
            {"w_up", {cfg.model_dim, cfg.ffn_hidden_dim}},
            {"w_down", {cfg.ffn_hidden_dim, cfg.model_dim}},
        };
    }

private:
    std::map<std::string, Pair> pairs_;
};

}  // namespace lmlab
