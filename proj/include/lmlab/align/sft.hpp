// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Supervised fine-tuning on (prompt, response) demonstrations: cross-entropy
// on response tokens only, dropout active in training mode.
#pragma once

#include <span>
#include <vector>

#include "lmlab/model/model.hpp"
#include "lmlab/optim/optimizer.hpp"

namespace lmlab {

struct DemoExample {
    std::vector<int32_t> prompt;
    std::vector<int32_t> response;
};

// Loss for one demonstration; prompt positions carry zero weight so they
// contribute neither loss nor gradient.
template <class S>
Tensor<S> sft_loss(const Model<S>& m, const DemoExample& ex,
                   const ForwardOptions<S>& opts = {}) {
    if (ex.prompt.empty()) throw ShapeError("sft_loss: empty prompt");
    if (ex.response.empty()) throw DataError("sft_loss: empty response");
    std::vector<int32_t> seq(ex.prompt);
    seq.insert(seq.end(), ex.response.begin(), ex.response.end());
    std::vector<int32_t> inputs(seq.begin(), seq.end() - 1);
    std::vector<int32_t> targets(seq.begin() + 1, seq.end());
    std::vector<S> weights(targets.size(), S(0));
    for (size_t i = ex.prompt.size() - 1; i < targets.size(); ++i) weights[i] = S(1);
    auto logits = m.forward(std::span<const int32_t>(inputs), opts);
    return cross_entropy(logits, std::span<const int32_t>(targets),
                         std::span<const S>(weights));
}

struct SftStats {
    double loss = 0;
    int64_t skipped_empty = 0;
};

// One optimizer step over a demonstration batch. Examples with an empty
// response are skipped and counted.
template <class S>
SftStats sft_step(Model<S>& m, std::span<const DemoExample> batch, Optimizer<S>& opt,
                  double dropout_rate, RngStream& dropout_rng) {
    SftStats stats;
    m.zero_grads();
    Tensor<S> loss;
    int64_t n = 0;
    for (const auto& ex : batch) {
        if (ex.response.empty()) {
            ++stats.skipped_empty;
            continue;
        }
        ForwardOptions<S> opts;
        opts.dropout_rate = dropout_rate;
        opts.dropout_rng = &dropout_rng;
        auto l = sft_loss(m, ex, opts);
        loss = loss.defined() ? add(loss, l) : l;
        ++n;
    }
    if (n == 0) return stats;
    loss = scale(loss, S(1.0 / double(n)));
    backward(loss);
    stats.loss = static_cast<double>(loss.item());
    opt.step();
    return stats;
}

// Mean per-token loss of the model on its own greedy completions (the
// memorization probe used by the convergence check).
template <class S>
double self_completion_loss(const Model<S>& m, std::span<const DemoExample> demos,
                            int64_t max_len) {
    NoGradGuard ng;
    double total = 0;
    int64_t n = 0;
    RngStream unused(0);
    for (const auto& ex : demos) {
        auto greedy = sample(m, std::span<const int32_t>(ex.prompt), max_len, 0.0, unused);
        if (greedy.empty()) continue;
        DemoExample own{ex.prompt, greedy};
        total += static_cast<double>(sft_loss(m, own).item());
        ++n;
    }
    return n > 0 ? total / double(n) : 0.0;
}

}  // namespace lmlab
