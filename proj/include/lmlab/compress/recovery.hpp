// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Accuracy-recovery adapters: a low-rank adapter trained on the pre-training
// objective over a frozen quantized backbone, closing part of the
// quantized-vs-float evaluation-loss gap.
#pragma once

#include <functional>
#include <vector>

#include "lmlab/compress/lora.hpp"
#include "lmlab/compress/quant.hpp"
#include "lmlab/optim/optimizer.hpp"

namespace lmlab {

struct RecoveryTrainConfig {
    int64_t steps = 300;
    double lr = 2e-3;
    int64_t batch = 4;
    double alpha_over_rank = 1.0;  // adapter scaling = alpha_over_rank * rank
};

template <class S>
struct RecoveryResult {
    LoraAdapter<S> adapter;
    double float_loss = 0;      // unquantized reference
    double quant_loss = 0;      // frozen backbone, no adapter
    double recovered_loss = 0;  // frozen backbone + adapter
    double gap_closed_fraction() const {
        const double gap = quant_loss - float_loss;
        return gap > 0 ? (quant_loss - recovered_loss) / gap : 0.0;
    }
    double absolute_gap_closed() const { return quant_loss - recovered_loss; }
};

template <class S>
double mean_lm_loss(const Model<S>& m, const std::vector<std::vector<int32_t>>& rows,
                    LinearDeltaProvider<S>* deltas = nullptr) {
    double total = 0;
    for (const auto& row : rows) {
        ForwardOptions<S> opts;
        opts.deltas = deltas;
        total += lm_loss(m, std::span<const int32_t>(row), opts);
    }
    return total / static_cast<double>(rows.size());
}

// next_batch(step) supplies training rows; eval_rows is the held-out split.
template <class S, class BatchFn>
RecoveryResult<S> train_recovery_adapter(const Model<S>& float_model,
                                         const QuantizedModel<S>& qm, int64_t rank,
                                         BatchFn&& next_batch,
                                         const std::vector<std::vector<int32_t>>& eval_rows,
                                         const RecoveryTrainConfig& cfg, RngStream& rng) {
    auto drng = rng.split("dequant");
    Model<S> base = qm.dequantize(drng);  // parameters frozen by construction
    auto arng = rng.split("adapter");
    RecoveryResult<S> res{LoraAdapter<S>::init(
        base.cfg, rank, static_cast<S>(cfg.alpha_over_rank * double(rank)), arng)};

    typename RmsPropMomentum<S>::Hyper h;
    h.weight_decay = 0.0;
    RmsPropMomentum<S> opt(res.adapter.named_params(), h, LrSchedule::constant(cfg.lr));
    for (int64_t step = 0; step < cfg.steps; ++step) {
        auto rows = next_batch(step);
        res.adapter.zero_grads();
        Tensor<S> loss;
        for (const auto& row : rows) {
            ForwardOptions<S> opts;
            opts.deltas = &res.adapter;
            auto l = lm_loss_graph(base, std::span<const int32_t>(row), opts);
            loss = loss.defined() ? add(loss, l) : l;
        }
        backward(scale(loss, S(1.0 / double(rows.size()))));
        for (const auto& [name, p] : base.named_params())
            if (p.has_grad())
                throw Error("recovery: gradient flowed into frozen base tensor " + name);
        opt.step();
    }
    res.float_loss = mean_lm_loss(float_model, eval_rows);
    res.quant_loss = mean_lm_loss(base, eval_rows);
    res.recovered_loss = mean_lm_loss(base, eval_rows, &res.adapter);
    return res;
}

}  // namespace lmlab
