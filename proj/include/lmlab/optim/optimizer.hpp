// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Pre-training optimizer: RMSProp variant with momentum. Per step, in order:
// global gradient-norm clip, squared-gradient EMA with bias correction,
// instantaneous update with per-block norm clip, update EMA without bias
// correction, then lr * mu-multiplier * (update + decoupled weight decay).
// A parameter block is one named tensor. An AdamW baseline is provided for
// the recipe ablation harness.
#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lmlab/core/error.hpp"
#include "lmlab/optim/schedule.hpp"
#include "lmlab/tensor/tensor.hpp"

namespace lmlab {

struct StepDiagnostics {
    double global_grad_norm = 0.0;             // before clipping
    std::vector<double> post_clip_inst_norms;  // per block, after step 4
    int64_t dropped_updates = 0;
};

template <class S>
class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step() = 0;
    virtual int64_t step_count() const = 0;
    virtual void set_step_count(int64_t t) = 0;
    virtual double last_lr() const = 0;
    virtual const StepDiagnostics& diagnostics() const = 0;
    // State tensors for checkpointing, names prefixed "opt."
    virtual std::vector<std::pair<std::string, Tensor<S>>> state_tensors() = 0;
};

namespace detail {

template <class S>
void check_finite(const std::string& name, const ArrX<S>& g) {
    if (!g.isFinite().all())
        throw NumericalError("optimizer: non-finite gradient in block '" + name + "'");
}

}  // namespace detail

template <class S>
class RmsPropMomentum final : public Optimizer<S> {
public:
    struct Hyper {
        double beta1 = 0.95;
        double beta2 = 0.95;
        double eps = 1e-30;  // added to the instantaneous squared gradient
        double per_block_clip = 1.0;
        double global_clip = 1.0;
        double weight_decay = 3.16e-4;
    };

    RmsPropMomentum(std::vector<std::pair<std::string, Tensor<S>>> params, Hyper hyper,
                    LrSchedule schedule, MuParamPolicy mu = {})
        : params_(std::move(params)), hyper_(hyper), schedule_(schedule), mu_(mu) {
        for (auto& [name, p] : params_) {
            v_.emplace_back(name, Tensor<S>::zeros(p.shape()));
            u_.emplace_back(name, Tensor<S>::zeros(p.shape()));
            mult_.push_back(static_cast<S>(mu_.multiplier_for(name)));
        }
    }

    void step() override {
        diag_.post_clip_inst_norms.clear();
        // (1) global clip
        double sq = 0.0;
        for (auto& [name, p] : params_) {
            if (!p.has_grad()) continue;
            detail::check_finite(name, p.grad());
            sq += static_cast<double>(p.grad().square().sum());
        }
        diag_.global_grad_norm = std::sqrt(sq);
        const S gscale = diag_.global_grad_norm > hyper_.global_clip
                             ? static_cast<S>(hyper_.global_clip / diag_.global_grad_norm)
                             : S(1);
        ++t_;
        const double lr = schedule_.at(t_ - 1);
        last_lr_ = lr;
        const S b1 = static_cast<S>(hyper_.beta1), b2 = static_cast<S>(hyper_.beta2);
        const S bias2 = static_cast<S>(1.0 - std::pow(hyper_.beta2, double(t_)));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].second;
            auto& v = v_[i].second.value_mut();
            auto& u = u_[i].second.value_mut();
            ArrX<S> g = p.has_grad() ? ArrX<S>(p.grad() * gscale)
                                     : ArrX<S>(ArrX<S>::Zero(p.numel()));
            // (2) squared-gradient EMA, eps added before smoothing, bias-corrected
            v = b2 * v + (S(1) - b2) * (g.square() + static_cast<S>(hyper_.eps));
            ArrX<S> vhat = v / bias2;
            // (3) instantaneous update
            ArrX<S> inst = g / vhat.sqrt();
            // (4) per-block clip
            const double inorm = std::sqrt(static_cast<double>(inst.square().sum()));
            if (inorm > hyper_.per_block_clip)
                inst *= static_cast<S>(hyper_.per_block_clip / inorm);
            diag_.post_clip_inst_norms.push_back(
                std::min(inorm, hyper_.per_block_clip));
            // (5) update EMA, no bias correction
            u = b1 * u + (S(1) - b1) * inst;
            // (6) scheduled lr scales the whole delta, weight decay decoupled
            const S step_scale = static_cast<S>(lr) * mult_[i];
            p.value_mut() -= step_scale * (u + static_cast<S>(hyper_.weight_decay) * p.value());
        }
    }

    int64_t step_count() const override { return t_; }
    void set_step_count(int64_t t) override { t_ = t; }
    double last_lr() const override { return last_lr_; }
    const StepDiagnostics& diagnostics() const override { return diag_; }

    std::vector<std::pair<std::string, Tensor<S>>> state_tensors() override {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        auto tstep = Tensor<S>::scalar(static_cast<S>(t_));
        out.emplace_back("opt.t", tstep);
        for (auto& [name, v] : v_) out.emplace_back("opt.v." + name, v);
        for (auto& [name, u] : u_) out.emplace_back("opt.u." + name, u);
        return out;
    }

    const Hyper& hyper() const { return hyper_; }

private:
    std::vector<std::pair<std::string, Tensor<S>>> params_;
    std::vector<std::pair<std::string, Tensor<S>>> v_, u_;
    std::vector<S> mult_;
    Hyper hyper_;
    LrSchedule schedule_;
    MuParamPolicy mu_;
    int64_t t_ = 0;
    double last_lr_ = 0.0;
    StepDiagnostics diag_;
};

// Baseline for the recipe ablation: decoupled AdamW with global clipping.
template <class S>
class AdamW final : public Optimizer<S> {
public:
    struct Hyper {
        double beta1 = 0.9;
        double beta2 = 0.95;
        double eps = 1e-15;
        double weight_decay = 1e-4;
        double global_clip = 1.0;
    };

    AdamW(std::vector<std::pair<std::string, Tensor<S>>> params, Hyper hyper,
          LrSchedule schedule)
        : params_(std::move(params)), hyper_(hyper), schedule_(schedule) {
        for (auto& [name, p] : params_) {
            m_.emplace_back(name, Tensor<S>::zeros(p.shape()));
            v_.emplace_back(name, Tensor<S>::zeros(p.shape()));
        }
    }

    void step() override {
        double sq = 0.0;
        for (auto& [name, p] : params_) {
            if (!p.has_grad()) continue;
            detail::check_finite(name, p.grad());
            sq += static_cast<double>(p.grad().square().sum());
        }
        diag_.global_grad_norm = std::sqrt(sq);
        const S gscale = diag_.global_grad_norm > hyper_.global_clip
                             ? static_cast<S>(hyper_.global_clip / diag_.global_grad_norm)
                             : S(1);
        ++t_;
        const double lr = schedule_.at(t_ - 1);
        last_lr_ = lr;
        const S b1 = static_cast<S>(hyper_.beta1), b2 = static_cast<S>(hyper_.beta2);
        const S c1 = static_cast<S>(1.0 - std::pow(hyper_.beta1, double(t_)));
        const S c2 = static_cast<S>(1.0 - std::pow(hyper_.beta2, double(t_)));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].second;
            auto& m = m_[i].second.value_mut();
            auto& v = v_[i].second.value_mut();
            ArrX<S> g = p.has_grad() ? ArrX<S>(p.grad() * gscale)
                                     : ArrX<S>(ArrX<S>::Zero(p.numel()));
            m = b1 * m + (S(1) - b1) * g;
            v = b2 * v + (S(1) - b2) * g.square();
            ArrX<S> mhat = m / c1;
            ArrX<S> vhat = v / c2;
            p.value_mut() -=
                static_cast<S>(lr) *
                (mhat / (vhat.sqrt() + static_cast<S>(hyper_.eps)) +
                 static_cast<S>(hyper_.weight_decay) * p.value());
        }
    }

    int64_t step_count() const override { return t_; }
    void set_step_count(int64_t t) override { t_ = t; }
    double last_lr() const override { return last_lr_; }
    const StepDiagnostics& diagnostics() const override { return diag_; }

    std::vector<std::pair<std::string, Tensor<S>>> state_tensors() override {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        auto tstep = Tensor<S>::scalar(static_cast<S>(t_));
        out.emplace_back("opt.t", tstep);
        for (auto& [name, m] : m_) out.emplace_back("opt.m." + name, m);
        for (auto& [name, v] : v_) out.emplace_back("opt.v." + name, v);
        return out;
    }

private:
    std::vector<std::pair<std::string, Tensor<S>>> params_;
    std::vector<std::pair<std::string, Tensor<S>>> m_, v_;
    Hyper hyper_;
    LrSchedule schedule_;
    int64_t t_ = 0;
    double last_lr_ = 0.0;
    StepDiagnostics diag_;
};

}  // namespace lmlab
