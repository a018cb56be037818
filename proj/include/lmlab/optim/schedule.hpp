// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>

#include "lmlab/core/error.hpp"

namespace lmlab {

// Linear warmup to peak, then cosine decay to final_fraction * peak.
struct LrSchedule {
    enum class Shape { Cosine, Constant };

    double peak_lr = 0.01;
    int64_t warmup_steps = 0;
    int64_t total_steps = 1;
    double final_fraction = 0.005;
    Shape shape = Shape::Cosine;

    double at(int64_t step) const {
        if (step < 0) throw ConfigError("LrSchedule: negative step");
        if (shape == Shape::Constant) return peak_lr;
        if (step > total_steps) {
            if (!warned_past_end_) {
                std::fprintf(stderr, "LrSchedule: step %lld past total %lld, clamping\n",
                             static_cast<long long>(step), static_cast<long long>(total_steps));
                warned_past_end_ = true;
            }
            step = total_steps;
        }
        if (warmup_steps > 0 && step < warmup_steps)
            return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
        const double final_lr = final_fraction * peak_lr;
        const int64_t span = total_steps - warmup_steps;
        if (span <= 0) return step >= total_steps ? final_lr : peak_lr;
        if (step >= total_steps) return final_lr;
        const double frac = static_cast<double>(step - warmup_steps) / static_cast<double>(span);
        return final_lr + (peak_lr - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    }

    // Core-stage preset: peak 0.01, cosine to 0.005 of peak.
    static LrSchedule core(int64_t total, int64_t warmup) {
        LrSchedule s;
        s.peak_lr = 0.01;
        s.warmup_steps = warmup;
        s.total_steps = total;
        s.final_fraction = 0.005;
        return s;
    }
    // Continued/context-lengthening preset: peak 3e-4, cosine to 0.001 of peak.
    static LrSchedule continued(int64_t total, int64_t warmup = 1000) {
        LrSchedule s;
        s.peak_lr = 3e-4;
        s.warmup_steps = warmup;
        s.total_steps = total;
        s.final_fraction = 0.001;
        return s;
    }
    static LrSchedule constant(double lr) {
        LrSchedule s;
        s.peak_lr = lr;
        s.shape = Shape::Constant;
        return s;
    }

private:
    mutable bool warned_past_end_ = false;
};

// Width-aware learning-rate multipliers: hidden linear layers scale by
// base_dim / model_dim, embeddings and norm gains stay at 1.
struct MuParamPolicy {
    double hidden_multiplier = 1.0;

    static MuParamPolicy for_width(int64_t model_dim, int64_t base_dim) {
        if (model_dim <= 0 || base_dim <= 0)
            throw ConfigError("MuParamPolicy: dims must be positive");
        MuParamPolicy p;
        p.hidden_multiplier = static_cast<double>(base_dim) / static_cast<double>(model_dim);
        return p;
    }

    static bool is_hidden_linear(const std::string& name) {
        const auto pos = name.rfind('.');
        const std::string leaf = pos == std::string::npos ? name : name.substr(pos + 1);
        if (leaf == "embed" || leaf.find("norm") != std::string::npos ||
            leaf.find("gain") != std::string::npos)
            return false;
        return true;
    }

    double multiplier_for(const std::string& name) const {
        const double m = is_hidden_linear(name) ? hidden_multiplier : 1.0;
        if (m <= 0) throw ConfigError("MuParamPolicy: non-positive multiplier for " + name);
        return m;
    }
};

}  // namespace lmlab
