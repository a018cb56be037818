// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Committee rejection sampling: sample responses from every committee member
// for each prompt, rerank with the reward scorer at the prompt level, and
// keep the best response as fine-tuning data.
#pragma once

#include <span>
#include <vector>

#include "lmlab/align/rlhf.hpp"
#include "lmlab/align/sft.hpp"
#include "lmlab/model/model.hpp"

namespace lmlab {

struct CommitteeConfig {
    int samples_per_model = 2;
    int64_t max_response_len = 16;
    double temperature = 1.0;
    int32_t stop_token = -1;
    int64_t min_response_len = 1;  // validity guard
};

struct CommitteeStats {
    int64_t dropped_prompts = 0;
};

template <class S>
std::vector<DemoExample> committee_rejection_sample(
    std::span<const Model<S>*> committee, const RewardFn& score,
    std::span<const std::vector<int32_t>> prompts, const CommitteeConfig& cfg,
    RngStream& rng, CommitteeStats* stats = nullptr) {
    if (committee.empty()) throw ConfigError("committee_rejection_sample: empty committee");
    std::vector<DemoExample> out;
    int64_t dropped = 0;
    for (size_t pi = 0; pi < prompts.size(); ++pi) {
        const auto& prompt = prompts[pi];
        bool have_best = false;
        double best_score = 0;
        std::vector<int32_t> best_resp;
        for (size_t mi = 0; mi < committee.size(); ++mi) {
            for (int s = 0; s < cfg.samples_per_model; ++s) {
                auto srng = rng.split(pi * 1000003 + mi * 997 + static_cast<uint64_t>(s));
                auto resp = sample(*committee[mi], std::span<const int32_t>(prompt),
                                   cfg.max_response_len, cfg.temperature, srng,
                                   cfg.stop_token);
                if (static_cast<int64_t>(resp.size()) < cfg.min_response_len ||
                    static_cast<int64_t>(resp.size()) > cfg.max_response_len)
                    continue;
                const double sc = score(prompt, resp);
                if (!have_best || sc > best_score) {
                    have_best = true;
                    best_score = sc;
                    best_resp = std::move(resp);
                }
            }
        }
        if (!have_best) {
            ++dropped;  // every sample failed the validity guard
            continue;
        }
        out.push_back({prompt, std::move(best_resp)});
    }
    if (stats) stats->dropped_prompts = dropped;
    return out;
}

}  // namespace lmlab
