// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// The multi-round alignment flywheel: each round refreshes preference data
// from the current committee, retrains the reward model, rejection-samples a
// fine-tuning set, runs SFT, then an online RL phase, and rolls the improved
// models into the next round's committee.
#pragma once

#include <memory>
#include <vector>

#include "lmlab/align/committee.hpp"
#include "lmlab/align/reward_model.hpp"
#include "lmlab/align/rlhf.hpp"
#include "lmlab/align/sft.hpp"
#include "lmlab/data/preferences.hpp"

namespace lmlab {

struct ItecConfig {
    int rounds = 2;
    int preference_k = 4;
    RewardTrainConfig rm_train;
    CommitteeConfig committee;
    int64_t sft_steps = 40;
    double sft_lr = 1e-3;
    double sft_dropout = 0.1;
    int rl_iterations = 10;
    RolloutConfig rollout;
    MdlooConfig mdloo;
    double rl_lr = 1e-3;
    int64_t rm_head_hidden = 16;
    double rm_lambda = 0.1;
};

template <class S>
struct ItecState {
    Model<S> policy;                  // the model being improved
    Model<S> reference;               // frozen anchor for the KL-shaped reward
    std::vector<Model<S>> committee;  // best models so far
    std::vector<double> round_mean_true_score;
};

// Runs `rounds` flywheel iterations against a programmatic scorer standing in
// for preference annotation. Returns the state after the final round.
template <class S>
ItecState<S> run_itec(const Model<S>& start, const TrueScorer& scorer,
                      std::span<const std::vector<int32_t>> prompts, const ItecConfig& cfg,
                      RngStream& rng) {
    ItecState<S> st{start.clone(), start.clone(), {}, {}};
    st.committee.push_back(start.clone());
    RewardFn true_score = [&](std::span<const int32_t> p, std::span<const int32_t> r) {
        return scorer.score(p, r);
    };
    for (int round = 0; round < cfg.rounds; ++round) {
        auto rrng = rng.split(static_cast<uint64_t>(round));

        // 1. preference data sampled from the committee, graded by the scorer
        ResponseSampler sampler = [&](std::span<const int32_t> prompt, RngStream& srng) {
            const auto& member =
                st.committee[srng.counter() % st.committee.size()];
            auto s2 = srng.split("pick");
            return sample(member, prompt, cfg.rollout.max_response_len, 1.0, s2,
                          cfg.rollout.stop_token);
        };
        auto prng = rrng.split("prefs");
        auto prefs = synth_preferences(scorer, prompts, sampler, cfg.preference_k, prng);

        // 2. refresh the reward model; an all-tie batch leaves nothing to
        //    learn from, so the round falls back to scoring directly
        auto rm_rng = rrng.split("rm");
        auto rm = RewardModel<S>::init(st.policy.cfg, cfg.rm_head_hidden,
                                       static_cast<S>(cfg.rm_lambda), rm_rng);
        if (!prefs.empty()) {
            auto rm_train_rng = rrng.split("rm_train");
            train_reward_model(rm, std::span<const PreferenceExample>(prefs), cfg.rm_train,
                               rm_train_rng);
        }
        RewardFn rm_score = [&rm, &true_score,
                             use_rm = !prefs.empty()](std::span<const int32_t> p,
                                                      std::span<const int32_t> r) {
            if (!use_rm) return true_score(p, r);
            std::vector<int32_t> seq(p.begin(), p.end());
            seq.insert(seq.end(), r.begin(), r.end());
            return rm.reward_value(seq);
        };

        // 3. committee rejection sampling into a fine-tuning set
        std::vector<const Model<S>*> members;
        for (const auto& m : st.committee) members.push_back(&m);
        auto crng = rrng.split("committee");
        auto sft_data = committee_rejection_sample(std::span<const Model<S>*>(members),
                                                   rm_score, prompts, cfg.committee, crng);

        // 4. SFT on the selected responses
        typename RmsPropMomentum<S>::Hyper h;
        h.weight_decay = 0.0;
        RmsPropMomentum<S> sft_opt(st.policy.named_params(), h,
                                   LrSchedule::constant(cfg.sft_lr));
        auto drng = rrng.split("dropout");
        for (int64_t s = 0; s < cfg.sft_steps && !sft_data.empty(); ++s) {
            const size_t lo = (static_cast<size_t>(s) * 4) % sft_data.size();
            const size_t hi = std::min(sft_data.size(), lo + 4);
            sft_step(st.policy,
                     std::span<const DemoExample>(sft_data.data() + lo, hi - lo), sft_opt,
                     cfg.sft_dropout, drng);
        }

        // 5. online RL phase against the refreshed reward model
        RmsPropMomentum<S> rl_opt(st.policy.named_params(), h,
                                  LrSchedule::constant(cfg.rl_lr));
        for (int it = 0; it < cfg.rl_iterations; ++it) {
            auto snapshot = st.policy.clone();
            auto rollout_rng = rrng.split("rollout" + std::to_string(it));
            auto rollouts = collect_rollouts(snapshot, st.reference, rm_score, prompts,
                                             cfg.rollout, rollout_rng);
            mdloo_update(st.policy, rollouts, cfg.mdloo, rl_opt);
        }

        // 6. next round's committee: previous best plus the new policy
        st.committee.push_back(st.policy.clone());

        double mean_true = 0;
        int64_t n = 0;
        for (const auto& prompt : prompts) {
            auto grng = rrng.split("eval" + std::to_string(n));
            auto resp = sample(st.policy, std::span<const int32_t>(prompt),
                               cfg.rollout.max_response_len, 0.0, grng,
                               cfg.rollout.stop_token);
            if (resp.empty()) continue;
            mean_true += scorer.score(prompt, resp);
            ++n;
        }
        st.round_mean_true_score.push_back(n > 0 ? mean_true / double(n) : 0.0);
    }
    return st;
}

}  // namespace lmlab
