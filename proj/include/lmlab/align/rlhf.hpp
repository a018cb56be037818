// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Online RL: whole-response bandit rollouts with leave-one-out advantages and
// a mirror-descent update. Per iteration, K responses per prompt are sampled
// from the snapshot policy; each carries reward
//   R = rm_score - beta * (logp_snapshot - logp_ref)
// and advantage R_i - mean_{j != i} R_j. The update ascends the importance-
// weighted advantage estimate minus gamma times a k3 divergence estimate
// (ratio - 1 - log ratio) between the policy and the snapshot.
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "lmlab/model/model.hpp"
#include "lmlab/optim/optimizer.hpp"

namespace lmlab {

inline double combined_reward(double rm_score, double logp_policy, double logp_ref,
                              double beta) {
    return rm_score - beta * (logp_policy - logp_ref);
}

inline std::vector<double> loo_advantages(std::span<const double> rewards) {
    const size_t k = rewards.size();
    if (k < 2) throw ConfigError("loo_advantages: need at least 2 responses per prompt");
    // pairwise-difference form of R_i - mean_{j != i} R_j: equal rewards give
    // exact zeros, and the antisymmetric terms keep the per-prompt sum tiny
    std::vector<double> adv(k, 0.0);
    for (size_t i = 0; i < k; ++i) {
        double acc = 0;
        for (size_t j = 0; j < k; ++j)
            if (j != i) acc += rewards[i] - rewards[j];
        adv[i] = acc / static_cast<double>(k - 1);
    }
    return adv;
}

using RewardFn =
    std::function<double(std::span<const int32_t> prompt, std::span<const int32_t> response)>;

struct RolloutItem {
    std::vector<int32_t> prompt;
    std::vector<int32_t> response;
    double logp_snapshot = 0;  // sequence log-prob under the sampling policy
    double logp_ref = 0;
    double rm_score = 0;
    double reward = 0;
    double advantage = 0;
};

struct RolloutBatch {
    std::vector<std::vector<RolloutItem>> per_prompt;  // n prompts x K responses
};

// Sequence log-probability of `response` given `prompt` (sum over response
// tokens); differentiable when grad mode is on.
template <class S>
Tensor<S> response_logprob_graph(const Model<S>& m, std::span<const int32_t> prompt,
                                 std::span<const int32_t> response,
                                 const ForwardOptions<S>& opts = {}) {
    if (prompt.empty() || response.empty())
        throw ShapeError("response_logprob: empty prompt or response");
    std::vector<int32_t> seq(prompt.begin(), prompt.end());
    seq.insert(seq.end(), response.begin(), response.end());
    std::vector<int32_t> inputs(seq.begin(), seq.end() - 1);
    std::vector<int32_t> targets(seq.begin() + 1, seq.end());
    std::vector<S> mask(targets.size(), S(0));
    for (size_t i = prompt.size() - 1; i < targets.size(); ++i) mask[i] = S(1);
    auto logits = m.forward(std::span<const int32_t>(inputs), opts);
    return sequence_logprob(logits, std::span<const int32_t>(targets),
                            std::span<const S>(mask));
}

template <class S>
double response_logprob(const Model<S>& m, std::span<const int32_t> prompt,
                        std::span<const int32_t> response) {
    NoGradGuard ng;
    return static_cast<double>(response_logprob_graph(m, prompt, response).item());
}

struct RolloutConfig {
    int k = 4;
    int64_t max_response_len = 16;
    double temperature = 1.0;  // unmodified policy distribution
    double beta = 0.1;
    int32_t stop_token = -1;
};

// Samples K responses per prompt from `snapshot` and fills rewards/advantages.
// Per-prompt advantages sum to zero by construction.
template <class S>
RolloutBatch collect_rollouts(const Model<S>& snapshot, const Model<S>& reference,
                              const RewardFn& score,
                              std::span<const std::vector<int32_t>> prompts,
                              const RolloutConfig& cfg, RngStream& rng) {
    RolloutBatch out;
    for (size_t pi = 0; pi < prompts.size(); ++pi) {
        const auto& prompt = prompts[pi];
        std::vector<RolloutItem> items;
        std::vector<double> rewards;
        for (int s = 0; s < cfg.k; ++s) {
            auto srng = rng.split(pi * 1000003 + static_cast<uint64_t>(s));
            RolloutItem it;
            it.prompt = prompt;
            it.response = sample(snapshot, std::span<const int32_t>(prompt),
                                 cfg.max_response_len, cfg.temperature, srng, cfg.stop_token);
            if (it.response.empty()) it.response.push_back(cfg.stop_token >= 0 ? cfg.stop_token : 0);
            it.logp_snapshot = response_logprob(snapshot, prompt, it.response);
            it.logp_ref = response_logprob(reference, prompt, it.response);
            it.rm_score = score(prompt, it.response);
            it.reward = combined_reward(it.rm_score, it.logp_snapshot, it.logp_ref, cfg.beta);
            rewards.push_back(it.reward);
            items.push_back(std::move(it));
        }
        auto adv = loo_advantages(rewards);
        for (size_t i = 0; i < items.size(); ++i) items[i].advantage = adv[i];
        out.per_prompt.push_back(std::move(items));
    }
    return out;
}

struct MdlooConfig {
    double gamma = 0.01;        // trust-region strength towards the snapshot
    int inner_epochs = 1;
    double ratio_ceiling = 10.0;  // samples beyond this importance ratio are dropped
};

struct MdlooStats {
    double objective = 0;       // last inner epoch, sample estimate
    int64_t dropped_samples = 0;
    double mean_ratio = 1.0;
};

// One policy-update phase over a rollout batch sampled from `snapshot`.
template <class S>
MdlooStats mdloo_update(Model<S>& policy, const RolloutBatch& rollouts,
                        const MdlooConfig& cfg, Optimizer<S>& opt) {
    MdlooStats stats;
    for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
        policy.zero_grads();
        Tensor<S> loss;
        int64_t n = 0;
        double ratio_sum = 0;
        stats.dropped_samples = 0;
        for (const auto& items : rollouts.per_prompt) {
            for (const auto& it : items) {
                auto logp = response_logprob_graph(policy, it.prompt, it.response);
                const double ratio_now =
                    std::exp(static_cast<double>(logp.item()) - it.logp_snapshot);
                if (ratio_now > cfg.ratio_ceiling) {
                    ++stats.dropped_samples;  // guard, not a clipped objective
                    continue;
                }
                ratio_sum += ratio_now;
                // ratio = exp(logp - logp_snapshot); constant shift keeps the
                // graph small and exact
                auto ratio = exp(add_scalar(logp, static_cast<S>(-it.logp_snapshot)));
                auto adv_term = scale(ratio, static_cast<S>(-it.advantage));
                // k3 estimator: ratio - 1 - log ratio, non-negative
                auto k3 = add_scalar(sub(ratio, add_scalar(logp, static_cast<S>(-it.logp_snapshot))),
                                     S(-1));
                auto term = add(adv_term, scale(k3, static_cast<S>(cfg.gamma)));
                loss = loss.defined() ? add(loss, term) : term;
                ++n;
            }
        }
        if (n == 0) return stats;  // every sample tripped the guard
        loss = scale(loss, S(1.0 / double(n)));
        backward(loss);
        stats.objective = -static_cast<double>(loss.item());
        stats.mean_ratio = ratio_sum / double(n);
        opt.step();
    }
    return stats;
}

// Sequence-level divergence estimate KL(policy || reference) averaged over
// prompts, using responses sampled from the policy.
template <class S>
double sequence_kl_estimate(const Model<S>& policy, const Model<S>& reference,
                            std::span<const std::vector<int32_t>> prompts, int samples,
                            int64_t max_len, RngStream& rng, int32_t stop_token = -1) {
    NoGradGuard ng;
    double total = 0;
    int64_t n = 0;
    for (size_t pi = 0; pi < prompts.size(); ++pi) {
        for (int s = 0; s < samples; ++s) {
            auto srng = rng.split(pi * 7919 + static_cast<uint64_t>(s));
            auto resp = sample(policy, std::span<const int32_t>(prompts[pi]), max_len, 1.0,
                               srng, stop_token);
            if (resp.empty()) continue;
            total += response_logprob(policy, prompts[pi], resp) -
                     response_logprob(reference, prompts[pi], resp);
            ++n;
        }
    }
    return n > 0 ? total / double(n) : 0.0;
}

}  // namespace lmlab
