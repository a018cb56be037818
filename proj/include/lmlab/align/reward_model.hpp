// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-head reward model: a decoder backbone whose final-norm embedding of
// the last non-padding token feeds one linear reward head and four 3-class
// grade heads. Ranking uses a soft-label Bradley-Terry-Luce loss over target
// preference probabilities per level, with the single-sided grades as
// cross-entropy regularizers.
#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "lmlab/data/preferences.hpp"
#include "lmlab/data/tokenizer.hpp"
#include "lmlab/model/model.hpp"
#include "lmlab/optim/optimizer.hpp"

namespace lmlab {

// Target preference probability per level.
inline double target_pref_prob(PrefLevel l) {
    switch (l) {
        case PrefLevel::Significantly: return 0.95;
        case PrefLevel::Better: return 0.85;
        case PrefLevel::Slightly: return 0.75;
        case PrefLevel::Negligibly: return 0.65;
    }
    throw DataError("reward_loss: unknown preference level");
}

template <class S>
struct RewardModel {
    Model<S> backbone;
    Tensor<S> reward_head;                                // (dim, 1)
    std::array<std::pair<Tensor<S>, Tensor<S>>, kNumGradeHeads> grade_heads;  // w1, w2
    S lambda_regu = static_cast<S>(0.1);

    static RewardModel init(const ModelConfig& cfg, int64_t head_hidden, S lambda,
                            RngStream& rng) {
        RewardModel rm;
        rm.backbone = Model<S>::init(cfg, rng);
        rm.lambda_regu = lambda;
        rm.reward_head = Tensor<S>::randn(
            {cfg.model_dim, 1}, rng, static_cast<S>(1.0 / std::sqrt(double(cfg.model_dim))),
            true);
        for (auto& [w1, w2] : rm.grade_heads) {
            w1 = Tensor<S>::randn({cfg.model_dim, head_hidden}, rng,
                                  static_cast<S>(1.0 / std::sqrt(double(cfg.model_dim))),
                                  true);
            w2 = Tensor<S>::randn({head_hidden, 3}, rng,
                                  static_cast<S>(1.0 / std::sqrt(double(head_hidden))), true);
        }
        return rm;
    }

    // Final-layer embedding of the last non-padding token, shape (1, dim).
    Tensor<S> last_embedding(std::span<const int32_t> tokens) const {
        int64_t last = static_cast<int64_t>(tokens.size()) - 1;
        while (last > 0 && tokens[static_cast<size_t>(last)] == ByteTokenizer::pad_token)
            --last;
        auto hidden = backbone.hidden(tokens.subspan(0, static_cast<size_t>(last + 1)));
        return slice(hidden, 0, last, last + 1);
    }

    Tensor<S> reward(std::span<const int32_t> tokens) const {
        return matmul(last_embedding(tokens), reward_head);
    }

    double reward_value(std::span<const int32_t> tokens) const {
        NoGradGuard ng;
        return static_cast<double>(reward(tokens).item());
    }

    // Logits of one grade head over an embedding, shape (1, 3).
    Tensor<S> grade_logits(int head, const Tensor<S>& embedding) const {
        const auto& [w1, w2] = grade_heads[static_cast<size_t>(head)];
        return matmul(silu(matmul(embedding, w1)), w2);
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
        auto out = backbone.named_params();
        out.emplace_back("rm.reward_head", reward_head);
        for (int h = 0; h < kNumGradeHeads; ++h) {
            out.emplace_back("rm.grade" + std::to_string(h) + ".w1",
                             grade_heads[static_cast<size_t>(h)].first);
            out.emplace_back("rm.grade" + std::to_string(h) + ".w2",
                             grade_heads[static_cast<size_t>(h)].second);
        }
        return out;
    }

    void zero_grads() {
        backbone.zero_grads();
        reward_head.zero_grad();
        for (auto& [w1, w2] : grade_heads) {
            w1.zero_grad();
            w2.zero_grad();
        }
    }
};

// -p * log sigmoid(delta) - (1 - p) * log sigmoid(-delta).
template <class S>
Tensor<S> soft_label_ranking_loss(const Tensor<S>& delta, double p) {
    if (p < 0.0 || p > 1.0) throw DomainError("soft label loss: p outside [0, 1]");
    return add(scale(log_sigmoid(delta), static_cast<S>(-p)),
               scale(log_sigmoid(neg(delta)), static_cast<S>(-(1.0 - p))));
}

// Soft-label ranking loss plus grade regularization for one example.
template <class S>
Tensor<S> reward_loss(const RewardModel<S>& rm, const PreferenceExample& ex) {
    validate(ex);
    const double p = target_pref_prob(ex.level);
    std::vector<int32_t> chosen_seq(ex.prompt);
    chosen_seq.insert(chosen_seq.end(), ex.chosen.begin(), ex.chosen.end());
    std::vector<int32_t> rejected_seq(ex.prompt);
    rejected_seq.insert(rejected_seq.end(), ex.rejected.begin(), ex.rejected.end());

    auto emb_c = rm.last_embedding(chosen_seq);
    auto emb_r = rm.last_embedding(rejected_seq);
    auto r_c = matmul(emb_c, rm.reward_head);
    auto r_r = matmul(emb_r, rm.reward_head);
    auto delta = reshape(sub(r_c, r_r), {});
    auto ranking = soft_label_ranking_loss(delta, p);
    if (rm.lambda_regu == S(0)) return ranking;

    Tensor<S> regu;
    for (int h = 0; h < kNumGradeHeads; ++h) {
        std::vector<int32_t> zc{static_cast<int32_t>(ex.grades_chosen[static_cast<size_t>(h)])};
        std::vector<int32_t> zr{
            static_cast<int32_t>(ex.grades_rejected[static_cast<size_t>(h)])};
        auto lc = cross_entropy(rm.grade_logits(h, emb_c), std::span<const int32_t>(zc));
        auto lr = cross_entropy(rm.grade_logits(h, emb_r), std::span<const int32_t>(zr));
        auto both = add(lc, lr);
        regu = regu.defined() ? add(regu, both) : both;
    }
    return add(ranking, scale(regu, rm.lambda_regu));
}

// Fraction of held-out pairs where the chosen response scores higher.
template <class S>
double pairwise_accuracy(const RewardModel<S>& rm, std::span<const PreferenceExample> exs) {
    NoGradGuard ng;
    int64_t correct = 0;
    for (const auto& ex : exs) {
        std::vector<int32_t> c(ex.prompt);
        c.insert(c.end(), ex.chosen.begin(), ex.chosen.end());
        std::vector<int32_t> r(ex.prompt);
        r.insert(r.end(), ex.rejected.begin(), ex.rejected.end());
        if (rm.reward_value(c) > rm.reward_value(r)) ++correct;
    }
    return exs.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(exs.size());
}

struct RewardTrainConfig {
    int64_t epochs = 3;
    double lr = 1e-3;
    int64_t batch = 8;
};

template <class S>
void train_reward_model(RewardModel<S>& rm, std::span<const PreferenceExample> train,
                        const RewardTrainConfig& cfg, RngStream& rng) {
    typename RmsPropMomentum<S>::Hyper h;
    h.weight_decay = 0.0;
    RmsPropMomentum<S> opt(rm.named_params(), h, LrSchedule::constant(cfg.lr));
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int64_t e = 0; e < cfg.epochs; ++e) {
        // deterministic shuffle per epoch
        auto erng = rng.split(static_cast<uint64_t>(e));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<size_t>(erng.uniform_int(static_cast<int64_t>(i)))]);
        for (size_t start = 0; start < order.size(); start += cfg.batch) {
            rm.zero_grads();
            Tensor<S> loss;
            int64_t n = 0;
            for (size_t i = start; i < std::min(order.size(), start + cfg.batch); ++i) {
                auto l = reward_loss(rm, train[order[i]]);
                loss = loss.defined() ? add(loss, l) : l;
                ++n;
            }
            backward(scale(loss, S(1.0 / double(n))));
            opt.step();
        }
    }
}

}  // namespace lmlab
