// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#include <doctest.h>

#include <cmath>
#include <vector>

#include "lmlab/align/committee.hpp"
#include "lmlab/align/itec.hpp"
#include "lmlab/align/reward_model.hpp"
#include "lmlab/align/rlhf.hpp"
#include "lmlab/align/sft.hpp"

using namespace lmlab;
using Td = Tensor<double>;

namespace {

ModelConfig align_cfg(int64_t vocab = 40) {
    ModelConfig c;
    c.model_dim = 16;
    c.head_dim = 4;
    c.n_query_heads = 2;
    c.n_kv_heads = 2;
    c.n_layers = 1;
    c.vocab_size = vocab;
    c.ffn_hidden_dim = 24;
    c.rope_base = 1000.0;
    c.max_seq_len = 64;
    return c;
}

}  // namespace

TEST_CASE("target preference probabilities match the level table") {
    CHECK(target_pref_prob(PrefLevel::Significantly) == 0.95);
    CHECK(target_pref_prob(PrefLevel::Better) == 0.85);
    CHECK(target_pref_prob(PrefLevel::Slightly) == 0.75);
    CHECK(target_pref_prob(PrefLevel::Negligibly) == 0.65);
    CHECK_THROWS_AS((void)target_pref_prob(static_cast<PrefLevel>(9)), DataError);
}

TEST_CASE("soft-label ranking loss: ln2 at zero margin, BTL at p=1, antisymmetry") {
    // zero reward difference gives ln 2 for every level
    for (double p : {0.95, 0.85, 0.75, 0.65}) {
        auto loss = soft_label_ranking_loss(Td::scalar(0.0), p);
        CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    // p = 1 reduces to the plain Bradley-Terry-Luce loss
    RngStream rng(1);
    for (int rep = 0; rep < 20; ++rep) {
        const double d = rng.normal() * 3;
        auto soft = soft_label_ranking_loss(Td::scalar(d), 1.0);
        auto btl = neg(log_sigmoid(Td::scalar(d)));
        CHECK(std::abs(soft.item() - btl.item()) < 1e-9);
    }
    // swapping responses with p -> 1-p leaves the loss unchanged
    for (int rep = 0; rep < 20; ++rep) {
        const double d = rng.normal() * 2;
        const double p = rng.next_double();
        auto a = soft_label_ranking_loss(Td::scalar(d), p);
        auto b = soft_label_ranking_loss(Td::scalar(-d), 1.0 - p);
        CHECK(a.item() == doctest::Approx(b.item()).epsilon(1e-12));
    }
}

TEST_CASE("reward_loss: zero head gives ln2 ranking loss; lambda adds regularization") {
    ModelConfig c = align_cfg();
    RngStream rng(2);
    auto rm = RewardModel<double>::init(c, 8, 0.0, rng);
    rm.reward_head.value_mut().setZero();  // every reward is exactly 0
    PreferenceExample ex;
    ex.prompt = {1, 2, 3};
    ex.chosen = {4, 5};
    ex.rejected = {6};
    ex.level = PrefLevel::Better;
    auto loss0 = reward_loss(rm, ex);
    CHECK(loss0.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    rm.lambda_regu = 0.5;
    auto loss1 = reward_loss(rm, ex);
    CHECK(loss1.item() > loss0.item());  // 8 nonnegative cross-entropy terms added
}

TEST_CASE("reward model training separates an easy synthetic preference set") {
    ModelConfig c = align_cfg(300);
    RngStream rng(3);
    auto rm = RewardModel<double>::init(c, 8, 0.1, rng);

    // longer responses are better; grades follow length too
    struct LenScorer final : TrueScorer {
        double score(std::span<const int32_t>, std::span<const int32_t> r) const override {
            return static_cast<double>(r.size());
        }
    } scorer;
    std::vector<std::vector<int32_t>> prompts;
    for (int i = 0; i < 150; ++i) prompts.push_back({1 + (i % 7), 9});
    ResponseSampler pol = [](std::span<const int32_t>, RngStream& r) {
        std::vector<int32_t> resp(static_cast<size_t>(1 + r.uniform_int(10)));
        for (auto& t : resp) t = 10 + static_cast<int32_t>(r.uniform_int(200));
        return resp;
    };
    auto drng = rng.split("data");
    auto prefs = synth_preferences(scorer, prompts, pol, 4, drng);
    REQUIRE(prefs.size() > 80);
    const size_t hold = prefs.size() / 4;
    std::span<const PreferenceExample> train(prefs.data(), prefs.size() - hold);
    std::span<const PreferenceExample> test(prefs.data() + prefs.size() - hold, hold);

    const double before = pairwise_accuracy(rm, test);
    RewardTrainConfig tc;
    tc.epochs = 14;
    tc.lr = 1e-2;
    auto trng = rng.split("train");
    train_reward_model(rm, train, tc, trng);
    const double after = pairwise_accuracy(rm, test);
    INFO("pairwise accuracy " << before << " -> " << after);
    CHECK(after > 0.75);
    CHECK(after > before);
}

TEST_CASE("combined reward") {
    CHECK(combined_reward(2.5, -7.0, -7.0, 0.3) == 2.5);   // policy == ref
    CHECK(combined_reward(2.5, -3.0, -9.0, 0.0) == 2.5);   // beta = 0
    CHECK(combined_reward(1.0, -4.5, -5.0, 0.1) == doctest::Approx(0.95));
}

TEST_CASE("leave-one-out advantages") {
    std::vector<double> r{1, 2, 3, 6};
    auto a = loo_advantages(r);
    CHECK(a[2] == doctest::Approx(0.0));        // 3 - (1+2+6)/3
    CHECK(a[3] == doctest::Approx(4.0));        // 6 - (1+2+3)/3
    std::vector<double> eq{2.5, 2.5, 2.5};
    for (double v : loo_advantages(eq)) CHECK(v == 0.0);

    RngStream rng(4);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> rs(8);
        double scale_mag = 0;
        for (auto& v : rs) {
            v = rng.normal() * 10;
            scale_mag = std::max(scale_mag, std::abs(v));
        }
        auto adv = loo_advantages(rs);
        double sum = 0;
        for (double v : adv) sum += v;
        CHECK(std::abs(sum) <= 1e-9 * std::max(1.0, scale_mag));
    }
    std::vector<double> one{1.0};
    CHECK_THROWS_AS((void)loo_advantages(one), ConfigError);
}

TEST_CASE("first inner step of the policy update is vanilla policy gradient") {
    ModelConfig c = align_cfg(8);
    RngStream rng(5);
    auto policy = Model<double>::init(c, rng);
    auto reference = policy.clone();

    std::vector<std::vector<int32_t>> prompts{{1}, {2}, {3}};
    RewardFn score = [](std::span<const int32_t>, std::span<const int32_t> r) {
        return r[0] == 4 ? 1.0 : 0.0;
    };
    RolloutConfig rc;
    rc.k = 4;
    rc.max_response_len = 3;
    rc.beta = 0.0;
    auto rrng = rng.split("roll");
    auto rollouts = collect_rollouts(policy, reference, score, prompts, rc, rrng);

    // gradients of the mirror-descent objective at theta == snapshot
    typename RmsPropMomentum<double>::Hyper h;
    h.weight_decay = 0.0;
    RmsPropMomentum<double> frozen(policy.named_params(), h, LrSchedule::constant(0.0));
    MdlooConfig mc;
    mc.gamma = 0.7;  // the trust-region term must not matter at the snapshot
    auto stats = mdloo_update(policy, rollouts, mc, frozen);
    CHECK(stats.mean_ratio == doctest::Approx(1.0).epsilon(1e-9));
    std::vector<double> g_mdloo;
    for (const auto& [name, p] : policy.named_params())
        if (p.has_grad())
            for (int64_t i = 0; i < p.numel(); ++i) g_mdloo.push_back(p.grad()[i]);

    // reference: -(1/n) sum adv * logp, fresh graphs
    policy.zero_grads();
    Tensor<double> loss;
    int64_t n = 0;
    for (const auto& items : rollouts.per_prompt)
        for (const auto& it : items) {
            auto term = scale(response_logprob_graph(policy, it.prompt, it.response),
                              -it.advantage);
            loss = loss.defined() ? add(loss, term) : term;
            ++n;
        }
    backward(scale(loss, 1.0 / double(n)));
    std::vector<double> g_pg;
    for (const auto& [name, p] : policy.named_params())
        if (p.has_grad())
            for (int64_t i = 0; i < p.numel(); ++i) g_pg.push_back(p.grad()[i]);

    REQUIRE(g_mdloo.size() == g_pg.size());
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < g_pg.size(); ++i) {
        dot += g_mdloo[i] * g_pg[i];
        na += g_mdloo[i] * g_mdloo[i];
        nb += g_pg[i] * g_pg[i];
    }
    const double cosine = dot / std::sqrt(na * nb);
    CHECK(cosine == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("zero advantages at the snapshot are a fixed point") {
    ModelConfig c = align_cfg(8);
    RngStream rng(6);
    auto policy = Model<double>::init(c, rng);
    auto reference = policy.clone();
    std::vector<std::vector<int32_t>> prompts{{1}, {2}};
    RewardFn constant_score = [](std::span<const int32_t>, std::span<const int32_t>) {
        return 0.7;  // every response identically rewarded
    };
    RolloutConfig rc;
    rc.k = 3;
    rc.max_response_len = 2;
    rc.beta = 0.0;
    auto rrng = rng.split("r");
    auto rollouts = collect_rollouts(policy, reference, constant_score, prompts, rc, rrng);
    for (const auto& items : rollouts.per_prompt)
        for (const auto& it : items) CHECK(it.advantage == 0.0);

    std::vector<double> before;
    for (const auto& [name, p] : policy.named_params())
        for (int64_t i = 0; i < p.numel(); ++i) before.push_back(p.value()[i]);
    typename RmsPropMomentum<double>::Hyper h;
    h.weight_decay = 0.0;  // isolate the update itself from decoupled decay
    RmsPropMomentum<double> opt(policy.named_params(), h, LrSchedule::constant(0.1));
    MdlooConfig mc;
    mc.gamma = 0.2;
    mdloo_update(policy, rollouts, mc, opt);
    size_t i = 0;
    for (const auto& [name, p] : policy.named_params())
        for (int64_t j = 0; j < p.numel(); ++j) CHECK(p.value()[j] == before[i++]);
}

TEST_CASE("importance-ratio guard drops runaway samples") {
    ModelConfig c = align_cfg(8);
    RngStream rng(7);
    auto policy = Model<double>::init(c, rng);
    RolloutBatch batch;
    RolloutItem it;
    it.prompt = {1};
    it.response = {2};
    it.logp_snapshot = -200.0;  // fake: current policy is far likelier
    it.advantage = 1.0;
    RolloutItem ok = it;
    ok.logp_snapshot = response_logprob(policy, it.prompt, it.response);
    batch.per_prompt.push_back({it, ok});
    typename RmsPropMomentum<double>::Hyper h;
    h.weight_decay = 0.0;
    RmsPropMomentum<double> opt(policy.named_params(), h, LrSchedule::constant(0.0));
    MdlooConfig mc;
    mc.ratio_ceiling = 5.0;
    auto stats = mdloo_update(policy, batch, mc, opt);
    CHECK(stats.dropped_samples == 1);
}

TEST_CASE("LOO estimator has lower gradient variance than raw rewards (2-arm analytic)") {
    // fixed categorical policy over two arms; exact grad of log pi available
    const double pa = 0.3;
    const int K = 8, resamples = 1000;
    RngStream rng(8);
    auto grad_mean_sq = [&](bool use_loo) {
        // accumulate per-resample 2-d gradient estimates
        double m0 = 0, m1 = 0, s0 = 0, s1 = 0;
        for (int rep = 0; rep < resamples; ++rep) {
            double g0 = 0, g1 = 0;
            std::vector<double> rewards(K);
            std::vector<int> arms(K);
            for (int i = 0; i < K; ++i) {
                arms[i] = rng.next_double() < pa ? 0 : 1;
                rewards[i] = arms[i] == 0 ? 1.0 : 0.0;
            }
            std::vector<double> w = rewards;
            if (use_loo) w = loo_advantages(rewards);
            for (int i = 0; i < K; ++i) {
                // d log pi(a) / d logits = onehot(a) - pi
                const double d0 = (arms[i] == 0 ? 1.0 : 0.0) - pa;
                const double d1 = (arms[i] == 1 ? 1.0 : 0.0) - (1 - pa);
                g0 += w[i] * d0 / K;
                g1 += w[i] * d1 / K;
            }
            m0 += g0;
            m1 += g1;
            s0 += g0 * g0;
            s1 += g1 * g1;
        }
        m0 /= resamples;
        m1 /= resamples;
        return (s0 / resamples - m0 * m0) + (s1 / resamples - m1 * m1);
    };
    const double var_loo = grad_mean_sq(true);
    const double var_raw = grad_mean_sq(false);
    INFO("variance loo " << var_loo << " raw " << var_raw);
    CHECK(var_loo < var_raw);
}

TEST_CASE("sft loss masks prompt positions and skips empty responses") {
    ModelConfig c = align_cfg();
    RngStream rng(9);
    auto m = Model<double>::init(c, rng);
    DemoExample ex{{1, 2, 3}, {4, 5}};
    auto loss = sft_loss(m, ex);

    // manual: cross-entropy over the response targets only
    std::vector<int32_t> seq{1, 2, 3, 4, 5};
    std::vector<int32_t> inputs(seq.begin(), seq.end() - 1);
    auto logits = m.forward(std::span<const int32_t>(inputs));
    ConstMatMap<double> lm(logits.value().data(), 4, c.vocab_size);
    double expect = 0;
    for (int pos = 2; pos <= 3; ++pos) {  // predicts tokens 4 and 5
        double mx = lm.row(pos).maxCoeff();
        double z = 0;
        for (int64_t v = 0; v < c.vocab_size; ++v) z += std::exp(lm(pos, v) - mx);
        expect += (std::log(z) + mx) - lm(pos, seq[static_cast<size_t>(pos + 1)]);
    }
    expect /= 2;
    CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-10));

    DemoExample empty{{1, 2}, {}};
    CHECK_THROWS_AS((void)sft_loss(m, empty), DataError);
    typename RmsPropMomentum<double>::Hyper h;
    RmsPropMomentum<double> opt(m.named_params(), h, LrSchedule::constant(1e-3));
    RngStream drng(10);
    std::vector<DemoExample> batch{empty};
    auto stats = sft_step(m, batch, opt, 0.1, drng);
    CHECK(stats.skipped_empty == 1);
}

TEST_CASE("sft memorizes a small demonstration set") {
    ModelConfig c = align_cfg(260);
    c.max_seq_len = 48;
    RngStream rng(11);
    auto m = Model<double>::init(c, rng);

    // 50 fixed command -> reply pairs over byte tokens
    std::vector<DemoExample> demos;
    RngStream gen(12);
    for (int i = 0; i < 50; ++i) {
        DemoExample ex;
        ex.prompt = {static_cast<int32_t>('q'), static_cast<int32_t>('0' + i % 10),
                     static_cast<int32_t>('0' + (i / 10) % 10), static_cast<int32_t>(':')};
        const int len = 3 + static_cast<int>(gen.uniform_int(3));
        for (int j = 0; j < len; ++j)
            ex.response.push_back(static_cast<int32_t>('a' + (i * 7 + j * 3) % 26));
        ex.response.push_back(ByteTokenizer::sep_token);
        demos.push_back(std::move(ex));
    }
    typename RmsPropMomentum<double>::Hyper h;
    h.weight_decay = 0.0;
    RmsPropMomentum<double> opt(m.named_params(), h, LrSchedule::constant(0.03));
    RngStream drng(13);
    for (int step = 0; step < 3500; ++step) {
        const size_t lo = (static_cast<size_t>(step) * 8) % demos.size();
        std::vector<DemoExample> batch;
        for (size_t i = lo; i < std::min(demos.size(), lo + 8); ++i) batch.push_back(demos[i]);
        sft_step(m, std::span<const DemoExample>(batch), opt, 0.1, drng);
    }
    const double self_loss = self_completion_loss(m, std::span<const DemoExample>(demos), 10);
    INFO("per-token loss on own greedy output: " << self_loss);
    CHECK(self_loss < 0.1);
}

TEST_CASE("committee of one deterministic model returns its own responses") {
    ModelConfig c = align_cfg(12);
    RngStream rng(14);
    auto m = Model<double>::init(c, rng);
    std::vector<const Model<double>*> committee{&m};
    std::vector<std::vector<int32_t>> prompts{{1, 2}, {3}, {4, 5}};
    RewardFn score = [](std::span<const int32_t>, std::span<const int32_t> r) {
        return static_cast<double>(r.size());
    };
    CommitteeConfig cc;
    cc.samples_per_model = 1;
    cc.max_response_len = 4;
    cc.temperature = 0.0;  // deterministic member
    RngStream crng(15);
    auto data = committee_rejection_sample(std::span<const Model<double>*>(committee), score,
                                           prompts, cc, crng);
    REQUIRE(data.size() == prompts.size());
    RngStream unused(0);
    for (size_t i = 0; i < prompts.size(); ++i) {
        auto own = sample(m, std::span<const int32_t>(prompts[i]), 4, 0.0, unused);
        CHECK(data[i].response == own);
    }
}

TEST_CASE("committee selection is stable under a fixed seed and honors the guard") {
    ModelConfig c = align_cfg(12);
    RngStream rng(16);
    auto a = Model<double>::init(c, rng);
    auto b = Model<double>::init(c, rng);
    std::vector<const Model<double>*> committee{&a, &b};
    std::vector<std::vector<int32_t>> prompts{{1}, {2}, {3}};
    RewardFn score = [](std::span<const int32_t>, std::span<const int32_t> r) {
        double s = 0;
        for (int32_t t : r) s += t;  // strictly content-dependent
        return s;
    };
    CommitteeConfig cc;
    cc.samples_per_model = 2;
    cc.max_response_len = 4;
    RngStream r1(77), r2(77);
    auto d1 = committee_rejection_sample(std::span<const Model<double>*>(committee), score,
                                         prompts, cc, r1);
    auto d2 = committee_rejection_sample(std::span<const Model<double>*>(committee), score,
                                         prompts, cc, r2);
    REQUIRE(d1.size() == d2.size());
    for (size_t i = 0; i < d1.size(); ++i) CHECK(d1[i].response == d2[i].response);

    // impossible validity guard drops every prompt, with a count
    CommitteeConfig strict = cc;
    strict.min_response_len = strict.max_response_len + 1;
    CommitteeStats stats;
    RngStream r3(78);
    auto none = committee_rejection_sample(std::span<const Model<double>*>(committee), score,
                                           prompts, strict, r3, &stats);
    CHECK(none.empty());
    CHECK(stats.dropped_prompts == static_cast<int64_t>(prompts.size()));

    std::vector<const Model<double>*> empty_committee;
    RngStream r4(79);
    CHECK_THROWS_AS(
        (void)committee_rejection_sample(std::span<const Model<double>*>(empty_committee),
                                         score, prompts, cc, r4),
        ConfigError);
}

TEST_CASE("itec flywheel runs a round and grows the committee") {
    ModelConfig c = align_cfg(16);
    RngStream rng(17);
    auto m = Model<double>::init(c, rng);
    struct TokenScorer final : TrueScorer {
        double score(std::span<const int32_t>, std::span<const int32_t> r) const override {
            double s = 0;
            for (int32_t t : r) s += static_cast<double>(t);
            return s;
        }
    } scorer;
    std::vector<std::vector<int32_t>> prompts{{1}, {2}, {3}, {4}};
    ItecConfig ic;
    ic.rounds = 1;
    ic.rm_train.epochs = 1;
    ic.sft_steps = 5;
    ic.rl_iterations = 2;
    ic.rollout.k = 2;
    ic.rollout.max_response_len = 3;
    ic.committee.samples_per_model = 1;
    ic.committee.max_response_len = 3;
    RngStream irng(18);
    auto st = run_itec(m, scorer, prompts, ic, irng);
    CHECK(st.committee.size() == 2);
    CHECK(st.round_mean_true_score.size() == 1);
}
