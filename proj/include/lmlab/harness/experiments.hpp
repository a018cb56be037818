// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Reproducible toy-scale experiments: the optimizer-recipe ablation, the
// staged-mixture effect, the prune/distill ordering, recovery-adapter
// ablations, and the online-RL probes (two-armed bandit, KL-vs-beta). The
// command-line harness and the acceptance suite both drive these.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lmlab/align/rlhf.hpp"
#include "lmlab/compress/distill.hpp"
#include "lmlab/compress/prune.hpp"
#include "lmlab/compress/recovery.hpp"
#include "lmlab/data/corpus.hpp"
#include "lmlab/data/tokenizer.hpp"
#include "lmlab/io/metrics.hpp"
#include "lmlab/model/model.hpp"
#include "lmlab/optim/optimizer.hpp"

namespace lmlab::harness {

template <class S>
struct ExperimentSetup {
    ModelConfig model;
    int docs_per_tag = 200;
    int64_t seq_len = 48;
    int64_t batch = 4;
    int eval_rows = 32;
    // the block-norm clip bounds every step, so toy widths want peaks far
    // above the reference-scale 0.01
    double peak_lr = 0.08;
    double baseline_peak_lr = 3e-3;

    static ExperimentSetup small() {
        ExperimentSetup s;
        s.model.model_dim = 32;
        s.model.head_dim = 8;
        s.model.n_query_heads = 4;
        s.model.n_kv_heads = 2;
        s.model.n_layers = 2;
        s.model.vocab_size = ByteTokenizer::vocab_size;
        s.model.ffn_hidden_dim = 64;
        s.model.rope_base = 500000.0;
        s.model.max_seq_len = 256;
        return s;
    }
};

template <class S>
std::vector<std::vector<int32_t>> mixture_eval_rows(const Corpus& corpus,
                                                    const MixtureSpec& mixture,
                                                    int64_t seq_len, int rows,
                                                    uint64_t seed) {
    RngStream rng(seed);
    auto r = rng.split("mixture-eval");
    return sample_batch(corpus, mixture, seq_len, rows, r).rows;
}

template <class S>
double eval_rows_loss(const Model<S>& m, const std::vector<std::vector<int32_t>>& rows) {
    double total = 0;
    for (const auto& row : rows) total += lm_loss(m, std::span<const int32_t>(row));
    return rows.empty() ? 0.0 : total / double(rows.size());
}

// Plain CE training on a fixed mixture; batches are a function of (seed, step).
template <class S>
double train_lm(Model<S>& model, Optimizer<S>& opt, const Corpus& corpus,
                const MixtureSpec& mixture, int64_t seq_len, int64_t batch,
                int64_t steps, uint64_t seed,
                const std::function<Tensor<S>(const std::vector<int32_t>&)>& teacher = {}) {
    RngStream root(seed);
    double last = 0;
    for (int64_t step = opt.step_count(); step < steps; ++step) {
        auto brng = root.split("batch").split(static_cast<uint64_t>(step));
        auto rows = sample_batch(corpus, mixture, seq_len, batch, brng).rows;
        model.zero_grads();
        Tensor<S> loss;
        for (const auto& row : rows) {
            std::span<const int32_t> ts(row);
            std::vector<int32_t> inputs(ts.begin(), ts.end() - 1);
            std::vector<int32_t> targets(ts.begin() + 1, ts.end());
            auto logits = model.forward(std::span<const int32_t>(inputs));
            Tensor<S> l;
            if (teacher) {
                auto tl = teacher(inputs);
                l = distill_loss(logits, std::span<const int32_t>(targets), tl, S(0.9));
            } else {
                l = cross_entropy(logits, std::span<const int32_t>(targets));
            }
            loss = loss.defined() ? add(loss, l) : l;
        }
        loss = scale(loss, S(1.0 / double(rows.size())));
        backward(loss);
        if (!std::isfinite(static_cast<double>(loss.item())))
            throw NumericalError("train_lm: non-finite loss at step " + std::to_string(step));
        opt.step();
        last = static_cast<double>(loss.item());
    }
    return last;
}


// Held-out per-component evaluation rows (fresh generator seeds).
inline std::vector<std::vector<int32_t>> eval_rows_for_tag(const std::string& tag, int n,
                                                           int64_t seq_len, uint64_t seed) {
    RngStream rng(seed);
    auto gen_rng = rng.split("eval-" + tag);
    std::vector<std::vector<int32_t>> rows;
    for (int i = 0; i < n; ++i) {
        Document d;
        if (tag == "math")
            d = synth_math_doc(gen_rng, 1000000 + i);
        else if (tag == "qa")
            d = synth_qa_doc(gen_rng, 1000000 + i);
        else if (tag == "copy")
            d = synth_copy_doc(gen_rng, 1000000 + i);
        else if (tag == "longqa")
            d = synth_longqa_doc(gen_rng, 1000000 + i);
        else
            throw ConfigError("unknown eval tag " + tag);
        auto toks = ByteTokenizer::encode(d.text);
        if (static_cast<int64_t>(toks.size()) > seq_len)
            toks.resize(static_cast<size_t>(seq_len));
        if (toks.size() >= 2) rows.push_back(std::move(toks));
    }
    return rows;
}

// --- optimizer recipe ablation ------------------------------------------------

struct RecipeAblationResult {
    double final_loss_recipe = 0;
    double final_loss_baseline = 0;
    double eval_loss_recipe = 0;
    double eval_loss_baseline = 0;
};

// Same data, same seed, same initial weights; only the optimizer differs.
template <class S>
RecipeAblationResult ablate_recipe(const ExperimentSetup<S>& setup, int64_t steps,
                                   uint64_t seed) {
    RngStream rng(seed);
    auto corpus = Corpus::synth_toy(rng.split("corpus"), setup.docs_per_tag);
    auto mixture = stage_preset("core", setup.seq_len).mixture;
    auto init_rng = rng.split("init");
    auto model_a = Model<S>::init(setup.model, init_rng);
    auto model_b = model_a.clone();

    typename RmsPropMomentum<S>::Hyper ha;  // the pre-training recipe
    LrSchedule sa = LrSchedule::core(steps, steps / 20);
    sa.peak_lr = setup.peak_lr;
    RmsPropMomentum<S> opt_a(model_a.named_params(), ha, sa);

    typename AdamW<S>::Hyper hb;  // typical-configuration baseline
    LrSchedule sb = sa;
    sb.peak_lr = setup.baseline_peak_lr;
    sb.final_fraction = 1e-4;
    AdamW<S> opt_b(model_b.named_params(), hb, sb);

    RecipeAblationResult res;
    res.final_loss_recipe =
        train_lm(model_a, opt_a, corpus, mixture, setup.seq_len, setup.batch, steps, seed);
    res.final_loss_baseline =
        train_lm(model_b, opt_b, corpus, mixture, setup.seq_len, setup.batch, steps, seed);
    auto eval_rows = mixture_eval_rows<S>(corpus, mixture, setup.seq_len, setup.eval_rows,
                                          seed ^ 0x5eed);
    res.eval_loss_recipe = eval_rows_loss(model_a, eval_rows);
    res.eval_loss_baseline = eval_rows_loss(model_b, eval_rows);
    return res;
}

// --- staged recipe (core -> continued) -----------------------------------------

struct StagedRecipeResult {
    double core_math = 0, continued_math = 0;
    double core_copy = 0, continued_copy = 0;
    double math_rel_improvement() const { return (core_math - continued_math) / core_math; }
    double copy_rel_degradation() const { return (continued_copy - core_copy) / core_copy; }
};

template <class S>
StagedRecipeResult staged_recipe_experiment(const ExperimentSetup<S>& setup,
                                            int64_t core_steps, int64_t continued_steps,
                                            uint64_t seed,
                                            std::vector<std::vector<int32_t>> math_rows,
                                            std::vector<std::vector<int32_t>> copy_rows) {
    RngStream rng(seed);
    auto corpus = Corpus::synth_toy(rng.split("corpus"), setup.docs_per_tag);
    auto init_rng = rng.split("init");
    auto model = Model<S>::init(setup.model, init_rng);

    typename RmsPropMomentum<S>::Hyper h;
    LrSchedule core_sched = LrSchedule::core(core_steps, core_steps / 20);
    core_sched.peak_lr = setup.peak_lr;
    RmsPropMomentum<S> core_opt(model.named_params(), h, core_sched);
    train_lm(model, core_opt, corpus, stage_preset("core", setup.seq_len).mixture,
             setup.seq_len, setup.batch, core_steps, seed);

    StagedRecipeResult res;
    res.core_math = eval_rows_loss(model, math_rows);
    res.core_copy = eval_rows_loss(model, copy_rows);

    typename RmsPropMomentum<S>::Hyper hc;
    hc.weight_decay = 1e-5;  // continued-stage decay
    LrSchedule cont_sched = LrSchedule::continued(continued_steps, continued_steps / 20);
    cont_sched.peak_lr = setup.peak_lr / 4;  // toy analog of the smaller continued peak
    RmsPropMomentum<S> cont_opt(model.named_params(), hc, cont_sched);
    train_lm(model, cont_opt, corpus, stage_preset("continued", setup.seq_len).mixture,
             setup.seq_len, setup.batch, continued_steps, seed ^ 0xc047);

    res.continued_math = eval_rows_loss(model, math_rows);
    res.continued_copy = eval_rows_loss(model, copy_rows);
    return res;
}

// --- pruning + distillation ordering -------------------------------------------

struct PruneDistillResult {
    double eval_scratch = 0;
    double eval_distill_only = 0;
    double eval_prune_distill = 0;
};

template <class S>
PruneDistillResult ablate_prune_distill(const ExperimentSetup<S>& setup,
                                        int64_t teacher_ffn, int64_t teacher_steps,
                                        int64_t mask_steps, int64_t student_steps,
                                        uint64_t seed) {
    RngStream rng(seed);
    auto corpus = Corpus::synth_toy(rng.split("corpus"), setup.docs_per_tag);
    auto mixture = stage_preset("core", setup.seq_len).mixture;

    ModelConfig teacher_cfg = setup.model;
    teacher_cfg.ffn_hidden_dim = teacher_ffn;
    auto trng = rng.split("teacher");
    auto teacher = Model<S>::init(teacher_cfg, trng);
    typename RmsPropMomentum<S>::Hyper h;
    LrSchedule tsched = LrSchedule::core(teacher_steps, teacher_steps / 20);
    tsched.peak_lr = setup.peak_lr;
    RmsPropMomentum<S> topt(teacher.named_params(), h, tsched);
    train_lm(teacher, topt, corpus, mixture, setup.seq_len, setup.batch, teacher_steps,
             seed ^ 0x7ea);

    std::function<Tensor<S>(const std::vector<int32_t>&)> teacher_fn =
        [&teacher](const std::vector<int32_t>& inputs) {
            NoGradGuard ng;
            return teacher.forward(std::span<const int32_t>(inputs));
        };

    // mask learned on the teacher, keep = student ffn width
    MaskTrainConfig mc;
    mc.steps = mask_steps;
    mc.lr = 0.1;
    mc.batch = setup.batch;
    mc.seq_len = setup.seq_len;
    RngStream mask_data_rng(seed ^ 0xa5);
    auto next_batch = [&](int64_t step) {
        auto brng = mask_data_rng.split("mask-batch").split(static_cast<uint64_t>(step));
        return sample_batch(corpus, mixture, setup.seq_len, setup.batch, brng).rows;
    };
    auto mrng = rng.split("mask");
    auto mask = learn_mask(teacher, next_batch, setup.model.ffn_hidden_dim, mc, mrng);
    auto pruned_init = prune(teacher, mask);

    auto train_student = [&](Model<S> student, bool use_teacher) {
        typename RmsPropMomentum<S>::Hyper hs;
        LrSchedule ssched = LrSchedule::core(student_steps, student_steps / 20);
        ssched.peak_lr = setup.peak_lr;
        RmsPropMomentum<S> sopt(student.named_params(), hs, ssched);
        train_lm(student, sopt, corpus, mixture, setup.seq_len, setup.batch, student_steps,
                 seed ^ 0x57d,
                 use_teacher ? teacher_fn
                             : std::function<Tensor<S>(const std::vector<int32_t>&)>{});
        return student;
    };

    auto scratch_rng = rng.split("scratch");
    auto scratch = train_student(Model<S>::init(setup.model, scratch_rng), false);
    auto distill_rng = rng.split("distill");
    auto distill_only = train_student(Model<S>::init(setup.model, distill_rng), true);
    auto prune_distill = train_student(pruned_init, true);

    auto eval_rows = mixture_eval_rows<S>(corpus, mixture, setup.seq_len, setup.eval_rows,
                                          seed ^ 0xbeef);
    PruneDistillResult res;
    res.eval_scratch = eval_rows_loss(scratch, eval_rows);
    res.eval_distill_only = eval_rows_loss(distill_only, eval_rows);
    res.eval_prune_distill = eval_rows_loss(prune_distill, eval_rows);
    return res;
}

// --- recovery-adapter ablation ---------------------------------------------------

struct RecoveryAblationEntry {
    std::string plan_name;
    double bpw = 0;
    double float_loss = 0, quant_loss = 0, recovered_loss = 0;
    double gap_closed_fraction = 0, absolute_gap_closed = 0;
};

template <class S>
RecoveryAblationEntry run_recovery(const Model<S>& base, const Corpus& corpus,
                                   const MixtureSpec& mixture, const QuantPlan& plan,
                                   const std::string& name, int64_t rank,
                                   const ExperimentSetup<S>& setup, int64_t steps,
                                   uint64_t seed) {
    RngStream rng(seed);
    auto qrng = rng.split("quant");
    auto qm = quantize(base, plan, 25, qrng);
    RngStream data_rng(seed ^ 0xdead);
    auto next_batch = [&](int64_t step) {
        auto brng = data_rng.split("rec-batch").split(static_cast<uint64_t>(step));
        return sample_batch(corpus, mixture, setup.seq_len, setup.batch, brng).rows;
    };
    auto eval_rows = mixture_eval_rows<S>(corpus, mixture, setup.seq_len, setup.eval_rows,
                                          seed ^ 0xeea1);
    RecoveryTrainConfig rc;
    rc.steps = steps;
    auto rrng = rng.split("recover");
    auto res = train_recovery_adapter(base, qm, rank, next_batch, eval_rows, rc, rrng);
    RecoveryAblationEntry e;
    e.plan_name = name;
    e.bpw = effective_bpw(plan, base);
    e.float_loss = res.float_loss;
    e.quant_loss = res.quant_loss;
    e.recovered_loss = res.recovered_loss;
    e.gap_closed_fraction = res.gap_closed_fraction();
    e.absolute_gap_closed = res.absolute_gap_closed();
    return e;
}

// --- two-armed bandit and KL-vs-beta probes --------------------------------------

struct BanditResult {
    std::vector<double> prob_rewarded;  // exact P(rewarded arm) per iteration
    double final_prob = 0;
};

// Single-token responses over a tiny vocabulary; reward 1 for one arm. The
// rewarded-arm probability is read exactly from the policy softmax.
template <class S>
BanditResult bandit_experiment(int iterations, int k, double lr, double gamma,
                               uint64_t seed) {
    ModelConfig cfg;
    cfg.model_dim = 16;
    cfg.head_dim = 4;
    cfg.n_query_heads = 2;
    cfg.n_kv_heads = 2;
    cfg.n_layers = 1;
    cfg.vocab_size = 4;
    cfg.ffn_hidden_dim = 16;
    cfg.rope_base = 1000.0;
    cfg.max_seq_len = 8;
    RngStream rng(seed);
    auto policy = Model<S>::init(cfg, rng);
    auto reference = policy.clone();
    const std::vector<std::vector<int32_t>> prompts{{2}};
    RewardFn score = [](std::span<const int32_t>, std::span<const int32_t> r) {
        return r[0] == 0 ? 1.0 : 0.0;
    };
    RolloutConfig rc;
    rc.k = k;
    rc.max_response_len = 1;
    rc.beta = 0.0;
    MdlooConfig mc;
    mc.gamma = gamma;
    typename RmsPropMomentum<S>::Hyper h;
    h.weight_decay = 0.0;
    RmsPropMomentum<S> opt(policy.named_params(), h, LrSchedule::constant(lr));
    BanditResult res;
    for (int it = 0; it < iterations; ++it) {
        auto snapshot = policy.clone();
        auto rrng = rng.split("roll").split(static_cast<uint64_t>(it));
        auto rollouts = collect_rollouts(snapshot, reference, score, prompts, rc, rrng);
        mdloo_update(policy, rollouts, mc, opt);
        NoGradGuard ng;
        auto logits = policy.forward(std::span<const int32_t>(prompts[0]));
        ArrX<S> row = logits.value();
        const S mx = row.maxCoeff();
        ArrX<S> e = (row - mx).exp();
        res.prob_rewarded.push_back(static_cast<double>(e[0] / e.sum()));
    }
    res.final_prob = res.prob_rewarded.empty() ? 0.0 : res.prob_rewarded.back();
    return res;
}

// Full small RL run; returns the final sequence-level KL(policy || reference)
// on held-out prompts.
template <class S>
double mdloo_final_kl(double beta, int iterations, uint64_t seed) {
    ModelConfig cfg;
    cfg.model_dim = 16;
    cfg.head_dim = 4;
    cfg.n_query_heads = 2;
    cfg.n_kv_heads = 2;
    cfg.n_layers = 1;
    cfg.vocab_size = 32;
    cfg.ffn_hidden_dim = 16;
    cfg.rope_base = 1000.0;
    cfg.max_seq_len = 16;
    RngStream rng(seed);
    auto policy = Model<S>::init(cfg, rng);
    auto reference = policy.clone();
    std::vector<std::vector<int32_t>> prompts{{1}, {2}, {3}, {4}};
    std::vector<std::vector<int32_t>> held_out{{5}, {6}};
    RewardFn score = [](std::span<const int32_t>, std::span<const int32_t> r) {
        double s = 0;
        for (int32_t t : r) s += (t == 7 ? 1.0 : 0.0);
        return s;
    };
    RolloutConfig rc;
    rc.k = 4;
    rc.max_response_len = 4;
    rc.beta = beta;
    MdlooConfig mc;
    typename RmsPropMomentum<S>::Hyper h;
    h.weight_decay = 0.0;
    RmsPropMomentum<S> opt(policy.named_params(), h, LrSchedule::constant(2e-3));
    for (int it = 0; it < iterations; ++it) {
        auto snapshot = policy.clone();
        auto rrng = rng.split("roll").split(static_cast<uint64_t>(it));
        auto rollouts = collect_rollouts(snapshot, reference, score, prompts, rc, rrng);
        mdloo_update(policy, rollouts, mc, opt);
    }
    auto krng = rng.split("kl");
    return sequence_kl_estimate(policy, reference, std::span<const std::vector<int32_t>>(held_out),
                                8, 4, krng);
}

}  // namespace lmlab::harness
