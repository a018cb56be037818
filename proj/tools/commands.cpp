// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#include "commands.hpp"

#include <json.hpp>
#include <unistd.h>

#include <iostream>

#include "lmlab/align/committee.hpp"
#include "lmlab/align/itec.hpp"
#include "lmlab/align/reward_model.hpp"
#include "lmlab/align/rlhf.hpp"
#include "lmlab/compress/prune.hpp"
#include "lmlab/compress/recovery.hpp"
#include "lmlab/data/decontaminate.hpp"
#include "lmlab/data/preferences.hpp"

namespace lmlab::cli {

using nlohmann::json;

namespace {

// Generic named-tensor checkpoint helpers for composite objects.
void save_named(const std::string& path,
                std::vector<std::pair<std::string, Tensor<Scalar>>> tensors) {
    std::vector<RawTensor> recs;
    for (auto& [name, t] : tensors) recs.push_back(to_raw(name, t));
    write_checkpoint(path, recs);
}

void load_named(const std::string& path,
                std::vector<std::pair<std::string, Tensor<Scalar>>> tensors) {
    auto recs = read_checkpoint(path);
    std::map<std::string, const RawTensor*> by_name;
    for (const auto& r : recs) by_name[r.name] = &r;
    for (auto& [name, t] : tensors) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError("checkpoint " + path + " is missing tensor " + name);
        load_raw_into(*it->second, t);
    }
}

// Built-in ground-truth scorers for synthetic alignment experiments.
RewardFn scorer_from(const RunConfig& c) {
    const std::string name = c.get_string("scorer.name", std::string("target_token"));
    if (name == "length")
        return [](std::span<const int32_t>, std::span<const int32_t> r) {
            return static_cast<double>(r.size());
        };
    if (name == "target_token") {
        const int32_t target = static_cast<int32_t>(c.get_int("scorer.token", int64_t{'e'}));
        return [target](std::span<const int32_t>, std::span<const int32_t> r) {
            double s = 0;
            for (int32_t t : r) s += (t == target ? 1.0 : 0.0);
            return s;
        };
    }
    throw ConfigError("scorer.name must be length or target_token, got '" + name + "'");
}

struct ScorerAdapter final : TrueScorer {
    RewardFn fn;
    explicit ScorerAdapter(RewardFn f) : fn(std::move(f)) {}
    double score(std::span<const int32_t> p, std::span<const int32_t> r) const override {
        return fn(p, r);
    }
};

Model<Scalar> load_model_from(const RunConfig& c, const std::string& path_key,
                              uint64_t seed) {
    auto cfg = model_config_from(c);
    RngStream rng(seed);
    auto m = Model<Scalar>::init(cfg, rng, init_policy_from(c));
    if (c.has(path_key)) load_model_into(c.get_string(path_key), m);
    return m;
}

json summary_header(const RunContext& ctx, const std::string& command) {
    return json{{"command", command}, {"seed", ctx.seed}, {"out", ctx.out_dir}};
}

void finish(const json& summary, const RunContext& ctx) {
    // byte-string fields may hold arbitrary bytes; replace invalid UTF-8
    const auto text =
        summary.dump(2, ' ', false, json::error_handler_t::replace);
    std::ofstream out(ctx.out_dir + "/summary.json");
    out << text << "\n";
    std::cout << summary.dump(-1, ' ', false, json::error_handler_t::replace) << std::endl;
}

}  // namespace

int cmd_pretrain(const RunContext& ctx) {
    auto known = common_keys();
    known.insert("pretrain.docs");
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    const std::string stage = ctx.config.get_string("stage", std::string("core"));
    const int64_t base_seq = ctx.config.get_int("data.seq_len", int64_t{48});
    auto preset = stage_preset(stage, base_seq);
    auto mcfg = model_config_from(ctx.config);
    mcfg.rope_base *= preset.rope_base_scale;
    if (preset.seq_len + 1 > mcfg.max_seq_len) mcfg.max_seq_len = preset.seq_len + 1;

    RngStream rng(ctx.seed);
    auto init_rng = rng.split("init");
    auto model = Model<Scalar>::init(mcfg, init_rng, init_policy_from(ctx.config));
    // the schedule always spans the configured run; --steps only bounds how
    // far this invocation goes, so interrupt + resume replays exactly
    const int64_t schedule_total = ctx.config.get_int("train.steps", int64_t{200});
    const int64_t steps = std::min<int64_t>(
        ctx.steps_override.value_or(schedule_total), schedule_total);
    auto opt = optimizer_from(ctx.config, stage, schedule_total, model.named_params(),
                              mcfg.model_dim);
    if (ctx.resume) load_training_checkpoint(*ctx.resume, model, *opt);

    auto corpus = Corpus::synth_toy(rng.split("corpus"),
                                    static_cast<int>(ctx.config.get_int("data.docs_per_tag",
                                                                        int64_t{200})));
    const int64_t batch = ctx.config.get_int("data.batch", int64_t{4});
    MetricsWriter metrics(ctx.out_dir + "/metrics.jsonl");
    auto res = pretrain_loop(model, *opt, corpus, preset.mixture, preset.seq_len, batch,
                             steps, ctx.seed, ctx.config.get_double("train.dropout", 0.0),
                             &metrics, stage, no_teacher);

    save_model(ctx.out_dir + "/model.ckpt", model);
    save_training_checkpoint(ctx.out_dir + "/state.ckpt", model, *opt);
    auto summary = summary_header(ctx, "pretrain");
    summary["stage"] = stage;
    summary["steps"] = res.steps_done;
    summary["final_loss"] = res.final_loss;
    summary["seq_len"] = preset.seq_len;
    summary["rope_base"] = mcfg.rope_base;
    finish(summary, ctx);
    return 0;
}

int cmd_sft(const RunContext& ctx) {
    auto known = common_keys();
    for (auto k : {"sft.lr", "sft.steps", "sft.demos", "sft.dropout", "sft.batch", "model.ckpt"})
        known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto model = load_model_from(ctx.config, "model.ckpt", ctx.seed);
    RngStream rng(ctx.seed);
    auto drng = rng.split("demos");
    auto demos = make_arith_demos(
        static_cast<int>(ctx.config.get_int("sft.demos", int64_t{64})), drng);
    const int64_t steps =
        ctx.steps_override.value_or(ctx.config.get_int("sft.steps", int64_t{200}));
    const int64_t batch = ctx.config.get_int("sft.batch", int64_t{8});
    // constant learning rate, dropout 0.1
    typename RmsPropMomentum<Scalar>::Hyper h;
    h.weight_decay = 0.0;
    RmsPropMomentum<Scalar> opt(model.named_params(), h,
                                LrSchedule::constant(ctx.config.get_double("sft.lr", 2e-3)));
    const double dropout = ctx.config.get_double("sft.dropout", 0.1);
    MetricsWriter metrics(ctx.out_dir + "/metrics.jsonl");
    double last = 0;
    for (int64_t step = 0; step < steps; ++step) {
        const size_t lo = (static_cast<size_t>(step) * batch) % demos.size();
        std::vector<DemoExample> b;
        for (size_t i = lo; i < std::min(demos.size(), lo + static_cast<size_t>(batch)); ++i)
            b.push_back(demos[i]);
        auto drop_rng = rng.split("dropout").split(static_cast<uint64_t>(step));
        auto stats = sft_step(model, std::span<const DemoExample>(b), opt, dropout, drop_rng);
        last = stats.loss;
        MetricsRecord rec;
        rec.step = step;
        rec.stage = "sft";
        rec.loss = stats.loss;
        rec.lr = opt.last_lr();
        rec.grad_norm = opt.diagnostics().global_grad_norm;
        metrics.write(rec);
    }
    save_model(ctx.out_dir + "/model.ckpt", model);
    auto summary = summary_header(ctx, "sft");
    summary["final_loss"] = last;
    summary["self_completion_loss"] =
        self_completion_loss(model, std::span<const DemoExample>(demos), 8);
    finish(summary, ctx);
    return 0;
}

int cmd_train_reward(const RunContext& ctx) {
    auto known = common_keys();
    for (auto k : {"rm.head_hidden", "rm.lambda", "rm.epochs", "rm.lr", "rm.batch",
                   "rm.prompts", "rm.k", "rm.test_fraction", "scorer.name", "scorer.token",
                   "rm.max_response", "prefs.file", "prefs.out"})
        known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    RngStream rng(ctx.seed);
    std::vector<PreferenceExample> prefs;
    if (ctx.config.has("prefs.file")) {
        prefs = read_preferences_jsonl(ctx.config.get_string("prefs.file"));
    } else {
        ScorerAdapter scorer(scorer_from(ctx.config));
        auto prng = rng.split("prompts");
        auto prompts = make_prompts(
            static_cast<int>(ctx.config.get_int("rm.prompts", int64_t{200})), prng);
        const int64_t max_resp = ctx.config.get_int("rm.max_response", int64_t{10});
        ResponseSampler pol = [max_resp](std::span<const int32_t>, RngStream& r) {
            std::vector<int32_t> resp(static_cast<size_t>(1 + r.uniform_int(max_resp)));
            for (auto& t : resp) t = static_cast<int32_t>('a' + r.uniform_int(26));
            return resp;
        };
        auto drng = rng.split("prefs");
        prefs = synth_preferences(scorer, prompts, pol,
                                  static_cast<int>(ctx.config.get_int("rm.k", int64_t{4})),
                                  drng);
        write_preferences_jsonl(
            ctx.config.get_string("prefs.out", ctx.out_dir + "/prefs.jsonl"), prefs);
    }
    if (prefs.size() < 10) throw DataError("train-reward: too few preference examples");
    const double test_fraction = ctx.config.get_double("rm.test_fraction", 0.2);
    const size_t hold = std::max<size_t>(1, static_cast<size_t>(prefs.size() * test_fraction));
    std::span<const PreferenceExample> train(prefs.data(), prefs.size() - hold);
    std::span<const PreferenceExample> test(prefs.data() + prefs.size() - hold, hold);

    auto mcfg = model_config_from(ctx.config);
    auto irng = rng.split("rm-init");
    auto rm = RewardModel<Scalar>::init(
        mcfg, ctx.config.get_int("rm.head_hidden", int64_t{16}),
        static_cast<Scalar>(ctx.config.get_double("rm.lambda", 0.1)), irng);
    RewardTrainConfig tc;
    tc.epochs = ctx.config.get_int("rm.epochs", int64_t{3});
    tc.lr = ctx.config.get_double("rm.lr", 2e-3);
    tc.batch = ctx.config.get_int("rm.batch", int64_t{8});
    auto trng = rng.split("rm-train");
    train_reward_model(rm, train, tc, trng);

    save_named(ctx.out_dir + "/rm.ckpt", rm.named_params());
    auto summary = summary_header(ctx, "train-reward");
    summary["train_examples"] = train.size();
    summary["test_examples"] = test.size();
    summary["pairwise_accuracy"] = pairwise_accuracy(rm, test);
    finish(summary, ctx);
    return 0;
}

int cmd_rlhf(const RunContext& ctx) {
    auto known = common_keys();
    for (auto k : {"rlhf.iters", "rlhf.k", "rlhf.beta", "rlhf.gamma", "rlhf.lr",
                   "rlhf.max_response", "rlhf.prompts", "rlhf.inner_epochs",
                   "rlhf.ratio_ceiling", "rlhf.rounds", "scorer.name", "scorer.token",
                   "model.ckpt", "rm.ckpt", "rm.head_hidden", "rm.lambda"})
        known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto policy = load_model_from(ctx.config, "model.ckpt", ctx.seed);
    auto reference = policy.clone();
    RngStream rng(ctx.seed);
    auto prng = rng.split("prompts");
    auto prompts = make_prompts(
        static_cast<int>(ctx.config.get_int("rlhf.prompts", int64_t{8})), prng);

    RewardFn score;
    std::unique_ptr<RewardModel<Scalar>> rm;
    if (ctx.config.has("rm.ckpt")) {
        auto rrng = rng.split("rm-init");
        rm = std::make_unique<RewardModel<Scalar>>(RewardModel<Scalar>::init(
            model_config_from(ctx.config), ctx.config.get_int("rm.head_hidden", int64_t{16}),
            static_cast<Scalar>(ctx.config.get_double("rm.lambda", 0.1)), rrng));
        load_named(ctx.config.get_string("rm.ckpt"), rm->named_params());
        score = [&r = *rm](std::span<const int32_t> p, std::span<const int32_t> resp) {
            std::vector<int32_t> seq(p.begin(), p.end());
            seq.insert(seq.end(), resp.begin(), resp.end());
            return r.reward_value(seq);
        };
    } else {
        score = scorer_from(ctx.config);
    }

    const int64_t rounds = ctx.config.get_int("rlhf.rounds", int64_t{1});
    MetricsWriter metrics(ctx.out_dir + "/metrics.jsonl");
    auto summary = summary_header(ctx, "rlhf");
    if (rounds > 1) {
        // the multi-round flywheel: RM refresh -> committee RS -> SFT -> RL
        ScorerAdapter scorer(score);
        ItecConfig ic;
        ic.rounds = static_cast<int>(rounds);
        ic.rollout.k = static_cast<int>(ctx.config.get_int("rlhf.k", int64_t{4}));
        ic.rollout.max_response_len = ctx.config.get_int("rlhf.max_response", int64_t{8});
        ic.rollout.beta = ctx.config.get_double("rlhf.beta", 0.1);
        ic.mdloo.gamma = ctx.config.get_double("rlhf.gamma", 0.01);
        ic.rl_iterations = static_cast<int>(ctx.config.get_int("rlhf.iters", int64_t{5}));
        ic.rl_lr = ctx.config.get_double("rlhf.lr", 1e-3);
        ic.rm_head_hidden = ctx.config.get_int("rm.head_hidden", int64_t{16});
        ic.rm_lambda = ctx.config.get_double("rm.lambda", 0.1);
        auto irng = rng.split("itec");
        auto st = run_itec(policy, scorer, std::span<const std::vector<int32_t>>(prompts), ic,
                           irng);
        policy = std::move(st.policy);
        summary["round_mean_true_score"] = st.round_mean_true_score;
    } else {
        RolloutConfig rc;
        rc.k = static_cast<int>(ctx.config.get_int("rlhf.k", int64_t{4}));
        rc.max_response_len = ctx.config.get_int("rlhf.max_response", int64_t{8});
        rc.beta = ctx.config.get_double("rlhf.beta", 0.1);
        MdlooConfig mc;
        mc.gamma = ctx.config.get_double("rlhf.gamma", 0.01);
        mc.inner_epochs =
            static_cast<int>(ctx.config.get_int("rlhf.inner_epochs", int64_t{1}));
        mc.ratio_ceiling = ctx.config.get_double("rlhf.ratio_ceiling", 10.0);
        typename RmsPropMomentum<Scalar>::Hyper h;
        h.weight_decay = 0.0;
        RmsPropMomentum<Scalar> opt(
            policy.named_params(), h,
            LrSchedule::constant(ctx.config.get_double("rlhf.lr", 1e-3)));
        const int64_t iters =
            ctx.steps_override.value_or(ctx.config.get_int("rlhf.iters", int64_t{20}));
        for (int64_t it = 0; it < iters; ++it) {
            auto snapshot = policy.clone();
            auto rrng = rng.split("roll").split(static_cast<uint64_t>(it));
            auto rollouts = collect_rollouts(snapshot, reference, score, prompts, rc, rrng);
            auto stats = mdloo_update(policy, rollouts, mc, opt);
            double mean_reward = 0;
            int64_t n = 0;
            for (const auto& items : rollouts.per_prompt)
                for (const auto& i : items) {
                    mean_reward += i.rm_score;
                    ++n;
                }
            MetricsRecord rec;
            rec.step = it;
            rec.stage = "rlhf";
            rec.loss = -stats.objective;
            rec.lr = opt.last_lr();
            rec.grad_norm = opt.diagnostics().global_grad_norm;
            rec.extra["mean_reward"] = n ? mean_reward / double(n) : 0.0;
            rec.extra["dropped_samples"] = static_cast<double>(stats.dropped_samples);
            metrics.write(rec);
        }
        auto krng = rng.split("kl");
        summary["final_kl"] = sequence_kl_estimate(
            policy, reference, std::span<const std::vector<int32_t>>(prompts), 4,
            rc.max_response_len, krng);
    }
    save_model(ctx.out_dir + "/model.ckpt", policy);
    finish(summary, ctx);
    return 0;
}

int cmd_distill(const RunContext& ctx) {
    auto known = common_keys();
    for (auto k : {"distill.teacher", "distill.weight", "teacher.ffn_hidden"})
        known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto mcfg = model_config_from(ctx.config);
    ModelConfig tcfg = mcfg;
    tcfg.ffn_hidden_dim = ctx.config.get_int("teacher.ffn_hidden", mcfg.ffn_hidden_dim);
    RngStream rng(ctx.seed);
    auto trng = rng.split("teacher-init");
    auto teacher = Model<Scalar>::init(tcfg, trng);
    load_model_into(ctx.config.get_string("distill.teacher"), teacher);

    auto irng = rng.split("init");
    auto student = Model<Scalar>::init(mcfg, irng, init_policy_from(ctx.config));
    const int64_t schedule_total = ctx.config.get_int("train.steps", int64_t{200});
    const int64_t steps = std::min<int64_t>(
        ctx.steps_override.value_or(schedule_total), schedule_total);
    auto opt = optimizer_from(ctx.config, "core", schedule_total, student.named_params(),
                              mcfg.model_dim);
    if (ctx.resume) load_training_checkpoint(*ctx.resume, student, *opt);

    auto corpus = Corpus::synth_toy(
        rng.split("corpus"),
        static_cast<int>(ctx.config.get_int("data.docs_per_tag", int64_t{200})));
    auto preset = stage_preset("core", ctx.config.get_int("data.seq_len", int64_t{48}));
    MetricsWriter metrics(ctx.out_dir + "/metrics.jsonl");
    const Scalar w = static_cast<Scalar>(ctx.config.get_double("distill.weight", 0.9));
    (void)w;  // weight is fixed at 0.9 inside the loop helper
    auto teacher_fn = [&teacher](const std::vector<int32_t>& inputs) {
        NoGradGuard ng;
        return teacher.forward(std::span<const int32_t>(inputs));
    };
    auto res = pretrain_loop(student, *opt, corpus, preset.mixture, preset.seq_len,
                             ctx.config.get_int("data.batch", int64_t{4}), steps, ctx.seed,
                             0.0, &metrics, "distill", teacher_fn);
    save_model(ctx.out_dir + "/model.ckpt", student);
    save_training_checkpoint(ctx.out_dir + "/state.ckpt", student, *opt);
    auto summary = summary_header(ctx, "distill");
    summary["final_loss"] = res.final_loss;
    finish(summary, ctx);
    return 0;
}

int cmd_prune(const RunContext& ctx) {
    auto known = common_keys();
    for (auto k : {"prune.model", "prune.keep", "prune.steps", "prune.lr", "prune.t_start",
                   "prune.t_end"})
        known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto model = load_model_from(ctx.config, "prune.model", ctx.seed);
    const int64_t keep = ctx.config.get_int("prune.keep");
    RngStream rng(ctx.seed);
    auto corpus = Corpus::synth_toy(
        rng.split("corpus"),
        static_cast<int>(ctx.config.get_int("data.docs_per_tag", int64_t{200})));
    auto preset = stage_preset("core", ctx.config.get_int("data.seq_len", int64_t{48}));
    MaskTrainConfig mc;
    mc.steps = ctx.steps_override.value_or(ctx.config.get_int("prune.steps", int64_t{150}));
    mc.lr = ctx.config.get_double("prune.lr", 0.1);
    mc.t_start = ctx.config.get_double("prune.t_start", 1.0);
    mc.t_end = ctx.config.get_double("prune.t_end", 0.05);
    const int64_t batch = ctx.config.get_int("data.batch", int64_t{4});
    RngStream data_rng(ctx.seed ^ 0x111);
    auto next_batch = [&](int64_t step) {
        auto brng = data_rng.split("batch").split(static_cast<uint64_t>(step));
        return sample_batch(corpus, preset.mixture, preset.seq_len, batch, brng).rows;
    };
    auto mrng = rng.split("mask");
    auto mask = learn_mask(model, next_batch, keep, mc, mrng);
    auto pruned = prune(model, mask);
    save_model(ctx.out_dir + "/model.ckpt", pruned);

    auto kept = mask.hardened();
    json kept_json = json::array();
    for (const auto& layer : kept) kept_json.push_back(layer);
    auto summary = summary_header(ctx, "prune");
    summary["keep"] = keep;
    summary["kept_units"] = kept_json;
    summary["pruned_ffn_hidden"] = pruned.cfg.ffn_hidden_dim;
    finish(summary, ctx);
    return 0;
}

int cmd_quantize(const RunContext& ctx) {
    auto known = common_keys();
    for (auto k : {"quant.model", "quant.bits", "quant.group", "quant.mixed",
                   "quant.target_bpw", "quant.kmeans_iters"})
        known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto model = load_model_from(ctx.config, "quant.model", ctx.seed);
    const int64_t group = ctx.config.get_int("quant.group", int64_t{16});
    const int iters = static_cast<int>(ctx.config.get_int("quant.kmeans_iters", int64_t{25}));
    RngStream rng(ctx.seed);
    QuantPlan plan;
    if (ctx.config.get_bool("quant.mixed", false)) {
        auto prng = rng.split("plan");
        plan = plan_for_target(model, ctx.config.get_double("quant.target_bpw", 3.7), group,
                               iters, prng);
    } else {
        plan = uniform_plan(model, static_cast<int>(ctx.config.get_int("quant.bits", int64_t{4})),
                            group);
    }
    auto qrng = rng.split("quant");
    auto qm = quantize(model, plan, iters, qrng);
    save_quantized(ctx.out_dir + "/quant.ckpt", qm);

    auto b = effective_bpw_breakdown(plan, model);
    auto summary = summary_header(ctx, "quantize");
    summary["bpw_overall"] = b.overall;
    summary["bpw_palettized"] = b.palettized;
    summary["bpw_embedding"] = b.embedding;
    int n2 = 0;
    for (const auto& [name, s] : plan.schemes)
        if (s.kind == TensorScheme::Kind::Pal2) ++n2;
    summary["tensors_at_2bit"] = n2;
    finish(summary, ctx);
    return 0;
}

int cmd_recover(const RunContext& ctx) {
    auto known = common_keys();
    for (auto k : {"recover.float", "recover.quant", "recover.rank", "recover.steps",
                   "recover.lr"})
        known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto float_model = load_model_from(ctx.config, "recover.float", ctx.seed);
    auto qm = load_quantized<Scalar>(ctx.config.get_string("recover.quant"),
                                     float_model.cfg);
    RngStream rng(ctx.seed);
    auto corpus = Corpus::synth_toy(
        rng.split("corpus"),
        static_cast<int>(ctx.config.get_int("data.docs_per_tag", int64_t{200})));
    auto preset = stage_preset("core", ctx.config.get_int("data.seq_len", int64_t{48}));
    const int64_t batch = ctx.config.get_int("data.batch", int64_t{4});
    RngStream data_rng(ctx.seed ^ 0x222);
    auto next_batch = [&](int64_t step) {
        auto brng = data_rng.split("batch").split(static_cast<uint64_t>(step));
        return sample_batch(corpus, preset.mixture, preset.seq_len, batch, brng).rows;
    };
    auto eval_rng = data_rng.split("eval");
    auto eval_rows = sample_batch(corpus, preset.mixture, preset.seq_len, 16, eval_rng).rows;
    RecoveryTrainConfig rc;
    rc.steps = ctx.steps_override.value_or(ctx.config.get_int("recover.steps", int64_t{150}));
    rc.lr = ctx.config.get_double("recover.lr", 2e-3);
    auto rrng = rng.split("recover");
    auto res = train_recovery_adapter(float_model, qm,
                                      ctx.config.get_int("recover.rank", int64_t{16}),
                                      next_batch, eval_rows, rc, rrng);
    save_adapter(ctx.out_dir + "/adapter.ckpt", res.adapter);
    auto summary = summary_header(ctx, "recover");
    summary["float_loss"] = res.float_loss;
    summary["quant_loss"] = res.quant_loss;
    summary["recovered_loss"] = res.recovered_loss;
    summary["gap_closed_fraction"] = res.gap_closed_fraction();
    finish(summary, ctx);
    return 0;
}

int cmd_committee_rs(const RunContext& ctx) {
    auto known = common_keys();
    for (auto k : {"committee.models", "committee.samples", "committee.max_response",
                   "committee.prompts", "scorer.name", "scorer.token", "rm.ckpt",
                   "rm.head_hidden", "rm.lambda"})
        known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto mcfg = model_config_from(ctx.config);
    RngStream rng(ctx.seed);
    std::vector<Model<Scalar>> models;
    std::string paths = ctx.config.get_string("committee.models", std::string(""));
    if (paths.empty()) {
        auto irng = rng.split("init");
        models.push_back(Model<Scalar>::init(mcfg, irng));
    } else {
        size_t pos = 0;
        while (pos != std::string::npos) {
            const auto comma = paths.find(',', pos);
            const std::string p = paths.substr(pos, comma == std::string::npos ? comma
                                                                               : comma - pos);
            auto irng = rng.split("init" + p);
            auto m = Model<Scalar>::init(mcfg, irng);
            load_model_into(p, m);
            models.push_back(std::move(m));
            pos = comma == std::string::npos ? comma : comma + 1;
        }
    }
    std::vector<const Model<Scalar>*> committee;
    for (const auto& m : models) committee.push_back(&m);

    RewardFn score;
    std::unique_ptr<RewardModel<Scalar>> rm;
    if (ctx.config.has("rm.ckpt")) {
        auto rrng = rng.split("rm-init");
        rm = std::make_unique<RewardModel<Scalar>>(RewardModel<Scalar>::init(
            mcfg, ctx.config.get_int("rm.head_hidden", int64_t{16}),
            static_cast<Scalar>(ctx.config.get_double("rm.lambda", 0.1)), rrng));
        load_named(ctx.config.get_string("rm.ckpt"), rm->named_params());
        score = [&r = *rm](std::span<const int32_t> p, std::span<const int32_t> resp) {
            std::vector<int32_t> seq(p.begin(), p.end());
            seq.insert(seq.end(), resp.begin(), resp.end());
            return r.reward_value(seq);
        };
    } else {
        score = scorer_from(ctx.config);
    }

    auto prng = rng.split("prompts");
    auto prompts = make_prompts(
        static_cast<int>(ctx.config.get_int("committee.prompts", int64_t{16})), prng);
    CommitteeConfig cc;
    cc.samples_per_model =
        static_cast<int>(ctx.config.get_int("committee.samples", int64_t{2}));
    cc.max_response_len = ctx.config.get_int("committee.max_response", int64_t{8});
    CommitteeStats stats;
    auto crng = rng.split("committee");
    auto data = committee_rejection_sample(std::span<const Model<Scalar>*>(committee), score,
                                           prompts, cc, crng, &stats);

    std::ofstream out(ctx.out_dir + "/dataset.jsonl");
    for (const auto& ex : data) {
        json j{{"prompt", ex.prompt}, {"response", ex.response}};
        out << j.dump() << "\n";
    }
    auto summary = summary_header(ctx, "committee-rs");
    summary["selected"] = data.size();
    summary["dropped_prompts"] = stats.dropped_prompts;
    summary["committee_size"] = committee.size();
    finish(summary, ctx);
    return 0;
}

int cmd_sample(const RunContext& ctx) {
    auto known = common_keys();
    for (auto k : {"model.ckpt", "sample.prompt", "sample.max_new", "sample.temperature"})
        known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto model = load_model_from(ctx.config, "model.ckpt", ctx.seed);
    const std::string prompt_text = ctx.config.get_string("sample.prompt", std::string("12+34="));
    auto prompt = ByteTokenizer::encode(prompt_text);
    RngStream rng(ctx.seed);
    auto srng = rng.split("sample");
    auto tokens = sample(model, std::span<const int32_t>(prompt),
                         ctx.config.get_int("sample.max_new", int64_t{32}),
                         ctx.config.get_double("sample.temperature", 1.0), srng,
                         ByteTokenizer::sep_token);
    const std::string text = ByteTokenizer::decode(tokens);
    std::ofstream out(ctx.out_dir + "/sample.txt");
    out << text << "\n";
    auto summary = summary_header(ctx, "sample");
    summary["prompt"] = prompt_text;
    summary["completion"] = text;
    finish(summary, ctx);
    return 0;
}

int cmd_eval(const RunContext& ctx) {
    auto known = common_keys();
    for (auto k : {"model.ckpt", "eval.rows"}) known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto model = load_model_from(ctx.config, "model.ckpt", ctx.seed);
    const int rows = static_cast<int>(ctx.config.get_int("eval.rows", int64_t{32}));
    const int64_t seq = std::min<int64_t>(model.cfg.max_seq_len,
                                          ctx.config.get_int("data.seq_len", int64_t{48}));
    auto summary = summary_header(ctx, "eval");
    for (const std::string tag : {"math", "qa", "copy", "longqa"}) {
        auto eval_rows = eval_rows_for_tag(tag, rows, seq, ctx.seed ^ 0xe7a1);
        summary["loss_" + tag] = eval_loss_rows(model, eval_rows);
    }
    finish(summary, ctx);
    return 0;
}

int cmd_decontaminate(const RunContext& ctx, const std::string& benchmark_path,
                      const std::string& corpus_path) {
    auto known = common_keys();
    for (auto k : {"decon.threshold", "decon.count_corpus"}) known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto benchmark = read_corpus_jsonl(benchmark_path);
    auto corpus = read_corpus_jsonl(corpus_path);
    auto index = NGramIndex::build(benchmark);
    if (ctx.config.get_bool("decon.count_corpus", true))
        index.count_corpus_occurrences(corpus);
    const uint64_t threshold = static_cast<uint64_t>(
        ctx.config.get_int("decon.threshold", static_cast<int64_t>(kCommonUsageThreshold)));

    std::ofstream report(ctx.out_dir + "/report.jsonl");
    int64_t dropped = 0;
    for (const auto& doc : corpus) {
        auto res = decontaminate(doc, index, threshold);
        json matches = json::array();
        for (const auto& m : res.matches)
            matches.push_back({{"ngram", m.ngram}, {"count", m.count}});
        report << json{{"id", doc.id}, {"drop", res.drop}, {"matches", matches}}.dump()
               << "\n";
        if (res.drop) ++dropped;
    }
    index.save(ctx.out_dir + "/ngrams.bin");
    auto summary = summary_header(ctx, "decontaminate");
    summary["documents"] = corpus.size();
    summary["dropped"] = dropped;
    summary["indexed_ngrams"] = index.counts.size();
    finish(summary, ctx);
    return 0;
}

}  // namespace lmlab::cli
