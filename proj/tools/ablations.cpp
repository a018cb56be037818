// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#include <json.hpp>

#include "commands.hpp"
#include "lmlab/harness/experiments.hpp"

namespace lmlab::cli {

using nlohmann::json;
namespace hx = lmlab::harness;

namespace {

hx::ExperimentSetup<Scalar> setup_from(const RunConfig& c) {
    auto s = hx::ExperimentSetup<Scalar>::small();
    s.model = model_config_from(c);
    s.docs_per_tag = static_cast<int>(c.get_int("data.docs_per_tag", int64_t{200}));
    s.seq_len = c.get_int("data.seq_len", int64_t{48});
    s.batch = c.get_int("data.batch", int64_t{4});
    return s;
}

void write_summary(const RunContext& ctx, const json& summary) {
    std::ofstream out(ctx.out_dir + "/summary.json");
    out << summary.dump(2) << "\n";
    std::printf("%s\n", summary.dump().c_str());
}

}  // namespace

int cmd_ablate_recipe(const RunContext& ctx) {
    auto known = common_keys();
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto setup = setup_from(ctx.config);
    const int64_t steps =
        ctx.steps_override.value_or(ctx.config.get_int("train.steps", int64_t{300}));
    auto res = hx::ablate_recipe(setup, steps, ctx.seed);

    std::printf("recipe ablation (%lld steps)\n", static_cast<long long>(steps));
    std::printf("%-24s %12s %12s\n", "metric", "baseline", "recipe");
    std::printf("%-24s %12.4f %12.4f\n", "final train loss", res.final_loss_baseline,
                res.final_loss_recipe);
    std::printf("%-24s %12.4f %12.4f\n", "held-out loss", res.eval_loss_baseline,
                res.eval_loss_recipe);
    json summary{{"command", "ablate-recipe"},
                 {"seed", ctx.seed},
                 {"final_loss_recipe", res.final_loss_recipe},
                 {"final_loss_baseline", res.final_loss_baseline},
                 {"eval_loss_recipe", res.eval_loss_recipe},
                 {"eval_loss_baseline", res.eval_loss_baseline}};
    write_summary(ctx, summary);
    return 0;
}

int cmd_ablate_prune_distill(const RunContext& ctx) {
    auto known = common_keys();
    for (auto k : {"teacher.ffn_hidden", "teacher.steps", "prune.steps", "student.steps"})
        known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto setup = setup_from(ctx.config);
    auto res = hx::ablate_prune_distill(
        setup, ctx.config.get_int("teacher.ffn_hidden", setup.model.ffn_hidden_dim * 2),
        ctx.config.get_int("teacher.steps", int64_t{400}),
        ctx.config.get_int("prune.steps", int64_t{120}),
        ctx.steps_override.value_or(ctx.config.get_int("student.steps", int64_t{200})),
        ctx.seed);

    std::printf("prune/distill ablation, equal student token budget\n");
    std::printf("%-24s %12.4f\n", "scratch", res.eval_scratch);
    std::printf("%-24s %12.4f\n", "distill-only", res.eval_distill_only);
    std::printf("%-24s %12.4f\n", "prune+distill", res.eval_prune_distill);
    json summary{{"command", "ablate-prune-distill"},
                 {"seed", ctx.seed},
                 {"eval_scratch", res.eval_scratch},
                 {"eval_distill_only", res.eval_distill_only},
                 {"eval_prune_distill", res.eval_prune_distill}};
    write_summary(ctx, summary);
    return 0;
}

int cmd_ablate_recovery(const RunContext& ctx) {
    auto known = common_keys();
    for (auto k : {"recover.rank", "recover.steps", "quant.group", "quant.target_bpw"})
        known.insert(k);
    ctx.config.reject_unknown(known);
    RunDirGuard guard(ctx.out_dir);
    write_resolved_config(ctx);

    auto setup = setup_from(ctx.config);
    RngStream rng(ctx.seed);
    auto corpus = Corpus::synth_toy(rng.split("corpus"), setup.docs_per_tag);
    auto mixture = stage_preset("core", setup.seq_len).mixture;

    // a briefly pre-trained float backbone to quantize
    auto irng = rng.split("init");
    auto base = Model<Scalar>::init(setup.model, irng);
    typename RmsPropMomentum<Scalar>::Hyper h;
    const int64_t pre_steps = ctx.config.get_int("train.steps", int64_t{300});
    LrSchedule sched = LrSchedule::core(pre_steps, pre_steps / 20);
    sched.peak_lr = 3e-3;
    RmsPropMomentum<Scalar> opt(base.named_params(), h, sched);
    hx::train_lm(base, opt, corpus, mixture, setup.seq_len, setup.batch, pre_steps, ctx.seed);

    const int64_t rank = ctx.config.get_int("recover.rank", int64_t{16});
    const int64_t rec_steps =
        ctx.steps_override.value_or(ctx.config.get_int("recover.steps", int64_t{200}));
    const int64_t group = ctx.config.get_int("quant.group", int64_t{16});

    auto plan4 = uniform_plan(base, 4, group);
    auto prng = rng.split("plan");
    auto plan_mixed = plan_for_target(base, ctx.config.get_double("quant.target_bpw", 3.7),
                                      group, 25, prng);
    auto plan2 = uniform_plan(base, 2, group);

    std::vector<hx::RecoveryAblationEntry> entries;
    // same data and eval streams for every plan; only the plan differs
    entries.push_back(hx::run_recovery(base, corpus, mixture, plan4, "uniform-4bit", rank,
                                       setup, rec_steps, ctx.seed ^ 0x41));
    entries.push_back(hx::run_recovery(base, corpus, mixture, plan_mixed, "mixed-3.7", rank,
                                       setup, rec_steps, ctx.seed ^ 0x41));
    entries.push_back(hx::run_recovery(base, corpus, mixture, plan2, "2bit-heavy", rank,
                                       setup, rec_steps, ctx.seed ^ 0x41));

    std::printf("%-14s %6s %10s %10s %10s %10s %10s\n", "plan", "bpw", "float", "quant",
                "recovered", "closed", "abs");
    json jentries = json::array();
    for (const auto& e : entries) {
        std::printf("%-14s %6.3f %10.4f %10.4f %10.4f %9.1f%% %10.4f\n", e.plan_name.c_str(),
                    e.bpw, e.float_loss, e.quant_loss, e.recovered_loss,
                    100.0 * e.gap_closed_fraction, e.absolute_gap_closed);
        jentries.push_back({{"plan", e.plan_name},
                            {"bpw", e.bpw},
                            {"float_loss", e.float_loss},
                            {"quant_loss", e.quant_loss},
                            {"recovered_loss", e.recovered_loss},
                            {"gap_closed_fraction", e.gap_closed_fraction},
                            {"absolute_gap_closed", e.absolute_gap_closed}});
    }
    json summary{{"command", "ablate-recovery"}, {"seed", ctx.seed}, {"plans", jentries}};
    write_summary(ctx, summary);
    return 0;
}

}  // namespace lmlab::cli
