// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// lmlab: desk-scale language-model lifecycle tool. One subcommand per stage;
// every run owns an output directory, streams JSONL metrics, and is
// reproducible from (config, seed).
#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include "commands.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitCheckpoint = 4;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale language model training, compression and alignment lab"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::optional<uint64_t> seed_flag;
    std::optional<std::string> resume;
    std::optional<int64_t> steps_flag;
    std::string benchmark_path, corpus_path;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run config file (key = value lines)");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed_flag, "seed override");
        cmd->add_option("--resume", resume, "resume from a state checkpoint");
        cmd->add_option("--steps", steps_flag, "step-count override");
    };

    using Handler = int (*)(const lmlab::cli::RunContext&);
    struct Sub {
        const char* name;
        const char* help;
        Handler handler;
    };
    const Sub subs[] = {
        {"pretrain", "staged pre-training (core | continued | context)",
         lmlab::cli::cmd_pretrain},
        {"sft", "supervised fine-tuning on demonstrations", lmlab::cli::cmd_sft},
        {"train-reward", "train the multi-head reward model", lmlab::cli::cmd_train_reward},
        {"rlhf", "online RL (and the multi-round flywheel with rlhf.rounds > 1)",
         lmlab::cli::cmd_rlhf},
        {"distill", "train a student against a teacher's top-1 targets",
         lmlab::cli::cmd_distill},
        {"prune", "learn a feed-forward mask and emit the pruned model",
         lmlab::cli::cmd_prune},
        {"quantize", "palettize a checkpoint (uniform or mixed precision)",
         lmlab::cli::cmd_quantize},
        {"recover", "train an accuracy-recovery adapter over a quantized model",
         lmlab::cli::cmd_recover},
        {"committee-rs", "committee rejection sampling into an SFT dataset",
         lmlab::cli::cmd_committee_rs},
        {"sample", "decode from a checkpoint", lmlab::cli::cmd_sample},
        {"eval", "per-component held-out losses", lmlab::cli::cmd_eval},
        {"ablate-recipe", "optimizer recipe vs AdamW baseline",
         lmlab::cli::cmd_ablate_recipe},
        {"ablate-prune-distill", "scratch vs distill vs prune+distill at equal budget",
         lmlab::cli::cmd_ablate_prune_distill},
        {"ablate-recovery", "recovery adapters across quantization plans",
         lmlab::cli::cmd_ablate_recovery},
    };
    std::map<std::string, Handler> handlers;
    for (const auto& s : subs) {
        auto* cmd = app.add_subcommand(s.name, s.help);
        add_common(cmd);
        handlers[s.name] = s.handler;
    }
    auto* decon = app.add_subcommand("decontaminate",
                                     "drop corpus documents colliding with a benchmark");
    add_common(decon);
    decon->add_option("--benchmark", benchmark_path, "benchmark corpus (jsonl)")->required();
    decon->add_option("--corpus", corpus_path, "training corpus (jsonl)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        lmlab::cli::RunContext ctx;
        if (!config_path.empty()) ctx.config = lmlab::RunConfig::parse_file(config_path);
        ctx.seed = seed_flag.value_or(
            static_cast<uint64_t>(ctx.config.get_int("seed", int64_t{0})));
        ctx.out_dir = out_dir;
        ctx.resume = resume;
        ctx.steps_override = steps_flag;

        for (auto* sub : app.get_subcommands()) {
            if (sub->get_name() == "decontaminate")
                return lmlab::cli::cmd_decontaminate(ctx, benchmark_path, corpus_path);
            return handlers.at(sub->get_name())(ctx);
        }
        return kExitConfig;
    } catch (const lmlab::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const lmlab::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kExitNumerical;
    } catch (const lmlab::CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return kExitCheckpoint;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
