// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "common.hpp"

namespace lmlab::cli {

int cmd_pretrain(const RunContext& ctx);
int cmd_sft(const RunContext& ctx);
int cmd_train_reward(const RunContext& ctx);
int cmd_rlhf(const RunContext& ctx);
int cmd_distill(const RunContext& ctx);
int cmd_prune(const RunContext& ctx);
int cmd_quantize(const RunContext& ctx);
int cmd_recover(const RunContext& ctx);
int cmd_committee_rs(const RunContext& ctx);
int cmd_sample(const RunContext& ctx);
int cmd_eval(const RunContext& ctx);
int cmd_decontaminate(const RunContext& ctx, const std::string& benchmark_path,
                      const std::string& corpus_path);
int cmd_ablate_recipe(const RunContext& ctx);
int cmd_ablate_prune_distill(const RunContext& ctx);
int cmd_ablate_recovery(const RunContext& ctx);

}  // namespace lmlab::cli
