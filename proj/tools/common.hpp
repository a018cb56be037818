// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared plumbing for the command-line tools: run-directory guard (advisory
// lock + resolved config), builders from config keys, toy demo/prompt
// synthesis, and the staged pre-training loop used by several commands.
#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lmlab/align/sft.hpp"
#include "lmlab/compress/distill.hpp"
#include "lmlab/data/corpus.hpp"
#include "lmlab/harness/experiments.hpp"
#include "lmlab/data/tokenizer.hpp"
#include "lmlab/io/config_file.hpp"
#include "lmlab/io/metrics.hpp"
#include "lmlab/io/model_io.hpp"
#include "lmlab/model/model.hpp"
#include "lmlab/optim/optimizer.hpp"

namespace lmlab::cli {

using Scalar = float;  // training runs in single precision

struct RunContext {
    RunConfig config;
    std::string out_dir;
    uint64_t seed = 0;
    std::optional<std::string> resume;
    std::optional<int64_t> steps_override;
};

// One command owns its output directory for the duration of the run.
class RunDirGuard {
public:
    explicit RunDirGuard(const std::string& out_dir) : lock_path_(out_dir + "/.lock") {
        std::filesystem::create_directories(out_dir);
        if (std::filesystem::exists(lock_path_))
            throw ConfigError("output directory " + out_dir +
                              " is locked by another run (stale? remove .lock)");
        std::ofstream lock(lock_path_);
        lock << "pid " << ::getpid() << "\n";
    }
    ~RunDirGuard() { std::filesystem::remove(lock_path_); }
    RunDirGuard(const RunDirGuard&) = delete;
    RunDirGuard& operator=(const RunDirGuard&) = delete;

private:
    std::string lock_path_;
};

inline void write_resolved_config(const RunContext& ctx) {
    std::ofstream out(ctx.out_dir + "/resolved_config.txt");
    out << ctx.config.resolved_text();
    out << "seed = " << ctx.seed << "\n";
}

// --- config schema -----------------------------------------------------------

inline std::set<std::string> model_keys() {
    return {"model.dim",       "model.head_dim", "model.q_heads", "model.kv_heads",
            "model.layers",    "model.vocab",    "model.ffn_hidden", "model.rope_base",
            "model.max_seq_len", "model.rms_eps", "init.hidden_scale", "init.embed_std"};
}

inline std::set<std::string> data_keys() {
    return {"data.docs_per_tag", "data.seq_len", "data.batch"};
}

inline std::set<std::string> optim_keys() {
    return {"optim.name",       "optim.peak_lr",  "optim.warmup",     "optim.total_steps",
            "optim.final_fraction", "optim.wd",   "optim.beta1",      "optim.beta2",
            "optim.eps",        "optim.global_clip", "optim.block_clip", "optim.mu_base_dim"};
}

inline std::set<std::string> common_keys() {
    auto k = model_keys();
    for (auto& s : data_keys()) k.insert(s);
    for (auto& s : optim_keys()) k.insert(s);
    k.insert("seed");
    k.insert("stage");
    k.insert("train.steps");
    k.insert("train.dropout");
    return k;
}

inline ModelConfig model_config_from(const RunConfig& c) {
    ModelConfig m;
    m.model_dim = c.get_int("model.dim", int64_t{64});
    m.head_dim = c.get_int("model.head_dim", int64_t{16});
    m.n_query_heads = c.get_int("model.q_heads", int64_t{4});
    m.n_kv_heads = c.get_int("model.kv_heads", int64_t{2});
    m.n_layers = c.get_int("model.layers", int64_t{4});
    m.vocab_size = c.get_int("model.vocab", ByteTokenizer::vocab_size);
    m.ffn_hidden_dim = c.get_int("model.ffn_hidden", int64_t{128});
    m.rope_base = c.get_double("model.rope_base", 500000.0);
    m.max_seq_len = c.get_int("model.max_seq_len", int64_t{512});
    m.rms_eps = c.get_double("model.rms_eps", 1e-5);
    m.validate();
    return m;
}

inline InitPolicy init_policy_from(const RunConfig& c) {
    InitPolicy p;
    p.hidden_std_scale = c.get_double("init.hidden_scale", 1.0);
    p.embed_std = c.get_double("init.embed_std", 0.02);
    return p;
}

// Stage-aware optimizer defaults: core peak 0.01 to 0.005 of peak; continued
// and context stages use 3e-4 to 0.001 of peak with decay 1e-5.
inline std::unique_ptr<Optimizer<Scalar>> optimizer_from(
    const RunConfig& c, const std::string& stage, int64_t total_steps,
    std::vector<std::pair<std::string, Tensor<Scalar>>> params, int64_t model_dim) {
    const std::string name = c.get_string("optim.name", std::string("rmsprop"));
    const bool core = stage == "core" || stage.empty();
    LrSchedule sched;
    sched.peak_lr = c.get_double("optim.peak_lr", core ? 0.01 : 3e-4);
    sched.warmup_steps = c.get_int("optim.warmup", core ? total_steps / 20 : total_steps / 50);
    sched.total_steps = total_steps;
    sched.final_fraction = c.get_double("optim.final_fraction", core ? 0.005 : 0.001);

    if (name == "adamw") {
        typename AdamW<Scalar>::Hyper h;
        h.beta1 = c.get_double("optim.beta1", 0.9);
        h.beta2 = c.get_double("optim.beta2", 0.95);
        h.eps = c.get_double("optim.eps", 1e-15);
        h.weight_decay = c.get_double("optim.wd", 1e-4);
        h.global_clip = c.get_double("optim.global_clip", 1.0);
        // baseline decays the learning rate to 1e-4 of peak
        sched.final_fraction = c.get_double("optim.final_fraction", 1e-4);
        return std::make_unique<AdamW<Scalar>>(std::move(params), h, sched);
    }
    if (name != "rmsprop")
        throw ConfigError("optim.name must be rmsprop or adamw, got '" + name + "'");
    typename RmsPropMomentum<Scalar>::Hyper h;
    h.beta1 = c.get_double("optim.beta1", 0.95);
    h.beta2 = c.get_double("optim.beta2", 0.95);
    h.eps = c.get_double("optim.eps", 1e-30);
    h.weight_decay = c.get_double("optim.wd", core ? 3.16e-4 : 1e-5);
    h.global_clip = c.get_double("optim.global_clip", 1.0);
    h.per_block_clip = c.get_double("optim.block_clip", 1.0);
    auto mu = MuParamPolicy::for_width(model_dim, c.get_int("optim.mu_base_dim", model_dim));
    return std::make_unique<RmsPropMomentum<Scalar>>(std::move(params), h, sched, mu);
}

// --- toy task synthesis -------------------------------------------------------

// Arithmetic demonstrations: prompt "a+b=", response digits + separator.
inline std::vector<DemoExample> make_arith_demos(int n, RngStream& rng) {
    std::vector<DemoExample> out;
    for (int i = 0; i < n; ++i) {
        const int64_t a = rng.uniform_int(90) + 10;
        const int64_t b = rng.uniform_int(90) + 10;
        DemoExample ex;
        for (char ch : std::to_string(a) + "+" + std::to_string(b) + "=")
            ex.prompt.push_back(static_cast<unsigned char>(ch));
        for (char ch : std::to_string(a + b)) ex.response.push_back(static_cast<unsigned char>(ch));
        ex.response.push_back(ByteTokenizer::sep_token);
        out.push_back(std::move(ex));
    }
    return out;
}

// Short byte prompts for rollout-style commands.
inline std::vector<std::vector<int32_t>> make_prompts(int n, RngStream& rng) {
    std::vector<std::vector<int32_t>> out;
    for (int i = 0; i < n; ++i) {
        std::vector<int32_t> p;
        const int len = 2 + static_cast<int>(rng.uniform_int(3));
        for (int j = 0; j < len; ++j)
            p.push_back(static_cast<int32_t>('a' + rng.uniform_int(26)));
        out.push_back(std::move(p));
    }
    return out;
}

using lmlab::harness::eval_rows_for_tag;

template <class S>
double eval_loss_rows(const Model<S>& m, const std::vector<std::vector<int32_t>>& rows) {
    double total = 0;
    for (const auto& r : rows) total += lm_loss(m, std::span<const int32_t>(r));
    return rows.empty() ? 0.0 : total / static_cast<double>(rows.size());
}

// --- staged pre-training loop --------------------------------------------------

struct PretrainResult {
    double final_loss = 0;
    int64_t steps_done = 0;
};

// Batches are a pure function of (seed, step), so an interrupted run resumed
// from its checkpoint replays the identical stream.
template <class TeacherFn>
PretrainResult pretrain_loop(Model<Scalar>& model, Optimizer<Scalar>& opt,
                             const Corpus& corpus, const MixtureSpec& mixture,
                             int64_t seq_len, int64_t batch, int64_t total_steps,
                             uint64_t seed, double dropout, MetricsWriter* metrics,
                             const std::string& stage, TeacherFn&& teacher_logits_fn) {
    RngStream root(seed);
    PretrainResult res;
    const auto t0 = std::chrono::steady_clock::now();
    int64_t tokens_seen = opt.step_count() * batch * (seq_len - 1);
    for (int64_t step = opt.step_count(); step < total_steps; ++step) {
        auto batch_rng = root.split("batch").split(static_cast<uint64_t>(step));
        auto rows = sample_batch(corpus, mixture, seq_len, batch, batch_rng).rows;
        model.zero_grads();
        Tensor<Scalar> loss;
        auto drop_rng = root.split("dropout").split(static_cast<uint64_t>(step));
        for (const auto& row : rows) {
            ForwardOptions<Scalar> opts;
            if (dropout > 0) {
                opts.dropout_rate = dropout;
                opts.dropout_rng = &drop_rng;
            }
            std::span<const int32_t> ts(row);
            std::vector<int32_t> inputs(ts.begin(), ts.end() - 1);
            std::vector<int32_t> targets(ts.begin() + 1, ts.end());
            auto logits = model.forward(std::span<const int32_t>(inputs), opts);
            Tensor<Scalar> l;
            auto teacher = teacher_logits_fn(inputs);
            if (teacher.defined()) {
                l = distill_loss(logits, std::span<const int32_t>(targets), teacher,
                                 Scalar(0.9));
            } else {
                l = cross_entropy(logits, std::span<const int32_t>(targets));
            }
            loss = loss.defined() ? add(loss, l) : l;
        }
        loss = scale(loss, Scalar(1.0 / double(rows.size())));
        backward(loss);
        if (!std::isfinite(static_cast<double>(loss.item())))
            throw NumericalError("pretrain: non-finite loss at step " + std::to_string(step));
        opt.step();
        tokens_seen += batch * (seq_len - 1);
        res.final_loss = static_cast<double>(loss.item());
        res.steps_done = step + 1;
        if (metrics) {
            MetricsRecord rec;
            rec.step = step;
            rec.stage = stage;
            rec.loss = res.final_loss;
            rec.lr = opt.last_lr();
            rec.grad_norm = opt.diagnostics().global_grad_norm;
            rec.tokens_seen = tokens_seen;
            rec.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
            metrics->write(rec);
        }
    }
    return res;
}

inline Tensor<Scalar> no_teacher(const std::vector<int32_t>&) { return {}; }

}  // namespace lmlab::cli
