// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "lmlab/compress/distill.hpp"
#include "lmlab/compress/lora.hpp"
#include "lmlab/compress/prune.hpp"
#include "lmlab/compress/quant.hpp"
#include "lmlab/compress/recovery.hpp"
#include "lmlab/io/model_io.hpp"

using namespace lmlab;
using Td = Tensor<double>;
namespace fs = std::filesystem;

namespace {

ModelConfig small_cfg() {
    ModelConfig c;
    c.model_dim = 16;
    c.head_dim = 4;
    c.n_query_heads = 2;
    c.n_kv_heads = 2;
    c.n_layers = 2;
    c.vocab_size = 40;
    c.ffn_hidden_dim = 24;
    c.rope_base = 1000.0;
    return c;
}

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("lmlab_compress_" + name)).string();
}

std::vector<int32_t> mod_tokens(int n, int vocab, int stride) {
    std::vector<int32_t> t(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) t[static_cast<size_t>(i)] = (i * stride + 3) % vocab;
    return t;
}

}  // namespace

TEST_CASE("relaxed mask mass stays within half a unit of the budget") {
    RngStream rng(1);
    SUBCASE("equal scores") {
        PruneMask<double> m;
        m.keep = 7;
        m.temperature = 0.3;
        m.scores.push_back(Td::filled({20}, 1.5, true));
        auto relaxed = m.relaxed(0);
        CHECK(std::abs(relaxed.value().sum() - 7.0) <= 0.5);
    }
    SUBCASE("random scores, several temperatures") {
        for (double T : {1.0, 0.2, 0.05}) {
            for (int rep = 0; rep < 5; ++rep) {
                PruneMask<double> m;
                m.keep = 9;
                m.temperature = T;
                m.scores.push_back(Td::randn({31}, rng, 2.0, true));
                auto relaxed = m.relaxed(0);
                CHECK(std::abs(relaxed.value().sum() - 9.0) <= 0.5);
                // open-interval values; float saturation can pin the extremes
                CHECK(relaxed.value().minCoeff() >= 0.0);
                CHECK(relaxed.value().maxCoeff() <= 1.0);
                if (T >= 0.2) {
                    CHECK(relaxed.value().minCoeff() > 0.0);
                    CHECK(relaxed.value().maxCoeff() < 1.0);
                }
            }
        }
    }
}

TEST_CASE("hardened mask is exactly top-k by score") {
    PruneMask<double> m;
    m.keep = 3;
    m.scores.push_back(Td::from_data({6}, {0.1, 5.0, -2.0, 4.0, 4.5, 0.0}, true));
    auto kept = m.hardened();
    REQUIRE(kept.size() == 1);
    CHECK(kept[0] == std::vector<int64_t>{1, 3, 4});
    auto hm = m.hard_mask_tensors();
    CHECK(hm[0].value().sum() == 3.0);
    CHECK(hm[0].value()[1] == 1.0);
    CHECK(hm[0].value()[2] == 0.0);
}

TEST_CASE("prune: masked big model equals pruned small model") {
    ModelConfig c = small_cfg();
    RngStream rng(3);
    auto m = Model<double>::init(c, rng);
    PruneMask<double> mask;
    mask.keep = 10;
    for (int64_t l = 0; l < c.n_layers; ++l)
        mask.scores.push_back(Td::randn({c.ffn_hidden_dim}, rng, 1.0, true));

    auto hard = mask.hard_mask_tensors();
    auto tokens = mod_tokens(8, static_cast<int>(c.vocab_size), 7);
    ForwardOptions<double> opts;
    opts.ffn_masks = &hard;
    auto masked = m.forward(tokens, opts);

    auto small = prune(m, mask);
    CHECK(small.cfg.ffn_hidden_dim == 10);
    auto pruned = small.forward(tokens);
    CHECK((masked.value() - pruned.value()).abs().maxCoeff() < 1e-6);

    // parameter count drops by removed * 3 * model_dim per layer (gate and up
    // columns plus down rows)
    int64_t big_total = 0, small_total = 0;
    for (const auto& [n, p] : m.named_params()) big_total += p.numel();
    for (const auto& [n, p] : small.named_params()) small_total += p.numel();
    const int64_t removed = c.ffn_hidden_dim - 10;
    CHECK(big_total - small_total == c.n_layers * removed * 3 * c.model_dim);
}

TEST_CASE("prune with k == hidden_dim is byte-identical") {
    ModelConfig c = small_cfg();
    RngStream rng(4);
    auto m = Model<double>::init(c, rng);
    PruneMask<double> mask;
    mask.keep = c.ffn_hidden_dim;
    for (int64_t l = 0; l < c.n_layers; ++l)
        mask.scores.push_back(Td::randn({c.ffn_hidden_dim}, rng, 1.0, true));
    auto same = prune(m, mask);
    for (size_t i = 0; i < m.named_params().size(); ++i) {
        const auto& a = m.named_params()[i].second;
        const auto& b = same.named_params()[i].second;
        REQUIRE(a.numel() == b.numel());
        for (int64_t j = 0; j < a.numel(); ++j) CHECK(a.value()[j] == b.value()[j]);
    }
}

TEST_CASE("prune rejects mismatched masks and bad keep counts") {
    ModelConfig c = small_cfg();
    RngStream rng(5);
    auto m = Model<double>::init(c, rng);
    PruneMask<double> mask;
    mask.keep = 4;
    mask.scores.push_back(Td::randn({c.ffn_hidden_dim}, rng, 1.0, true));  // one layer only
    CHECK_THROWS_AS((void)prune(m, mask), ShapeError);

    auto batches = [&](int64_t) { return std::vector<std::vector<int32_t>>{}; };
    RngStream r2(6);
    CHECK_THROWS_AS((void)learn_mask(m, batches, c.ffn_hidden_dim + 1, {}, r2), ConfigError);
}

TEST_CASE("learned mask recovers planted structure") {
    ModelConfig c = small_cfg();
    c.n_layers = 1;
    c.ffn_hidden_dim = 32;
    const int64_t k = 10;
    RngStream rng(7);
    auto m = Model<double>::init(c, rng);

    // training data: short cyclic sequences
    std::vector<std::vector<int32_t>> rows;
    for (int i = 0; i < 4; ++i)
        rows.push_back(mod_tokens(24, static_cast<int>(c.vocab_size), 3 + i));

    // give units 0..k-1 genuine utility: pre-train with only them active
    std::vector<Td> planted;
    {
        auto pm = Td::zeros({c.ffn_hidden_dim});
        for (int64_t i = 0; i < k; ++i) pm.value_mut()[i] = 1.0;
        planted.push_back(pm);
    }
    typename RmsPropMomentum<double>::Hyper h;
    h.weight_decay = 0.0;
    RmsPropMomentum<double> opt(m.named_params(), h, LrSchedule::constant(0.05));
    for (int step = 0; step < 150; ++step) {
        m.zero_grads();
        ForwardOptions<double> opts;
        opts.ffn_masks = &planted;
        Tensor<double> loss;
        for (const auto& row : rows) {
            auto l = lm_loss_graph(m, std::span<const int32_t>(row), opts);
            loss = loss.defined() ? add(loss, l) : l;
        }
        backward(scale(loss, 0.25));
        opt.step();
    }

    MaskTrainConfig mc;
    mc.steps = 150;
    mc.lr = 0.1;
    auto next_batch = [&](int64_t) { return rows; };
    RngStream mask_rng(8);
    auto mask = learn_mask(m, next_batch, k, mc, mask_rng);
    auto kept = mask.hardened();
    int64_t overlap = 0;
    for (int64_t i : kept[0])
        if (i < k) ++overlap;
    INFO("recovered " << overlap << " of " << k << " planted units");
    CHECK(overlap >= static_cast<int64_t>(0.9 * double(k)));
}

TEST_CASE("distillation targets: convex combination of teacher top-1 and truth") {
    auto teacher = Td::zeros({1, 10});
    teacher.value_mut()[7] = 3.0;  // argmax at 7
    std::vector<int32_t> truth{5};
    auto t = distill_targets(std::span<const int32_t>(truth), teacher, 0.9);
    CHECK(t.value()[7] == doctest::Approx(0.9));
    CHECK(t.value()[5] == doctest::Approx(0.1));
    CHECK(t.value().sum() == doctest::Approx(1.0));

    // teacher agrees with the label: probability mass collapses to one hot
    std::vector<int32_t> same{7};
    auto t2 = distill_targets(std::span<const int32_t>(same), teacher, 0.9);
    CHECK(t2.value()[7] == doctest::Approx(1.0));

    CHECK_THROWS_AS((void)distill_targets(std::span<const int32_t>(truth), teacher, 1.5),
                    ConfigError);
}

TEST_CASE("distillation with zero teacher weight equals plain cross-entropy") {
    RngStream rng(9);
    auto student = Td::randn({6, 12}, rng, 1.0, true);
    auto teacher = Td::randn({6, 12}, rng, 1.0);
    std::vector<int32_t> labels{0, 3, 7, 11, 5, 2};
    auto a = distill_loss(student, std::span<const int32_t>(labels), teacher, 0.0);
    auto b = cross_entropy(student, std::span<const int32_t>(labels));
    CHECK(std::abs(a.item() - b.item()) < 1e-7);
}

TEST_CASE("palettization: exactness, ordering, and monotone k-means objective") {
    RngStream rng(10);
    SUBCASE("constant matrix reconstructs exactly with a single value") {
        auto w = Td::filled({8, 32}, 1.25);
        auto rng1 = rng.split("a");
        auto pt = palettize(w, 4, 16, GroupAxis::Columns, 25, rng1);
        CHECK(pt.total_sse() == 0.0);
        auto rec = pt.reconstruct();
        for (int64_t i = 0; i < rec.size(); ++i) CHECK(rec.data()[i] == 1.25);
    }
    SUBCASE("group with <= 16 distinct values reconstructs exactly") {
        auto w = Td::zeros({16, 16});
        for (int64_t i = 0; i < w.numel(); ++i)
            w.value_mut()[i] = static_cast<double>((i * 13) % 16) * 0.37 - 1.1;
        auto rng1 = rng.split("b");
        auto pt = palettize(w, 4, 16, GroupAxis::Columns, 25, rng1);
        CHECK(pt.total_sse() == 0.0);
        auto rec = pt.reconstruct();
        for (int64_t i = 0; i < w.numel(); ++i) CHECK(rec.data()[i] == w.value()[i]);
    }
    SUBCASE("4-bit error is small and far below 2-bit error on Gaussian weights") {
        auto w = Td::randn({64, 64}, rng, 1.0);
        auto r4 = rng.split("c4"), r2 = rng.split("c2");
        auto p4 = palettize(w, 4, 16, GroupAxis::Columns, 25, r4);
        auto p2 = palettize(w, 2, 16, GroupAxis::Columns, 25, r2);
        // relative squared Frobenius error; the 2-vs-4-bit ordering is the
        // load-bearing assertion
        const double fro2 = w.value().square().sum();
        const double e4 = p4.total_sse() / fro2;
        const double e2 = p2.total_sse() / fro2;
        INFO("relative squared errors: 4-bit " << e4 << ", 2-bit " << e2);
        CHECK(e4 < 0.05);
        CHECK(p2.total_sse() >= 10.0 * p4.total_sse());
        for (uint8_t idx : p4.indices) CHECK(idx < 16);
        for (uint8_t idx : p2.indices) CHECK(idx < 4);
    }
    SUBCASE("within-group squared error is non-increasing over k-means iterations") {
        auto w = Td::randn({32, 48}, rng, 2.0);
        auto r = rng.split("d");
        auto pt = palettize(w, 4, 16, GroupAxis::Columns, 25, r);
        for (const auto& trace : pt.sse_per_iter)
            for (size_t i = 1; i < trace.size(); ++i)
                CHECK(trace[i] <= trace[i - 1] + 1e-9);
    }
    SUBCASE("row grouping and ragged final group") {
        auto w = Td::randn({20, 8}, rng, 1.0);  // 20 rows -> groups of 16 + ragged 4
        auto r = rng.split("e");
        auto pt = palettize(w, 4, 16, GroupAxis::Rows, 25, r);
        CHECK(pt.n_groups() == 2);
        auto rec = pt.reconstruct();
        CHECK(rec.rows() == 20);
        CHECK(rec.cols() == 8);
    }
}

TEST_CASE("int8 per-channel quantization of the embedding") {
    RngStream rng(11);
    auto w = Td::randn({40, 16}, rng, 0.5);
    auto q = quantize_int8_per_channel(w);
    auto rec = q.reconstruct();
    ConstMatMap<double> wm(w.value().data(), 40, 16);
    const double err = (rec - wm).cwiseAbs().maxCoeff();
    // max error is half a step per channel
    double max_step = 0;
    for (double s : q.scale) max_step = std::max(max_step, s);
    CHECK(err <= 0.5 * max_step + 1e-12);

    auto flat = Td::filled({4, 4}, 0.7);
    auto qf = quantize_int8_per_channel(flat);
    auto recf = qf.reconstruct();
    for (int64_t i = 0; i < 16; ++i) CHECK(recf.data()[i] == doctest::Approx(0.7));
}

TEST_CASE("effective bpw: bit-count oracle on a uniform 256x256 model") {
    // every projection is 256x256 so each carries (262144 + 4096) / 65536 bits
    ModelConfig c;
    c.model_dim = 256;
    c.head_dim = 64;
    c.n_query_heads = 4;
    c.n_kv_heads = 4;
    c.n_layers = 1;
    c.vocab_size = 64;
    c.ffn_hidden_dim = 256;
    RngStream rng(12);
    auto m = Model<double>::init(c, rng);
    auto plan = uniform_plan(m, 4, 16);
    auto b = effective_bpw_breakdown(plan, m);
    CHECK(b.palettized == doctest::Approx(4.0625).epsilon(1e-12));
    CHECK(b.palettized > 4.0);   // index bits alone are exactly 4
    CHECK(b.palettized < 4.07);
    CHECK(b.embedding == doctest::Approx(8.0 + 256.0 * 32.0 / double(64 * 256)));

    QuantPlan missing = plan;
    missing.schemes.erase("layers.0.wq");
    CHECK_THROWS_WITH_AS((void)effective_bpw(missing, m), doctest::Contains("layers.0.wq"),
                         ConfigError);
}

TEST_CASE("mixed-precision planner hits the production bpw target") {
    ModelConfig c;
    c.model_dim = 64;
    c.head_dim = 16;
    c.n_query_heads = 4;
    c.n_kv_heads = 2;
    c.n_layers = 6;
    c.vocab_size = 258;
    c.ffn_hidden_dim = 256;
    RngStream rng(13);
    auto m = Model<double>::init(c, rng);
    auto prng = rng.split("plan");
    auto plan = plan_for_target(m, 3.7, 16, 10, prng);
    const double bpw = effective_bpw(plan, m);
    INFO("planned bpw " << bpw);
    CHECK(bpw <= 3.75);
    CHECK(bpw >= 3.65);
    int n2 = 0, n4 = 0;
    for (const auto& [name, s] : plan.schemes) {
        if (s.kind == TensorScheme::Kind::Pal2) ++n2;
        if (s.kind == TensorScheme::Kind::Pal4) ++n4;
    }
    CHECK(n2 > 0);  // a real mix
    CHECK(n4 > 0);
}

TEST_CASE("quantize + dequantize round trip and checkpoint io") {
    ModelConfig c = small_cfg();
    RngStream rng(14);
    auto m = Model<double>::init(c, rng);
    auto plan = uniform_plan(m, 4, 8);
    auto qrng = rng.split("q");
    auto qm = quantize(m, plan, 10, qrng);

    auto drng = rng.split("d");
    auto deq = qm.dequantize(drng);
    for (const auto& [name, p] : deq.named_params()) CHECK(!p.requires_grad());
    // reconstruction is close to the original
    const auto& orig = m.param("layers.0.wq");
    const auto& rec = deq.param("layers.0.wq");
    const double rel = std::sqrt((orig.value() - rec.value()).square().sum() /
                                 orig.value().square().sum());
    CHECK(rel < 0.1);
    // norm gains pass through untouched
    const auto& g1 = m.param("layers.0.attn_norm");
    const auto& g2 = deq.param("layers.0.attn_norm");
    for (int64_t i = 0; i < g1.numel(); ++i) CHECK(g1.value()[i] == g2.value()[i]);

    const auto path = temp_path("quant.ckpt");
    save_quantized(path, qm);
    auto loaded = load_quantized<double>(path, c);
    REQUIRE(loaded.palettized.size() == qm.palettized.size());
    for (const auto& [name, pt] : qm.palettized) {
        const auto& lp = loaded.palettized.at(name);
        CHECK(lp.indices == pt.indices);
        REQUIRE(lp.luts.size() == pt.luts.size());
        for (size_t g = 0; g < pt.luts.size(); ++g)
            for (size_t i = 0; i < pt.luts[g].size(); ++i)
                CHECK(static_cast<float>(lp.luts[g][i]) ==
                      static_cast<float>(pt.luts[g][i]));
    }
    CHECK(loaded.int8.at("embed").q == qm.int8.at("embed").q);
    std::remove(path.c_str());
}

TEST_CASE("lora: wrapped set, zero-init identity, alpha=0 bit-exactness") {
    ModelConfig c = small_cfg();
    RngStream rng(15);
    auto m = Model<double>::init(c, rng);
    auto arng = rng.split("a");
    auto adapter = LoraAdapter<double>::init(c, 4, 4.0, arng);
    CHECK(adapter.pairs().size() == static_cast<size_t>(7 * c.n_layers));
    for (const auto& [key, p] : adapter.pairs()) {
        CHECK(p.B.value().abs().maxCoeff() == 0.0);  // identity delta at init
        CHECK(p.A.dim(1) == 4);
    }

    auto tokens = mod_tokens(6, static_cast<int>(c.vocab_size), 5);
    auto base = m.forward(tokens);
    ForwardOptions<double> with;
    with.deltas = &adapter;
    auto adapted = m.forward(tokens, with);
    for (int64_t i = 0; i < base.numel(); ++i)
        CHECK(base.value()[i] == adapted.value()[i]);  // B = 0 keeps outputs equal

    // train-like perturbation of B; alpha=0 still bit-exact base
    for (auto& [key, p] : adapter.pairs_mut()) p.B.value_mut().setConstant(0.3);
    adapter.alpha = 0.0;
    auto off = m.forward(tokens, with);
    for (int64_t i = 0; i < base.numel(); ++i) CHECK(base.value()[i] == off.value()[i]);

    adapter.alpha = 4.0;
    auto on = m.forward(tokens, with);
    CHECK((base.value() - on.value()).abs().maxCoeff() > 0.0);
}

TEST_CASE("adapter save/load at 16-bit width") {
    ModelConfig c = small_cfg();
    RngStream rng(16);
    auto arng = rng.split("a");
    auto adapter = LoraAdapter<double>::init(c, 8, 16.0, arng);
    for (auto& [key, p] : adapter.pairs_mut()) p.B.value_mut().setRandom();
    const auto path = temp_path("adapter.ckpt");
    save_adapter(path, adapter);
    auto loaded = load_adapter<double>(path, c);
    CHECK(loaded.rank == 8);
    CHECK(loaded.alpha == 16.0);
    const auto& a0 = adapter.pairs().at("0.wq").A;
    const auto& l0 = loaded.pairs().at("0.wq").A;
    for (int64_t i = 0; i < a0.numel(); ++i) {
        const double orig = a0.value()[i];
        const double rt = l0.value()[i];
        CHECK(rt == doctest::Approx(orig).epsilon(1e-3));  // half-precision rounding
        CHECK(static_cast<double>(half_to_float(float_to_half(static_cast<float>(orig)))) ==
              rt);  // exactly the 16-bit rounded value
    }
    std::remove(path.c_str());
}

TEST_CASE("recovery adapter training: frozen base, adapter-only gradients") {
    ModelConfig c = small_cfg();
    c.n_layers = 1;
    RngStream rng(17);
    auto m = Model<double>::init(c, rng);
    auto plan = uniform_plan(m, 2, 8);  // aggressive quantization, visible gap
    auto qrng = rng.split("q");
    auto qm = quantize(m, plan, 10, qrng);

    std::vector<std::vector<int32_t>> rows;
    for (int i = 0; i < 3; ++i) rows.push_back(mod_tokens(20, static_cast<int>(c.vocab_size), 3 + i));
    auto next_batch = [&](int64_t) { return rows; };
    RecoveryTrainConfig rc;
    rc.steps = 5;
    RngStream rrng(18);
    auto res = train_recovery_adapter(m, qm, 4, next_batch, rows, rc, rrng);
    // adapter actually moved
    double bmax = 0;
    for (const auto& [key, p] : res.adapter.pairs())
        bmax = std::max(bmax, p.B.value().abs().maxCoeff());
    CHECK(bmax > 0.0);
}

TEST_CASE("model checkpoint round-trip and error paths") {
    ModelConfig c = small_cfg();
    RngStream rng(19);
    auto m = Model<double>::init(c, rng);
    const auto path = temp_path("model.ckpt");
    save_model(path, m);
    auto m2 = Model<double>::init(c, rng);  // different weights
    load_model_into(path, m2);
    for (size_t i = 0; i < m.named_params().size(); ++i) {
        const auto& a = m.named_params()[i].second;
        const auto& b = m2.named_params()[i].second;
        for (int64_t j = 0; j < a.numel(); ++j) CHECK(a.value()[j] == b.value()[j]);
    }
    // shape mismatch
    ModelConfig c2 = c;
    c2.ffn_hidden_dim += 4;
    auto m3 = Model<double>::init(c2, rng);
    CHECK_THROWS_AS(load_model_into(path, m3), CheckpointError);
    std::remove(path.c_str());

    // bad magic
    const auto bad = temp_path("bad.ckpt");
    {
        std::ofstream out(bad, std::ios::binary);
        out << "NOPE garbage";
    }
    CHECK_THROWS_AS((void)read_checkpoint(bad), CheckpointError);
    std::remove(bad.c_str());
}

TEST_CASE("training checkpoint: optimizer state and step counter round-trip") {
    ModelConfig c = small_cfg();
    RngStream rng(20);
    auto m = Model<double>::init(c, rng);
    typename RmsPropMomentum<double>::Hyper h;
    RmsPropMomentum<double> opt(m.named_params(), h, LrSchedule::core(100, 10));
    auto tokens = mod_tokens(12, static_cast<int>(c.vocab_size), 5);
    for (int s = 0; s < 3; ++s) {
        m.zero_grads();
        backward(lm_loss_graph(m, std::span<const int32_t>(tokens)));
        opt.step();
    }
    const auto path = temp_path("train.ckpt");
    save_training_checkpoint(path, m, opt);

    auto m2 = Model<double>::init(c, rng);
    RmsPropMomentum<double> opt2(m2.named_params(), h, LrSchedule::core(100, 10));
    const int64_t step = load_training_checkpoint(path, m2, opt2);
    CHECK(step == 3);
    CHECK(opt2.step_count() == 3);

    // both continue identically
    for (int s = 0; s < 2; ++s) {
        m.zero_grads();
        backward(lm_loss_graph(m, std::span<const int32_t>(tokens)));
        opt.step();
        m2.zero_grads();
        backward(lm_loss_graph(m2, std::span<const int32_t>(tokens)));
        opt2.step();
    }
    for (size_t i = 0; i < m.named_params().size(); ++i) {
        const auto& a = m.named_params()[i].second;
        const auto& b = m2.named_params()[i].second;
        for (int64_t j = 0; j < a.numel(); ++j) CHECK(a.value()[j] == b.value()[j]);
    }
    std::remove(path.c_str());
}
