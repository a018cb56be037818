// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer: pre-norm residual blocks with grouped-query
// attention (per-head RMS q/k normalization before rotary embedding), SwiGLU
// feed-forward, and a single embedding matrix shared between input lookup and
// output unembedding.
#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lmlab/core/rng.hpp"
#include "lmlab/model/config.hpp"
#include "lmlab/tensor/tensor.hpp"

namespace lmlab {

// Additive low-rank patches for the linear projections (the adapter hook).
template <class S>
struct LinearDeltaProvider {
    virtual ~LinearDeltaProvider() = default;
    // Returns an undefined tensor when the projection is not wrapped.
    virtual Tensor<S> delta(int64_t layer, const std::string& proj, const Tensor<S>& x) = 0;
};

template <class S>
struct ForwardOptions {
    double dropout_rate = 0.0;           // applied to attention and FFN outputs
    RngStream* dropout_rng = nullptr;    // required when dropout_rate > 0
    const std::vector<Tensor<S>>* ffn_masks = nullptr;  // per layer, shape (ffn_hidden)
    LinearDeltaProvider<S>* deltas = nullptr;
};

template <class S>
struct LayerWeights {
    Tensor<S> attn_norm, q_gain, k_gain;
    Tensor<S> wq, wk, wv, wo;
    Tensor<S> ffn_norm, w_gate, w_up, w_down;
};

struct InitPolicy {
    double hidden_std_scale = 1.0;  // hidden linear std = scale / sqrt(fan_in)
    double embed_std = 0.02;
};

// Append-only per-layer key/value store for incremental decoding. Keys are
// cached after q/k normalization and rotation, so cached rows never change.
template <class S>
struct KvCache {
    std::vector<MatRM<S>> k, v;  // (positions, kv_width)
    int64_t length = 0;
};

template <class S>
class Model {
public:
    ModelConfig cfg;
    Tensor<S> embedding;  // (vocab, model_dim); also the unembedding
    std::vector<LayerWeights<S>> layers;
    Tensor<S> final_norm;

    static Model init(const ModelConfig& cfg, RngStream& rng, const InitPolicy& pol = {}) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        auto hidden = [&](int64_t in, int64_t out) {
            return Tensor<S>::randn({in, out}, rng,
                                    static_cast<S>(pol.hidden_std_scale / std::sqrt(double(in))),
                                    true);
        };
        m.embedding = Tensor<S>::randn({cfg.vocab_size, cfg.model_dim}, rng,
                                       static_cast<S>(pol.embed_std), true);
        for (int64_t l = 0; l < cfg.n_layers; ++l) {
            LayerWeights<S> w;
            w.attn_norm = Tensor<S>::ones({cfg.model_dim}, true);
            w.q_gain = Tensor<S>::ones({cfg.attention_width()}, true);
            w.k_gain = Tensor<S>::ones({cfg.kv_width()}, true);
            w.wq = hidden(cfg.model_dim, cfg.attention_width());
            w.wk = hidden(cfg.model_dim, cfg.kv_width());
            w.wv = hidden(cfg.model_dim, cfg.kv_width());
            w.wo = hidden(cfg.attention_width(), cfg.model_dim);
            w.ffn_norm = Tensor<S>::ones({cfg.model_dim}, true);
            w.w_gate = hidden(cfg.model_dim, cfg.ffn_hidden_dim);
            w.w_up = hidden(cfg.model_dim, cfg.ffn_hidden_dim);
            w.w_down = hidden(cfg.ffn_hidden_dim, cfg.model_dim);
            m.layers.push_back(std::move(w));
        }
        m.final_norm = Tensor<S>::ones({cfg.model_dim}, true);
        m.rebuild_registry();
        return m;
    }

    // Fixed-order parameter registry; checkpoint and optimizer order.
    const std::vector<std::pair<std::string, Tensor<S>>>& named_params() const {
        return registry_;
    }

    Tensor<S> param(const std::string& name) const {
        for (const auto& [n, t] : registry_)
            if (n == name) return t;
        throw Error("Model: no parameter named " + name);
    }

    Model clone() const {
        Model m;
        m.cfg = cfg;
        m.embedding = copy_leaf(embedding);
        for (const auto& w : layers) {
            LayerWeights<S> c;
            c.attn_norm = copy_leaf(w.attn_norm);
            c.q_gain = copy_leaf(w.q_gain);
            c.k_gain = copy_leaf(w.k_gain);
            c.wq = copy_leaf(w.wq);
            c.wk = copy_leaf(w.wk);
            c.wv = copy_leaf(w.wv);
            c.wo = copy_leaf(w.wo);
            c.ffn_norm = copy_leaf(w.ffn_norm);
            c.w_gate = copy_leaf(w.w_gate);
            c.w_up = copy_leaf(w.w_up);
            c.w_down = copy_leaf(w.w_down);
            m.layers.push_back(std::move(c));
        }
        m.final_norm = copy_leaf(final_norm);
        m.rebuild_registry();
        return m;
    }

    // Residual stream after the final norm, shape (seq, model_dim).
    Tensor<S> hidden(std::span<const int32_t> tokens, const ForwardOptions<S>& opts = {}) const {
        const int64_t seq = static_cast<int64_t>(tokens.size());
        if (seq == 0) throw ShapeError("Model::forward: empty token sequence");
        if (seq > cfg.max_seq_len)
            throw ShapeError("Model::forward: sequence length " + std::to_string(seq) +
                             " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
        if (opts.ffn_masks && static_cast<int64_t>(opts.ffn_masks->size()) != cfg.n_layers)
            throw ShapeError("Model::forward: ffn_masks must cover every layer");
        Tensor<S> x = embedding_lookup(tokens);
        Tensor<S> mask = causal_mask(seq);
        for (int64_t l = 0; l < cfg.n_layers; ++l) {
            Tensor<S> attn = attention(l, rms_norm(x, layers[l].attn_norm,
                                                   static_cast<S>(cfg.rms_eps)),
                                       mask, opts);
            x = add(x, maybe_dropout(attn, opts));
            Tensor<S> ff = ffn(l, rms_norm(x, layers[l].ffn_norm, static_cast<S>(cfg.rms_eps)),
                               opts);
            x = add(x, maybe_dropout(ff, opts));
        }
        return rms_norm(x, final_norm, static_cast<S>(cfg.rms_eps));
    }

    // Full-sequence forward; logits (seq, vocab) via the shared unembedding.
    Tensor<S> forward(std::span<const int32_t> tokens, const ForwardOptions<S>& opts = {}) const {
        return matmul(hidden(tokens, opts), transpose(embedding));
    }

    // One-token incremental forward against a cache; value-only (no graph).
    // Logits for the new position, shape (1, vocab).
    Tensor<S> forward_step(int32_t token, KvCache<S>& cache,
                           const ForwardOptions<S>& opts = {}) const {
        NoGradGuard ng;
        if (cache.k.empty()) {
            cache.k.assign(static_cast<size_t>(cfg.n_layers), MatRM<S>());
            cache.v.assign(static_cast<size_t>(cfg.n_layers), MatRM<S>());
        }
        const int64_t pos = cache.length;
        if (pos + 1 > cfg.max_seq_len)
            throw ShapeError("Model::forward_step: cache exceeds max_seq_len");
        std::array<int32_t, 1> one{token};
        Tensor<S> x = embedding_lookup(one);
        const int64_t hd = cfg.head_dim;
        for (int64_t l = 0; l < cfg.n_layers; ++l) {
            const auto& w = layers[l];
            Tensor<S> xn = rms_norm(x, w.attn_norm, static_cast<S>(cfg.rms_eps));
            Tensor<S> q = project(l, "wq", xn, w.wq, opts);
            Tensor<S> k = project(l, "wk", xn, w.wk, opts);
            Tensor<S> v = project(l, "wv", xn, w.wv, opts);
            // normalize + rotate the new k row per kv head, then append
            auto& ck = cache.k[static_cast<size_t>(l)];
            auto& cv = cache.v[static_cast<size_t>(l)];
            ck.conservativeResize(pos + 1, cfg.kv_width());
            cv.conservativeResize(pos + 1, cfg.kv_width());
            for (int64_t g = 0; g < cfg.n_kv_heads; ++g) {
                Tensor<S> kh = slice(k, 1, g * hd, (g + 1) * hd);
                kh = rms_norm(kh, slice(w.k_gain, 0, g * hd, (g + 1) * hd),
                              static_cast<S>(cfg.rms_eps));
                kh = rope(kh, static_cast<S>(cfg.rope_base), pos);
                ck.block(pos, g * hd, 1, hd) = kh.matrix();
            }
            cv.row(pos) = v.matrix().row(0);
            std::vector<Tensor<S>> head_outs;
            for (int64_t h = 0; h < cfg.n_query_heads; ++h) {
                const int64_t g = h / cfg.group_size();
                Tensor<S> qh = slice(q, 1, h * hd, (h + 1) * hd);
                qh = rms_norm(qh, slice(w.q_gain, 0, h * hd, (h + 1) * hd),
                              static_cast<S>(cfg.rms_eps));
                qh = rope(qh, static_cast<S>(cfg.rope_base), pos);
                // scores over all cached positions for this kv head
                MatRM<S> kblk_t = ck.block(0, g * hd, pos + 1, hd).transpose();
                Tensor<S> kt = Tensor<S>::from_data(
                    {hd, pos + 1},
                    std::vector<S>(kblk_t.data(), kblk_t.data() + kblk_t.size()));
                Tensor<S> scores = scale(matmul(qh, kt),
                                         static_cast<S>(1.0 / std::sqrt(double(hd))));
                Tensor<S> attn_w = softmax(scores);
                MatRM<S> vblk = cv.block(0, g * hd, pos + 1, hd);
                Tensor<S> vt = Tensor<S>::from_data(
                    {pos + 1, hd}, std::vector<S>(vblk.data(), vblk.data() + vblk.size()));
                head_outs.push_back(matmul(attn_w, vt));
            }
            Tensor<S> attn = project(l, "wo", concat(head_outs, 1), w.wo, opts);
            x = add(x, attn);
            Tensor<S> ff = ffn(l, rms_norm(x, w.ffn_norm, static_cast<S>(cfg.rms_eps)), opts);
            x = add(x, ff);
        }
        x = rms_norm(x, final_norm, static_cast<S>(cfg.rms_eps));
        cache.length = pos + 1;
        return matmul(x, transpose(embedding));
    }

    void zero_grads() {
        for (auto& [n, t] : registry_) t.zero_grad();
    }

    void rebuild_registry() {
        registry_.clear();
        registry_.emplace_back("embed", embedding);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            auto& w = layers[l];
            registry_.emplace_back(p + "attn_norm", w.attn_norm);
            registry_.emplace_back(p + "q_gain", w.q_gain);
            registry_.emplace_back(p + "k_gain", w.k_gain);
            registry_.emplace_back(p + "wq", w.wq);
            registry_.emplace_back(p + "wk", w.wk);
            registry_.emplace_back(p + "wv", w.wv);
            registry_.emplace_back(p + "wo", w.wo);
            registry_.emplace_back(p + "ffn_norm", w.ffn_norm);
            registry_.emplace_back(p + "w_gate", w.w_gate);
            registry_.emplace_back(p + "w_up", w.w_up);
            registry_.emplace_back(p + "w_down", w.w_down);
        }
        registry_.emplace_back("final_norm", final_norm);
    }

private:
    std::vector<std::pair<std::string, Tensor<S>>> registry_;

    static Tensor<S> copy_leaf(const Tensor<S>& t) {
        auto c = t.detach();
        c.set_requires_grad(t.requires_grad());
        return c;
    }

    Tensor<S> embedding_lookup(std::span<const int32_t> tokens) const {
        return embedding_op(tokens);
    }
    Tensor<S> embedding_op(std::span<const int32_t> tokens) const {
        return lmlab::embedding(embedding, tokens);
    }

    Tensor<S> causal_mask(int64_t seq) const {
        std::vector<S> m(static_cast<size_t>(seq * seq), S(0));
        for (int64_t r = 0; r < seq; ++r)
            for (int64_t c = r + 1; c < seq; ++c)
                m[static_cast<size_t>(r * seq + c)] = S(-1e9);
        return Tensor<S>::from_data({seq, seq}, std::move(m));
    }

    Tensor<S> project(int64_t layer, const char* name, const Tensor<S>& x, const Tensor<S>& w,
                      const ForwardOptions<S>& opts) const {
        Tensor<S> y = matmul(x, w);
        if (opts.deltas) {
            Tensor<S> d = opts.deltas->delta(layer, name, x);
            if (d.defined()) y = add(y, d);
        }
        return y;
    }

    Tensor<S> attention(int64_t l, const Tensor<S>& xn, const Tensor<S>& mask,
                        const ForwardOptions<S>& opts) const {
        const auto& w = layers[l];
        const int64_t hd = cfg.head_dim;
        Tensor<S> q = project(l, "wq", xn, w.wq, opts);
        Tensor<S> k = project(l, "wk", xn, w.wk, opts);
        Tensor<S> v = project(l, "wv", xn, w.wv, opts);
        // normalize + rotate each kv head once, shared by its query group
        std::vector<Tensor<S>> k_heads, v_heads;
        for (int64_t g = 0; g < cfg.n_kv_heads; ++g) {
            Tensor<S> kh = slice(k, 1, g * hd, (g + 1) * hd);
            kh = rms_norm(kh, slice(w.k_gain, 0, g * hd, (g + 1) * hd),
                          static_cast<S>(cfg.rms_eps));
            k_heads.push_back(rope(kh, static_cast<S>(cfg.rope_base), 0));
            v_heads.push_back(slice(v, 1, g * hd, (g + 1) * hd));
        }
        std::vector<Tensor<S>> head_outs;
        for (int64_t h = 0; h < cfg.n_query_heads; ++h) {
            const int64_t g = h / cfg.group_size();
            Tensor<S> qh = slice(q, 1, h * hd, (h + 1) * hd);
            qh = rms_norm(qh, slice(w.q_gain, 0, h * hd, (h + 1) * hd),
                          static_cast<S>(cfg.rms_eps));
            qh = rope(qh, static_cast<S>(cfg.rope_base), 0);
            Tensor<S> scores = scale(matmul(qh, transpose(k_heads[static_cast<size_t>(g)])),
                                     static_cast<S>(1.0 / std::sqrt(double(hd))));
            Tensor<S> attn_w = softmax(add(scores, mask));
            head_outs.push_back(matmul(attn_w, v_heads[static_cast<size_t>(g)]));
        }
        return project(l, "wo", concat(head_outs, 1), w.wo, opts);
    }

    Tensor<S> ffn(int64_t l, const Tensor<S>& xn, const ForwardOptions<S>& opts) const {
        const auto& w = layers[l];
        Tensor<S> h = mul(silu(project(l, "w_gate", xn, w.w_gate, opts)),
                          project(l, "w_up", xn, w.w_up, opts));
        if (opts.ffn_masks) {
            const Tensor<S>& m = (*opts.ffn_masks)[static_cast<size_t>(l)];
            if (m.defined()) h = mul(h, m);
        }
        return project(l, "w_down", h, w.w_down, opts);
    }

    Tensor<S> maybe_dropout(const Tensor<S>& t, const ForwardOptions<S>& opts) const {
        if (opts.dropout_rate <= 0.0) return t;
        if (!opts.dropout_rng)
            throw ConfigError("Model::forward: dropout_rate > 0 requires an rng stream");
        return dropout(t, opts.dropout_rate, *opts.dropout_rng);
    }
};

// Mean next-token cross-entropy of a token sequence (positions 0..n-2 predict
// 1..n-1); value-only.
template <class S>
double lm_loss(const Model<S>& m, std::span<const int32_t> tokens,
               const ForwardOptions<S>& opts = {}) {
    NoGradGuard ng;
    if (tokens.size() < 2) throw ShapeError("lm_loss: need at least 2 tokens");
    auto inputs = tokens.subspan(0, tokens.size() - 1);
    std::vector<int32_t> targets(tokens.begin() + 1, tokens.end());
    auto logits = m.forward(inputs, opts);
    return static_cast<double>(cross_entropy(logits, std::span<const int32_t>(targets)).item());
}

// Graph-building training loss for one packed sequence.
template <class S>
Tensor<S> lm_loss_graph(const Model<S>& m, std::span<const int32_t> tokens,
                        const ForwardOptions<S>& opts = {}) {
    if (tokens.size() < 2) throw ShapeError("lm_loss_graph: need at least 2 tokens");
    auto inputs = tokens.subspan(0, tokens.size() - 1);
    std::vector<int32_t> targets(tokens.begin() + 1, tokens.end());
    auto logits = m.forward(inputs, opts);
    return cross_entropy(logits, std::span<const int32_t>(targets));
}

// Ancestral sampling with the KV cache. temperature == 0 decodes greedily.
template <class S>
std::vector<int32_t> sample(const Model<S>& m, std::span<const int32_t> prompt,
                            int64_t max_new_tokens, double temperature, RngStream& rng,
                            int32_t stop_token = -1) {
    NoGradGuard ng;
    if (prompt.empty()) throw ShapeError("sample: empty prompt");
    KvCache<S> cache;
    Tensor<S> logits;
    for (int32_t t : prompt) logits = m.forward_step(t, cache);
    std::vector<int32_t> out;
    for (int64_t i = 0; i < max_new_tokens; ++i) {
        const auto& lv = logits.value();
        int32_t next = 0;
        if (temperature <= 0.0) {
            Eigen::Index arg;
            lv.maxCoeff(&arg);
            next = static_cast<int32_t>(arg);
        } else {
            ArrX<double> p(lv.size());
            double mx = -1e300;
            for (int64_t j = 0; j < lv.size(); ++j)
                mx = std::max(mx, static_cast<double>(lv[j]));
            double z = 0;
            for (int64_t j = 0; j < lv.size(); ++j) {
                p[j] = std::exp((static_cast<double>(lv[j]) - mx) / temperature);
                z += p[j];
            }
            double r = rng.next_double() * z, acc = 0;
            next = static_cast<int32_t>(lv.size()) - 1;
            for (int64_t j = 0; j < lv.size(); ++j) {
                acc += p[j];
                if (r < acc) {
                    next = static_cast<int32_t>(j);
                    break;
                }
            }
        }
        out.push_back(next);
        if (next == stop_token) break;
        if (cache.length + 1 > m.cfg.max_seq_len) break;
        logits = m.forward_step(next, cache);
    }
    return out;
}

}  // namespace lmlab
