// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <string>

#include "lmlab/core/error.hpp"

namespace lmlab {

struct ModelConfig {
    int64_t model_dim = 64;
    int64_t head_dim = 16;
    int64_t n_query_heads = 4;
    int64_t n_kv_heads = 2;
    int64_t n_layers = 2;
    int64_t vocab_size = 258;
    int64_t ffn_hidden_dim = 256;
    double rope_base = 500000.0;
    int64_t max_seq_len = 512;
    double rms_eps = 1e-5;

    int64_t attention_width() const { return n_query_heads * head_dim; }
    int64_t kv_width() const { return n_kv_heads * head_dim; }
    int64_t group_size() const { return n_query_heads / n_kv_heads; }

    void validate() const {
        auto positive = [](int64_t v, const char* name) {
            if (v <= 0) throw ConfigError(std::string("ModelConfig: ") + name + " must be positive");
        };
        positive(model_dim, "model_dim");
        positive(head_dim, "head_dim");
        positive(n_query_heads, "n_query_heads");
        positive(n_kv_heads, "n_kv_heads");
        positive(n_layers, "n_layers");
        positive(vocab_size, "vocab_size");
        positive(ffn_hidden_dim, "ffn_hidden_dim");
        positive(max_seq_len, "max_seq_len");
        if (n_query_heads % n_kv_heads != 0)
            throw ConfigError("ModelConfig: n_query_heads (" + std::to_string(n_query_heads) +
                              ") not divisible by n_kv_heads (" + std::to_string(n_kv_heads) + ")");
        if (head_dim % 2 != 0)
            throw ConfigError("ModelConfig: head_dim must be even for rotary embedding");
        if (rope_base <= 0) throw ConfigError("ModelConfig: rope_base must be positive");
        if (rms_eps <= 0) throw ConfigError("ModelConfig: rms_eps must be positive");
    }
};

struct ParamCounts {
    int64_t embedding = 0;
    int64_t non_embedding = 0;
    int64_t total() const { return embedding + non_embedding; }
};

// Analytic parameter split; never allocates.
inline ParamCounts count_params(const ModelConfig& c) {
    ParamCounts pc;
    pc.embedding = c.vocab_size * c.model_dim;  // shared input/output matrix, stored once
    const int64_t attn = c.model_dim * c.attention_width()      // wq
                         + 2 * c.model_dim * c.kv_width()       // wk, wv
                         + c.attention_width() * c.model_dim;   // wo
    const int64_t ffn = 3 * c.model_dim * c.ffn_hidden_dim;     // gate, up, down
    const int64_t norms = 2 * c.model_dim                       // attn + ffn pre-norm gains
                          + c.attention_width() + c.kv_width(); // per-head q/k norm gains
    pc.non_embedding = c.n_layers * (attn + ffn + norms) + c.model_dim;  // + final norm
    return pc;
}

}  // namespace lmlab
