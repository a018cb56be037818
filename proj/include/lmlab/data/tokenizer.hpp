// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lmlab {

// Byte-level tokenizer: ids 0..255 are raw bytes, plus a document separator
// and a padding token. Round-trips any byte string losslessly.
struct ByteTokenizer {
    static constexpr int32_t sep_token = 256;
    static constexpr int32_t pad_token = 257;
    static constexpr int64_t vocab_size = 258;

    static std::vector<int32_t> encode(std::string_view text);
    // Inverse of encode; separator and padding tokens are dropped.
    static std::string decode(std::span<const int32_t> tokens);
};

}  // namespace lmlab
