// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#include "lmlab/data/tokenizer.hpp"

namespace lmlab {

std::vector<int32_t> ByteTokenizer::encode(std::string_view text) {
    std::vector<int32_t> out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(static_cast<int32_t>(c));
    return out;
}

std::string ByteTokenizer::decode(std::span<const int32_t> tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int32_t t : tokens)
        if (t >= 0 && t < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    return out;
}

}  // namespace lmlab
