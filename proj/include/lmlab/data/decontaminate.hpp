// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Benchmark decontamination: a document is dropped when it shares any
// 4..13-gram (whitespace word tokens) with the benchmark set, unless that
// n-gram occurs in the corpus often enough to count as common usage.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmlab/data/corpus.hpp"

namespace lmlab {

inline constexpr int kNGramMin = 4;
inline constexpr int kNGramMax = 13;
inline constexpr uint64_t kCommonUsageThreshold = 1000;

std::vector<std::string> whitespace_tokens(const std::string& text);

struct NGramIndex {
    // n-gram (words joined by single spaces) -> corpus occurrence count
    std::unordered_map<std::string, uint64_t> counts;

    // Collects every 4..13-gram of the benchmark documents; counts start at 1
    // (the benchmark occurrence itself).
    static NGramIndex build(std::span<const Document> benchmark_docs);

    // Adds occurrence counts of indexed n-grams over a training corpus, the
    // common-usage measure the exemption threshold compares against.
    void count_corpus_occurrences(std::span<const Document> corpus);

    void save(const std::string& path) const;  // sorted binary records
    static NGramIndex load(const std::string& path);
};

struct NGramMatch {
    std::string ngram;
    uint64_t count = 0;
};

struct DecontResult {
    bool drop = false;
    std::vector<NGramMatch> matches;  // every colliding n-gram, with its count
};

DecontResult decontaminate(const Document& doc, const NGramIndex& index,
                           uint64_t common_threshold = kCommonUsageThreshold);

}  // namespace lmlab
