// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#include "lmlab/data/decontaminate.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace lmlab {

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> words;
    std::string w;
    while (is >> w) words.push_back(w);
    return words;
}

namespace {

std::string join_ngram(std::span<const std::string> words, size_t begin, size_t n) {
    std::string out = words[begin];
    for (size_t i = 1; i < n; ++i) {
        out += ' ';
        out += words[begin + i];
    }
    return out;
}

template <class Fn>
void for_each_ngram(const std::vector<std::string>& words, Fn&& fn) {
    for (int n = kNGramMin; n <= kNGramMax; ++n) {
        if (words.size() < static_cast<size_t>(n)) break;
        for (size_t i = 0; i + static_cast<size_t>(n) <= words.size(); ++i)
            fn(join_ngram(words, i, static_cast<size_t>(n)));
    }
}

}  // namespace

NGramIndex NGramIndex::build(std::span<const Document> benchmark_docs) {
    NGramIndex idx;
    for (const auto& d : benchmark_docs) {
        auto words = whitespace_tokens(d.text);
        for_each_ngram(words, [&](std::string ng) {
            auto [it, inserted] = idx.counts.emplace(std::move(ng), 1);
            (void)it;
            (void)inserted;
        });
    }
    return idx;
}

void NGramIndex::count_corpus_occurrences(std::span<const Document> corpus) {
    for (const auto& d : corpus) {
        auto words = whitespace_tokens(d.text);
        for_each_ngram(words, [&](const std::string& ng) {
            auto it = counts.find(ng);
            if (it != counts.end()) ++it->second;
        });
    }
}

void NGramIndex::save(const std::string& path) const {
    std::vector<std::pair<std::string, uint64_t>> sorted(counts.begin(), counts.end());
    std::sort(sorted.begin(), sorted.end());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("NGramIndex: cannot write " + path);
    for (const auto& [ng, count] : sorted) {
        const uint32_t len = static_cast<uint32_t>(ng.size());
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(ng.data(), static_cast<std::streamsize>(ng.size()));
        out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    }
}

NGramIndex NGramIndex::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("NGramIndex: cannot open " + path);
    NGramIndex idx;
    uint32_t len = 0;
    while (in.read(reinterpret_cast<char*>(&len), sizeof(len))) {
        std::string ng(len, '\0');
        in.read(ng.data(), len);
        uint64_t count = 0;
        in.read(reinterpret_cast<char*>(&count), sizeof(count));
        if (!in) throw DataError("NGramIndex: truncated file " + path);
        idx.counts.emplace(std::move(ng), count);
    }
    return idx;
}

DecontResult decontaminate(const Document& doc, const NGramIndex& index,
                           uint64_t common_threshold) {
    DecontResult res;
    auto words = whitespace_tokens(doc.text);
    std::set<std::string> seen;
    for_each_ngram(words, [&](const std::string& ng) {
        auto it = index.counts.find(ng);
        if (it == index.counts.end()) return;
        if (!seen.insert(ng).second) return;
        res.matches.push_back({ng, it->second});
        if (it->second < common_threshold) res.drop = true;
    });
    return res;
}

}  // namespace lmlab
