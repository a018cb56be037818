// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy corpora: synthetic component grammars standing in for the web / code /
// math / long-context components of a real mixture, plus weighted mixture
// sampling that packs documents into fixed-length training rows.
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lmlab/core/error.hpp"
#include "lmlab/core/rng.hpp"

namespace lmlab {

struct Document {
    std::string id;
    std::string text;        // non-empty byte string
    std::string source_tag;  // mixture component label
};

void validate(const Document& d);

// On-disk corpus format: one JSON object {id, source_tag, text} per line.
std::vector<Document> read_corpus_jsonl(const std::string& path);
void write_corpus_jsonl(const std::string& path, std::span<const Document> docs);

struct MixtureComponent {
    std::string label;
    double weight = 0.0;
};

struct MixtureSpec {
    std::vector<MixtureComponent> components;
    std::string stage;  // core | continued | context
    void validate() const;
};

struct StagePreset {
    std::string name;
    MixtureSpec mixture;
    int64_t seq_len = 0;
    double rope_base_scale = 1.0;  // context stage raises the rotary base
};

// Stage presets: core trains mostly on the bulk component; continued
// upweights math/code; context keeps the continued mixture, adds synthetic
// long-range retrieval data, quadruples the sequence length, and scales the
// rotary base by 6315089/500000.
StagePreset stage_preset(const std::string& name, int64_t base_seq_len);

class Corpus {
public:
    void add(Document d);
    const std::vector<Document>& docs(const std::string& tag) const;
    bool has_tag(const std::string& tag) const;
    std::vector<std::string> tags() const;
    size_t size() const { return total_; }

    // Synthetic toy corpus: component tags {qa, copy, math, longqa}.
    static Corpus synth_toy(RngStream rng, int docs_per_tag);

private:
    std::map<std::string, std::vector<Document>> by_tag_;
    size_t total_ = 0;
};

// Component generators, also used to build held-out evaluation splits.
Document synth_math_doc(RngStream& rng, int id);
Document synth_qa_doc(RngStream& rng, int id);
Document synth_copy_doc(RngStream& rng, int id);
Document synth_longqa_doc(RngStream& rng, int id);

struct TokenBatch {
    std::vector<std::vector<int32_t>> rows;  // each exactly seq_len tokens
    std::map<std::string, int64_t> draws;    // component draw counts
};

// Draws components proportionally to mixture weights and packs documents,
// separated by the tokenizer's separator token, into rows of exactly seq_len.
TokenBatch sample_batch(const Corpus& corpus, const MixtureSpec& mixture, int64_t seq_len,
                        int64_t batch, RngStream& rng);

// Exact shingle-Jaccard near-duplicate filter (the toy stand-in for
// locality-sensitive hashing): keeps the first of any pair of documents whose
// word 3-gram sets overlap at or above `threshold`.
std::vector<Document> dedup_jaccard(std::span<const Document> docs, double threshold);

}  // namespace lmlab
