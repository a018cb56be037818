// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#include "lmlab/data/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "lmlab/data/tokenizer.hpp"

namespace lmlab {

using nlohmann::json;

void validate(const Document& d) {
    if (d.text.empty()) throw DataError("Document " + d.id + ": empty text");
}

std::vector<Document> read_corpus_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file " + path);
    std::vector<Document> docs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        Document d{j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                   j.at("source_tag").get<std::string>()};
        validate(d);
        docs.push_back(std::move(d));
    }
    return docs;
}

void write_corpus_jsonl(const std::string& path, std::span<const Document> docs) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write corpus file " + path);
    for (const auto& d : docs) {
        json j{{"id", d.id}, {"source_tag", d.source_tag}, {"text", d.text}};
        out << j.dump() << "\n";
    }
}

void MixtureSpec::validate() const {
    if (components.empty()) throw ConfigError("MixtureSpec: no components");
    double sum = 0;
    for (const auto& c : components) {
        if (c.weight < 0)
            throw ConfigError("MixtureSpec: negative weight for " + c.label);
        sum += c.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("MixtureSpec: weights sum to " + std::to_string(sum));
}

StagePreset stage_preset(const std::string& name, int64_t base_seq_len) {
    StagePreset p;
    p.name = name;
    if (name == "core") {
        p.mixture = {{{"qa", 0.65}, {"copy", 0.20}, {"math", 0.15}}, "core"};
        p.seq_len = base_seq_len;
    } else if (name == "continued") {
        // down-weight the bulk component, favor math
        p.mixture = {{{"qa", 0.25}, {"copy", 0.20}, {"math", 0.55}}, "continued"};
        p.seq_len = 2 * base_seq_len;
    } else if (name == "context") {
        p.mixture = {{{"qa", 0.20}, {"copy", 0.15}, {"math", 0.40}, {"longqa", 0.25}},
                     "context"};
        p.seq_len = 8 * base_seq_len;  // 4x the continued stage
        p.rope_base_scale = 6315089.0 / 500000.0;
    } else {
        throw ConfigError("unknown stage preset: " + name);
    }
    p.mixture.validate();
    return p;
}

void Corpus::add(Document d) {
    validate(d);
    by_tag_[d.source_tag].push_back(std::move(d));
    ++total_;
}

const std::vector<Document>& Corpus::docs(const std::string& tag) const {
    auto it = by_tag_.find(tag);
    if (it == by_tag_.end()) throw DataError("Corpus: no documents tagged '" + tag + "'");
    return it->second;
}

bool Corpus::has_tag(const std::string& tag) const {
    auto it = by_tag_.find(tag);
    return it != by_tag_.end() && !it->second.empty();
}

std::vector<std::string> Corpus::tags() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : by_tag_) out.push_back(k);
    return out;
}

namespace {

const char* kQaSubjects[] = {"the fox",  "a raven",   "the miller", "our ship",
                             "the moon", "a stranger", "the garden", "this river"};
const char* kQaVerbs[] = {"watches", "follows", "remembers", "crosses",
                          "ignores", "praises", "shelters",  "carries"};
const char* kQaObjects[] = {"the valley", "an old song", "the harvest", "a quiet road",
                            "the lantern", "its shadow", "the market",  "a long winter"};

std::string two_digits(int64_t v) {
    std::string s = std::to_string(v);
    return s.size() < 2 ? "0" + s : s;
}

}  // namespace

// Operand pairs come from a fixed pool so most of a math line is learnable;
// the answer digits are fully determined by the prefix.
Document synth_math_doc(RngStream& rng, int id) {
    std::ostringstream os;
    const int lines = 5 + static_cast<int>(rng.uniform_int(4));
    for (int i = 0; i < lines; ++i) {
        const int64_t pick = rng.uniform_int(64);
        const int64_t a = 10 + (pick * 13) % 90;
        const int64_t b = 10 + (pick * 29 + 7) % 90;
        switch (pick % 3) {
            case 0: os << a << "+" << b << "=" << (a + b); break;
            case 1: os << a << "-" << b << "=" << (a - b); break;
            default: os << a << "*" << b << "=" << (a * b); break;
        }
        os << "\n";
    }
    return {"math-" + std::to_string(id), os.str(), "math"};
}

// Templated prose with deterministic verb/object mappings per subject, so
// entropy concentrates at sentence starts.
Document synth_qa_doc(RngStream& rng, int id) {
    std::ostringstream os;
    const int lines = 4 + static_cast<int>(rng.uniform_int(4));
    for (int i = 0; i < lines; ++i) {
        const int64_t s = rng.uniform_int(8);
        os << kQaSubjects[s] << " " << kQaVerbs[(s * 3 + 1) % 8] << " "
           << kQaObjects[(s * 5 + 2) % 8] << ". ";
    }
    return {"qa-" + std::to_string(id), os.str(), "qa"};
}

// Words drawn from a small fixed pool, then repeated after the colon.
Document synth_copy_doc(RngStream& rng, int id) {
    static const char* kPool[] = {"anchor", "brevity", "cascade", "dynamo", "ember",
                                  "fathom", "glacier", "harbor",  "isthmus", "juniper",
                                  "kestrel", "lagoon",  "meridian", "nocturne", "obelisk",
                                  "paragon", "quarry",  "russet",  "sonder",  "tundra"};
    std::ostringstream os;
    const int lines = 4 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < lines; ++i) {
        const char* word = kPool[rng.uniform_int(20)];
        os << word << ":" << word << "\n";
    }
    return {"copy-" + std::to_string(id), os.str(), "copy"};
}

Document synth_longqa_doc(RngStream& rng, int id) {
    std::ostringstream os;
    const int pairs = 8 + static_cast<int>(rng.uniform_int(9));
    std::vector<std::pair<std::string, std::string>> kv;
    std::set<std::string> used;
    for (int i = 0; i < pairs; ++i) {
        std::string key = "k" + two_digits(rng.uniform_int(100));
        if (!used.insert(key).second) continue;
        std::string val;
        val.push_back(static_cast<char>('a' + rng.uniform_int(26)));
        val.push_back(static_cast<char>('a' + rng.uniform_int(26)));
        kv.emplace_back(key, val);
        os << key << "=" << val << ";";
    }
    const auto& probe = kv[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(kv.size())))];
    os << "?" << probe.first << "=" << probe.second << "\n";
    return {"longqa-" + std::to_string(id), os.str(), "longqa"};
}

Corpus Corpus::synth_toy(RngStream rng, int docs_per_tag) {
    Corpus c;
    auto math_rng = rng.split("math");
    auto qa_rng = rng.split("qa");
    auto copy_rng = rng.split("copy");
    auto long_rng = rng.split("longqa");
    for (int i = 0; i < docs_per_tag; ++i) {
        c.add(synth_math_doc(math_rng, i));
        c.add(synth_qa_doc(qa_rng, i));
        c.add(synth_copy_doc(copy_rng, i));
        c.add(synth_longqa_doc(long_rng, i));
    }
    return c;
}

TokenBatch sample_batch(const Corpus& corpus, const MixtureSpec& mixture, int64_t seq_len,
                        int64_t batch, RngStream& rng) {
    mixture.validate();
    if (seq_len <= 0 || batch <= 0) throw ConfigError("sample_batch: bad seq_len/batch");
    std::vector<const MixtureComponent*> active;
    std::vector<double> weights;
    for (const auto& c : mixture.components) {
        if (c.weight == 0.0) continue;
        if (!corpus.has_tag(c.label))
            throw DataError("sample_batch: component '" + c.label +
                            "' has weight > 0 but no documents");
        active.push_back(&c);
        weights.push_back(c.weight);
    }
    TokenBatch out;
    for (int64_t b = 0; b < batch; ++b) {
        std::vector<int32_t> row;
        row.reserve(static_cast<size_t>(seq_len));
        while (static_cast<int64_t>(row.size()) < seq_len) {
            const size_t ci = rng.categorical(weights);
            const auto& dl = corpus.docs(active[ci]->label);
            ++out.draws[active[ci]->label];
            const auto& doc = dl[static_cast<size_t>(
                rng.uniform_int(static_cast<int64_t>(dl.size())))];
            auto toks = ByteTokenizer::encode(doc.text);
            for (int32_t t : toks) {
                if (static_cast<int64_t>(row.size()) >= seq_len) break;
                row.push_back(t);
            }
            if (static_cast<int64_t>(row.size()) < seq_len)
                row.push_back(ByteTokenizer::sep_token);
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

namespace {

std::set<std::string> shingles3(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> words;
    std::string w;
    while (is >> w) words.push_back(w);
    std::set<std::string> out;
    for (size_t i = 0; i + 3 <= words.size(); ++i)
        out.insert(words[i] + " " + words[i + 1] + " " + words[i + 2]);
    return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 1.0;
    size_t inter = 0;
    for (const auto& s : a) inter += b.count(s);
    const size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

std::vector<Document> dedup_jaccard(std::span<const Document> docs, double threshold) {
    std::vector<Document> kept;
    std::vector<std::set<std::string>> kept_shingles;
    for (const auto& d : docs) {
        auto sh = shingles3(d.text);
        bool dup = false;
        for (const auto& ks : kept_shingles) {
            if (jaccard(sh, ks) >= threshold) {
                dup = true;
                break;
            }
        }
        if (!dup) {
            kept.push_back(d);
            kept_shingles.push_back(std::move(sh));
        }
    }
    return kept;
}

}  // namespace lmlab
