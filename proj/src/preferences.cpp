// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#include "lmlab/data/preferences.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace lmlab {

using nlohmann::json;

const char* pref_level_name(PrefLevel l) {
    switch (l) {
        case PrefLevel::Negligibly: return "negligibly";
        case PrefLevel::Slightly: return "slightly";
        case PrefLevel::Better: return "better";
        case PrefLevel::Significantly: return "significantly";
    }
    throw Error("bad preference level");
}

PrefLevel pref_level_from_name(const std::string& name) {
    if (name == "negligibly") return PrefLevel::Negligibly;
    if (name == "slightly") return PrefLevel::Slightly;
    if (name == "better") return PrefLevel::Better;
    if (name == "significantly") return PrefLevel::Significantly;
    throw DataError("unknown preference level '" + name + "'");
}

void validate(const PreferenceExample& ex) {
    if (ex.chosen.empty() || ex.rejected.empty())
        throw DataError("PreferenceExample: empty response");
    if (ex.chosen == ex.rejected)
        throw DataError("PreferenceExample: chosen and rejected are identical");
    for (auto g : ex.grades_chosen)
        if (static_cast<int>(g) > 2) throw DataError("PreferenceExample: grade out of domain");
    for (auto g : ex.grades_rejected)
        if (static_cast<int>(g) > 2) throw DataError("PreferenceExample: grade out of domain");
}

namespace {

json grades_to_json(const std::array<Grade3, kNumGradeHeads>& g) {
    json a = json::array();
    for (auto v : g) a.push_back(static_cast<int>(v));
    return a;
}

std::array<Grade3, kNumGradeHeads> grades_from_json(const json& a) {
    std::array<Grade3, kNumGradeHeads> out{};
    for (int i = 0; i < kNumGradeHeads; ++i) out[static_cast<size_t>(i)] =
        static_cast<Grade3>(a.at(static_cast<size_t>(i)).get<int>());
    return out;
}

}  // namespace

std::vector<PreferenceExample> read_preferences_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open preference file " + path);
    std::vector<PreferenceExample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        PreferenceExample ex;
        ex.prompt = j.at("prompt").get<std::vector<int32_t>>();
        ex.chosen = j.at("chosen").get<std::vector<int32_t>>();
        ex.rejected = j.at("rejected").get<std::vector<int32_t>>();
        ex.level = pref_level_from_name(j.at("level").get<std::string>());
        ex.grades_chosen = grades_from_json(j.at("grades_chosen"));
        ex.grades_rejected = grades_from_json(j.at("grades_rejected"));
        validate(ex);
        out.push_back(std::move(ex));
    }
    return out;
}

void write_preferences_jsonl(const std::string& path,
                             std::span<const PreferenceExample> exs) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write preference file " + path);
    for (const auto& ex : exs) {
        json j{{"prompt", ex.prompt},
               {"chosen", ex.chosen},
               {"rejected", ex.rejected},
               {"level", pref_level_name(ex.level)},
               {"grades_chosen", grades_to_json(ex.grades_chosen)},
               {"grades_rejected", grades_to_json(ex.grades_rejected)}};
        out << j.dump() << "\n";
    }
}

std::array<double, kNumGradeHeads> TrueScorer::aspects(
    std::span<const int32_t> prompt, std::span<const int32_t> response) const {
    const double s = score(prompt, response);
    const double a = 1.0 / (1.0 + std::exp(-s));
    return {a, a, a, a};
}

Grade3 TrueScorer::grade(double aspect_score) const {
    if (aspect_score < 1.0 / 3.0) return Grade3::G0;
    if (aspect_score < 2.0 / 3.0) return Grade3::G1;
    return Grade3::G2;
}

std::vector<PreferenceExample> synth_preferences(const TrueScorer& scorer,
                                                 std::span<const std::vector<int32_t>> prompts,
                                                 const ResponseSampler& policy, int k,
                                                 RngStream& rng, SynthPrefStats* stats) {
    if (k < 2) throw ConfigError("synth_preferences: K must be >= 2");
    struct Candidate {
        PreferenceExample ex;
        double gap;
    };
    std::vector<Candidate> cands;
    int64_t ties = 0;
    for (const auto& prompt : prompts) {
        std::vector<std::vector<int32_t>> responses;
        std::vector<double> scores;
        for (int i = 0; i < k; ++i) {
            responses.push_back(policy(prompt, rng));
            scores.push_back(scorer.score(prompt, responses.back()));
        }
        const auto best =
            static_cast<size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
        const auto worst =
            static_cast<size_t>(std::min_element(scores.begin(), scores.end()) - scores.begin());
        if (scores[best] == scores[worst] || responses[best] == responses[worst]) {
            ++ties;  // no usable signal for this prompt
            continue;
        }
        Candidate c;
        c.ex.prompt = prompt;
        c.ex.chosen = responses[best];
        c.ex.rejected = responses[worst];
        for (int a = 0; a < kNumGradeHeads; ++a) {
            c.ex.grades_chosen[static_cast<size_t>(a)] =
                scorer.grade(scorer.aspects(prompt, c.ex.chosen)[static_cast<size_t>(a)]);
            c.ex.grades_rejected[static_cast<size_t>(a)] =
                scorer.grade(scorer.aspects(prompt, c.ex.rejected)[static_cast<size_t>(a)]);
        }
        c.gap = scores[best] - scores[worst];
        cands.push_back(std::move(c));
    }
    if (stats) stats->skipped_ties = ties;

    // preference level from reward-gap quartiles over the generated set
    std::vector<double> gaps;
    for (const auto& c : cands) gaps.push_back(c.gap);
    std::sort(gaps.begin(), gaps.end());
    auto pct = [&](double q) {
        if (gaps.empty()) return 0.0;
        const size_t i = std::min(gaps.size() - 1,
                                  static_cast<size_t>(q * static_cast<double>(gaps.size())));
        return gaps[i];
    };
    const double q25 = pct(0.25), q50 = pct(0.50), q75 = pct(0.75);
    std::vector<PreferenceExample> out;
    for (auto& c : cands) {
        c.ex.level = c.gap >= q75   ? PrefLevel::Significantly
                     : c.gap >= q50 ? PrefLevel::Better
                     : c.gap >= q25 ? PrefLevel::Slightly
                                    : PrefLevel::Negligibly;
        validate(c.ex);
        out.push_back(std::move(c.ex));
    }
    return out;
}

}  // namespace lmlab
