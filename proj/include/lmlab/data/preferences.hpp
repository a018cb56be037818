// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Preference records and synthetic preference generation from a known
// ground-truth scorer, so reward-model accuracy has a checkable target.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmlab/core/error.hpp"
#include "lmlab/core/rng.hpp"

namespace lmlab {

enum class PrefLevel : uint8_t { Negligibly = 0, Slightly = 1, Better = 2, Significantly = 3 };

const char* pref_level_name(PrefLevel l);
PrefLevel pref_level_from_name(const std::string& name);

// Three-valued single-sided grade. For instruction following, truthfulness
// and harmlessness: major issue / minor issue / no issue. For verbosity:
// too verbose / too short / just right.
enum class Grade3 : uint8_t { G0 = 0, G1 = 1, G2 = 2 };

inline constexpr int kNumGradeHeads = 4;  // if, verb, truth, harm

struct PreferenceExample {
    std::vector<int32_t> prompt;
    std::vector<int32_t> chosen;
    std::vector<int32_t> rejected;
    PrefLevel level = PrefLevel::Negligibly;
    std::array<Grade3, kNumGradeHeads> grades_chosen{};
    std::array<Grade3, kNumGradeHeads> grades_rejected{};
};

void validate(const PreferenceExample& ex);  // chosen != rejected, grades in domain

// Newline-delimited JSON mirroring the record fields.
std::vector<PreferenceExample> read_preferences_jsonl(const std::string& path);
void write_preferences_jsonl(const std::string& path, std::span<const PreferenceExample> exs);

// Ground truth for synthetic preference data: an overall score plus four
// aspect scores in [0, 1], thresholded into the 3-value grade domains.
struct TrueScorer {
    virtual ~TrueScorer() = default;
    virtual double score(std::span<const int32_t> prompt,
                         std::span<const int32_t> response) const = 0;
    virtual std::array<double, kNumGradeHeads> aspects(
        std::span<const int32_t> prompt, std::span<const int32_t> response) const;
    virtual Grade3 grade(double aspect_score) const;
};

using ResponseSampler =
    std::function<std::vector<int32_t>(std::span<const int32_t> prompt, RngStream& rng)>;

struct SynthPrefStats {
    int64_t skipped_ties = 0;
};

// For each prompt: draw K responses, pair the best against the worst by true
// reward, bin the preference level by reward-gap quartiles over the whole
// dataset, and derive single-sided grades from the scorer thresholds.
// Tied pairs are skipped (counted in stats).
std::vector<PreferenceExample> synth_preferences(const TrueScorer& scorer,
                                                 std::span<const std::vector<int32_t>> prompts,
                                                 const ResponseSampler& policy, int k,
                                                 RngStream& rng,
                                                 SynthPrefStats* stats = nullptr);

}  // namespace lmlab
