// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "lmlab/core/error.hpp"

namespace lmlab {

// Counter-based splittable generator. A stream is (key, counter); drawing
// advances the counter only, and split() derives an independent key, so the
// same (seed, label, index) always yields the same values regardless of call
// order elsewhere. All stochastic code takes an explicit RngStream.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

    RngStream split(std::string_view label) const {
        uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the label bytes
        for (unsigned char c : label) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return RngStream(key_, mix(key_ ^ mix(h)));
    }

    RngStream split(uint64_t index) const {
        return RngStream(key_, mix(key_ + 0x632be59bd9b4e019ULL * (index + 1)));
    }

    uint64_t next_u64() { return mix(key_ + 0xd1b54a32d192ed03ULL * ++counter_); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) {
        if (n <= 0) throw Error("RngStream::uniform_int: n must be positive");
        return static_cast<int64_t>(next_double() * static_cast<double>(n)) % n;
    }

    // Standard normal via Box-Muller; consumes two draws per call.
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    bool bernoulli(double p) { return next_double() < p; }

    // Index sampled proportionally to non-negative weights.
    size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (total <= 0.0) throw Error("RngStream::categorical: weights sum to zero");
        double r = next_double() * total;
        double acc = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (r < acc) return i;
        }
        return weights.size() - 1;
    }

    uint64_t key() const { return key_; }
    uint64_t counter() const { return counter_; }
    void set_counter(uint64_t c) { counter_ = c; }

private:
    RngStream(uint64_t, uint64_t child_key) : key_(child_key) {}

    // SplitMix64 finalizer.
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t counter_ = 0;
};

}  // namespace lmlab
