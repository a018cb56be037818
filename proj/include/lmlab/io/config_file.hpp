// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat file of dotted-key = value lines with '#'
// comments and an `include <path>` directive. Unknown keys are rejected
// against a declared schema, and every run writes its fully-resolved config
// next to its outputs.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lmlab/core/error.hpp"

namespace lmlab {

class RunConfig {
public:
    static RunConfig parse_file(const std::string& path);
    static RunConfig parse_text(const std::string& text, const std::string& dir = ".");

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, std::optional<std::string> def = {}) const;
    int64_t get_int(const std::string& key, std::optional<int64_t> def = {}) const;
    double get_double(const std::string& key, std::optional<double> def = {}) const;
    bool get_bool(const std::string& key, std::optional<bool> def = {}) const;

    // Every key must be in `known`; throws ConfigError naming the offender.
    void reject_unknown(const std::set<std::string>& known) const;

    // Deterministic "key = value" text of the fully-resolved config.
    std::string resolved_text() const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace lmlab
