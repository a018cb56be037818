// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Metrics stream: one JSON object per line. Steps must be monotone within a
// run; command-specific fields ride along as extra keys.
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "lmlab/core/error.hpp"

namespace lmlab {

struct MetricsRecord {
    int64_t step = 0;
    std::string stage;
    double loss = 0;
    double lr = 0;
    double grad_norm = 0;
    int64_t tokens_seen = 0;
    double wall_ms = 0;
    std::map<std::string, double> extra;
};

class MetricsWriter {
public:
    MetricsWriter() = default;
    explicit MetricsWriter(const std::string& path);
    ~MetricsWriter();
    MetricsWriter(const MetricsWriter&) = delete;
    MetricsWriter& operator=(const MetricsWriter&) = delete;

    void write(const MetricsRecord& rec);

private:
    void* file_ = nullptr;  // FILE*
    int64_t last_step_ = -1;
    bool any_ = false;
};

}  // namespace lmlab
